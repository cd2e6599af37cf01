"""Writes data/twins_fixture.csv: 200 synthetic twin pairs in the layout of the
public twins birth records (per-twin weight, sex and mortality plus shared
pregnancy covariates). Values are simulated, not real records."""

import csv
import math
import random
from pathlib import Path

M_COLUMNS = ["gestat10", "mager8", "mrace", "meduc6", "cigar6", "dmar"]
R_COLUMNS = ["adequacy", "alcohol", "anemia", "cardiac", "diabetes", "hydra"]


def main(rows: int = 200, seed: int = 7) -> None:
    rng = random.Random(seed)
    out = Path(__file__).resolve().parent.parent / "data" / "twins_fixture.csv"
    header = ["dbirwt_0", "dbirwt_1", "csex_0", "csex_1", "mort_0", "mort_1"] + M_COLUMNS + R_COLUMNS
    with out.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for _ in range(rows):
            m = {
                "gestat10": rng.randint(1, 10),
                "mager8": rng.randint(1, 8),
                "mrace": rng.randint(1, 3),
                "meduc6": rng.randint(1, 6),
                "cigar6": rng.randint(0, 5),
                "dmar": rng.randint(0, 1),
            }
            r = {c: int(rng.random() < 0.15) for c in R_COLUMNS}
            r["adequacy"] = rng.randint(1, 3)
            base = 700 + 110 * m["gestat10"] - 25 * m["cigar6"]
            wt0 = max(400, int(rng.gauss(base, 150)))
            wt1 = max(400, int(rng.gauss(base, 150)))
            sex = rng.randint(1, 2)
            sex1 = sex if rng.random() < 0.9 else 3 - sex
            risk = -1.0 - 0.002 * (min(wt0, wt1) - 1200) + 0.3 * r["anemia"] + 0.2 * r["hydra"]
            mort = []
            for wt in (wt0, wt1):
                p = 1.0 / (1.0 + math.exp(-(risk - 0.0015 * (wt - min(wt0, wt1)))))
                mort.append(int(rng.random() < p))
            w.writerow([wt0, wt1, sex, sex1, mort[0], mort[1]] + [m[c] for c in M_COLUMNS] + [r[c] for c in R_COLUMNS])


if __name__ == "__main__":
    main()
