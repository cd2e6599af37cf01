import math
import numpy as np
import pytest

import sd2

TINY = {
    "arch": {"rep_dim": 3, "hidden_width": 8, "hidden_depth": 1, "head_width": 6, "retain_width": 6,
             "rebalance_width": 4},
    "batch_size": 64,
    "max_epochs": 3,
    "patience": 3,
}


def test_version():
    assert sd2.__version__.count(".") == 2


def test_synthetic_dataset_shapes_and_ate():
    ds = sd2.generate_synthetic("0-4-4-2-2", n=2000, seed=1)
    assert ds["x"].shape == (2000, 10)
    assert ds["roles"] == "zzzzccccaa"
    p1, p0 = np.asarray(ds["p1"]), np.asarray(ds["p0"])
    assert ds["true_ate"] == pytest.approx(float(np.mean(p1 - p0)))
    assert set(np.unique(ds["t"])) <= {0.0, 1.0}


def test_generation_is_deterministic():
    a = sd2.generate_synthetic("0-2-2-1-1", n=100, seed=4)
    b = sd2.generate_synthetic("0-2-2-1-1", n=100, seed=4)
    np.testing.assert_array_equal(a["x"], b["x"])


def test_gaussian_kl_closed_form():
    assert sd2.gaussian_kl(0.0, 1.0, 0.0, 1.0) == 0.0
    expected = math.log(2.0) + (1.0 + 1.0) / (2 * 4.0) - 0.5
    assert sd2.gaussian_kl(0.0, 1.0, 1.0, 2.0) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        sd2.gaussian_kl(0.0, -1.0, 0.0, 1.0)


def test_identity_suite():
    r = sd2.verify_identities(joints=50, ci_joints=10)
    assert r["passed"]
    assert r["max_chain_rule_residual"] < 1e-10


def test_train_predict_and_checkpoint(tmp_path):
    config = dict(TINY, dataset={"kind": "synthetic", "dims": "0-2-2-1-1", "n": 200})
    r = sd2.train_and_evaluate(config, seed=2)
    assert 0.0 <= r["within"] < 1.0
    assert r["epochs"] >= 1
    model = r["model"]
    x = sd2.generate_synthetic("0-2-2-1-1", n=20, seed=9)["x"]
    g1 = np.asarray(model.predict_outcome(x, 1.0))
    assert g1.shape == (20,)
    assert np.all((g1 > 0) & (g1 < 1))
    path = tmp_path / "model.json"
    model.save(path)
    back = sd2.Model.load(path)
    np.testing.assert_array_equal(np.asarray(back.predict_outcome(x, 1.0)), g1)
    ratios = back.attribution("zzcca")
    assert set(ratios) == {"z", "c", "a"}
    assert all(v > 0 for v in ratios.values())


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        sd2.generate_synthetic("0-4-4", n=10)
    with pytest.raises(OSError):
        sd2.Model.load(tmp_path / "absent.json")
    with pytest.raises(OSError):
        sd2.read_dataset(tmp_path / "absent")
    with pytest.raises(ValueError):
        sd2.train_and_evaluate(dict(TINY, bogus=1, dataset={"kind": "synthetic", "n": 50}))
