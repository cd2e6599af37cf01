#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sd2::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of `name` in the header, or -1.
  long column(const std::string& name) const;
};

// Comma-separated, optional double-quoted fields, first line is the header.
// Throws IoError when unreadable and ConfigError on ragged rows.
Table read(const std::filesystem::path& path);

// Parses a numeric field; empty fields and "NA" give NaN. Throws ConfigError
// naming `where` on anything else that is not a number.
double to_double(const std::string& field, const std::string& where);

// Round-trippable representation (17 significant digits).
std::string format(double v);

}  // namespace sd2::csv
