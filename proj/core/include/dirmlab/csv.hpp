#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dirmlab::csv {

// RFC 4180 field quoting. Numeric cells use 17 significant digits so reruns
// are diffable and values round-trip exactly.
std::string field(const std::string& raw);
std::string num(double value);

void write_row(std::ostream& os, const std::vector<std::string>& cells);

// Small reader used by tests and the CLI round-trips.
std::vector<std::vector<std::string>> read(std::istream& is);

}  // namespace dirmlab::csv
