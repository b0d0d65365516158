#pragma once

// Minimal TOML subset used for run configs, SCM specs and experiment
// manifests: tables, arrays of tables, inline tables, arrays, strings,
// integers, floats, booleans and comments. No datetimes, no dotted keys in
// assignments.

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "dirmlab/errors.hpp"

namespace dirmlab::toml {

class Value;
using Array = std::vector<Value>;
using Table = std::map<std::string, Value>;

class Value {
 public:
  Value() : v_(Table{}) {}
  Value(bool b) : v_(b) {}
  Value(std::int64_t i) : v_(i) {}
  Value(int i) : v_(static_cast<std::int64_t>(i)) {}
  Value(double d) : v_(d) {}
  Value(const char* s) : v_(std::string(s)) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(Array a) : v_(std::move(a)) {}
  Value(Table t) : v_(std::move(t)) {}

  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
  bool is_float() const { return std::holds_alternative<double>(v_); }
  bool is_number() const { return is_int() || is_float(); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_array() const { return std::holds_alternative<Array>(v_); }
  bool is_table() const { return std::holds_alternative<Table>(v_); }

  bool as_bool() const;
  std::int64_t as_int() const;
  double as_double() const;  // accepts ints
  const std::string& as_string() const;
  const Array& as_array() const;
  Array& as_array();
  const Table& as_table() const;
  Table& as_table();

  bool contains(const std::string& key) const;
  const Value& at(const std::string& key) const;
  const Value* find(const std::string& key) const;
  Value& operator[](const std::string& key);

  bool operator==(const Value& other) const { return v_ == other.v_; }

 private:
  std::variant<bool, std::int64_t, double, std::string, Array, Table> v_;
};

// Parses a full TOML document. Throws dirmlab::ParseError with line/column.
Value parse(const std::string& text);
Value parse_file(const std::string& path);

// Serializes a table value to TOML text; round-trips through parse().
std::string serialize(const Value& root);
void write_file(const std::string& path, const Value& root);

}  // namespace dirmlab::toml
