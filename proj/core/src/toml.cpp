#include "dirmlab/toml.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dirmlab::toml {

bool Value::as_bool() const {
  if (!is_bool()) throw Error("TOML value is not a boolean");
  return std::get<bool>(v_);
}

std::int64_t Value::as_int() const {
  if (!is_int()) throw Error("TOML value is not an integer");
  return std::get<std::int64_t>(v_);
}

double Value::as_double() const {
  if (is_int()) return static_cast<double>(std::get<std::int64_t>(v_));
  if (!is_float()) throw Error("TOML value is not a number");
  return std::get<double>(v_);
}

const std::string& Value::as_string() const {
  if (!is_string()) throw Error("TOML value is not a string");
  return std::get<std::string>(v_);
}

const Array& Value::as_array() const {
  if (!is_array()) throw Error("TOML value is not an array");
  return std::get<Array>(v_);
}

Array& Value::as_array() {
  if (!is_array()) throw Error("TOML value is not an array");
  return std::get<Array>(v_);
}

const Table& Value::as_table() const {
  if (!is_table()) throw Error("TOML value is not a table");
  return std::get<Table>(v_);
}

Table& Value::as_table() {
  if (!is_table()) throw Error("TOML value is not a table");
  return std::get<Table>(v_);
}

bool Value::contains(const std::string& key) const {
  return is_table() && as_table().count(key) > 0;
}

const Value& Value::at(const std::string& key) const {
  const Table& t = as_table();
  auto it = t.find(key);
  if (it == t.end()) throw Error("missing TOML key: " + key);
  return it->second;
}

const Value* Value::find(const std::string& key) const {
  if (!is_table()) return nullptr;
  const Table& t = as_table();
  auto it = t.find(key);
  return it == t.end() ? nullptr : &it->second;
}

Value& Value::operator[](const std::string& key) { return as_table()[key]; }

namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  Value run() {
    Value root{Table{}};
    Value* current = &root;
    skip_ws_and_comments();
    while (!eof()) {
      if (peek() == '[') {
        current = parse_table_header(root);
      } else {
        parse_key_value(*current);
      }
      skip_ws_and_comments();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, line_, col_); }

  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  char advance() {
    char c = text_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_spaces() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) advance();
  }

  void skip_ws_and_comments() {
    while (!eof()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        advance();
      } else if (c == '#') {
        while (!eof() && peek() != '\n') advance();
      } else {
        break;
      }
    }
  }

  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  void expect_line_end() {
    skip_spaces();
    if (eof()) return;
    if (peek() == '#') {
      while (!eof() && peek() != '\n') advance();
    }
    if (!eof()) {
      if (peek() != '\n' && peek() != '\r') fail("unexpected trailing characters");
      while (!eof() && (peek() == '\n' || peek() == '\r')) advance();
    }
  }

  static bool is_bare_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  }

  std::string parse_key() {
    skip_spaces();
    if (eof()) fail("expected key");
    if (peek() == '"') return parse_basic_string();
    std::string key;
    while (!eof() && is_bare_char(peek())) key += advance();
    if (key.empty()) fail("expected key");
    return key;
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path;
    path.push_back(parse_key());
    skip_spaces();
    while (!eof() && peek() == '.') {
      advance();
      path.push_back(parse_key());
      skip_spaces();
    }
    return path;
  }

  Value* parse_table_header(Value& root) {
    expect('[');
    const bool array_of_tables = !eof() && peek() == '[';
    if (array_of_tables) advance();
    std::vector<std::string> path = parse_key_path();
    expect(']');
    if (array_of_tables) expect(']');
    expect_line_end();

    Value* node = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
      const bool last = (i + 1 == path.size());
      Table& t = node->as_table();
      auto it = t.find(path[i]);
      if (last && array_of_tables) {
        if (it == t.end()) it = t.emplace(path[i], Value(Array{})).first;
        if (!it->second.is_array()) fail("key is not an array of tables: " + path[i]);
        it->second.as_array().push_back(Value(Table{}));
        node = &it->second.as_array().back();
      } else {
        if (it == t.end()) it = t.emplace(path[i], Value(Table{})).first;
        Value& v = it->second;
        if (v.is_array()) {
          if (v.as_array().empty() || !v.as_array().back().is_table())
            fail("cannot descend into array: " + path[i]);
          node = &v.as_array().back();
        } else if (v.is_table()) {
          node = &v;
        } else {
          fail("key already has a non-table value: " + path[i]);
        }
      }
    }
    return node;
  }

  void parse_key_value(Value& table) {
    std::string key = parse_key();
    skip_spaces();
    expect('=');
    skip_spaces();
    Value v = parse_value();
    Table& t = table.as_table();
    if (t.count(key)) fail("duplicate key: " + key);
    t.emplace(std::move(key), std::move(v));
    expect_line_end();
  }

  Value parse_value() {
    skip_spaces();
    if (eof()) fail("expected value");
    char c = peek();
    if (c == '"') return Value(parse_basic_string());
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    if (c == 't' || c == 'f') return parse_bool();
    return parse_number();
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof()) fail("unterminated string");
      char c = advance();
      if (c == '"') break;
      if (c == '\n') fail("newline in string");
      if (c == '\\') {
        if (eof()) fail("dangling escape");
        char e = advance();
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape: \\") + e);
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  Value parse_bool() {
    if (text_.compare(pos_, 4, "true") == 0) {
      for (int i = 0; i < 4; ++i) advance();
      return Value(true);
    }
    if (text_.compare(pos_, 5, "false") == 0) {
      for (int i = 0; i < 5; ++i) advance();
      return Value(false);
    }
    fail("expected boolean");
  }

  Value parse_number() {
    std::string tok;
    while (!eof()) {
      char c = peek();
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' ||
          c == 'e' || c == 'E' || c == '_' || c == 'i' || c == 'n' || c == 'f' || c == 'a') {
        tok += advance();
      } else {
        break;
      }
    }
    if (tok.empty()) fail("expected value");
    std::string clean;
    for (char c : tok)
      if (c != '_') clean += c;

    const bool is_float = clean.find_first_of(".eE") != std::string::npos ||
                          clean.find("inf") != std::string::npos ||
                          clean.find("nan") != std::string::npos;
    if (!is_float) {
      std::int64_t i = 0;
      auto [p, ec] = std::from_chars(clean.data(), clean.data() + clean.size(), i);
      if (ec == std::errc() && p == clean.data() + clean.size()) return Value(i);
      fail("invalid integer: " + tok);
    }
    if (clean == "inf" || clean == "+inf") return Value(HUGE_VAL);
    if (clean == "-inf") return Value(-HUGE_VAL);
    if (clean == "nan" || clean == "+nan" || clean == "-nan") return Value(std::nan(""));
    try {
      std::size_t used = 0;
      double d = std::stod(clean, &used);
      if (used != clean.size()) fail("invalid float: " + tok);
      return Value(d);
    } catch (const std::exception&) {
      fail("invalid float: " + tok);
    }
  }

  Value parse_array() {
    expect('[');
    Array arr;
    while (true) {
      skip_ws_and_comments();
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        advance();
        break;
      }
      arr.push_back(parse_value());
      skip_ws_and_comments();
      if (!eof() && peek() == ',') {
        advance();
        continue;
      }
      skip_ws_and_comments();
      if (eof() || peek() != ']') fail("expected ',' or ']' in array");
    }
    return Value(std::move(arr));
  }

  Value parse_inline_table() {
    expect('{');
    Value v{Table{}};
    skip_spaces();
    if (!eof() && peek() == '}') {
      advance();
      return v;
    }
    while (true) {
      std::string key = parse_key();
      skip_spaces();
      expect('=');
      skip_spaces();
      Value item = parse_value();
      Table& t = v.as_table();
      if (t.count(key)) fail("duplicate key: " + key);
      t.emplace(std::move(key), std::move(item));
      skip_spaces();
      if (!eof() && peek() == ',') {
        advance();
        skip_spaces();
        continue;
      }
      expect('}');
      break;
    }
    return v;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

std::string format_double(double d) {
  if (std::isnan(d)) return "nan";
  if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  std::string s(buf);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string escape(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  out += '"';
  return out;
}

bool needs_quoting(const std::string& key) {
  if (key.empty()) return true;
  for (char c : key)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return true;
  return false;
}

std::string format_key(const std::string& key) { return needs_quoting(key) ? escape(key) : key; }

void write_scalar(std::ostream& os, const Value& v);

void write_inline(std::ostream& os, const Value& v) {
  if (v.is_table()) {
    os << "{ ";
    bool first = true;
    for (const auto& [k, item] : v.as_table()) {
      if (!first) os << ", ";
      first = false;
      os << format_key(k) << " = ";
      write_inline(os, item);
    }
    os << " }";
  } else if (v.is_array()) {
    os << "[";
    bool first = true;
    for (const auto& item : v.as_array()) {
      if (!first) os << ", ";
      first = false;
      write_inline(os, item);
    }
    os << "]";
  } else {
    write_scalar(os, v);
  }
}

void write_scalar(std::ostream& os, const Value& v) {
  if (v.is_bool())
    os << (v.as_bool() ? "true" : "false");
  else if (v.is_int())
    os << v.as_int();
  else if (v.is_float())
    os << format_double(v.as_double());
  else if (v.is_string())
    os << escape(v.as_string());
  else
    throw Error("not a scalar TOML value");
}

bool is_array_of_tables(const Value& v) {
  if (!v.is_array() || v.as_array().empty()) return false;
  for (const auto& item : v.as_array())
    if (!item.is_table()) return false;
  return true;
}

void write_table(std::ostream& os, const Value& table, const std::string& path) {
  // scalars and plain arrays first, then subtables and arrays of tables
  for (const auto& [k, v] : table.as_table()) {
    if (v.is_table() || is_array_of_tables(v)) continue;
    os << format_key(k) << " = ";
    write_inline(os, v);
    os << "\n";
  }
  for (const auto& [k, v] : table.as_table()) {
    const std::string sub = path.empty() ? format_key(k) : path + "." + format_key(k);
    if (v.is_table()) {
      os << "\n[" << sub << "]\n";
      write_table(os, v, sub);
    } else if (is_array_of_tables(v)) {
      for (const auto& item : v.as_array()) {
        os << "\n[[" << sub << "]]\n";
        write_table(os, item, sub);
      }
    }
  }
}

}  // namespace

Value parse(const std::string& text) { return Parser(text).run(); }

Value parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path, 0, 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string serialize(const Value& root) {
  if (!root.is_table()) throw Error("TOML document root must be a table");
  std::ostringstream os;
  write_table(os, root, "");
  return os.str();
}

void write_file(const std::string& path, const Value& root) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << serialize(root);
}

}  // namespace dirmlab::toml
