#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dirmlab/csv.hpp"
#include "dirmlab/rng.hpp"
#include "dirmlab/toml.hpp"

using namespace dirmlab;

TEST_CASE("splitmix64 streams are deterministic and independent") {
  SplitMix64 a(7);
  SplitMix64 b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  CHECK(SplitMix64::mix(1, 0) != SplitMix64::mix(1, 1));
  CHECK(SplitMix64::mix(1, 0) != SplitMix64::mix(2, 0));
}

TEST_CASE("normal draws have the right first moments") {
  SplitMix64 gen(123);
  const int n = 200000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = gen.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("shuffled_indices is a permutation and seed-stable") {
  SplitMix64 g1(5);
  SplitMix64 g2(5);
  auto p1 = shuffled_indices(100, g1);
  auto p2 = shuffled_indices(100, g2);
  CHECK(p1 == p2);
  std::vector<bool> seen(100, false);
  for (auto i : p1) {
    CHECK(!seen[i]);
    seen[i] = true;
  }
}

TEST_CASE("toml parses tables, arrays of tables and inline tables") {
  const std::string text = R"(# comment
title = "demo"
count = 3
ratio = 1.5
flag = true

[owner]
name = "ada"

[[item]]
id = 1
coef = { a = -1.0, b = 2.5 }

[[item]]
id = 2
values = [1, 2, 3]
)";
  const toml::Value doc = toml::parse(text);
  CHECK(doc.at("title").as_string() == "demo");
  CHECK(doc.at("count").as_int() == 3);
  CHECK(doc.at("ratio").as_double() == 1.5);
  CHECK(doc.at("flag").as_bool());
  CHECK(doc.at("owner").at("name").as_string() == "ada");
  const auto& items = doc.at("item").as_array();
  REQUIRE(items.size() == 2);
  CHECK(items[0].at("coef").at("a").as_double() == -1.0);
  CHECK(items[1].at("values").as_array().size() == 3);
}

TEST_CASE("toml reports parse errors with line and column") {
  try {
    toml::parse("a = 1\nb = \n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
  CHECK_THROWS_AS(toml::parse("a = 1\na = 2\n"), ParseError);
  CHECK_THROWS_AS(toml::parse("[unclosed\n"), ParseError);
}

TEST_CASE("toml serialization round-trips values exactly") {
  toml::Value doc{toml::Table{}};
  doc["pi"] = 3.141592653589793;
  doc["tiny"] = 1e-17;
  doc["n"] = std::int64_t{-42};
  doc["s"] = std::string("with \"quotes\" and \\ backslash");
  toml::Value sub{toml::Table{}};
  sub["x"] = 0.1;
  doc["sub"] = std::move(sub);
  toml::Array arr;
  arr.push_back(toml::Value(1.5));
  arr.push_back(toml::Value(2.5));
  doc["grid"] = toml::Value(std::move(arr));

  const toml::Value back = toml::parse(toml::serialize(doc));
  CHECK(back == doc);
}

TEST_CASE("csv fields are RFC 4180 quoted and numbers round-trip") {
  CHECK(csv::field("plain") == "plain");
  CHECK(csv::field("a,b") == "\"a,b\"");
  CHECK(csv::field("say \"hi\"") == "\"say \"\"hi\"\"\"");

  const double v = 0.1234567890123456789;
  CHECK(std::stod(csv::num(v)) == v);

  std::ostringstream os;
  csv::write_row(os, {"a,b", "c", csv::num(2.5)});
  std::istringstream is(os.str());
  const auto rows = csv::read(is);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0][0] == "a,b");
  CHECK(rows[0][2] == "2.5");
}
