#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "doctest.h"
#include "embscale/common.hpp"

using namespace embscale;

TEST_SUITE("common") {

TEST_CASE("rng is reproducible and fork derives distinct streams") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng p(3), q(3);
  Rng c1 = p.fork(1), c2 = q.fork(1);
  CHECK(c1.next_u64() == c2.next_u64());
  Rng r(3);
  Rng d1 = r.fork(1);
  Rng s(3);
  Rng d2 = s.fork(2);
  CHECK(d1.next_u64() != d2.next_u64());
}

TEST_CASE("uniform, below and normal have the right moments") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0, nsum = 0.0, nsq = 0.0;
  std::vector<int> bins(7, 0);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
    const auto k = rng.below(7);
    REQUIRE(k < 7u);
    ++bins[k];
    const double z = rng.normal();
    nsum += z;
    nsq += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sq / n - std::pow(sum / n, 2) == doctest::Approx(1.0 / 12.0).epsilon(0.02));
  CHECK(std::abs(nsum / n) < 0.01);
  CHECK(nsq / n == doctest::Approx(1.0).epsilon(0.02));
  for (int c : bins) CHECK(std::abs(c - n / 7.0) < 5.0 * std::sqrt(n * (1.0 / 7) * (6.0 / 7)));
}

TEST_CASE("shuffle is a permutation") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  Rng rng(5);
  shuffle(v, rng);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 50);
  bool moved = false;
  for (int i = 0; i < 50; ++i) moved = moved || v[static_cast<std::size_t>(i)] != i;
  CHECK(moved);
}

TEST_CASE("fnv1a matches the published test vectors") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("format_double round-trips exactly") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(20)) - 10.0);
    CHECK(parse_double(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-2.72) == "-2.72");
  CHECK(format_double(1.0) == "1");
  CHECK_THROWS_AS(parse_double("abc"), ParseError);
  CHECK_THROWS_AS(parse_double("1.5x"), ParseError);
}

TEST_CASE("string helpers") {
  CHECK(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(trim("  x y \t") == "x y");
  CHECK(join_ints({512, 256, 128}) == "512,256,128");
  CHECK(parse_ints("512,256,128") == std::vector<int>{512, 256, 128});
  CHECK_THROWS_AS(parse_ints("1,two"), ParseError);
}

TEST_CASE("binary streams are little-endian and round-trip") {
  std::stringstream ss;
  BinaryWriter w(ss);
  w.u32(0x01020304u);
  w.u64(42);
  w.f32(1.5f);
  w.f64(-0.25);
  w.str("slice");
  const std::vector<double> vals = {0.5, -1.0, 3.25};
  w.f32_array(vals);
  const std::string raw = ss.str();
  CHECK(static_cast<unsigned char>(raw[0]) == 0x04);
  CHECK(static_cast<unsigned char>(raw[3]) == 0x01);

  BinaryReader r(ss);
  CHECK(r.u32() == 0x01020304u);
  CHECK(r.u64() == 42u);
  CHECK(r.f32() == 1.5f);
  CHECK(r.f64() == -0.25);
  CHECK(r.str() == "slice");
  std::vector<double> back(3);
  r.f32_array(back);
  CHECK(back == vals);
  CHECK_THROWS_AS(r.u32(), IoError);
}

}
