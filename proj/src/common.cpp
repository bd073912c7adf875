#include "embscale/common.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

namespace embscale {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::fork(std::uint64_t stream) {
  return Rng(splitmix64(next_u64() ^ splitmix64(stream)));
}

std::string format_double(double x) {
  if (x == 0.0) return "0";  // also folds -0
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  std::string_view t = text;
  while (!t.empty() && (t.front() == ' ' || t.front() == '\t')) t.remove_prefix(1);
  while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\r'))
    t.remove_suffix(1);
  if (!t.empty() && t.front() == '+') t.remove_prefix(1);
  double value = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), value);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ParseError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  for (const auto& part : split(s, ',')) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::logic_error&) {
      throw ParseError("bad integer list '" + s + "'");
    }
  }
  return out;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      return out;
    }
    out.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trim(std::string_view text) {
  const char* ws = " \t\r\n";
  std::size_t b = text.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  std::size_t e = text.find_last_not_of(ws);
  return std::string(text.substr(b, e - b + 1));
}

// --- binary streams --------------------------------------------------------

void BinaryWriter::u32(std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out_.write(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out_.write(b, 8);
}

void BinaryWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void BinaryWriter::bytes(std::string_view s) {
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}
void BinaryWriter::f32_array(std::span<const double> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void BinaryReader::read(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("unexpected end of binary stream");
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  unsigned char b[8];
  read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float BinaryReader::f32() { return std::bit_cast<float>(u32()); }
double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::bytes(std::size_t n) {
  std::string s(n, '\0');
  if (n > 0) read(s.data(), n);
  return s;
}

std::string BinaryReader::str() {
  std::uint32_t n = u32();
  if (n > (1u << 26)) throw IoError("string length out of range");
  return bytes(n);
}

void BinaryReader::f32_array(std::span<double> out) {
  std::vector<unsigned char> buf(out.size() * 4);
  if (!buf.empty()) read(reinterpret_cast<char*>(buf.data()), buf.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[4 * i + k]) << (8 * k);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

}  // namespace embscale
