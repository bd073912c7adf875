#ifndef EMBSCALE_COMMON_HPP_
#define EMBSCALE_COMMON_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace embscale {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error hierarchy. Every failure the library reports derives from Error so
// callers can catch broadly or by kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EMBSCALE_DEFINE_ERROR(Name)         \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  };

EMBSCALE_DEFINE_ERROR(InvalidEmbodiment)
EMBSCALE_DEFINE_ERROR(UnsupportedVariation)
EMBSCALE_DEFINE_ERROR(SizeMismatch)
EMBSCALE_DEFINE_ERROR(ParseError)
EMBSCALE_DEFINE_ERROR(UnsupportedTopology)
EMBSCALE_DEFINE_ERROR(ShapeMismatch)
EMBSCALE_DEFINE_ERROR(NonFiniteLoss)
EMBSCALE_DEFINE_ERROR(NonFiniteState)
EMBSCALE_DEFINE_ERROR(InvalidCurriculum)
EMBSCALE_DEFINE_ERROR(MissingExpert)
EMBSCALE_DEFINE_ERROR(DegenerateInput)
EMBSCALE_DEFINE_ERROR(IoError)
EMBSCALE_DEFINE_ERROR(BufferExhausted)

#undef EMBSCALE_DEFINE_ERROR

// Portable pseudo-random generator. mt19937_64's output sequence is fixed by
// the standard; the distributions are implemented here because std::
// distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);
  // Standard normal via Box-Muller (one cached value).
  double normal();

  // Derives an independent child stream; used to give each environment or
  // embodiment its own generator.
  Rng fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
// 64-bit FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(std::string_view s);

// Fisher-Yates shuffle driven by Rng::below.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// Shortest decimal text that parses back to exactly the same double.
// Locale-independent.
std::string format_double(double x);
double parse_double(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

// Comma-separated integer lists, e.g. "512,256,128".
std::string join_ints(const std::vector<int>& v);
std::vector<int> parse_ints(const std::string& s);

// Little-endian binary stream helpers shared by the checkpoint, slice and
// trajectory containers.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s);
  void str(std::string_view s);  // u32 length prefix
  void f32_array(std::span<const double> values);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  std::string str();
  void f32_array(std::span<double> out);

 private:
  std::istream& in_;
  void read(char* dst, std::size_t n);
};

}  // namespace embscale

#endif  // EMBSCALE_COMMON_HPP_
