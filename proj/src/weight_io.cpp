#include "febench/weight_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace febench {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'E', 'B', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

template <typename U>
void put(std::vector<char>& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(U)) {
      throw WeightFileError(std::string("weight file truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
    std::array<char, sizeof(U)> b;
    std::memcpy(b.data(), bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b.data(), sizeof(U));
    return v;
  }

  std::string str(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw WeightFileError("weight file truncated inside a tensor name");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const ParameterSet<float>& weights, const std::filesystem::path& path) {
  std::vector<char> out(kMagic.begin(), kMagic.end());
  put<std::uint8_t>(out, kWeightFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, t] : weights.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& [name, t] : weights.entries())
    for (float v : t.data()) put<float>(out, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw WeightFileError("cannot write weight file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw WeightFileError("failed writing weight file " + path.string());
}

ParameterSet<float> load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WeightFileError("cannot open weight file " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(f), {}));

  for (char expected : kMagic) {
    if (r.get<char>("magic") != expected) throw WeightFileError("bad magic in " + path.string() + " (expected FEB1)");
  }
  const auto version = r.get<std::uint8_t>("version");
  if (version != kWeightFileVersion) {
    throw WeightFileError("unsupported weight file version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("entry count");

  std::vector<std::pair<std::string, Shape>> header;
  std::uint64_t payload_values = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    auto name = r.str(len);
    if (r.get<std::uint8_t>("dtype") != kDtypeF32) throw WeightFileError("tensor '" + name + "' has unsupported dtype");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("dimension");
      if (d == 0) throw WeightFileError("tensor '" + name + "' declares a zero dimension");
    }
    payload_values += numel(shape);
    header.emplace_back(std::move(name), std::move(shape));
  }
  if (r.remaining() != payload_values * sizeof(float)) {
    throw WeightFileError("payload of " + std::to_string(r.remaining()) + " bytes does not match the " +
                          std::to_string(payload_values * sizeof(float)) + " bytes declared by the header");
  }
  ParameterSet<float> out;
  for (auto& [name, shape] : header) {
    std::vector<float> data(numel(shape));
    for (auto& v : data) v = r.get<float>("payload");
    out.add(std::move(name), Tensor<float>::from(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace febench
