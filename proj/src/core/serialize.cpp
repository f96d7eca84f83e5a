#include "s2st/core/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace s2st {

namespace {

constexpr char kMagic[4] = {'S', '2', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("named-tensor file truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_named_tensors(const NamedTensors& tensors) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

NamedTensors decode_named_tensors(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(4) != std::string(kMagic, 4)) throw std::runtime_error("not a named-tensor file");
  if (in.get_le<std::uint32_t>() != kVersion) throw std::runtime_error("unsupported named-tensor version");
  const auto count = in.get_le<std::uint32_t>();
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get_le<std::uint32_t>();
    std::string name = in.get_bytes(name_len);
    const auto rank = in.get_le<std::uint32_t>();
    if (rank > 2) throw std::runtime_error("tensor '" + name + "' has unsupported rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get_le<std::uint64_t>());
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  if (!in.done()) throw std::runtime_error("trailing bytes in named-tensor file");
  return out;
}

void save_named_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  const std::string bytes = encode_named_tensors(tensors);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors load_named_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_named_tensors(ss.str());
}

}  // namespace s2st
