#include "stem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stem/errors.hpp"

namespace stem {
namespace {

constexpr char kMagic[8] = {'S', 'T', 'E', 'M', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint: truncated archive");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(const ParamStore& params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, e] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, e.value.rows());
    put<std::uint64_t>(out, e.value.cols());
    for (double v : e.value.data()) put<double>(out, v);
  }
  return out;
}

ParamStore deserialize_params(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw ParseError("checkpoint: bad magic");
  }
  const auto count = in.get<std::uint64_t>();
  ParamStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint32_t>();
    const std::string name = in.get_string(len);
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    std::vector<double> data(rows * cols);
    for (double& v : data) v = in.get<double>();
    store.add(name, Matrix(rows, cols, std::move(data)), name.rfind("emb.", 0) == 0);
  }
  if (!in.done()) throw ParseError("checkpoint: trailing bytes");
  return store;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << serialize_params(params);
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_params(ss.str());
}

}  // namespace stem
