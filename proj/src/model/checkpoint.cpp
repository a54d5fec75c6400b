#include "ebt/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ebt/errors.hpp"

namespace ebt {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'B', 'T', 'F'};
// Rejects absurd sizes before allocating.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint64_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_doubles(double* dst, std::size_t n, const char* what) {
    need(n * sizeof(double), what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckpt.config_text);
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(out, name);
    put<std::uint64_t>(out, t.rank());
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  Reader r(bytes);
  r.get<std::uint32_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_text = r.get_string("config");
  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string("tensor name");
    const auto rank = r.get<std::uint64_t>("rank");
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: tensor " + name + " has invalid rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dims");
      if (d == 0 || d > kMaxElements || n * d > kMaxElements) {
        throw FormatError("checkpoint: tensor " + name + " has invalid dimensions");
      }
      n *= d;
      shape.push_back(d);
    }
    std::vector<double> data(n);
    r.read_doubles(data.data(), n, "payload");
    if (!ckpt.tensors.emplace(name, Tensor(shape, std::move(data))).second) {
      throw FormatError("checkpoint: duplicate tensor " + name);
    }
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint model_to_checkpoint(const Model& model) {
  Checkpoint ckpt;
  ckpt.config_text = model.config.to_text();
  ckpt.tensors = model.params;
  for (const auto& [name, ad] : model.adapters) {
    ckpt.tensors.emplace("lora/" + name + "/A", ad.a);
    ckpt.tensors.emplace("lora/" + name + "/B", ad.b);
  }
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model;
  model.config = ModelConfig::from_text(ckpt.config_text);
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("oracle/", 0) == 0) continue;
    if (name.rfind("lora/", 0) == 0) {
      const auto slash = name.rfind('/');
      const std::string target = name.substr(5, slash - 5);
      const std::string part = name.substr(slash + 1);
      auto& ad = model.adapters[target];
      ad.target = target;
      if (part == "A") {
        ad.a = t;
      } else if (part == "B") {
        ad.b = t;
      } else {
        throw FormatError("checkpoint: unknown adapter tensor " + name);
      }
      continue;
    }
    model.params.emplace(name, t);
  }
  check_params(model.config, model.params);
  for (const auto& [name, ad] : model.adapters) {
    if (ad.a.empty() || ad.b.empty()) throw FormatError("checkpoint: adapter " + name + " is missing A or B");
  }
  check_adapters(model.config, model.params, model.adapters);
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  write_checkpoint(path, model_to_checkpoint(model));
}

Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

}  // namespace ebt
