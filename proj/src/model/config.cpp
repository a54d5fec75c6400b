#include "ebt/model/config.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "ebt/errors.hpp"

namespace ebt {

void ModelConfig::validate() const {
  if (p == 0 || p_emb == 0 || n_heads == 0 || emb_width == 0 || oh_width == 0 || n_blocks == 0) {
    throw ConfigError("model config: all dimensions must be >= 1");
  }
  if (key_dim() == 0 || value_dim() == 0) {
    throw ConfigError("model config: per-head widths resolve to zero (p_emb < n_heads?)");
  }
  if (n_heads * value_dim() != p_emb) {
    throw ConfigError("model config: n_heads * p_v must equal p_emb (" + std::to_string(n_heads * value_dim()) +
                      " vs " + std::to_string(p_emb) + ")");
  }
  if (!(r_clip > 0.0)) throw ConfigError("model config: r_clip must be > 0");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", r_clip);
  out << "p=" << p << "\n"
      << "p_emb=" << p_emb << "\n"
      << "n_heads=" << n_heads << "\n"
      << "p_k=" << p_k << "\n"
      << "p_v=" << p_v << "\n"
      << "emb_depth=" << emb_depth << "\n"
      << "emb_width=" << emb_width << "\n"
      << "oh_depth=" << oh_depth << "\n"
      << "oh_width=" << oh_width << "\n"
      << "n_blocks=" << n_blocks << "\n"
      << "r_clip=" << buf << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("model config: missing key ") + key);
    return it->second;
  };
  auto get_size = [&](const char* key) -> std::size_t {
    try {
      return static_cast<std::size_t>(std::stoull(get(key)));
    } catch (const std::logic_error&) {
      throw FormatError(std::string("model config: bad value for ") + key);
    }
  };
  ModelConfig c;
  c.p = get_size("p");
  c.p_emb = get_size("p_emb");
  c.n_heads = get_size("n_heads");
  c.p_k = get_size("p_k");
  c.p_v = get_size("p_v");
  c.emb_depth = get_size("emb_depth");
  c.emb_width = get_size("emb_width");
  c.oh_depth = get_size("oh_depth");
  c.oh_width = get_size("oh_width");
  c.n_blocks = get_size("n_blocks");
  try {
    c.r_clip = std::stod(get("r_clip"));
  } catch (const std::logic_error&) {
    throw FormatError("model config: bad value for r_clip");
  }
  c.validate();
  return c;
}

}  // namespace ebt
