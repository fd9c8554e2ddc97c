#include "refloop/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace refloop {
namespace {
constexpr const char* kMagic = "refloop-checkpoint";
}

std::string checkpoint_id(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const auto& d = params.dims();
  const int dims[] = {d.vocab, d.dim, d.features};
  mix(dims, sizeof(dims));
  mix(params.values().data(), params.values().size_bytes());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_checkpoint(std::ostream& out, const ModelParams& params, std::uint64_t schema_hash) {
  const auto& d = params.dims();
  out << kMagic << " 1\n"
      << "vocab " << d.vocab << " dim " << d.dim << " features " << d.features << " schema " << schema_hash << '\n';
  char buf[64];
  for (double v : params.values()) {
    std::snprintf(buf, sizeof(buf), "%a\n", v);
    out << buf;
  }
}

ModelParams read_checkpoint(std::istream& in, std::uint64_t expected_schema_hash) {
  std::string magic, key;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic || version != 1)
    throw std::runtime_error("not a refloop checkpoint");
  ModelDims d;
  std::uint64_t schema = 0;
  if (!(in >> key >> d.vocab) || key != "vocab" || !(in >> key >> d.dim) || key != "dim" ||
      !(in >> key >> d.features) || key != "features" || !(in >> key >> schema) || key != "schema")
    throw std::runtime_error("malformed checkpoint header");
  if (schema != expected_schema_hash) throw std::runtime_error("checkpoint schema hash mismatch");
  ModelParams p(d);
  std::string tok;
  for (double& v : p.values()) {
    if (!(in >> tok)) throw std::runtime_error("checkpoint truncated");
    char* end = nullptr;
    v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw std::runtime_error("bad checkpoint value: " + tok);
  }
  if (in >> tok) throw std::runtime_error("trailing data in checkpoint");
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t schema_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, params, schema_hash);
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_schema_hash) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_checkpoint(in, expected_schema_hash);
}

}  // namespace refloop
