#include "refloop/language.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace refloop {
namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

AttributeSchema::AttributeSchema(std::vector<AttributeFamily> families)
    : families_(std::move(families)) {
  if (families_.empty()) throw std::invalid_argument("schema needs at least one family");
  std::unordered_set<std::string> names;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : families_) {
    if (f.cardinality() < 2) throw std::invalid_argument("family '" + f.name + "' has cardinality < 2");
    if (!names.insert(f.name).second) throw std::invalid_argument("duplicate family name '" + f.name + "'");
    offsets_.push_back(dim_);
    dim_ += f.cardinality();
    h = fnv1a(h, f.name);
    h = fnv1a(h, "|");
    for (const auto& v : f.values) {
      h = fnv1a(h, v);
      h = fnv1a(h, ",");
    }
  }
  hash_ = h;
}

AttributeSchema AttributeSchema::standard() {
  return AttributeSchema({
      {"KIND", {"circle", "square", "triangle", "star", "cross", "heart", "moon", "arrow"}},
      {"ORIENT", {"up", "right", "down", "left"}},
      {"DETAIL", {"plain", "dotted", "striped", "hollow", "spiky", "wavy"}},
  });
}

AttributeSchema AttributeSchema::with_cardinalities(std::span<const int> cards) {
  std::vector<AttributeFamily> fams;
  for (std::size_t i = 0; i < cards.size(); ++i) {
    AttributeFamily f{"f" + std::to_string(i), {}};
    for (int v = 0; v < cards[i]; ++v) f.values.push_back("w" + std::to_string(i) + "_" + std::to_string(v));
    fams.push_back(std::move(f));
  }
  return AttributeSchema(std::move(fams));
}

std::size_t AttributeSchema::num_combinations() const {
  std::size_t n = 1;
  for (const auto& f : families_) n *= static_cast<std::size_t>(f.cardinality());
  return n;
}

Vocabulary::Vocabulary(const AttributeSchema& schema, int num_fillers)
    : num_content_(schema.feature_dim()), num_fillers_(num_fillers) {
  static const char* kFillers[] = {"the", "a", "shape", "one", "thing", "it", "like", "with"};
  for (const auto& f : schema.families())
    for (const auto& v : f.values) surfaces_.push_back(v);
  for (int i = 0; i < num_fillers; ++i)
    surfaces_.push_back(i < 8 ? std::string(kFillers[i]) : "filler" + std::to_string(i));
  surfaces_.push_back("<unk>");
  surfaces_.push_back("<eos>");
}

TokenId Vocabulary::lookup(std::string_view word) const {
  // UNK and EOS are not reachable from text.
  for (int i = 0; i < unk(); ++i)
    if (surfaces_[static_cast<std::size_t>(i)] == word) return i;
  return unk();
}

Utterance make_utterance(const Vocabulary& vocab, std::vector<TokenId> content) {
  content.push_back(vocab.eos());
  return Utterance{std::move(content)};
}

void validate_utterance(const Vocabulary& vocab, const Utterance& u, int max_len) {
  if (u.tokens.empty() || u.tokens.back() != vocab.eos())
    throw std::invalid_argument("utterance must end with EOS");
  if (static_cast<int>(u.length()) > max_len)
    throw std::invalid_argument("utterance longer than maximum length");
  for (TokenId t : u.content()) {
    if (t < 0 || t >= vocab.size()) throw std::invalid_argument("token id out of range");
    if (t == vocab.eos()) throw std::invalid_argument("EOS before end of utterance");
  }
}

Utterance tokenize_text(const Vocabulary& vocab, std::string_view text, int max_len) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lower);
  std::vector<TokenId> content;
  for (std::string w; in >> w && static_cast<int>(content.size()) < max_len;) content.push_back(vocab.lookup(w));
  return make_utterance(vocab, std::move(content));
}

std::string utterance_text(const Vocabulary& vocab, const Utterance& u) {
  std::string out;
  for (TokenId t : u.content()) {
    if (!out.empty()) out += ' ';
    out += vocab.surface(t);
  }
  return out;
}

}  // namespace refloop
