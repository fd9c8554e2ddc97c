#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace refloop {

using TokenId = int;

struct AttributeFamily {
  std::string name;
  std::vector<std::string> values;  // surface word per value

  int cardinality() const { return static_cast<int>(values.size()); }
};

/// Attribute families describing a shape. Feature vectors are the
/// concatenation of one one-hot block per family.
class AttributeSchema {
 public:
  explicit AttributeSchema(std::vector<AttributeFamily> families);

  /// KIND(8), ORIENT(4), DETAIL(6).
  static AttributeSchema standard();
  /// Families named f0, f1, ... with generated value words.
  static AttributeSchema with_cardinalities(std::span<const int> cards);

  const std::vector<AttributeFamily>& families() const { return families_; }
  int num_families() const { return static_cast<int>(families_.size()); }
  int feature_dim() const { return dim_; }
  /// Offset of a family's block inside the feature vector.
  int offset(int family) const { return offsets_[family]; }
  std::uint64_t hash() const { return hash_; }
  std::size_t num_combinations() const;

  bool operator==(const AttributeSchema& o) const { return hash_ == o.hash_; }

 private:
  std::vector<AttributeFamily> families_;
  std::vector<int> offsets_;
  int dim_ = 0;
  std::uint64_t hash_ = 0;
};

/// Token space: one content token per attribute value, then filler
/// tokens, then UNK, then EOS (always the last id).
class Vocabulary {
 public:
  Vocabulary(const AttributeSchema& schema, int num_fillers = 4);

  int size() const { return static_cast<int>(surfaces_.size()); }
  int num_content() const { return num_content_; }
  int num_fillers() const { return num_fillers_; }
  TokenId unk() const { return size() - 2; }
  TokenId eos() const { return size() - 1; }
  TokenId filler(int i) const { return num_content_ + i; }

  bool is_content(TokenId t) const { return t >= 0 && t < num_content_; }
  bool is_filler(TokenId t) const { return t >= num_content_ && t < num_content_ + num_fillers_; }
  /// Content token id is the feature index of the attribute value it names.
  TokenId content_token(const AttributeSchema& schema, int family, int value) const {
    return schema.offset(family) + value;
  }

  const std::string& surface(TokenId t) const { return surfaces_.at(static_cast<std::size_t>(t)); }
  /// Exact surface match, else UNK.
  TokenId lookup(std::string_view word) const;

 private:
  std::vector<std::string> surfaces_;
  int num_content_ = 0;
  int num_fillers_ = 0;
};

/// Token sequence terminated by exactly one EOS.
struct Utterance {
  std::vector<TokenId> tokens;

  /// Tokens before EOS.
  std::span<const TokenId> content() const {
    return {tokens.data(), tokens.empty() ? 0 : tokens.size() - 1};
  }
  std::size_t length() const { return content().size(); }
  bool operator==(const Utterance&) const = default;
  auto operator<=>(const Utterance&) const = default;
};

/// Builds an utterance from content tokens, appending EOS.
Utterance make_utterance(const Vocabulary& vocab, std::vector<TokenId> content);

/// Throws std::invalid_argument unless EOS appears exactly once at the end,
/// the content length is at most max_len, and all ids are in range.
void validate_utterance(const Vocabulary& vocab, const Utterance& u, int max_len);

/// Lowercases, splits on whitespace, maps words by exact surface match
/// (UNK otherwise) and truncates to max_len tokens.
Utterance tokenize_text(const Vocabulary& vocab, std::string_view text, int max_len);

/// Space-joined surfaces of the content tokens.
std::string utterance_text(const Vocabulary& vocab, const Utterance& u);

}  // namespace refloop
