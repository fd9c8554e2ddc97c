#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "refloop/language.hpp"

namespace refloop {

struct Shape {
  int id = 0;
  std::vector<int> attributes;   // one value index per family
  std::vector<double> features;  // concatenated one-hot blocks
};

struct ShapeLibrary {
  AttributeSchema schema;
  std::vector<Shape> shapes;

  const Shape& at(int id) const { return shapes.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return shapes.size(); }
};

/// A game board. shape_ids is the canonical order used by models and
/// records; the permutations give each player's on-screen order
/// (view position i shows canonical slot perm[i]).
struct Context {
  std::vector<int> shape_ids;
  std::vector<int> speaker_perm;
  std::vector<int> listener_perm;
  std::vector<int> block_sizes;

  int size() const { return static_cast<int>(shape_ids.size()); }
  bool operator==(const Context&) const = default;
};

/// Simulated-partner error rates. filler is the probability that the
/// oracle speaker prefixes its description with a filler word.
struct PartnerNoise {
  double speaker_drop = 0.08;
  double speaker_swap = 0.04;
  double listener_err = 0.06;
  double filler = 0.3;

  static PartnerNoise none() { return {0.0, 0.0, 0.0, 0.0}; }
  void validate() const;
};

inline constexpr double kSimilaritySmoothing = 1e-6;
inline const std::vector<int> kDefaultBlocks{3, 3, 4};

Shape make_shape(const AttributeSchema& schema, int id, std::vector<int> attributes);

ShapeLibrary generate_library(const AttributeSchema& schema, int size, std::uint64_t seed);

/// Cosine similarity of feature vectors.
double similarity(const Shape& a, const Shape& b);

Context build_context(const ShapeLibrary& library, std::uint64_t seed,
                      std::span<const int> block_sizes = kDefaultBlocks);

/// Throws std::invalid_argument if ids repeat, permutations are not
/// bijections, or block sizes do not sum to the board size.
void validate_context(const Context& context);

/// Context without similarity structure, used by fixtures and the
/// small-world oracles. Identity permutations.
Context make_context(std::vector<int> shape_ids);

/// Families (in canonical order) a noiseless oracle speaker would name.
/// Empty result never happens; all families are returned when no subset
/// distinguishes the target.
std::vector<int> distinguishing_families(const ShapeLibrary& library, const Context& context, int target);

Utterance oracle_speak(const ShapeLibrary& library, const Vocabulary& vocab, const Context& context,
                       int target, const PartnerNoise& noise, std::uint64_t seed);

int oracle_listen(const ShapeLibrary& library, const Vocabulary& vocab, const Context& context,
                  const Utterance& utterance, const PartnerNoise& noise, std::uint64_t seed);

/// Plain-text table: `family <name> <value words...>` lines, then
/// `shape <id> <value indices...>` lines.
void write_library(std::ostream& out, const ShapeLibrary& library);
ShapeLibrary read_library(std::istream& in);

}  // namespace refloop
