#include "refloop/world.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "refloop/rng.hpp"

namespace refloop {
namespace {

bool is_bijection(const std::vector<int>& perm, int n) {
  if (static_cast<int>(perm.size()) != n) return false;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) return false;
    seen[static_cast<std::size_t>(p)] = 1;
  }
  return true;
}

std::vector<int> random_permutation(Rng& rng, int n) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  return perm;
}

}  // namespace

void PartnerNoise::validate() const {
  for (double p : {speaker_drop, speaker_swap, listener_err, filler})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("partner noise rates must lie in [0, 1]");
}

Shape make_shape(const AttributeSchema& schema, int id, std::vector<int> attributes) {
  if (static_cast<int>(attributes.size()) != schema.num_families())
    throw std::invalid_argument("attribute count does not match schema");
  Shape s{id, std::move(attributes), std::vector<double>(static_cast<std::size_t>(schema.feature_dim()), 0.0)};
  for (int f = 0; f < schema.num_families(); ++f) {
    const int v = s.attributes[static_cast<std::size_t>(f)];
    if (v < 0 || v >= schema.families()[static_cast<std::size_t>(f)].cardinality())
      throw std::invalid_argument("attribute value out of range");
    s.features[static_cast<std::size_t>(schema.offset(f) + v)] = 1.0;
  }
  return s;
}

ShapeLibrary generate_library(const AttributeSchema& schema, int size, std::uint64_t seed) {
  if (size < 10) throw std::invalid_argument("shape library needs at least 10 shapes");
  Rng rng(seed);
  const std::size_t combos = schema.num_combinations();
  std::vector<std::size_t> order(combos);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());

  auto decode = [&](std::size_t code) {
    std::vector<int> attrs(static_cast<std::size_t>(schema.num_families()));
    for (int f = schema.num_families() - 1; f >= 0; --f) {
      const auto card = static_cast<std::size_t>(schema.families()[static_cast<std::size_t>(f)].cardinality());
      attrs[static_cast<std::size_t>(f)] = static_cast<int>(code % card);
      code /= card;
    }
    return attrs;
  };

  ShapeLibrary lib{schema, {}};
  lib.shapes.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    const auto n = static_cast<std::size_t>(i);
    const std::size_t code = n < combos ? order[n] : rng.below(combos);
    lib.shapes.push_back(make_shape(schema, i, decode(code)));
  }
  return lib;
}

double similarity(const Shape& a, const Shape& b) {
  if (a.features.size() != b.features.size()) throw std::invalid_argument("shapes come from different schemas");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.features.size(); ++i) {
    dot += a.features[i] * b.features[i];
    na += a.features[i] * a.features[i];
    nb += b.features[i] * b.features[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (na == nb) return dot / na;  // exact 1 on identical vectors
  return dot / std::sqrt(na * nb);
}

Context build_context(const ShapeLibrary& library, std::uint64_t seed, std::span<const int> block_sizes) {
  const int n = std::accumulate(block_sizes.begin(), block_sizes.end(), 0);
  if (n <= 0 || static_cast<int>(library.size()) < n)
    throw std::invalid_argument("shape library too small for the requested context");
  Rng rng(seed);
  std::vector<char> taken(library.size(), 0);
  Context ctx;
  ctx.block_sizes.assign(block_sizes.begin(), block_sizes.end());

  std::vector<double> weights(library.size());
  for (int block : block_sizes) {
    std::vector<int> free_ids;
    for (std::size_t i = 0; i < library.size(); ++i)
      if (!taken[i]) free_ids.push_back(static_cast<int>(i));
    const int anchor = free_ids[rng.below(free_ids.size())];
    taken[static_cast<std::size_t>(anchor)] = 1;
    ctx.shape_ids.push_back(anchor);
    for (std::size_t i = 0; i < library.size(); ++i)
      weights[i] = taken[i] ? 0.0 : std::max(similarity(library.at(anchor), library.shapes[i]), 0.0) + kSimilaritySmoothing;
    for (int m = 1; m < block; ++m) {
      const auto pick = rng.categorical(weights);
      taken[pick] = 1;
      weights[pick] = 0.0;
      ctx.shape_ids.push_back(static_cast<int>(pick));
    }
  }
  ctx.speaker_perm = random_permutation(rng, n);
  ctx.listener_perm = random_permutation(rng, n);
  return ctx;
}

void validate_context(const Context& ctx) {
  const int n = ctx.size();
  std::vector<int> ids = ctx.shape_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw std::invalid_argument("context repeats a shape");
  if (!is_bijection(ctx.speaker_perm, n) || !is_bijection(ctx.listener_perm, n))
    throw std::invalid_argument("context view permutation is not a bijection");
  if (std::accumulate(ctx.block_sizes.begin(), ctx.block_sizes.end(), 0) != n)
    throw std::invalid_argument("context block sizes do not sum to board size");
}

Context make_context(std::vector<int> shape_ids) {
  Context ctx;
  const int n = static_cast<int>(shape_ids.size());
  ctx.shape_ids = std::move(shape_ids);
  ctx.speaker_perm.resize(static_cast<std::size_t>(n));
  std::iota(ctx.speaker_perm.begin(), ctx.speaker_perm.end(), 0);
  ctx.listener_perm = ctx.speaker_perm;
  ctx.block_sizes = {n};
  return ctx;
}

std::vector<int> distinguishing_families(const ShapeLibrary& library, const Context& ctx, int target) {
  const auto& schema = library.schema;
  const Shape& t = library.at(ctx.shape_ids.at(static_cast<std::size_t>(target)));
  std::vector<const Shape*> remaining;
  for (int i = 0; i < ctx.size(); ++i)
    if (i != target) remaining.push_back(&library.at(ctx.shape_ids[static_cast<std::size_t>(i)]));

  std::vector<char> chosen(static_cast<std::size_t>(schema.num_families()), 0);
  while (!remaining.empty()) {
    int best = -1;
    std::size_t best_count = 0;
    for (int f = 0; f < schema.num_families(); ++f) {
      if (chosen[static_cast<std::size_t>(f)]) continue;
      const auto fi = static_cast<std::size_t>(f);
      const auto count = static_cast<std::size_t>(std::count_if(
          remaining.begin(), remaining.end(), [&](const Shape* s) { return s->attributes[fi] != t.attributes[fi]; }));
      if (count > best_count) {
        best = f;
        best_count = count;
      }
    }
    if (best < 0) {
      std::fill(chosen.begin(), chosen.end(), 1);
      break;
    }
    chosen[static_cast<std::size_t>(best)] = 1;
    const auto bi = static_cast<std::size_t>(best);
    std::erase_if(remaining, [&](const Shape* s) { return s->attributes[bi] != t.attributes[bi]; });
  }
  std::vector<int> families;
  for (int f = 0; f < schema.num_families(); ++f)
    if (chosen[static_cast<std::size_t>(f)]) families.push_back(f);
  return families;
}

Utterance oracle_speak(const ShapeLibrary& library, const Vocabulary& vocab, const Context& ctx, int target,
                       const PartnerNoise& noise, std::uint64_t seed) {
  if (target < 0 || target >= ctx.size()) throw std::invalid_argument("target index out of range");
  Rng rng(seed);
  const Shape& t = library.at(ctx.shape_ids[static_cast<std::size_t>(target)]);
  std::vector<TokenId> content;
  for (int f : distinguishing_families(library, ctx, target))
    content.push_back(vocab.content_token(library.schema, f, t.attributes[static_cast<std::size_t>(f)]));

  if (content.size() >= 2 && rng.bernoulli(noise.speaker_drop))
    content.erase(content.begin() + static_cast<std::ptrdiff_t>(rng.below(content.size())));
  if (rng.bernoulli(noise.speaker_swap))
    content[rng.below(content.size())] = static_cast<TokenId>(rng.below(static_cast<std::size_t>(vocab.num_content())));
  if (vocab.num_fillers() > 0 && rng.bernoulli(noise.filler))
    content.insert(content.begin(), vocab.filler(static_cast<int>(rng.below(static_cast<std::size_t>(vocab.num_fillers())))));
  return make_utterance(vocab, std::move(content));
}

int oracle_listen(const ShapeLibrary& library, const Vocabulary& vocab, const Context& ctx, const Utterance& u,
                  const PartnerNoise& noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> score(static_cast<std::size_t>(ctx.size()), 0);
  for (TokenId tok : u.content()) {
    if (!vocab.is_content(tok)) continue;
    for (int i = 0; i < ctx.size(); ++i) {
      const Shape& s = library.at(ctx.shape_ids[static_cast<std::size_t>(i)]);
      if (s.features[static_cast<std::size_t>(tok)] > 0.0) ++score[static_cast<std::size_t>(i)];
    }
  }
  const int top = *std::max_element(score.begin(), score.end());
  std::vector<int> best;
  for (int i = 0; i < ctx.size(); ++i)
    if (score[static_cast<std::size_t>(i)] == top) best.push_back(i);
  const int choice = best[rng.below(best.size())];
  if (ctx.size() > 1 && rng.bernoulli(noise.listener_err)) {
    const int other = static_cast<int>(rng.below(static_cast<std::size_t>(ctx.size() - 1)));
    return other >= choice ? other + 1 : other;
  }
  return choice;
}

void write_library(std::ostream& out, const ShapeLibrary& library) {
  for (const auto& f : library.schema.families()) {
    out << "family " << f.name;
    for (const auto& v : f.values) out << ' ' << v;
    out << '\n';
  }
  for (const auto& s : library.shapes) {
    out << "shape " << s.id;
    for (int a : s.attributes) out << ' ' << a;
    out << '\n';
  }
}

ShapeLibrary read_library(std::istream& in) {
  std::vector<AttributeFamily> families;
  std::vector<std::pair<int, std::vector<int>>> rows;
  for (std::string line; std::getline(in, line);) {
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    if (kind == "family") {
      AttributeFamily f;
      ls >> f.name;
      for (std::string v; ls >> v;) f.values.push_back(v);
      families.push_back(std::move(f));
    } else if (kind == "shape") {
      int id = 0;
      ls >> id;
      std::vector<int> attrs;
      for (int a; ls >> a;) attrs.push_back(a);
      rows.emplace_back(id, std::move(attrs));
    } else {
      throw std::invalid_argument("unknown library line: " + line);
    }
  }
  ShapeLibrary lib{AttributeSchema(std::move(families)), {}};
  for (auto& [id, attrs] : rows) {
    if (id != static_cast<int>(lib.shapes.size())) throw std::invalid_argument("library ids must be contiguous from 0");
    lib.shapes.push_back(make_shape(lib.schema, id, std::move(attrs)));
  }
  return lib;
}

}  // namespace refloop
