#include "refloop/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace refloop {
namespace {

using Vec = std::vector<double>;

double log_sum_exp(const Vec& x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void check_dims(const World& world, const ModelParams& params) {
  const auto& d = params.dims();
  if (d.vocab != world.vocab.size() || d.features != world.library.schema.feature_dim())
    throw std::invalid_argument("model dimensions do not match world");
}

void check_tokens(const World& world, const Utterance& u) {
  validate_utterance(world.vocab, u, world.max_len);
}

void check_slot(const Context& ctx, int slot) {
  if (slot < 0 || slot >= ctx.size()) throw std::invalid_argument("slot index out of range");
}

const Shape& slot_shape(const World& world, const Context& ctx, int slot) {
  return world.library.at(ctx.shape_ids[static_cast<std::size_t>(slot)]);
}

/// z = M f for a shape.
Vec project(const ModelParams& p, const Shape& s) {
  const int d = p.dims().dim;
  Vec z(static_cast<std::size_t>(d), 0.0);
  for (int f = 0; f < p.dims().features; ++f) {
    const double x = s.features[static_cast<std::size_t>(f)];
    if (x == 0.0) continue;
    for (int k = 0; k < d; ++k) z[static_cast<std::size_t>(k)] += p.M(k, f) * x;
  }
  return z;
}

/// Mean embedding of the content tokens; zero for an empty utterance.
Vec mean_embedding(const ModelParams& p, std::span<const TokenId> tokens) {
  const int d = p.dims().dim;
  Vec psi(static_cast<std::size_t>(d), 0.0);
  if (tokens.empty()) return psi;
  for (TokenId t : tokens)
    for (int k = 0; k < d; ++k) psi[static_cast<std::size_t>(k)] += p.E(t, k);
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : psi) v *= inv;
  return psi;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec listener_logits(const World& world, const ModelParams& p, const Context& ctx, const Vec& psi,
                    std::vector<Vec>* projections) {
  Vec logits(static_cast<std::size_t>(ctx.size()));
  for (int t = 0; t < ctx.size(); ++t) {
    Vec z = project(p, slot_shape(world, ctx, t));
    logits[static_cast<std::size_t>(t)] = p.beta() * dot(psi, z);
    if (projections) projections->push_back(std::move(z));
  }
  return logits;
}

/// Speaker forward pass state for one step.
struct SpeakerStep {
  Vec context_mean;  // c_j
  Vec hidden;        // h_j = z + Wc c_j
  Vec logits;
};

SpeakerStep speaker_step(const ModelParams& p, const Vec& z, const Vec& prefix_sum, int prefix_len) {
  const int d = p.dims().dim;
  const int V = p.dims().vocab;
  SpeakerStep s;
  s.context_mean.assign(static_cast<std::size_t>(d), 0.0);
  if (prefix_len > 0)
    for (int k = 0; k < d; ++k)
      s.context_mean[static_cast<std::size_t>(k)] = prefix_sum[static_cast<std::size_t>(k)] / prefix_len;
  s.hidden = z;
  if (prefix_len > 0)
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += p.Wc(i, j) * s.context_mean[static_cast<std::size_t>(j)];
      s.hidden[static_cast<std::size_t>(i)] += acc;
    }
  s.logits.resize(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) {
    const double* e = p.E_row(v);
    double acc = p.b(v);
    for (int k = 0; k < d; ++k) acc += e[k] * s.hidden[static_cast<std::size_t>(k)];
    s.logits[static_cast<std::size_t>(v)] = acc;
  }
  return s;
}

void add_row(const ModelParams& p, TokenId t, Vec& sum) {
  const double* e = p.E_row(t);
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += e[k];
}

}  // namespace

World::World(ShapeLibrary lib, int num_fillers, int max_len_)
    : library(std::move(lib)), vocab(library.schema, num_fillers), max_len(max_len_) {
  if (max_len < 1) throw std::invalid_argument("max_len must be positive");
}

ModelParams::ModelParams(ModelDims dims) : dims_(dims) {
  if (dims.vocab <= 0 || dims.dim <= 0 || dims.features <= 0) throw std::invalid_argument("model dimensions must be positive");
  const auto V = static_cast<std::size_t>(dims.vocab), d = static_cast<std::size_t>(dims.dim),
             D = static_cast<std::size_t>(dims.features);
  off_m_ = V * d;
  off_beta_ = off_m_ + d * D;
  off_w_ = off_beta_ + 1;
  off_b_ = off_w_ + d * d;
  data_.assign(off_b_ + V, 0.0);
}

ModelParams ModelParams::random(ModelDims dims, std::uint64_t seed, double scale) {
  ModelParams p(dims);
  Rng rng(seed);
  for (double& v : p.data_) v = (2.0 * rng.uniform() - 1.0) * scale;
  return p;
}

void ModelParams::axpy(double scale, const ModelParams& other) {
  if (!(dims_ == other.dims_)) throw std::invalid_argument("parameter shapes differ");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

bool ModelParams::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

ModelDims model_dims(const World& world, int dim) {
  return ModelDims{world.vocab.size(), dim, world.library.schema.feature_dim()};
}

std::vector<double> listener_log_distribution(const World& world, const ModelParams& params, const Context& ctx,
                                              const Utterance& u) {
  check_dims(world, params);
  check_tokens(world, u);
  const Vec psi = mean_embedding(params, u.content());
  Vec logits = listener_logits(world, params, ctx, psi, nullptr);
  const double lse = log_sum_exp(logits);
  for (double& v : logits) v -= lse;
  return logits;
}

std::vector<double> listener_distribution(const World& world, const ModelParams& params, const Context& ctx,
                                          const Utterance& u) {
  Vec logp = listener_log_distribution(world, params, ctx, u);
  // Exponentiate and renormalize so the sum is 1 to rounding.
  double s = 0.0;
  for (double& v : logp) s += (v = std::exp(v));
  for (double& v : logp) v /= s;
  return logp;
}

double speaker_logprob(const World& world, const ModelParams& params, const Context& ctx, int target,
                       const Utterance& u) {
  check_dims(world, params);
  check_tokens(world, u);
  check_slot(ctx, target);
  const Vec z = project(params, slot_shape(world, ctx, target));
  Vec prefix(static_cast<std::size_t>(params.dims().dim), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < u.tokens.size(); ++j) {
    const SpeakerStep s = speaker_step(params, z, prefix, static_cast<int>(j));
    const TokenId tok = u.tokens[j];
    total += s.logits[static_cast<std::size_t>(tok)] - log_sum_exp(s.logits);
    if (j + 1 < u.tokens.size()) add_row(params, tok, prefix);
  }
  return total;
}

Utterance sample_utterance(const World& world, const ModelParams& params, const Context& ctx, int target,
                           const SampleOptions& options, Rng& rng) {
  check_dims(world, params);
  check_slot(ctx, target);
  if (!(options.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  const Vec z = project(params, slot_shape(world, ctx, target));
  const int V = params.dims().vocab;
  const TokenId eos = world.vocab.eos();
  Vec prefix(static_cast<std::size_t>(params.dims().dim), 0.0);
  std::vector<TokenId> content;
  Vec weights(static_cast<std::size_t>(V));
  while (static_cast<int>(content.size()) < world.max_len) {
    const SpeakerStep s = speaker_step(params, z, prefix, static_cast<int>(content.size()));
    TokenId tok = 0;
    if (options.greedy) {
      tok = static_cast<TokenId>(std::max_element(s.logits.begin(), s.logits.end()) - s.logits.begin());
    } else {
      const double m = *std::max_element(s.logits.begin(), s.logits.end());
      for (int v = 0; v < V; ++v)
        weights[static_cast<std::size_t>(v)] = std::exp((s.logits[static_cast<std::size_t>(v)] - m) / options.temperature);
      tok = static_cast<TokenId>(rng.categorical(weights));
    }
    if (tok == eos) break;
    content.push_back(tok);
    add_row(params, tok, prefix);
  }
  return make_utterance(world.vocab, std::move(content));
}

Utterance sample_utterance(const World& world, const ModelParams& params, const Context& ctx, int target,
                           const SampleOptions& options, std::uint64_t seed) {
  Rng rng(seed);
  return sample_utterance(world, params, ctx, target, options, rng);
}

double accumulate_listener_grad(const World& world, const ModelParams& params, const Context& ctx,
                                const Utterance& u, int selected, double weight, ModelParams& grad) {
  check_dims(world, params);
  check_tokens(world, u);
  check_slot(ctx, selected);
  const int d = params.dims().dim;
  const auto content = u.content();
  const Vec psi = mean_embedding(params, content);
  std::vector<Vec> z;
  Vec logits = listener_logits(world, params, ctx, psi, &z);
  const double lse = log_sum_exp(logits);
  const double logp = logits[static_cast<std::size_t>(selected)] - lse;
  if (weight == 0.0) return logp;

  const double beta = params.beta();
  Vec d_psi(static_cast<std::size_t>(d), 0.0);
  double d_beta = 0.0;
  for (int t = 0; t < ctx.size(); ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const double g = weight * ((t == selected ? 1.0 : 0.0) - std::exp(logits[ti] - lse));
    d_beta += g * dot(psi, z[ti]);
    for (int k = 0; k < d; ++k) d_psi[static_cast<std::size_t>(k)] += g * beta * z[ti][static_cast<std::size_t>(k)];
    const Shape& s = slot_shape(world, ctx, t);
    for (int f = 0; f < params.dims().features; ++f) {
      const double x = s.features[static_cast<std::size_t>(f)];
      if (x == 0.0) continue;
      for (int k = 0; k < d; ++k) grad.M(k, f) += g * beta * psi[static_cast<std::size_t>(k)] * x;
    }
  }
  grad.beta() += d_beta;
  if (!content.empty()) {
    const double inv = 1.0 / static_cast<double>(content.size());
    for (TokenId tok : content)
      for (int k = 0; k < d; ++k) grad.E(tok, k) += d_psi[static_cast<std::size_t>(k)] * inv;
  }
  return logp;
}

double accumulate_speaker_grad(const World& world, const ModelParams& params, const Context& ctx, int target,
                               const Utterance& u, double weight, ModelParams& grad) {
  check_dims(world, params);
  check_tokens(world, u);
  check_slot(ctx, target);
  const int d = params.dims().dim;
  const int V = params.dims().vocab;
  const Vec z = project(params, slot_shape(world, ctx, target));
  const std::size_t steps = u.tokens.size();

  Vec prefix(static_cast<std::size_t>(d), 0.0);
  Vec d_z(static_cast<std::size_t>(d), 0.0);
  // d_c[j] = dL/dc_j scaled by 1/j, the share each prefix token receives.
  std::vector<Vec> d_c_share(steps, Vec(static_cast<std::size_t>(d), 0.0));
  double total = 0.0;
  Vec d_h(static_cast<std::size_t>(d));
  for (std::size_t j = 0; j < steps; ++j) {
    const SpeakerStep s = speaker_step(params, z, prefix, static_cast<int>(j));
    const TokenId tok = u.tokens[j];
    const double lse = log_sum_exp(s.logits);
    total += s.logits[static_cast<std::size_t>(tok)] - lse;
    if (j + 1 < steps) add_row(params, tok, prefix);
    if (weight == 0.0) continue;

    std::fill(d_h.begin(), d_h.end(), 0.0);
    for (int v = 0; v < V; ++v) {
      const double g = weight * ((v == tok ? 1.0 : 0.0) - std::exp(s.logits[static_cast<std::size_t>(v)] - lse));
      grad.b(v) += g;
      const double* e = params.E_row(v);
      for (int k = 0; k < d; ++k) {
        grad.E(v, k) += g * s.hidden[static_cast<std::size_t>(k)];
        d_h[static_cast<std::size_t>(k)] += g * e[k];
      }
    }
    for (int k = 0; k < d; ++k) d_z[static_cast<std::size_t>(k)] += d_h[static_cast<std::size_t>(k)];
    if (j == 0) continue;
    for (int i = 0; i < d; ++i)
      for (int jj = 0; jj < d; ++jj)
        grad.Wc(i, jj) += d_h[static_cast<std::size_t>(i)] * s.context_mean[static_cast<std::size_t>(jj)];
    Vec& share = d_c_share[j];
    for (int jj = 0; jj < d; ++jj) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += params.Wc(i, jj) * d_h[static_cast<std::size_t>(i)];
      share[static_cast<std::size_t>(jj)] = acc / static_cast<double>(j);
    }
  }
  if (weight == 0.0) return total;

  // Token at position i feeds every later prefix mean c_j, j > i.
  Vec carry(static_cast<std::size_t>(d), 0.0);
  for (std::size_t j = steps; j-- > 1;) {
    for (int k = 0; k < d; ++k) carry[static_cast<std::size_t>(k)] += d_c_share[j][static_cast<std::size_t>(k)];
    const TokenId tok = u.tokens[j - 1];
    for (int k = 0; k < d; ++k) grad.E(tok, k) += carry[static_cast<std::size_t>(k)];
  }
  const Shape& s = slot_shape(world, ctx, target);
  for (int f = 0; f < params.dims().features; ++f) {
    const double x = s.features[static_cast<std::size_t>(f)];
    if (x == 0.0) continue;
    for (int k = 0; k < d; ++k) grad.M(k, f) += d_z[static_cast<std::size_t>(k)] * x;
  }
  return total;
}

ModelParams grad_log_listener(const World& world, const ModelParams& params, const Context& ctx,
                              const Utterance& u, int selected) {
  ModelParams g = ModelParams::zeros(params.dims());
  accumulate_listener_grad(world, params, ctx, u, selected, 1.0, g);
  return g;
}

ModelParams grad_log_speaker(const World& world, const ModelParams& params, const Context& ctx, int target,
                             const Utterance& u) {
  ModelParams g = ModelParams::zeros(params.dims());
  accumulate_speaker_grad(world, params, ctx, target, u, 1.0, g);
  return g;
}

}  // namespace refloop
