#include "refloop/pragmatics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace refloop {

void Hyper::validate() const {
  if (!(lambda_listener >= 0.0 && lambda_listener <= 1.0) || !(lambda_speaker >= 0.0 && lambda_speaker <= 1.0))
    throw std::invalid_argument("lambda weights must lie in [0, 1]");
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(ips_clip >= 1.0)) throw std::invalid_argument("ips_clip must be at least 1");
  if (batch_size < 1 || max_epochs < 1 || patience < 1 || patience > max_epochs)
    throw std::invalid_argument("invalid batch/epoch/patience settings");
  if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("invalid optimizer settings");
}

std::vector<double> geometric_mix(std::span<const double> log_l, std::span<const double> log_s, double lambda) {
  if (log_l.size() != log_s.size() || log_l.empty()) throw std::invalid_argument("distribution sizes differ");
  std::vector<double> score(log_l.size());
  for (std::size_t t = 0; t < score.size(); ++t) {
    // Skip a zero-weighted term so -inf log-probabilities stay harmless.
    double s = 0.0;
    if (lambda != 0.0) s += lambda * log_l[t];
    if (lambda != 1.0) s += (1.0 - lambda) * log_s[t];
    score[t] = s;
  }
  const double m = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  for (double& s : score) z += (s = std::exp(s - m));
  for (double& s : score) s /= z;
  return score;
}

std::vector<double> joint_listener(const World& world, const ModelParams& params, const Context& ctx,
                                   const Utterance& u, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (lambda == 1.0) return listener_distribution(world, params, ctx, u);
  const std::vector<double> log_l = listener_log_distribution(world, params, ctx, u);
  std::vector<double> log_s(log_l.size());
  for (int t = 0; t < ctx.size(); ++t) log_s[static_cast<std::size_t>(t)] = speaker_logprob(world, params, ctx, t, u);
  return geometric_mix(log_l, log_s, lambda);
}

int argmax_slot(std::span<const double> probs) {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::vector<Utterance> draw_candidates(const World& world, const ModelParams& params, const Context& ctx, int target,
                                       const Hyper& hyper, std::uint64_t seed) {
  if (hyper.k < 1) throw std::invalid_argument("k must be at least 1");
  Rng rng(seed);
  const SampleOptions opts{hyper.temperature, false};
  std::set<Utterance> unique;
  for (int i = 0; i < hyper.k; ++i) unique.insert(sample_utterance(world, params, ctx, target, opts, rng));
  return {unique.begin(), unique.end()};
}

std::vector<RankedCandidate> rank_candidates(const World& world, const ModelParams& params, const Context& ctx,
                                             int target, std::span<const Utterance> candidates, double lambda) {
  if (candidates.empty()) throw std::invalid_argument("no candidates to rank");
  std::vector<RankedCandidate> ranked;
  std::vector<double> raw;
  ranked.reserve(candidates.size());
  for (const auto& u : candidates) {
    RankedCandidate c;
    c.utterance = u;
    c.base_logprob = speaker_logprob(world, params, ctx, target, u);
    const double log_l = listener_log_distribution(world, params, ctx, u)[static_cast<std::size_t>(target)];
    c.listener_prob_of_target = std::exp(log_l);
    double s = 0.0;
    if (lambda != 0.0) s += lambda * c.base_logprob;
    if (lambda != 1.0) s += (1.0 - lambda) * log_l;
    raw.push_back(s);
    ranked.push_back(std::move(c));
  }
  const double m = *std::max_element(raw.begin(), raw.end());
  double z = 0.0;
  for (double r : raw) z += std::exp(r - m);
  const double log_norm = m + std::log(z);
  std::vector<std::size_t> order(ranked.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    ranked[i].joint_score = raw[i] - log_norm;
    order[i] = i;
  }
  // Sort on the unnormalized score so the normalization cannot perturb ties.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (raw[a] != raw[b]) return raw[a] > raw[b];
    if (ranked[a].base_logprob != ranked[b].base_logprob) return ranked[a].base_logprob > ranked[b].base_logprob;
    return ranked[a].utterance < ranked[b].utterance;
  });
  std::vector<RankedCandidate> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(std::move(ranked[i]));
  return out;
}

Utterance joint_speak(const World& world, const ModelParams& params, const Context& ctx, int target,
                      const Hyper& hyper, std::uint64_t seed) {
  const auto candidates = draw_candidates(world, params, ctx, target, hyper, seed);
  if (candidates.size() == 1) return candidates.front();
  return rank_candidates(world, params, ctx, target, candidates, hyper.lambda_speaker).front().utterance;
}

Utterance best_of_k_speak(const World& world, const ModelParams& params, const Context& ctx, int target,
                          const Hyper& hyper, std::uint64_t seed) {
  const auto candidates = draw_candidates(world, params, ctx, target, hyper, seed);
  if (candidates.size() == 1) return candidates.front();
  const Utterance* best = nullptr;
  double best_lp = 0.0;
  for (const auto& u : candidates) {
    const double lp = speaker_logprob(world, params, ctx, target, u);
    if (!best || lp > best_lp) {
      best = &u;
      best_lp = lp;
    }
  }
  return *best;
}

}  // namespace refloop
