#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "refloop/agent.hpp"
#include "refloop/hyper.hpp"

namespace refloop {

/// Normalized weighted geometric mean of two per-target distributions
/// given in log space: p(t) ∝ exp(λ·log_l[t] + (1−λ)·log_s[t]).
std::vector<double> geometric_mix(std::span<const double> log_listener, std::span<const double> log_speaker,
                                  double lambda);

/// Joint listener: P_l(t)^λ · P_s(u|t)^(1−λ), normalized over the board.
std::vector<double> joint_listener(const World& world, const ModelParams& params, const Context& context,
                                   const Utterance& utterance, double lambda_listener);

/// Lowest index among the maxima.
int argmax_slot(std::span<const double> probs);

struct RankedCandidate {
  Utterance utterance;
  double base_logprob = 0.0;            // log P_s(u | t)
  double listener_prob_of_target = 0.0;  // P_l(t | u)
  double joint_score = 0.0;             // log of the joint speaker probability renormalized over candidates
};

/// k ancestral samples at the configured temperature, deduplicated, in
/// lexicographic token order. Shared by the joint and best-of-k speakers
/// so both see identical candidates for a given seed.
std::vector<Utterance> draw_candidates(const World& world, const ModelParams& params, const Context& context,
                                       int target, const Hyper& hyper, std::uint64_t seed);

/// Scores candidates by P_s^λ · P_l(t|u)^(1−λ) and sorts best first; ties
/// go to higher base log-probability, then lexicographically smaller tokens.
std::vector<RankedCandidate> rank_candidates(const World& world, const ModelParams& params, const Context& context,
                                             int target, std::span<const Utterance> candidates, double lambda_speaker);

/// Sampled joint speaker with listener reranking.
Utterance joint_speak(const World& world, const ModelParams& params, const Context& context, int target,
                      const Hyper& hyper, std::uint64_t seed);

/// Highest base-probability utterance among the same k samples.
Utterance best_of_k_speak(const World& world, const ModelParams& params, const Context& context, int target,
                          const Hyper& hyper, std::uint64_t seed);

}  // namespace refloop
