#include "refloop/learning.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "refloop/pragmatics.hpp"

namespace refloop {

const char* to_string(Role r) { return r == Role::listener ? "listener" : "speaker"; }
const char* to_string(Partner p) { return p == Partner::oracle ? "oracle" : "human"; }
const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::native: return "native";
    case Provenance::shared: return "shared";
    case Provenance::seed: return "seed";
  }
  return "native";
}

Role role_from_string(const std::string& s) {
  if (s == "listener") return Role::listener;
  if (s == "speaker") return Role::speaker;
  throw std::invalid_argument("unknown role '" + s + "'");
}

Partner partner_from_string(const std::string& s) {
  if (s == "oracle") return Partner::oracle;
  if (s == "human") return Partner::human;
  throw std::invalid_argument("unknown partner '" + s + "'");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "native") return Provenance::native;
  if (s == "shared") return Provenance::shared;
  if (s == "seed") return Provenance::seed;
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

int reward_from_outcome(bool success) { return success ? 1 : -1; }

double ips_coefficient(double current_prob, double behavior_prob, int reward, double clip) {
  if (!(behavior_prob > 0.0)) throw std::invalid_argument("behavior probability must be positive");
  if (!(clip >= 1.0)) throw std::invalid_argument("IPS clip must be at least 1");
  if (reward > 0) return 1.0;
  return std::min(current_prob / behavior_prob, clip);
}

RoundDatasets share_data(const RoundDatasets& data) {
  RoundDatasets out = data;
  for (const auto& rec : data.generation) {
    if (rec.reward != 1) continue;
    InteractionRecord c = rec;
    c.role = Role::listener;
    c.selection = rec.target;
    c.provenance = Provenance::shared;
    c.behavior_prob = 1.0;
    out.comprehension.push_back(std::move(c));
  }
  for (const auto& rec : data.comprehension) {
    if (rec.reward != 1) continue;
    InteractionRecord g = rec;
    g.role = Role::speaker;
    g.target = rec.selection;
    g.provenance = Provenance::shared;
    g.behavior_prob = 1.0;
    out.generation.push_back(std::move(g));
  }
  return out;
}

void adam_ascent(ModelParams& params, const ModelParams& direction, AdamState& state, const Hyper& hyper) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.adam_beta2, static_cast<double>(state.step));
  auto theta = params.values();
  const auto g = direction.values();
  auto m = state.m.values();
  auto v = state.v.values();
  const double decay = 1.0 - hyper.lr * hyper.weight_decay;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = hyper.adam_beta1 * m[i] + (1.0 - hyper.adam_beta1) * g[i];
    v[i] = hyper.adam_beta2 * v[i] + (1.0 - hyper.adam_beta2) * g[i] * g[i];
    theta[i] *= decay;
    theta[i] += hyper.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hyper.adam_eps);
  }
}

ModelParams policy_gradient(const World& world, const ModelParams& params,
                            std::span<const InteractionRecord* const> batch_l,
                            std::span<const InteractionRecord* const> batch_s, const Hyper& hyper,
                            StepStats* stats) {
  ModelParams grad = ModelParams::zeros(params.dims());
  StepStats local;
  auto run = [&](std::span<const InteractionRecord* const> batch, bool listener) {
    if (batch.empty()) return;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const InteractionRecord* rec : batch) {
      double c = 1.0;
      if (rec->reward < 0) {
        const double logp =
            listener ? listener_log_distribution(world, params, rec->context, rec->utterance)[static_cast<std::size_t>(rec->selection)]
                     : speaker_logprob(world, params, rec->context, rec->target, rec->utterance);
        // Ratio in log space; sequence probabilities underflow easily.
        const double log_ratio = logp - std::log(rec->behavior_prob);
        c = log_ratio >= std::log(hyper.ips_clip) ? hyper.ips_clip : std::exp(log_ratio);
        ++local.negatives;
        if (c == hyper.ips_clip) ++local.clipped;
      }
      const double w = c * rec->reward * inv;
      const double logp = listener
          ? accumulate_listener_grad(world, params, rec->context, rec->utterance, rec->selection, w, grad)
          : accumulate_speaker_grad(world, params, rec->context, rec->target, rec->utterance, w, grad);
      local.surrogate_loss -= w * logp;
    }
  };
  run(batch_l, true);
  run(batch_s, false);
  if (!grad.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite policy gradient (batch sizes " << batch_l.size() << "/" << batch_s.size()
        << ", surrogate loss " << local.surrogate_loss << ")";
    throw std::runtime_error(msg.str());
  }
  if (stats) *stats = local;
  return grad;
}

StepStats policy_gradient_step(const World& world, ModelParams& params, AdamState& state,
                               std::span<const InteractionRecord* const> batch_l,
                               std::span<const InteractionRecord* const> batch_s, const Hyper& hyper) {
  StepStats stats;
  const ModelParams grad = policy_gradient(world, params, batch_l, batch_s, hyper, &stats);
  adam_ascent(params, grad, state, hyper);
  return stats;
}

bool PatienceTracker::observe(double score) {
  ++epochs_;
  if (epochs_ == 1 || score > best_) {
    best_ = score;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

double validation_accuracy(const World& world, const ModelParams& params,
                           std::span<const InteractionRecord> validation, bool joint, double lambda_listener) {
  if (validation.empty()) throw std::invalid_argument("validation set is empty");
  int correct = 0;
  for (const auto& rec : validation) {
    const auto probs = joint ? joint_listener(world, params, rec.context, rec.utterance, lambda_listener)
                             : listener_distribution(world, params, rec.context, rec.utterance);
    if (argmax_slot(probs) == rec.target) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(validation.size());
}

std::pair<ModelParams, TrainReport> train(const World& world, const ModelParams& initial,
                                          std::span<const InteractionRecord> comprehension,
                                          std::span<const InteractionRecord> generation,
                                          std::span<const InteractionRecord> validation, const Hyper& hyper,
                                          const TrainOptions& options) {
  hyper.validate();
  if (validation.empty()) throw std::invalid_argument("validation set is empty");
  if (comprehension.empty()) throw std::invalid_argument("comprehension dataset is empty");

  Rng rng(options.seed);
  ModelParams params = initial;
  ModelParams best = initial;
  AdamState state(initial.dims());
  PatienceTracker patience(hyper.patience);
  TrainReport report;
  report.comprehension_size = comprehension.size();
  report.generation_size = generation.size();

  const auto batch = static_cast<std::size_t>(hyper.batch_size);
  const std::size_t steps = (comprehension.size() + batch - 1) / batch;
  std::vector<const InteractionRecord*> batch_l(batch), batch_s(generation.empty() ? 0 : batch);

  report.stop_reason = "max_epochs";
  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    EpochStats es;
    es.epoch = epoch;
    int clipped = 0, negatives = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      for (auto& p : batch_l) p = &comprehension[rng.below(comprehension.size())];
      for (auto& p : batch_s) p = &generation[rng.below(generation.size())];
      const StepStats st = policy_gradient_step(world, params, state, batch_l, batch_s, hyper);
      es.surrogate_loss += st.surrogate_loss;
      clipped += st.clipped;
      negatives += st.negatives;
    }
    es.steps = static_cast<int>(steps);
    es.surrogate_loss /= static_cast<double>(steps);
    es.clipped_fraction = negatives ? static_cast<double>(clipped) / negatives : 0.0;
    es.validation_accuracy = validation_accuracy(world, params, validation, options.joint_validation,
                                                 hyper.lambda_listener);
    report.epochs.push_back(es);
    if (patience.observe(es.validation_accuracy)) best = params;
    if (patience.exhausted()) {
      report.stop_reason = "patience";
      break;
    }
  }
  report.best_epoch = patience.best_epoch();
  report.best_accuracy = patience.best_score();
  return {std::move(best), std::move(report)};
}

}  // namespace refloop
