#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refloop/agent.hpp"
#include "refloop/hyper.hpp"

namespace refloop {

enum class Role { listener, speaker };
enum class Partner { oracle, human };
enum class Provenance { native, shared, seed };

const char* to_string(Role r);
const char* to_string(Partner p);
const char* to_string(Provenance p);
Role role_from_string(const std::string& s);
Partner partner_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);

/// One game from the model's point of view. For role=listener the model
/// chose `selection` given the partner's utterance; for role=speaker the
/// model produced `utterance` for `target` and the partner chose
/// `selection`. behavior_prob is the logged action's probability under
/// the collecting checkpoint; shared and seed records carry 1 as a
/// placeholder (their reward is +1, so it never enters an IPS ratio).
struct InteractionRecord {
  int round = 0;
  std::string system;
  Role role = Role::listener;
  Context context;
  int target = 0;
  Utterance utterance;
  std::string raw_text;  // human-authored text, verbatim
  int selection = 0;
  int reward = 1;
  double behavior_prob = 1.0;
  Partner partner = Partner::oracle;
  Provenance provenance = Provenance::native;
  std::string checkpoint;
  int game_index = 0;
  std::string timestamp;  // empty for simulated games

  /// Action whose log-probability the record trains: t̂ for comprehension,
  /// the target for generation.
  int trained_slot() const { return role == Role::listener ? selection : target; }
  bool operator==(const InteractionRecord&) const = default;
};

struct RoundDatasets {
  std::vector<InteractionRecord> comprehension;
  std::vector<InteractionRecord> generation;
};

int reward_from_outcome(bool success);
inline bool outcome_from_reward(int reward) { return reward > 0; }

/// Cased IPS: 1 for positive reward, else min(current / behavior, clip).
double ips_coefficient(double current_prob, double behavior_prob, int reward, double clip);

/// Positive records of each role reinterpreted for the other role and
/// appended, flagged shared.
RoundDatasets share_data(const RoundDatasets& data);

/// Adaptive-moment optimizer state with decoupled weight decay.
struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;

  explicit AdamState(const ModelDims& dims) : m(dims), v(dims) {}
};

/// Ascends along `direction` (already averaged). Applies weight decay
/// first, then the bias-corrected moment update.
void adam_ascent(ModelParams& params, const ModelParams& direction, AdamState& state, const Hyper& hyper);

struct StepStats {
  double surrogate_loss = 0.0;  // −mean(c·r·log P) summed over both roles
  int clipped = 0;              // negative examples whose IPS hit the clip
  int negatives = 0;
};

/// Δ = mean over batch_l of c·r·∇log P_l + mean over batch_s of c·r·∇log P_s.
/// Throws std::runtime_error on a non-finite gradient.
ModelParams policy_gradient(const World& world, const ModelParams& params,
                            std::span<const InteractionRecord* const> batch_l,
                            std::span<const InteractionRecord* const> batch_s, const Hyper& hyper,
                            StepStats* stats = nullptr);

/// One optimizer step on the given minibatches.
StepStats policy_gradient_step(const World& world, ModelParams& params, AdamState& state,
                               std::span<const InteractionRecord* const> batch_l,
                               std::span<const InteractionRecord* const> batch_s, const Hyper& hyper);

/// Tracks the best validation score and how long since it improved.
class PatienceTracker {
 public:
  explicit PatienceTracker(int patience) : patience_(patience) {}

  /// Records the score for the next epoch; true if it is a new best.
  bool observe(double score);
  bool exhausted() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = -1.0;
};

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  double surrogate_loss = 0.0;
  double validation_accuracy = 0.0;
  double clipped_fraction = 0.0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_accuracy = 0.0;
  std::string stop_reason;  // "patience" or "max_epochs"
  std::size_t comprehension_size = 0;
  std::size_t generation_size = 0;
  bool operator==(const TrainReport&) const = default;
};

struct TrainOptions {
  bool joint_validation = false;  // validate with the joint listener
  std::uint64_t seed = 0;
};

/// Comprehension accuracy on successful partner-partner games: the
/// model listens to the recorded utterance and must pick the target.
double validation_accuracy(const World& world, const ModelParams& params,
                           std::span<const InteractionRecord> validation, bool joint, double lambda_listener);

/// Retrains from `initial` on the given data and returns the checkpoint
/// with the best validation accuracy.
std::pair<ModelParams, TrainReport> train(const World& world, const ModelParams& initial,
                                          std::span<const InteractionRecord> comprehension,
                                          std::span<const InteractionRecord> generation,
                                          std::span<const InteractionRecord> validation, const Hyper& hyper,
                                          const TrainOptions& options);

}  // namespace refloop
