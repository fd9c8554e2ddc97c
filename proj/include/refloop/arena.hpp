#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "refloop/agent.hpp"
#include "refloop/config.hpp"
#include "refloop/learning.hpp"

namespace refloop {

struct VariantSpec {
  std::string name;
  bool joint_inference = false;
  bool data_sharing = false;
  bool uses_model = true;  // false for partner-vs-partner games
};

/// Full, No-DS, No-JI, Baseline or Human. Throws std::invalid_argument otherwise.
VariantSpec variant_by_name(const std::string& name);
inline constexpr const char* kControlVariant = "Control";

/// Seeds for one game, keyed by (master, round, role, game index) and
/// shared by every variant so arms see the same boards and partners.
struct GameSeeds {
  std::uint64_t context, target, partner_speak, partner_listen, model;
};
GameSeeds game_seeds(std::uint64_t master, int round, Role role, int game_index);

/// One deployed game. With a model, the model plays `role` against an
/// oracle partner; without one (Human variant) both sides are oracles.
InteractionRecord play_game(const World& world, Role role, const ModelParams* model, const std::string& checkpoint,
                            const VariantSpec& variant, const Context& context, int target, const Hyper& hyper,
                            const PartnerNoise& noise, const GameSeeds& seeds);

/// Probability the logged action had under the given checkpoint, recomputed.
double recompute_behavior_prob(const World& world, const ModelParams& model, const VariantSpec& variant,
                               const InteractionRecord& record, const Hyper& hyper);

struct SeedData {
  std::vector<InteractionRecord> seed;        // successful partner-partner games
  std::vector<InteractionRecord> validation;  // disjoint from seed
  int attempts = 0;
};

/// Simulates partner-partner games and keeps successes until both counts
/// are filled. Records are comprehension-form (selection = target, r = +1).
/// Throws std::runtime_error if 100x the requested count is not enough.
SeedData bootstrap_seed_data(const World& world, const PartnerNoise& noise, int seed_count, int validation_count,
                             std::uint64_t seed);

/// Both role views of each seed game, flagged seed.
RoundDatasets seed_datasets(const std::vector<InteractionRecord>& seed_games);

struct DatasetCounts {
  int native = 0, shared = 0, seed = 0;
  int total() const { return native + shared + seed; }
  bool operator==(const DatasetCounts&) const = default;
};

/// Training set composition for the model trained after `round`
/// (round 0 is the seed-only initial model).
struct DatasetSizes {
  int round = 0;
  std::string system;
  DatasetCounts comprehension, generation;
  bool operator==(const DatasetSizes&) const = default;
};

struct TrainEntry {
  int round = 0;  // the model is deployed in round + 1
  std::string system;
  std::string checkpoint;
  TrainReport report;
};

struct EvalPair {
  int round = 0;
  int index = 0;
  Context context;
  int target = 0;
  Utterance human_utterance;
  int shape() const { return context.shape_ids[static_cast<std::size_t>(target)]; }
};

struct EvalUtterance {
  std::string purpose;  // "lang": same-round pairs; "snd": all pairs of the campaign
  int round = 0;        // deployment round of the generating model
  std::string system;
  int pair_round = 0;
  int pair = 0;
  int shape = 0;
  Utterance utterance;
};

struct OfflineEstimate {
  int round = 0;
  std::string system;
  std::vector<int> outcomes;  // 1 if the model picked the target
};

struct CampaignLog {
  CampaignConfig config;
  std::vector<InteractionRecord> seed_games;
  std::vector<InteractionRecord> validation_games;
  std::vector<InteractionRecord> records;
  std::vector<DatasetSizes> datasets;
  std::vector<TrainEntry> trainings;
  std::vector<EvalPair> eval_pairs;
  std::vector<EvalUtterance> evals;
  std::vector<OfflineEstimate> offline;
  std::map<std::string, ModelParams> checkpoints;

  /// One JSON object per line, in a canonical order.
  std::string to_jsonl(const Vocabulary& vocab) const;
};

World make_world(const CampaignConfig& config);

/// Generates utterances for each pair with the variant's deployment-time
/// inference. Pair i uses a sampling stream derived from (seed, i) only,
/// so variants draw identical base samples.
std::vector<Utterance> regenerate_eval_utterances(const World& world, const ModelParams& model,
                                                  const VariantSpec& variant, const std::vector<EvalPair>& pairs,
                                                  const Hyper& hyper, std::uint64_t seed);

/// Runs the whole deploy/retrain loop.
class Campaign {
 public:
  explicit Campaign(CampaignConfig config);

  const World& world() const { return world_; }
  const CampaignLog& log() const { return log_; }
  const ModelParams& initial_params() const { return initial_; }
  const ModelParams& deployed(const std::string& variant) const { return deployed_.at(variant); }

  /// Seed/validation bootstrap and the seed-only initial training.
  void bootstrap();
  /// Interactions of round ρ for every variant (and the control arm in the
  /// final round). Returns the records appended.
  std::vector<InteractionRecord> run_round(int round);
  /// Retrains every model variant on all data through `round`.
  void retrain(int round);
  /// Language evaluation, SND generation and optional offline estimate.
  void finish();

  CampaignLog run();

 private:
  ModelParams train_variant(const VariantSpec& v, int round, const RoundDatasets& data);
  RoundDatasets training_data(const VariantSpec& v, int round, DatasetSizes* sizes) const;
  void play_batch(int round, const VariantSpec& v, const ModelParams* model, const std::string& ckpt,
                  Role role, int count, std::vector<InteractionRecord>& out) const;

  CampaignConfig config_;
  World world_;
  ModelParams initial_;
  std::vector<VariantSpec> variants_;
  std::map<std::string, ModelParams> deployed_;
  std::map<std::pair<int, std::string>, std::string> deployed_ckpt_;  // (round, variant) -> id
  std::optional<ModelParams> control_;
  RoundDatasets seed_data_;
  CampaignLog log_;
};

CampaignLog run_campaign(const CampaignConfig& config);

}  // namespace refloop
