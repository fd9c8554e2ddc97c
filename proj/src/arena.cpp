#include "refloop/arena.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "refloop/checkpoint.hpp"
#include "refloop/pragmatics.hpp"

namespace refloop {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagInit = 0x1a17;
constexpr std::uint64_t kTagSeedData = 0x5eed;
constexpr std::uint64_t kTagTrain = 0x7a19;
constexpr std::uint64_t kTagEvalPick = 0xe7a1;
constexpr std::uint64_t kTagEvalGen = 0xe7a2;
constexpr std::uint64_t kTagSnd = 0x5dd0;

std::uint64_t role_key(Role r) { return r == Role::listener ? 0 : 1; }

std::string bootstrap_error(int filled, int wanted, int attempts) {
  std::ostringstream msg;
  msg << "partner success rate too low: " << filled << " of " << wanted << " successful games after " << attempts
      << " attempts";
  return msg.str();
}

Json counts_json(const DatasetCounts& c) {
  return Json{{"native", c.native}, {"shared", c.shared}, {"seed", c.seed}, {"total", c.total()}};
}

void count_into(DatasetCounts& c, const std::vector<InteractionRecord>& recs) {
  c = {};
  for (const auto& r : recs) {
    switch (r.provenance) {
      case Provenance::native: ++c.native; break;
      case Provenance::shared: ++c.shared; break;
      case Provenance::seed: ++c.seed; break;
    }
  }
}

}  // namespace

VariantSpec variant_by_name(const std::string& name) {
  if (name == "Full") return {name, true, true, true};
  if (name == "No-DS") return {name, true, false, true};
  if (name == "No-JI") return {name, false, true, true};
  if (name == "Baseline") return {name, false, false, true};
  if (name == "Human") return {name, false, false, false};
  throw std::invalid_argument("unknown variant '" + name + "'");
}

GameSeeds game_seeds(std::uint64_t master, int round, Role role, int game_index) {
  const std::uint64_t base = derive_seed(master, {static_cast<std::uint64_t>(round), role_key(role),
                                                  static_cast<std::uint64_t>(game_index)});
  return {derive_seed(base, {1}), derive_seed(base, {2}), derive_seed(base, {3}), derive_seed(base, {4}),
          derive_seed(base, {5})};
}

InteractionRecord play_game(const World& world, Role role, const ModelParams* model, const std::string& checkpoint,
                            const VariantSpec& variant, const Context& ctx, int target, const Hyper& hyper,
                            const PartnerNoise& noise, const GameSeeds& seeds) {
  InteractionRecord rec;
  rec.system = variant.name;
  rec.role = role;
  rec.context = ctx;
  rec.target = target;
  rec.partner = Partner::oracle;
  rec.provenance = Provenance::native;
  rec.checkpoint = checkpoint;
  rec.behavior_prob = 1.0;

  if (role == Role::listener) {
    rec.utterance = oracle_speak(world.library, world.vocab, ctx, target, noise, seeds.partner_speak);
    if (model) {
      const auto probs = variant.joint_inference
                             ? joint_listener(world, *model, ctx, rec.utterance, hyper.lambda_listener)
                             : listener_distribution(world, *model, ctx, rec.utterance);
      rec.selection = argmax_slot(probs);
      rec.behavior_prob = probs[static_cast<std::size_t>(rec.selection)];
    } else {
      rec.selection = oracle_listen(world.library, world.vocab, ctx, rec.utterance, noise, seeds.partner_listen);
    }
  } else {
    if (model) {
      rec.utterance = variant.joint_inference ? joint_speak(world, *model, ctx, target, hyper, seeds.model)
                                              : best_of_k_speak(world, *model, ctx, target, hyper, seeds.model);
      rec.behavior_prob = std::exp(speaker_logprob(world, *model, ctx, target, rec.utterance));
    } else {
      rec.utterance = oracle_speak(world.library, world.vocab, ctx, target, noise, seeds.partner_speak);
    }
    rec.selection = oracle_listen(world.library, world.vocab, ctx, rec.utterance, noise, seeds.partner_listen);
  }
  rec.reward = reward_from_outcome(rec.selection == target);
  return rec;
}

double recompute_behavior_prob(const World& world, const ModelParams& model, const VariantSpec& variant,
                               const InteractionRecord& rec, const Hyper& hyper) {
  if (rec.role == Role::listener) {
    const auto probs = variant.joint_inference
                           ? joint_listener(world, model, rec.context, rec.utterance, hyper.lambda_listener)
                           : listener_distribution(world, model, rec.context, rec.utterance);
    return probs[static_cast<std::size_t>(rec.selection)];
  }
  return std::exp(speaker_logprob(world, model, rec.context, rec.target, rec.utterance));
}

SeedData bootstrap_seed_data(const World& world, const PartnerNoise& noise, int seed_count, int validation_count,
                             std::uint64_t seed) {
  SeedData out;
  const int wanted = seed_count + validation_count;
  const int max_attempts = 100 * wanted;
  while (static_cast<int>(out.seed.size() + out.validation.size()) < wanted) {
    if (out.attempts >= max_attempts)
      throw std::runtime_error(
          bootstrap_error(static_cast<int>(out.seed.size() + out.validation.size()), wanted, out.attempts));
    const GameSeeds s = game_seeds(seed, 0, Role::listener, out.attempts);
    ++out.attempts;
    const Context ctx = build_context(world.library, s.context);
    const int target = static_cast<int>(Rng(s.target).below(static_cast<std::size_t>(ctx.size())));
    const Utterance u = oracle_speak(world.library, world.vocab, ctx, target, noise, s.partner_speak);
    const int sel = oracle_listen(world.library, world.vocab, ctx, u, noise, s.partner_listen);
    if (sel != target) continue;
    InteractionRecord rec;
    rec.role = Role::listener;
    rec.context = ctx;
    rec.target = target;
    rec.selection = sel;
    rec.utterance = u;
    rec.reward = 1;
    rec.provenance = Provenance::seed;
    rec.game_index = out.attempts - 1;
    if (static_cast<int>(out.seed.size()) < seed_count) {
      rec.system = "seed";
      out.seed.push_back(std::move(rec));
    } else {
      rec.system = "validation";
      out.validation.push_back(std::move(rec));
    }
  }
  return out;
}

RoundDatasets seed_datasets(const std::vector<InteractionRecord>& seed_games) {
  RoundDatasets d;
  for (const auto& g : seed_games) {
    InteractionRecord c = g;
    c.role = Role::listener;
    c.selection = g.target;
    c.reward = 1;
    c.provenance = Provenance::seed;
    c.behavior_prob = 1.0;
    InteractionRecord s = c;
    s.role = Role::speaker;
    d.comprehension.push_back(std::move(c));
    d.generation.push_back(std::move(s));
  }
  return d;
}

World make_world(const CampaignConfig& config) {
  return World(generate_library(AttributeSchema::standard(), config.library_size, config.library_seed),
               config.num_fillers, config.max_len);
}

std::vector<Utterance> regenerate_eval_utterances(const World& world, const ModelParams& model,
                                                  const VariantSpec& variant, const std::vector<EvalPair>& pairs,
                                                  const Hyper& hyper, std::uint64_t seed) {
  std::vector<Utterance> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(i)});
    const auto& p = pairs[i];
    out.push_back(variant.joint_inference ? joint_speak(world, model, p.context, p.target, hyper, s)
                                          : best_of_k_speak(world, model, p.context, p.target, hyper, s));
  }
  return out;
}

std::string CampaignLog::to_jsonl(const Vocabulary& vocab) const {
  std::ostringstream out;
  Json header{{"type", "header"}, {"config", config_to_json(config)}};
  Json words = Json::array();
  for (int t = 0; t < vocab.size(); ++t) words.push_back(vocab.surface(t));
  header["vocabulary"] = words;
  out << header.dump() << '\n';
  for (const auto* group : {&seed_games, &validation_games, &records})
    for (const auto& r : *group) out << record_to_json(r, vocab).dump() << '\n';
  for (const auto& d : datasets)
    out << Json{{"type", "dataset"},
                {"round", d.round},
                {"system", d.system},
                {"comprehension", counts_json(d.comprehension)},
                {"generation", counts_json(d.generation)}}
               .dump()
        << '\n';
  for (const auto& t : trainings)
    out << Json{{"type", "train"},
                {"round", t.round},
                {"system", t.system},
                {"checkpoint", t.checkpoint},
                {"report", train_report_to_json(t.report)}}
               .dump()
        << '\n';
  for (const auto& p : eval_pairs)
    out << Json{{"type", "eval_pair"},
                {"round", p.round},
                {"pair", p.index},
                {"context", context_to_json(p.context)},
                {"target", p.target},
                {"shape", p.shape()},
                {"tokens", p.human_utterance.tokens},
                {"text", utterance_text(vocab, p.human_utterance)}}
               .dump()
        << '\n';
  for (const auto& e : evals)
    out << Json{{"type", "eval"},
                {"purpose", e.purpose},
                {"round", e.round},
                {"system", e.system},
                {"pair_round", e.pair_round},
                {"pair", e.pair},
                {"shape", e.shape},
                {"tokens", e.utterance.tokens},
                {"text", utterance_text(vocab, e.utterance)}}
               .dump()
        << '\n';
  for (const auto& o : offline)
    out << Json{{"type", "offline"}, {"round", o.round}, {"system", o.system}, {"outcomes", o.outcomes}}.dump() << '\n';
  return out.str();
}

Campaign::Campaign(CampaignConfig config) : config_(std::move(config)), world_(make_world(config_)) {
  config_.validate();
  for (const auto& name : config_.variants) variants_.push_back(variant_by_name(name));
  initial_ = ModelParams::random(model_dims(world_, config_.model_dim), derive_seed(config_.master_seed, {kTagInit}));
  log_.config = config_;
}

void Campaign::bootstrap() {
  SeedData sd = bootstrap_seed_data(world_, config_.noise, config_.seed_games, config_.validation_games,
                                    derive_seed(config_.master_seed, {kTagSeedData}));
  log_.seed_games = std::move(sd.seed);
  log_.validation_games = std::move(sd.validation);
  seed_data_ = seed_datasets(log_.seed_games);
  retrain(0);
  if (config_.control_redeploy && deployed_.count("Full")) control_ = deployed_.at("Full");
}

RoundDatasets Campaign::training_data(const VariantSpec& v, int round, DatasetSizes* sizes) const {
  RoundDatasets data = seed_data_;
  for (int r = 1; r <= round; ++r) {
    RoundDatasets native;
    for (const auto& rec : log_.records) {
      if (rec.round != r || rec.system != v.name) continue;
      (rec.role == Role::listener ? native.comprehension : native.generation).push_back(rec);
    }
    if (v.data_sharing) native = share_data(native);
    data.comprehension.insert(data.comprehension.end(), native.comprehension.begin(), native.comprehension.end());
    data.generation.insert(data.generation.end(), native.generation.begin(), native.generation.end());
  }
  if (sizes) {
    sizes->round = round;
    sizes->system = v.name;
    count_into(sizes->comprehension, data.comprehension);
    count_into(sizes->generation, data.generation);
  }
  return data;
}

ModelParams Campaign::train_variant(const VariantSpec& v, int round, const RoundDatasets& data) {
  const TrainOptions opts{v.joint_inference, derive_seed(config_.master_seed, {kTagTrain, static_cast<std::uint64_t>(round)})};
  auto [params, report] =
      train(world_, initial_, data.comprehension, data.generation, log_.validation_games, config_.hyper, opts);
  const std::string id = checkpoint_id(params);
  log_.trainings.push_back(TrainEntry{round, v.name, id, std::move(report)});
  log_.checkpoints.emplace(id, params);
  deployed_ckpt_[{round + 1, v.name}] = id;
  return params;
}

void Campaign::retrain(int round) {
  for (const auto& v : variants_) {
    if (!v.uses_model) continue;
    DatasetSizes sizes;
    const RoundDatasets data = training_data(v, round, &sizes);
    log_.datasets.push_back(sizes);
    deployed_.insert_or_assign(v.name, train_variant(v, round, data));
  }
}

void Campaign::play_batch(int round, const VariantSpec& v, const ModelParams* model, const std::string& ckpt,
                          Role role, int count, std::vector<InteractionRecord>& out) const {
  std::vector<InteractionRecord> batch(static_cast<std::size_t>(count));
  auto work = [&](int begin, int end) {
    for (int g = begin; g < end; ++g) {
      const GameSeeds s = game_seeds(config_.master_seed, round, role, g);
      const Context ctx = build_context(world_.library, s.context);
      const int target = static_cast<int>(Rng(s.target).below(static_cast<std::size_t>(ctx.size())));
      InteractionRecord rec = play_game(world_, role, model, ckpt, v, ctx, target, config_.hyper, config_.noise, s);
      rec.round = round;
      rec.game_index = g;
      batch[static_cast<std::size_t>(g)] = std::move(rec);
    }
  };
  const int workers = std::min(config_.workers, std::max(count, 1));
  if (workers <= 1) {
    work(0, count);
  } else {
    std::vector<std::thread> threads;
    const int chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, std::min(count, w * chunk), std::min(count, (w + 1) * chunk));
    for (auto& t : threads) t.join();
  }
  out.insert(out.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
}

std::vector<InteractionRecord> Campaign::run_round(int round) {
  if (round < 1 || round > config_.rounds) throw std::invalid_argument("round out of range");
  std::vector<InteractionRecord> out;
  const int count = config_.interactions(round);
  auto arm = [&](const VariantSpec& v, const ModelParams* model, const std::string& ckpt) {
    for (Role role : {Role::listener, Role::speaker}) play_batch(round, v, model, ckpt, role, count, out);
  };
  for (const auto& v : variants_) {
    if (!v.uses_model) {
      arm(v, nullptr, "");
      continue;
    }
    const auto it = deployed_ckpt_.find({round, v.name});
    if (it == deployed_ckpt_.end() || !deployed_.count(v.name))
      throw std::runtime_error("missing checkpoint for " + v.name + " in round " + std::to_string(round));
    arm(v, &deployed_.at(v.name), it->second);
  }
  if (round == config_.rounds && control_) {
    VariantSpec control = variant_by_name("Full");
    control.name = kControlVariant;
    arm(control, &*control_, checkpoint_id(*control_));
  }

  // Spot-check 1% of logged behavior probabilities against the checkpoint.
  for (const auto& rec : out) {
    if (rec.game_index % 100 != 0 || rec.checkpoint.empty()) continue;
    VariantSpec v = rec.system == kControlVariant ? variant_by_name("Full") : variant_by_name(rec.system);
    const double p = recompute_behavior_prob(world_, log_.checkpoints.at(rec.checkpoint), v, rec, config_.hyper);
    if (p != rec.behavior_prob)
      throw std::runtime_error("behavior probability not reproducible for " + rec.system + " game " +
                               std::to_string(rec.game_index));
  }
  log_.records.insert(log_.records.end(), out.begin(), out.end());
  return out;
}

void Campaign::finish() {
  const bool has_human =
      std::any_of(variants_.begin(), variants_.end(), [](const VariantSpec& v) { return !v.uses_model; });
  std::vector<EvalPair> all_pairs;
  if (has_human) {
    for (int round = 1; round <= config_.rounds; ++round) {
      std::vector<const InteractionRecord*> human;
      for (const auto& r : log_.records)
        if (r.round == round && r.system == "Human") human.push_back(&r);
      if (human.empty()) continue;
      Rng rng(derive_seed(config_.master_seed, {kTagEvalPick, static_cast<std::uint64_t>(round)}));
      rng.shuffle(human.begin(), human.end());
      human.resize(std::min(human.size(), static_cast<std::size_t>(config_.eval_pairs)));
      std::vector<EvalPair> pairs;
      for (const auto* r : human)
        pairs.push_back(EvalPair{round, static_cast<int>(pairs.size()), r->context, r->target, r->utterance});

      for (const auto& v : variants_) {
        std::vector<Utterance> utts;
        if (v.uses_model) {
          const auto& model = log_.checkpoints.at(deployed_ckpt_.at({round, v.name}));
          utts = regenerate_eval_utterances(world_, model, v, pairs, config_.hyper,
                                            derive_seed(config_.master_seed, {kTagEvalGen, static_cast<std::uint64_t>(round)}));
        } else {
          for (const auto& p : pairs) utts.push_back(p.human_utterance);
        }
        for (std::size_t i = 0; i < pairs.size(); ++i)
          log_.evals.push_back(EvalUtterance{"lang", round, v.name, round, pairs[i].index, pairs[i].shape(), utts[i]});
      }
      all_pairs.insert(all_pairs.end(), pairs.begin(), pairs.end());
    }
    log_.eval_pairs = all_pairs;

    // Descriptions of every evaluated board, per deployed model, for SND.
    for (int round = 1; round <= config_.rounds; ++round) {
      for (const auto& v : variants_) {
        std::vector<Utterance> utts;
        if (v.uses_model) {
          const auto& model = log_.checkpoints.at(deployed_ckpt_.at({round, v.name}));
          utts = regenerate_eval_utterances(world_, model, v, all_pairs, config_.hyper,
                                            derive_seed(config_.master_seed, {kTagSnd}));
        } else {
          if (round != config_.rounds) continue;
          for (const auto& p : all_pairs) utts.push_back(p.human_utterance);
        }
        for (std::size_t i = 0; i < all_pairs.size(); ++i)
          log_.evals.push_back(
              EvalUtterance{"snd", round, v.name, all_pairs[i].round, all_pairs[i].index, all_pairs[i].shape(), utts[i]});
      }
    }
  }

  if (config_.offline_round && control_) {
    // Models retrained after the final round, scored on the control arm's
    // final-round comprehension games (unseen in training).
    for (const auto& v : variants_) {
      if (!v.uses_model) continue;
      const auto it = deployed_ckpt_.find({config_.rounds + 1, v.name});
      if (it == deployed_ckpt_.end()) continue;
      const auto& model = log_.checkpoints.at(it->second);
      OfflineEstimate est{config_.rounds + 1, v.name, {}};
      for (const auto& r : log_.records) {
        if (r.system != kControlVariant || r.role != Role::listener || r.round != config_.rounds) continue;
        const auto probs = v.joint_inference
                               ? joint_listener(world_, model, r.context, r.utterance, config_.hyper.lambda_listener)
                               : listener_distribution(world_, model, r.context, r.utterance);
        est.outcomes.push_back(argmax_slot(probs) == r.target ? 1 : 0);
      }
      log_.offline.push_back(std::move(est));
    }
  }
}

CampaignLog Campaign::run() {
  bootstrap();
  for (int round = 1; round <= config_.rounds; ++round) {
    run_round(round);
    if (round < config_.rounds || config_.offline_round) retrain(round);
  }
  finish();
  return log_;
}

CampaignLog run_campaign(const CampaignConfig& config) {
  Campaign c(config);
  return c.run();
}

}  // namespace refloop
