#include "refloop/records_io.hpp"

namespace refloop {

Json context_to_json(const Context& ctx) {
  return Json{{"shapes", ctx.shape_ids},
              {"speaker_perm", ctx.speaker_perm},
              {"listener_perm", ctx.listener_perm},
              {"blocks", ctx.block_sizes}};
}

Context context_from_json(const Json& j) {
  Context ctx;
  ctx.shape_ids = j.at("shapes").get<std::vector<int>>();
  ctx.speaker_perm = j.at("speaker_perm").get<std::vector<int>>();
  ctx.listener_perm = j.at("listener_perm").get<std::vector<int>>();
  ctx.block_sizes = j.at("blocks").get<std::vector<int>>();
  return ctx;
}

Json record_to_json(const InteractionRecord& rec, const Vocabulary& vocab) {
  Json j;
  j["type"] = "interaction";
  j["round"] = rec.round;
  j["system"] = rec.system;
  j["role"] = to_string(rec.role);
  j["partner"] = to_string(rec.partner);
  j["provenance"] = to_string(rec.provenance);
  j["game"] = rec.game_index;
  j["checkpoint"] = rec.checkpoint;
  j["context"] = context_to_json(rec.context);
  j["target"] = rec.target;
  j["selection"] = rec.selection;
  j["tokens"] = rec.utterance.tokens;
  j["text"] = utterance_text(vocab, rec.utterance);
  j["raw_text"] = rec.raw_text;
  j["reward"] = rec.reward;
  j["success"] = outcome_from_reward(rec.reward);
  j["behavior_prob"] = rec.behavior_prob;
  j["timestamp"] = rec.timestamp;
  return j;
}

InteractionRecord record_from_json(const Json& j) {
  InteractionRecord rec;
  rec.round = j.at("round").get<int>();
  rec.system = j.at("system").get<std::string>();
  rec.role = role_from_string(j.at("role").get<std::string>());
  rec.partner = partner_from_string(j.at("partner").get<std::string>());
  rec.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  rec.game_index = j.at("game").get<int>();
  rec.checkpoint = j.at("checkpoint").get<std::string>();
  rec.context = context_from_json(j.at("context"));
  rec.target = j.at("target").get<int>();
  rec.selection = j.at("selection").get<int>();
  rec.utterance.tokens = j.at("tokens").get<std::vector<TokenId>>();
  rec.raw_text = j.value("raw_text", "");
  rec.reward = j.at("reward").get<int>();
  rec.behavior_prob = j.at("behavior_prob").get<double>();
  rec.timestamp = j.value("timestamp", "");
  return rec;
}

Json train_report_to_json(const TrainReport& report) {
  Json epochs = Json::array();
  for (const auto& e : report.epochs)
    epochs.push_back(Json{{"epoch", e.epoch},
                          {"steps", e.steps},
                          {"surrogate_loss", e.surrogate_loss},
                          {"validation_accuracy", e.validation_accuracy},
                          {"clipped_fraction", e.clipped_fraction}});
  return Json{{"epochs", epochs},
              {"best_epoch", report.best_epoch},
              {"best_accuracy", report.best_accuracy},
              {"stop_reason", report.stop_reason},
              {"comprehension_size", report.comprehension_size},
              {"generation_size", report.generation_size}};
}

TrainReport train_report_from_json(const Json& j) {
  TrainReport r;
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back(EpochStats{e.at("epoch").get<int>(), e.at("steps").get<int>(),
                                  e.at("surrogate_loss").get<double>(), e.at("validation_accuracy").get<double>(),
                                  e.at("clipped_fraction").get<double>()});
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best_accuracy = j.at("best_accuracy").get<double>();
  r.stop_reason = j.at("stop_reason").get<std::string>();
  r.comprehension_size = j.at("comprehension_size").get<std::size_t>();
  r.generation_size = j.at("generation_size").get<std::size_t>();
  return r;
}

}  // namespace refloop
