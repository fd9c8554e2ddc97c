#include <CLI11.hpp>
#include <httplib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "refloop/analysis.hpp"
#include "refloop/arena.hpp"
#include "refloop/checkpoint.hpp"
#include "refloop/config.hpp"
#include "refloop/gameserve.hpp"
#include "refloop/pragmatics.hpp"

namespace fs = std::filesystem;
using namespace refloop;

namespace {

CampaignConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  CampaignConfig config = path.empty() ? CampaignConfig{} : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

std::set<std::string> word_set_from(const std::string& path) {
  if (path.empty()) return default_marked_words();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open word set " + path);
  return load_word_set(in);
}

int simulate(const CampaignConfig& config, const fs::path& out, const std::string& wordset) {
  fs::create_directories(out / "checkpoints");
  Campaign campaign(config);
  const CampaignLog log = campaign.run();
  const World& world = campaign.world();

  const std::string jsonl = log.to_jsonl(world.vocab);
  std::ofstream(out / "interactions.jsonl") << jsonl;
  std::ofstream(out / "library.txt") << [&] {
    std::ostringstream s;
    write_library(s, world.library);
    return s.str();
  }();
  for (const auto& [id, params] : log.checkpoints)
    save_checkpoint(out / "checkpoints" / (id + ".ckpt"), params, world.library.schema.hash());

  const MetricTable table = compute_metrics(analysis_input_from_jsonl(jsonl), word_set_from(wordset));
  std::ofstream csv(out / "metrics.csv");
  table.write_csv(csv);

  for (int round = 1; round <= config.rounds; ++round) {
    std::printf("round %d", round);
    for (const auto& row : table.rows)
      if (row.round == round && row.metric == "accuracy")
        std::printf("  %s/%s %.3f", row.variant.c_str(), row.role.c_str(), row.estimate.value);
    std::printf("\n");
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int analyze(const std::string& log_path, const std::string& out_path, const std::string& wordset) {
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error("cannot open log " + log_path);
  const MetricTable table = compute_metrics(read_analysis_input(in), word_set_from(wordset));
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  table.write_csv(out);
  std::printf("%zu rows written to %s\n", table.rows.size(), out_path.c_str());
  return 0;
}

double oracle_success(const World& world, const PartnerNoise& noise, int games, std::uint64_t seed) {
  int wins = 0;
  for (int g = 0; g < games; ++g) {
    const GameSeeds s = game_seeds(seed, 0, Role::listener, g);
    const Context ctx = build_context(world.library, s.context);
    const int target = static_cast<int>(Rng(s.target).below(static_cast<std::size_t>(ctx.size())));
    const Utterance u = oracle_speak(world.library, world.vocab, ctx, target, noise, s.partner_speak);
    wins += oracle_listen(world.library, world.vocab, ctx, u, noise, s.partner_listen) == target;
  }
  return static_cast<double>(wins) / games;
}

int calibrate(const CampaignConfig& config, int games, const std::vector<double>& drops,
              const std::vector<double>& swaps, const std::vector<double>& errs) {
  const World world = make_world(config);
  std::printf("speaker_drop,speaker_swap,listener_err,filler_prob,success\n");
  for (double d : drops)
    for (double s : swaps)
      for (double e : errs) {
        PartnerNoise noise = config.noise;
        noise.speaker_drop = d;
        noise.speaker_swap = s;
        noise.listener_err = e;
        noise.validate();
        std::printf("%g,%g,%g,%g,%.4f\n", d, s, e, noise.filler,
                    oracle_success(world, noise, games, config.master_seed));
      }
  return 0;
}

int sweep_lambda(const CampaignConfig& config, const std::vector<double>& listener_values,
                 const std::vector<double>& speaker_values) {
  Campaign campaign(config);
  campaign.bootstrap();
  const World& world = campaign.world();
  const auto& log = campaign.log();
  const RoundDatasets seed = seed_datasets(log.seed_games);

  // Listener weight: retrain on seed data, selecting epochs with the joint listener at each value.
  std::printf("parameter,value,validation_accuracy\n");
  for (double lambda : listener_values) {
    Hyper h = config.hyper;
    h.lambda_listener = lambda;
    h.validate();
    const auto [params, report] = train(world, campaign.initial_params(), seed.comprehension, seed.generation,
                                        log.validation_games, h, TrainOptions{true, derive_seed(config.master_seed, {0x7a19, 0})});
    std::printf("lambda_listener,%g,%.4f\n", lambda, report.best_accuracy);
  }

  // Speaker weight: reranking the seed-trained joint model, scored by an oracle listener on validation boards.
  const ModelParams& model = campaign.deployed("Full");
  for (double lambda : speaker_values) {
    Hyper h = config.hyper;
    h.lambda_speaker = lambda;
    h.validate();
    int wins = 0;
    for (std::size_t i = 0; i < log.validation_games.size(); ++i) {
      const auto& rec = log.validation_games[i];
      const Utterance u = joint_speak(world, model, rec.context, rec.target, h, derive_seed(config.master_seed, {0x5a, i}));
      wins += oracle_listen(world.library, world.vocab, rec.context, u, config.noise,
                            derive_seed(config.master_seed, {0x5b, i})) == rec.target;
    }
    std::printf("lambda_speaker,%g,%.4f\n", lambda, static_cast<double>(wins) / log.validation_games.size());
  }
  return 0;
}

int serve(CampaignConfig config, int rounds, const std::string& host, int port, const std::string& log_path) {
  config.rounds = std::max(rounds, 1);
  Campaign campaign(config);
  campaign.bootstrap();
  for (int r = 1; r <= rounds; ++r) {
    campaign.run_round(r);
    campaign.retrain(r);
  }

  std::ofstream log_out;
  if (!log_path.empty()) {
    log_out.open(log_path, std::ios::app);
    if (!log_out) throw std::runtime_error("cannot open " + log_path);
  }
  std::mutex log_mu;
  const Vocabulary vocab = campaign.world().vocab;
  ServiceOptions options;
  options.record_sink = [&](const InteractionRecord& rec) {
    if (!log_out.is_open()) return;
    std::lock_guard lock(log_mu);
    log_out << record_to_json(rec, vocab).dump() << '\n' << std::flush;
  };
  options.train_sink = [&](const TrainEntry& t) {
    if (!log_out.is_open()) return;
    std::lock_guard lock(log_mu);
    log_out << Json{{"type", "train"}, {"round", t.round}, {"system", t.system}, {"checkpoint", t.checkpoint},
                    {"report", train_report_to_json(t.report)}}.dump()
            << '\n' << std::flush;
  };
  GameService service(setup_from_campaign(campaign), options);
  httplib::Server server;
  bind_routes(service, server);
  std::printf("serving on http://%s:%d\n", host.c_str(), port);
  std::fflush(stdout);
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated reference-game campaigns with learning from interaction feedback"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
  };

  auto* sim = app.add_subcommand("simulate", "run a full campaign and write logs, checkpoints and metrics");
  add_config(sim);
  int rounds = 0;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::string wordset;
  sim->add_option("--rounds", rounds, "number of rounds");
  sim->add_option("--seed", seed, "master seed");
  sim->add_option("--out", out_dir, "output directory");
  sim->add_option("--wordset", wordset, "marked word list for the accuracy breakdown");

  auto* ana = app.add_subcommand("analyze", "recompute metrics from a campaign log");
  std::string log_path, csv_path;
  ana->add_option("--log", log_path, "interactions.jsonl")->required()->check(CLI::ExistingFile);
  ana->add_option("--out", csv_path, "output CSV")->required();
  ana->add_option("--wordset", wordset, "marked word list");

  auto* cal = app.add_subcommand("calibrate", "oracle-vs-oracle success over a noise grid");
  add_config(cal);
  int games = 20000;
  std::vector<double> drops, swaps, errs;
  cal->add_option("--games", games, "games per grid point");
  cal->add_option("--drop", drops, "speaker_drop values")->delimiter(',');
  cal->add_option("--swap", swaps, "speaker_swap values")->delimiter(',');
  cal->add_option("--err", errs, "listener_err values")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep-lambda", "validation sweep over the joint-inference weights");
  add_config(sweep);
  std::vector<double> lambda_l{0.0, 0.25, 0.5, 0.75, 1.0}, lambda_s{0.0, 0.25, 0.5, 0.75, 1.0};
  sweep->add_option("--listener", lambda_l, "lambda_listener values")->delimiter(',');
  sweep->add_option("--speaker", lambda_s, "lambda_speaker values")->delimiter(',');

  auto* srv = app.add_subcommand("serve", "HTTP game service for human play");
  add_config(srv);
  std::string host = "127.0.0.1";
  int port = 8080;
  int serve_rounds = 0;
  std::string human_log;
  srv->add_option("--host", host, "bind address");
  srv->add_option("--port", port, "port");
  srv->add_option("--rounds", serve_rounds, "simulated rounds to run before serving (0 = seed-trained models)");
  srv->add_option("--log", human_log, "append human records and retraining results to this JSONL file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      CampaignConfig config = config_from(config_path, overrides);
      if (rounds > 0) config.rounds = rounds;
      if (sim->count("--seed")) config.master_seed = seed;
      config.validate();
      return simulate(config, out_dir, wordset);
    }
    if (*ana) return analyze(log_path, csv_path, wordset);
    if (*cal) {
      const CampaignConfig config = config_from(config_path, overrides);
      if (drops.empty()) drops = {config.noise.speaker_drop};
      if (swaps.empty()) swaps = {config.noise.speaker_swap};
      if (errs.empty()) errs = {config.noise.listener_err};
      return calibrate(config, games, drops, swaps, errs);
    }
    if (*sweep) return sweep_lambda(config_from(config_path, overrides), lambda_l, lambda_s);
    if (*srv) return serve(config_from(config_path, overrides), serve_rounds, host, port, human_log);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
