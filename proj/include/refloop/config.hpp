#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "refloop/hyper.hpp"
#include "refloop/records_io.hpp"
#include "refloop/world.hpp"

namespace refloop {

struct CampaignConfig {
  int rounds = 4;
  int schedule_start = 200;  // interactions per role per variant in round 1
  int schedule_step = 50;    // added each round
  std::uint64_t master_seed = 1;
  std::uint64_t library_seed = 7;
  int library_size = 256;
  int model_dim = 16;
  int max_len = 6;
  int num_fillers = 4;
  int seed_games = 104;
  int validation_games = 280;
  int eval_pairs = 200;
  bool control_redeploy = true;
  bool offline_round = false;
  int workers = 1;
  std::vector<std::string> variants{"Full", "No-DS", "No-JI", "Baseline", "Human"};
  Hyper hyper;
  PartnerNoise noise;

  int interactions(int round) const { return schedule_start + schedule_step * (round - 1); }
  void validate() const;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
CampaignConfig parse_config(std::istream& in);
CampaignConfig load_config(const std::string& path);

/// Applies one key/value pair; throws std::invalid_argument on unknown keys
/// or malformed values.
void set_config_value(CampaignConfig& config, const std::string& key, const std::string& value);

Json config_to_json(const CampaignConfig& config);

}  // namespace refloop
