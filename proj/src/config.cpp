#include "refloop/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace refloop {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof()) throw std::invalid_argument("bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw std::invalid_argument("bad boolean for " + key + ": '" + value + "'");
}

std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream in(value);
  for (std::string item; std::getline(in, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

using Setter = std::function<void(CampaignConfig&, const std::string&, const std::string&)>;

template <class T, class Field>
Setter number(Field field) {
  return [field](CampaignConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"rounds", number<int>([](CampaignConfig& c) -> int& { return c.rounds; })},
      {"schedule_start", number<int>([](CampaignConfig& c) -> int& { return c.schedule_start; })},
      {"schedule_step", number<int>([](CampaignConfig& c) -> int& { return c.schedule_step; })},
      {"master_seed", number<std::uint64_t>([](CampaignConfig& c) -> std::uint64_t& { return c.master_seed; })},
      {"library_seed", number<std::uint64_t>([](CampaignConfig& c) -> std::uint64_t& { return c.library_seed; })},
      {"library_size", number<int>([](CampaignConfig& c) -> int& { return c.library_size; })},
      {"model_dim", number<int>([](CampaignConfig& c) -> int& { return c.model_dim; })},
      {"max_len", number<int>([](CampaignConfig& c) -> int& { return c.max_len; })},
      {"num_fillers", number<int>([](CampaignConfig& c) -> int& { return c.num_fillers; })},
      {"seed_games", number<int>([](CampaignConfig& c) -> int& { return c.seed_games; })},
      {"validation_games", number<int>([](CampaignConfig& c) -> int& { return c.validation_games; })},
      {"eval_pairs", number<int>([](CampaignConfig& c) -> int& { return c.eval_pairs; })},
      {"workers", number<int>([](CampaignConfig& c) -> int& { return c.workers; })},
      {"control_redeploy",
       [](CampaignConfig& c, const std::string& k, const std::string& v) { c.control_redeploy = parse_bool(k, v); }},
      {"offline_round",
       [](CampaignConfig& c, const std::string& k, const std::string& v) { c.offline_round = parse_bool(k, v); }},
      {"variants", [](CampaignConfig& c, const std::string&, const std::string& v) { c.variants = parse_list(v); }},
      {"lambda_listener", number<double>([](CampaignConfig& c) -> double& { return c.hyper.lambda_listener; })},
      {"lambda_speaker", number<double>([](CampaignConfig& c) -> double& { return c.hyper.lambda_speaker; })},
      {"k", number<int>([](CampaignConfig& c) -> int& { return c.hyper.k; })},
      {"temperature", number<double>([](CampaignConfig& c) -> double& { return c.hyper.temperature; })},
      {"ips_clip", number<double>([](CampaignConfig& c) -> double& { return c.hyper.ips_clip; })},
      {"lr", number<double>([](CampaignConfig& c) -> double& { return c.hyper.lr; })},
      {"adam_beta1", number<double>([](CampaignConfig& c) -> double& { return c.hyper.adam_beta1; })},
      {"adam_beta2", number<double>([](CampaignConfig& c) -> double& { return c.hyper.adam_beta2; })},
      {"adam_eps", number<double>([](CampaignConfig& c) -> double& { return c.hyper.adam_eps; })},
      {"weight_decay", number<double>([](CampaignConfig& c) -> double& { return c.hyper.weight_decay; })},
      {"batch_size", number<int>([](CampaignConfig& c) -> int& { return c.hyper.batch_size; })},
      {"max_epochs", number<int>([](CampaignConfig& c) -> int& { return c.hyper.max_epochs; })},
      {"patience", number<int>([](CampaignConfig& c) -> int& { return c.hyper.patience; })},
      {"speaker_drop", number<double>([](CampaignConfig& c) -> double& { return c.noise.speaker_drop; })},
      {"speaker_swap", number<double>([](CampaignConfig& c) -> double& { return c.noise.speaker_swap; })},
      {"listener_err", number<double>([](CampaignConfig& c) -> double& { return c.noise.listener_err; })},
      {"filler_prob", number<double>([](CampaignConfig& c) -> double& { return c.noise.filler; })},
  };
  return table;
}

}  // namespace

void CampaignConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be positive");
  for (int r = 1; r <= rounds; ++r)
    if (interactions(r) <= 0) throw std::invalid_argument("interaction schedule must stay positive");
  if (seed_games <= 0 || validation_games <= 0) throw std::invalid_argument("seed and validation counts must be positive");
  if (eval_pairs <= 0) throw std::invalid_argument("eval_pairs must be positive");
  if (library_size < 10) throw std::invalid_argument("library_size must be at least 10");
  if (model_dim < 1 || max_len < 1 || num_fillers < 0 || workers < 1) throw std::invalid_argument("invalid model sizes");
  if (variants.empty()) throw std::invalid_argument("no variants configured");
  hyper.validate();
  noise.validate();
}

void set_config_value(CampaignConfig& config, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second(config, key, value);
}

CampaignConfig parse_config(std::istream& in) {
  CampaignConfig config;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.validate();
  return config;
}

CampaignConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return parse_config(in);
}

Json config_to_json(const CampaignConfig& c) {
  const Hyper& h = c.hyper;
  return Json{{"rounds", c.rounds},
              {"schedule_start", c.schedule_start},
              {"schedule_step", c.schedule_step},
              {"master_seed", c.master_seed},
              {"library_seed", c.library_seed},
              {"library_size", c.library_size},
              {"model_dim", c.model_dim},
              {"max_len", c.max_len},
              {"num_fillers", c.num_fillers},
              {"seed_games", c.seed_games},
              {"validation_games", c.validation_games},
              {"eval_pairs", c.eval_pairs},
              {"control_redeploy", c.control_redeploy},
              {"offline_round", c.offline_round},
              {"variants", c.variants},
              {"lambda_listener", h.lambda_listener},
              {"lambda_speaker", h.lambda_speaker},
              {"k", h.k},
              {"temperature", h.temperature},
              {"ips_clip", h.ips_clip},
              {"lr", h.lr},
              {"adam_beta1", h.adam_beta1},
              {"adam_beta2", h.adam_beta2},
              {"adam_eps", h.adam_eps},
              {"weight_decay", h.weight_decay},
              {"batch_size", h.batch_size},
              {"max_epochs", h.max_epochs},
              {"patience", h.patience},
              {"speaker_drop", c.noise.speaker_drop},
              {"speaker_swap", c.noise.speaker_swap},
              {"listener_err", c.noise.listener_err},
              {"filler_prob", c.noise.filler}};
}

}  // namespace refloop
