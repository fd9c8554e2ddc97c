#include "refloop/gameserve.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numbers>
#include <numeric>

#include "refloop/checkpoint.hpp"
#include "refloop/pragmatics.hpp"
#include "refloop/rng.hpp"

namespace refloop {
namespace {

constexpr std::uint64_t kTagSession = 0x5e55;
constexpr std::uint64_t kTagBoard = 0xb0a7;
constexpr std::uint64_t kTagOrder = 0x0de7;
constexpr std::uint64_t kTagModel = 0x30de;
constexpr std::uint64_t kTagServeTrain = 0x7a1e;

using Point = std::pair<double, double>;

Json points_json(const std::vector<Point>& pts) {
  Json out = Json::array();
  for (const auto& [x, y] : pts) {
    // Round to 1e-4 so the description is stable across platforms.
    out.push_back({std::round(x * 1e4) / 1e4, std::round(y * 1e4) / 1e4});
  }
  return out;
}

std::vector<Point> regular_polygon(int n, double radius, double phase) {
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / n;
    pts.emplace_back(radius * std::cos(a), radius * std::sin(a));
  }
  return pts;
}

std::vector<Point> outline(const std::string& kind, int value_index) {
  const double up = std::numbers::pi / 2;
  if (kind == "circle") return regular_polygon(24, 0.9, 0.0);
  if (kind == "square") return {{-0.8, -0.8}, {0.8, -0.8}, {0.8, 0.8}, {-0.8, 0.8}};
  if (kind == "triangle") return regular_polygon(3, 0.95, up);
  if (kind == "star") {
    std::vector<Point> pts;
    for (int i = 0; i < 10; ++i) {
      const double r = i % 2 == 0 ? 0.95 : 0.4;
      const double a = up + std::numbers::pi * i / 5;
      pts.emplace_back(r * std::cos(a), r * std::sin(a));
    }
    return pts;
  }
  if (kind == "cross")
    return {{-0.3, 0.9}, {0.3, 0.9}, {0.3, 0.3}, {0.9, 0.3}, {0.9, -0.3}, {0.3, -0.3},
            {0.3, -0.9}, {-0.3, -0.9}, {-0.3, -0.3}, {-0.9, -0.3}, {-0.9, 0.3}, {-0.3, 0.3}};
  if (kind == "heart") {
    std::vector<Point> pts;
    for (int i = 0; i < 32; ++i) {
      const double t = 2.0 * std::numbers::pi * i / 32;
      const double x = 16 * std::pow(std::sin(t), 3);
      const double y = 13 * std::cos(t) - 5 * std::cos(2 * t) - 2 * std::cos(3 * t) - std::cos(4 * t);
      pts.emplace_back(x / 18.0, (y + 2.5) / 18.0);
    }
    return pts;
  }
  if (kind == "moon") {
    std::vector<Point> pts;
    for (int i = 0; i <= 12; ++i) {
      const double a = up + std::numbers::pi * i / 12;
      pts.emplace_back(0.9 * std::cos(a), 0.9 * std::sin(a));
    }
    for (int i = 12; i >= 0; --i) {
      const double a = up + std::numbers::pi * i / 12;
      pts.emplace_back(0.35 * std::cos(a) - 0.1, 0.9 * std::sin(a));
    }
    return pts;
  }
  if (kind == "arrow")
    return {{0.0, 0.95}, {0.7, 0.2}, {0.25, 0.2}, {0.25, -0.9}, {-0.25, -0.9}, {-0.25, 0.2}, {-0.7, 0.2}};
  return regular_polygon(3 + value_index, 0.9, up);
}

std::string wall_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

std::string hex_id(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

const char* to_string(ServiceErrorCode c) {
  switch (c) {
    case ServiceErrorCode::not_found: return "not_found";
    case ServiceErrorCode::conflict: return "conflict";
    case ServiceErrorCode::invalid_argument: return "invalid_argument";
    case ServiceErrorCode::busy: return "busy";
  }
  return "internal";
}

int http_status(ServiceErrorCode c) {
  switch (c) {
    case ServiceErrorCode::not_found: return 404;
    case ServiceErrorCode::conflict: return 409;
    case ServiceErrorCode::invalid_argument: return 400;
    case ServiceErrorCode::busy: return 409;
  }
  return 500;
}

Json shape_glyph(const AttributeSchema& schema, const Shape& shape) {
  const auto& fams = schema.families();
  auto value = [&](int f) { return fams[f].values[static_cast<std::size_t>(shape.attributes[f])]; };
  Json attrs = Json::object();
  for (int f = 0; f < schema.num_families(); ++f) attrs[fams[f].name] = value(f);

  Json g;
  g["shape_id"] = shape.id;
  g["attributes"] = attrs;
  g["base"] = value(0);
  g["outline"] = points_json(outline(value(0), shape.attributes[0]));
  g["rotation"] = fams.size() > 1 ? 360 * shape.attributes[1] / static_cast<int>(fams[1].values.size()) : 0;
  g["decoration"] = fams.size() > 2 ? value(2) : "plain";
  return g;
}

RolePolicy role_policy_from_string(const std::string& s) {
  if (s == "alternate") return RolePolicy::alternate;
  if (s == "speaker") return RolePolicy::speaker;
  if (s == "listener") return RolePolicy::listener;
  throw ServiceError(ServiceErrorCode::invalid_argument, "unknown role_policy '" + s + "'");
}

const char* to_string(RolePolicy p) {
  switch (p) {
    case RolePolicy::alternate: return "alternate";
    case RolePolicy::speaker: return "speaker";
    case RolePolicy::listener: return "listener";
  }
  return "";
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::speak: return "speak";
    case Phase::listen: return "listen";
    case Phase::feedback: return "feedback";
    case Phase::done: return "done";
  }
  return "";
}

ServiceSetup setup_from_campaign(const Campaign& campaign) {
  const CampaignLog& log = campaign.log();
  ServiceSetup s{campaign.world(), log.config.hyper, campaign.initial_params(), log.validation_games,
                 seed_datasets(log.seed_games), {}, {}, 1, derive_seed(log.config.master_seed, {kTagSession})};
  for (const auto& name : log.config.variants) {
    if (!variant_by_name(name).uses_model) continue;
    s.models.emplace(name, campaign.deployed(name));
    s.native[name];
  }
  for (const auto& r : log.records) {
    const auto it = s.native.find(r.system);
    if (it != s.native.end()) it->second.push_back(r);
    s.round = std::max(s.round, r.round + 1);
  }
  return s;
}

struct GameService::Session {
  std::mutex mu;
  std::string id;
  VariantSpec variant;
  RolePolicy policy = RolePolicy::alternate;
  std::uint64_t seed = 0;

  std::shared_ptr<const Served> model;  // pinned for the current game
  Context context;
  std::vector<int> order;  // target slots for the current board
  int game = -1;
  Phase phase = Phase::done;
  Role human_role = Role::speaker;
  int target = 0;
  Utterance model_utterance;
  double model_utterance_prob = 1.0;
  bool last_success = false;
  std::optional<int> wrong_index;
  int played = 0;
  int successes = 0;
};

GameService::GameService(ServiceSetup setup, ServiceOptions options)
    : world_(std::move(setup.world)),
      hyper_(setup.hyper),
      initial_(std::move(setup.initial)),
      validation_(std::move(setup.validation)),
      seed_data_(std::move(setup.seed_data)),
      seed_(setup.seed),
      games_per_session_(setup.games_per_session),
      role_run_(setup.role_run),
      options_(std::move(options)),
      native_(std::move(setup.native)),
      round_(setup.round) {
  hyper_.validate();
  const int board_size = std::accumulate(kDefaultBlocks.begin(), kDefaultBlocks.end(), 0);
  if (role_run_ < 1 || 2 * role_run_ > board_size)
    throw std::invalid_argument("role_run must leave a distinct target for every game on a board");
  if (games_per_session_ < 1) throw std::invalid_argument("games_per_session must be positive");
  if (setup.models.empty()) throw std::invalid_argument("no models to serve");
  for (auto& [name, params] : setup.models) {
    if (!variant_by_name(name).uses_model) throw std::invalid_argument("variant '" + name + "' has no model");
    const std::string id = checkpoint_id(params);
    models_.emplace(name, std::make_shared<const Served>(Served{id, std::move(params)}));
  }
}

GameService::~GameService() {
  std::unique_lock lock(job_mu_);
  job_cv_.wait(lock, [&] { return !job_running_; });
  if (job_thread_.joinable()) job_thread_.join();
}

std::shared_ptr<GameService::Session> GameService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(ServiceErrorCode::not_found, "no session '" + id + "'");
  return it->second;
}

std::shared_ptr<const GameService::Served> GameService::served(const std::string& variant) const {
  std::lock_guard lock(models_mu_);
  const auto it = models_.find(variant);
  if (it == models_.end()) throw ServiceError(ServiceErrorCode::not_found, "no checkpoint for variant '" + variant + "'");
  return it->second;
}

std::string GameService::checkpoint(const std::string& variant) const { return served(variant)->checkpoint; }

std::vector<InteractionRecord> GameService::human_records() const {
  std::lock_guard lock(data_mu_);
  return human_;
}

void GameService::start_game(Session& s) {
  ++s.game;
  s.wrong_index.reset();
  if (s.game >= games_per_session_) {
    s.phase = Phase::done;
    s.model.reset();
    return;
  }
  const int per_board = 2 * role_run_;
  const int board = s.game / per_board;
  const int within = s.game % per_board;
  if (within == 0) {
    s.context = build_context(world_.library, derive_seed(s.seed, {kTagBoard, static_cast<std::uint64_t>(board)}));
    s.order.resize(static_cast<std::size_t>(s.context.size()));
    for (int i = 0; i < s.context.size(); ++i) s.order[static_cast<std::size_t>(i)] = i;
    Rng(derive_seed(s.seed, {kTagOrder, static_cast<std::uint64_t>(board)})).shuffle(s.order.begin(), s.order.end());
  }
  s.target = s.order[static_cast<std::size_t>(within)];
  switch (s.policy) {
    case RolePolicy::alternate: s.human_role = within < role_run_ ? Role::speaker : Role::listener; break;
    case RolePolicy::speaker: s.human_role = Role::speaker; break;
    case RolePolicy::listener: s.human_role = Role::listener; break;
  }
  s.model = served(s.variant.name);
  if (s.human_role == Role::speaker) {
    s.phase = Phase::speak;
    return;
  }
  const std::uint64_t seed = derive_seed(s.seed, {kTagModel, static_cast<std::uint64_t>(s.game)});
  s.model_utterance = s.variant.joint_inference
                          ? joint_speak(world_, s.model->params, s.context, s.target, hyper_, seed)
                          : best_of_k_speak(world_, s.model->params, s.context, s.target, hyper_, seed);
  s.model_utterance_prob = std::exp(speaker_logprob(world_, s.model->params, s.context, s.target, s.model_utterance));
  s.phase = Phase::listen;
}

Json GameService::score_json(const Session& s) const { return Json{{"games", s.played}, {"successes", s.successes}}; }

Json GameService::state_json(const Session& s) const {
  Json j;
  j["session_id"] = s.id;
  j["variant"] = s.variant.name;
  j["role_policy"] = to_string(s.policy);
  j["game"] = s.game;
  j["games_total"] = games_per_session_;
  j["phase"] = to_string(s.phase);
  j["score"] = score_json(s);
  if (s.phase == Phase::done) return j;

  j["checkpoint"] = s.model->checkpoint;
  j["role"] = to_string(s.human_role);
  const auto& perm = s.human_role == Role::speaker ? s.context.speaker_perm : s.context.listener_perm;
  Json board = Json::array();
  for (int slot : perm) board.push_back(shape_glyph(world_.library.schema, world_.library.at(s.context.shape_ids[static_cast<std::size_t>(slot)])));
  j["board"] = board;
  if (s.human_role == Role::speaker) {
    j["target"] = static_cast<int>(std::find(perm.begin(), perm.end(), s.target) - perm.begin());
  } else {
    j["utterance"] = utterance_text(world_.vocab, s.model_utterance);
  }
  if (s.phase == Phase::feedback) {
    Json outcome{{"success", s.last_success}};
    if (s.wrong_index) outcome["wrong_index"] = *s.wrong_index;
    j["outcome"] = outcome;
  }
  return j;
}

Json GameService::create_session(const std::string& variant, const std::string& role_policy) {
  VariantSpec spec;
  try {
    spec = variant_by_name(variant);
  } catch (const std::invalid_argument&) {
    throw ServiceError(ServiceErrorCode::not_found, "unknown variant '" + variant + "'");
  }
  served(variant);
  auto s = std::make_shared<Session>();
  s->variant = spec;
  s->policy = role_policy_from_string(role_policy);
  {
    std::lock_guard lock(sessions_mu_);
    s->seed = derive_seed(seed_, {kTagSession, session_counter_++});
    s->id = hex_id(s->seed);
    while (sessions_.count(s->id)) s->id = hex_id(splitmix64(std::stoull(s->id, nullptr, 16)));
    sessions_.emplace(s->id, s);
  }
  std::lock_guard lock(s->mu);
  start_game(*s);
  return Json{{"session_id", s->id}, {"state", state_json(*s)}};
}

Json GameService::state(const std::string& session_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mu);
  if (s->phase == Phase::feedback) start_game(*s);
  return state_json(*s);
}

void GameService::log_record(InteractionRecord rec) {
  std::lock_guard lock(data_mu_);
  rec.round = round_;
  rec.game_index = static_cast<int>(human_.size());
  rec.partner = Partner::human;
  rec.provenance = Provenance::native;
  rec.timestamp = wall_timestamp();
  native_[rec.system].push_back(rec);
  human_.push_back(rec);
  if (options_.record_sink) options_.record_sink(rec);
}

Json GameService::submit_utterance(const std::string& session_id, const std::string& text) {
  auto s = find(session_id);
  std::lock_guard lock(s->mu);
  if (s->phase != Phase::speak)
    throw ServiceError(ServiceErrorCode::conflict, std::string("session is in phase ") + to_string(s->phase));
  const Utterance u = tokenize_text(world_.vocab, text, world_.max_len);
  if (u.content().empty()) throw ServiceError(ServiceErrorCode::invalid_argument, "utterance is empty");

  const auto& params = s->model->params;
  const auto probs = s->variant.joint_inference ? joint_listener(world_, params, s->context, u, hyper_.lambda_listener)
                                                : listener_distribution(world_, params, s->context, u);
  InteractionRecord rec;
  rec.system = s->variant.name;
  rec.role = Role::listener;
  rec.context = s->context;
  rec.target = s->target;
  rec.utterance = u;
  rec.raw_text = text;
  rec.selection = argmax_slot(probs);
  rec.behavior_prob = probs[static_cast<std::size_t>(rec.selection)];
  rec.reward = reward_from_outcome(rec.selection == rec.target);
  rec.checkpoint = s->model->checkpoint;
  const bool success = rec.selection == rec.target;
  log_record(std::move(rec));

  ++s->played;
  if (success) ++s->successes;
  s->last_success = success;
  s->phase = Phase::feedback;
  return Json{{"success", success}, {"score", score_json(*s)}};
}

Json GameService::submit_selection(const std::string& session_id, int index) {
  auto s = find(session_id);
  std::lock_guard lock(s->mu);
  if (s->phase != Phase::listen)
    throw ServiceError(ServiceErrorCode::conflict, std::string("session is in phase ") + to_string(s->phase));
  if (index < 0 || index >= s->context.size())
    throw ServiceError(ServiceErrorCode::invalid_argument, "selection index out of range");

  InteractionRecord rec;
  rec.system = s->variant.name;
  rec.role = Role::speaker;
  rec.context = s->context;
  rec.target = s->target;
  rec.utterance = s->model_utterance;
  rec.selection = s->context.listener_perm[static_cast<std::size_t>(index)];
  rec.behavior_prob = s->model_utterance_prob;
  rec.reward = reward_from_outcome(rec.selection == rec.target);
  rec.checkpoint = s->model->checkpoint;
  const bool success = rec.selection == rec.target;
  log_record(std::move(rec));

  ++s->played;
  if (success) ++s->successes;
  s->last_success = success;
  if (!success) s->wrong_index = index;
  s->phase = Phase::feedback;
  Json out{{"success", success}, {"score", score_json(*s)}};
  if (!success) out["wrong_index"] = index;
  return out;
}

Json GameService::admin_train(std::optional<int> round_tag) {
  {
    std::lock_guard lock(job_mu_);
    if (job_running_) throw ServiceError(ServiceErrorCode::busy, "a training job is already running");
    if (job_thread_.joinable()) job_thread_.join();
    int tag;
    {
      std::lock_guard data_lock(data_mu_);
      tag = round_tag.value_or(round_);
    }
    if (tag < 0) throw ServiceError(ServiceErrorCode::invalid_argument, "round must be non-negative");
    job_running_ = true;
    job_state_ = "running";
    job_error_.clear();
    job_round_ = tag;
    const std::uint64_t job = ++job_count_;
    job_thread_ = std::thread([this, tag, job] { run_training(tag, job); });
  }
  return admin_status();
}

void GameService::run_training(int round_tag, std::uint64_t) {
  std::vector<TrainEntry> entries;
  std::string error;
  try {
    std::vector<std::string> names;
    {
      std::lock_guard lock(models_mu_);
      for (const auto& [name, _] : models_) names.push_back(name);
    }
    std::map<std::string, std::vector<InteractionRecord>> native;
    {
      std::lock_guard lock(data_mu_);
      native = native_;
    }
    std::map<std::string, std::shared_ptr<const Served>> fresh;
    for (const auto& name : names) {
      const VariantSpec v = variant_by_name(name);
      RoundDatasets own;
      for (const auto& r : native[name]) (r.role == Role::listener ? own.comprehension : own.generation).push_back(r);
      if (v.data_sharing) own = share_data(own);
      RoundDatasets data = seed_data_;
      data.comprehension.insert(data.comprehension.end(), own.comprehension.begin(), own.comprehension.end());
      data.generation.insert(data.generation.end(), own.generation.begin(), own.generation.end());
      const TrainOptions opts{v.joint_inference,
                              derive_seed(seed_, {kTagServeTrain, static_cast<std::uint64_t>(round_tag)})};
      auto [params, report] = train(world_, initial_, data.comprehension, data.generation, validation_, hyper_, opts);
      const std::string id = checkpoint_id(params);
      entries.push_back(TrainEntry{round_tag, name, id, std::move(report)});
      fresh.emplace(name, std::make_shared<const Served>(Served{id, std::move(params)}));
    }
    if (options_.before_swap) options_.before_swap();
    {
      std::lock_guard lock(models_mu_);
      for (auto& [name, m] : fresh) models_[name] = std::move(m);
    }
    {
      std::lock_guard lock(data_mu_);
      round_ = std::max(round_, round_tag + 1);
    }
    if (options_.train_sink)
      for (const auto& e : entries) options_.train_sink(e);
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::lock_guard lock(job_mu_);
  job_state_ = error.empty() ? "done" : "failed";
  job_error_ = error;
  job_results_ = std::move(entries);
  job_running_ = false;
  job_cv_.notify_all();
}

void GameService::wait_for_training() {
  std::unique_lock lock(job_mu_);
  job_cv_.wait(lock, [&] { return !job_running_; });
}

Json GameService::admin_status() const {
  Json j;
  {
    std::lock_guard lock(job_mu_);
    j["state"] = job_state_;
    j["job"] = job_count_;
    if (job_count_ > 0) j["job_round"] = job_round_;
    if (!job_error_.empty()) j["error"] = job_error_;
    Json results = Json::array();
    for (const auto& e : job_results_)
      results.push_back({{"variant", e.system},
                         {"checkpoint", e.checkpoint},
                         {"best_epoch", e.report.best_epoch},
                         {"best_accuracy", e.report.best_accuracy}});
    j["results"] = results;
  }
  {
    std::lock_guard lock(data_mu_);
    j["round"] = round_;
    j["human_records"] = human_.size();
  }
  Json ckpts = Json::object();
  {
    std::lock_guard lock(models_mu_);
    for (const auto& [name, m] : models_) ckpts[name] = m->checkpoint;
  }
  j["checkpoints"] = ckpts;
  return j;
}

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, f(req));
    } catch (const ServiceError& e) {
      send_json(res, http_status(e.code()), Json{{"code", to_string(e.code())}, {"message", e.what()}});
    } catch (const Json::exception& e) {
      send_json(res, 400, Json{{"code", "invalid_argument"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, Json{{"code", "internal"}, {"message", e.what()}});
    }
  };
}

Json body_object(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  Json j = Json::parse(req.body);
  if (!j.is_object()) throw ServiceError(ServiceErrorCode::invalid_argument, "request body must be a JSON object");
  return j;
}

}  // namespace

void bind_routes(GameService& service, httplib::Server& server) {
  server.Post("/api/session", guarded([&service](const httplib::Request& req) {
    const Json body = body_object(req);
    if (!body.contains("variant") || !body["variant"].is_string())
      throw ServiceError(ServiceErrorCode::invalid_argument, "variant is required");
    const std::string policy = body.contains("role_policy") ? body["role_policy"].get<std::string>() : "alternate";
    return service.create_session(body["variant"].get<std::string>(), policy);
  }));
  server.Get(R"(/api/session/([^/]+)/state)",
             guarded([&service](const httplib::Request& req) { return service.state(req.matches[1]); }));
  server.Post(R"(/api/session/([^/]+)/utterance)", guarded([&service](const httplib::Request& req) {
    const Json body = body_object(req);
    if (!body.contains("text") || !body["text"].is_string())
      throw ServiceError(ServiceErrorCode::invalid_argument, "text is required");
    return service.submit_utterance(req.matches[1], body["text"].get<std::string>());
  }));
  server.Post(R"(/api/session/([^/]+)/selection)", guarded([&service](const httplib::Request& req) {
    const Json body = body_object(req);
    if (!body.contains("index") || !body["index"].is_number_integer())
      throw ServiceError(ServiceErrorCode::invalid_argument, "index must be an integer");
    return service.submit_selection(req.matches[1], body["index"].get<int>());
  }));
  server.Post("/api/admin/train", guarded([&service](const httplib::Request& req) {
    const Json body = body_object(req);
    std::optional<int> round;
    if (body.contains("round")) {
      if (!body["round"].is_number_integer())
        throw ServiceError(ServiceErrorCode::invalid_argument, "round must be an integer");
      round = body["round"].get<int>();
    }
    return service.admin_train(round);
  }));
  server.Get("/api/admin/status", guarded([&service](const httplib::Request&) { return service.admin_status(); }));
}

}  // namespace refloop
