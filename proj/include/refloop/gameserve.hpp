#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "refloop/agent.hpp"
#include "refloop/arena.hpp"
#include "refloop/hyper.hpp"
#include "refloop/learning.hpp"
#include "refloop/records_io.hpp"

namespace httplib {
class Server;
}

namespace refloop {

enum class ServiceErrorCode { not_found, conflict, invalid_argument, busy };
const char* to_string(ServiceErrorCode c);
int http_status(ServiceErrorCode c);

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ServiceErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ServiceErrorCode code() const { return code_; }

 private:
  ServiceErrorCode code_;
};

/// Drawing description for one shape: base outline, rotation, decoration.
/// Outline points lie in [-1, 1]^2, y pointing up, before rotation.
Json shape_glyph(const AttributeSchema& schema, const Shape& shape);

enum class RolePolicy { alternate, speaker, listener };
RolePolicy role_policy_from_string(const std::string& s);
const char* to_string(RolePolicy p);

enum class Phase { speak, listen, feedback, done };
const char* to_string(Phase p);

/// Everything the service needs to train and serve.
struct ServiceSetup {
  World world;
  Hyper hyper;
  ModelParams initial;
  std::vector<InteractionRecord> validation;
  RoundDatasets seed_data;
  std::map<std::string, std::vector<InteractionRecord>> native;  // per variant, before sharing
  std::map<std::string, ModelParams> models;                     // served checkpoints
  int round = 1;                                                 // tag for new human records
  std::uint64_t seed = 1;
  int games_per_session = 48;
  int role_run = 3;  // consecutive games per role on a fixed board
};

/// Setup serving the campaign's currently deployed model variants.
ServiceSetup setup_from_campaign(const Campaign& campaign);

struct ServiceOptions {
  std::function<void(const InteractionRecord&)> record_sink;
  std::function<void(const TrainEntry&)> train_sink;
  /// Runs on the training thread after training, before the swap.
  std::function<void()> before_swap;
};

class GameService {
 public:
  explicit GameService(ServiceSetup setup, ServiceOptions options = {});
  ~GameService();
  GameService(const GameService&) = delete;
  GameService& operator=(const GameService&) = delete;

  /// {session_id, state}. Unknown variant: not_found.
  Json create_session(const std::string& variant, const std::string& role_policy = "alternate");
  /// Current state; a session in feedback advances to its next game first.
  Json state(const std::string& session_id);
  /// {success, score}. The model's choice is never included.
  Json submit_utterance(const std::string& session_id, const std::string& text);
  /// {success, score} plus wrong_index on failure. The target is never included.
  Json submit_selection(const std::string& session_id, int index);

  /// Starts a background retrain of every served variant. Busy if one is running.
  Json admin_train(std::optional<int> round_tag = std::nullopt);
  Json admin_status() const;
  /// Blocks until no training job is running.
  void wait_for_training();

  std::string checkpoint(const std::string& variant) const;
  std::vector<InteractionRecord> human_records() const;
  const World& world() const { return world_; }

 private:
  struct Served {
    std::string checkpoint;
    ModelParams params;
  };
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<const Served> served(const std::string& variant) const;
  void start_game(Session& s);
  Json state_json(const Session& s) const;
  Json score_json(const Session& s) const;
  void log_record(InteractionRecord rec);
  void run_training(int round_tag, std::uint64_t job);

  World world_;
  Hyper hyper_;
  ModelParams initial_;
  std::vector<InteractionRecord> validation_;
  RoundDatasets seed_data_;
  std::uint64_t seed_;
  int games_per_session_;
  int role_run_;
  ServiceOptions options_;

  mutable std::mutex models_mu_;
  std::map<std::string, std::shared_ptr<const Served>> models_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t session_counter_ = 0;

  mutable std::mutex data_mu_;
  std::map<std::string, std::vector<InteractionRecord>> native_;
  std::vector<InteractionRecord> human_;
  int round_;

  mutable std::mutex job_mu_;
  std::condition_variable job_cv_;
  bool job_running_ = false;
  std::uint64_t job_count_ = 0;
  std::string job_state_ = "idle";
  std::string job_error_;
  int job_round_ = 0;
  std::vector<TrainEntry> job_results_;
  std::thread job_thread_;
};

/// Registers the JSON routes on an httplib server.
void bind_routes(GameService& service, httplib::Server& server);

}  // namespace refloop
