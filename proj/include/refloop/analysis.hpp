#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "refloop/records_io.hpp"

namespace refloop {

using Words = std::vector<std::string>;

struct Estimate {
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool has_ci = false;
  bool operator==(const Estimate&) const = default;
};

inline constexpr int kBootstrapResamples = 10000;

/// Mean with a seeded percentile bootstrap 95% interval.
Estimate bootstrap_mean(const std::vector<double>& values, std::uint64_t seed, int resamples = kBootstrapResamples);

/// Success rate over 0/1 outcomes. Throws std::invalid_argument when empty.
Estimate role_accuracy(const std::vector<int>& outcomes, std::uint64_t seed, int resamples = kBootstrapResamples);

/// Lowercased, whitespace-split words.
Words split_words(const std::string& text);

double utterance_length(const std::vector<Words>& utterances);
std::size_t effective_vocabulary(const std::vector<Words>& utterances);
/// For each round in order, how many distinct words were not produced in
/// any earlier round.
std::vector<std::size_t> new_words(const std::vector<std::vector<Words>>& rounds);

/// Jensen-Shannon divergence with base-2 logarithms, in [0, 1].
double jensen_shannon(const std::map<std::string, double>& p, const std::map<std::string, double>& q);
std::map<std::string, double> unigram_distribution(const Words& words);

/// Mean over shapes (with ≥ 2 descriptions) of the mean pairwise JSD of
/// the descriptions' unigram distributions. Throws std::invalid_argument
/// if no shape qualifies.
double snd(const std::map<int, std::vector<Words>>& descriptions_by_shape);

/// 1 − JSD between add-one-smoothed unigram distributions of two corpora
/// over their joint vocabulary. Unigram stand-in for an embedding-based
/// divergence. Throws std::invalid_argument on an empty corpus.
double corpus_similarity(const std::vector<Words>& model, const std::vector<Words>& reference);

struct MarkedBreakdown {
  std::optional<Estimate> with_marked;
  std::optional<Estimate> without_marked;
};

struct ScoredUtterance {
  Words words;
  bool success = false;
};

/// Splits games by whether the utterance uses any word from the set.
MarkedBreakdown marked_word_breakdown(const std::vector<ScoredUtterance>& games, const std::set<std::string>& word_set,
                                      std::uint64_t seed);

/// Default marked words: surfaces of the ORIENT family.
std::set<std::string> default_marked_words();
std::set<std::string> load_word_set(std::istream& in);

struct MetricRow {
  int round = 0;
  std::string variant;
  std::string role;  // empty for language metrics
  std::string metric;
  Estimate estimate;
  bool operator==(const MetricRow&) const = default;
};

struct MetricTable {
  std::vector<MetricRow> rows;

  const MetricRow* find(int round, const std::string& variant, const std::string& role, const std::string& metric) const;
  void write_csv(std::ostream& out) const;
  bool operator==(const MetricTable&) const = default;
};

/// Everything the metrics need, as it appears in the JSONL log.
struct AnalysisInput {
  struct Game {
    int round;
    std::string system;
    std::string role;
    bool success;
    Words words;
  };
  struct Eval {
    std::string purpose;
    int round;
    std::string system;
    int shape;
    Words words;
  };
  struct Dataset {
    int round;
    std::string system;
    std::map<std::string, std::map<std::string, int>> counts;  // role -> provenance -> n
  };
  struct Offline {
    int round;
    std::string system;
    std::vector<int> outcomes;
  };
  std::vector<Game> games;
  std::vector<Eval> evals;
  std::vector<Dataset> datasets;
  std::vector<Offline> offline;
};

AnalysisInput read_analysis_input(std::istream& jsonl);
AnalysisInput analysis_input_from_jsonl(const std::string& jsonl);

MetricTable compute_metrics(const AnalysisInput& input, const std::set<std::string>& marked_words);

}  // namespace refloop
