#include "refloop/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <set>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "refloop/language.hpp"
#include "refloop/rng.hpp"

namespace refloop {
namespace {

std::uint64_t cell_seed(int round, const std::string& variant, const std::string& role, const std::string& metric) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::string key = std::to_string(round) + "|" + variant + "|" + role + "|" + metric;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::map<std::string, double> smoothed_unigrams(const std::vector<Words>& corpus, const std::set<std::string>& vocab) {
  std::map<std::string, double> counts;
  for (const auto& w : vocab) counts[w] = 1.0;
  double total = static_cast<double>(vocab.size());
  for (const auto& u : corpus)
    for (const auto& w : u) {
      counts[w] += 1.0;
      total += 1.0;
    }
  for (auto& [w, c] : counts) c /= total;
  return counts;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Estimate bootstrap_mean(const std::vector<double>& values, std::uint64_t seed, int resamples) {
  if (values.empty()) throw std::invalid_argument("cannot bootstrap an empty sample");
  Estimate e;
  e.value = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  e.has_ci = true;
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[rng.below(values.size())];
    m = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const auto n = means.size();
  e.lo = means[static_cast<std::size_t>(std::floor(0.025 * static_cast<double>(n)))];
  e.hi = means[std::min(n - 1, static_cast<std::size_t>(std::ceil(0.975 * static_cast<double>(n))) - 1)];
  e.lo = std::min(e.lo, e.value);
  e.hi = std::max(e.hi, e.value);
  return e;
}

Estimate role_accuracy(const std::vector<int>& outcomes, std::uint64_t seed, int resamples) {
  if (outcomes.empty()) throw std::invalid_argument("no records to score");
  std::vector<double> v(outcomes.begin(), outcomes.end());
  return bootstrap_mean(v, seed, resamples);
}

Words split_words(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lower);
  Words out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double utterance_length(const std::vector<Words>& utterances) {
  if (utterances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& u : utterances) total += static_cast<double>(u.size());
  return total / static_cast<double>(utterances.size());
}

std::size_t effective_vocabulary(const std::vector<Words>& utterances) {
  std::set<std::string> seen;
  for (const auto& u : utterances) seen.insert(u.begin(), u.end());
  return seen.size();
}

std::vector<std::size_t> new_words(const std::vector<std::vector<Words>>& rounds) {
  std::set<std::string> cumulative;
  std::vector<std::size_t> out;
  for (const auto& round : rounds) {
    std::set<std::string> fresh;
    for (const auto& u : round)
      for (const auto& w : u)
        if (!cumulative.count(w)) fresh.insert(w);
    out.push_back(fresh.size());
    cumulative.insert(fresh.begin(), fresh.end());
  }
  return out;
}

std::map<std::string, double> unigram_distribution(const Words& words) {
  std::map<std::string, double> p;
  for (const auto& w : words) p[w] += 1.0;
  for (auto& [w, c] : p) c /= static_cast<double>(words.size());
  return p;
}

double jensen_shannon(const std::map<std::string, double>& p, const std::map<std::string, double>& q) {
  std::set<std::string> support;
  for (const auto& [w, _] : p) support.insert(w);
  for (const auto& [w, _] : q) support.insert(w);
  auto get = [](const std::map<std::string, double>& d, const std::string& w) {
    const auto it = d.find(w);
    return it == d.end() ? 0.0 : it->second;
  };
  double js = 0.0;
  for (const auto& w : support) {
    const double a = get(p, w), b = get(q, w), m = 0.5 * (a + b);
    if (a > 0.0) js += 0.5 * a * std::log2(a / m);
    if (b > 0.0) js += 0.5 * b * std::log2(b / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

double snd(const std::map<int, std::vector<Words>>& by_shape) {
  double total = 0.0;
  int shapes = 0;
  for (const auto& [shape, descriptions] : by_shape) {
    if (descriptions.size() < 2) continue;
    // Repeated descriptions count once, so a duplicate cannot raise the score.
    const std::set<Words> distinct(descriptions.begin(), descriptions.end());
    if (distinct.size() < 2) {
      ++shapes;
      continue;
    }
    std::vector<std::map<std::string, double>> dists;
    for (const auto& d : distinct) dists.push_back(unigram_distribution(d));
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < dists.size(); ++i)
      for (std::size_t j = i + 1; j < dists.size(); ++j) {
        sum += jensen_shannon(dists[i], dists[j]);
        ++pairs;
      }
    total += sum / pairs;
    ++shapes;
  }
  if (shapes == 0) throw std::invalid_argument("SND needs a shape with at least two descriptions");
  return total / shapes;
}

double corpus_similarity(const std::vector<Words>& model, const std::vector<Words>& reference) {
  if (model.empty() || reference.empty()) throw std::invalid_argument("corpus is empty");
  std::set<std::string> vocab;
  for (const auto* corpus : {&model, &reference})
    for (const auto& u : *corpus) vocab.insert(u.begin(), u.end());
  return 1.0 - jensen_shannon(smoothed_unigrams(model, vocab), smoothed_unigrams(reference, vocab));
}

MarkedBreakdown marked_word_breakdown(const std::vector<ScoredUtterance>& games, const std::set<std::string>& word_set,
                                      std::uint64_t seed) {
  if (word_set.empty()) throw std::invalid_argument("marked word set is empty");
  std::vector<int> with, without;
  for (const auto& g : games) {
    const bool marked = std::any_of(g.words.begin(), g.words.end(), [&](const std::string& w) { return word_set.count(w) > 0; });
    (marked ? with : without).push_back(g.success ? 1 : 0);
  }
  MarkedBreakdown out;
  if (!with.empty()) out.with_marked = role_accuracy(with, seed);
  if (!without.empty()) out.without_marked = role_accuracy(without, splitmix64(seed));
  return out;
}

std::set<std::string> default_marked_words() {
  const auto schema = AttributeSchema::standard();
  const auto& orient = schema.families()[1].values;
  return {orient.begin(), orient.end()};
}

std::set<std::string> load_word_set(std::istream& in) {
  std::set<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    for (auto& w : split_words(line)) out.insert(std::move(w));
  }
  return out;
}

const MetricRow* MetricTable::find(int round, const std::string& variant, const std::string& role,
                                   const std::string& metric) const {
  for (const auto& r : rows)
    if (r.round == round && r.variant == variant && r.role == role && r.metric == metric) return &r;
  return nullptr;
}

void MetricTable::write_csv(std::ostream& out) const {
  out << "# corpus_similarity is 1 - JSD(base 2) of add-one-smoothed unigram distributions against the Human "
         "utterances of the same round; it is not MAUVE.\n";
  out << "round,variant,role,metric,value,lo,hi\n";
  for (const auto& r : rows) {
    out << r.round << ',' << r.variant << ',' << r.role << ',' << r.metric << ',' << format_double(r.estimate.value) << ',';
    if (r.estimate.has_ci) out << format_double(r.estimate.lo) << ',' << format_double(r.estimate.hi);
    else out << ',';
    out << '\n';
  }
}

AnalysisInput read_analysis_input(std::istream& in) {
  AnalysisInput input;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "interaction") {
      const std::string system = j.at("system").get<std::string>();
      if (system == "seed" || system == "validation") continue;
      const std::string raw = j.value("raw_text", "");
      input.games.push_back({j.at("round").get<int>(), system, j.at("role").get<std::string>(),
                             j.at("success").get<bool>(), split_words(raw.empty() ? j.at("text").get<std::string>() : raw)});
    } else if (type == "eval") {
      input.evals.push_back({j.at("purpose").get<std::string>(), j.at("round").get<int>(),
                             j.at("system").get<std::string>(), j.at("shape").get<int>(),
                             split_words(j.at("text").get<std::string>())});
    } else if (type == "dataset") {
      AnalysisInput::Dataset d{j.at("round").get<int>(), j.at("system").get<std::string>(), {}};
      for (const char* role : {"comprehension", "generation"})
        for (const auto& [k, v] : j.at(role).items()) d.counts[role][k] = v.get<int>();
      input.datasets.push_back(std::move(d));
    } else if (type == "offline") {
      input.offline.push_back({j.at("round").get<int>(), j.at("system").get<std::string>(),
                               j.at("outcomes").get<std::vector<int>>()});
    }
  }
  return input;
}

AnalysisInput analysis_input_from_jsonl(const std::string& jsonl) {
  std::istringstream in(jsonl);
  return read_analysis_input(in);
}

MetricTable compute_metrics(const AnalysisInput& input, const std::set<std::string>& marked_words) {
  MetricTable table;
  auto add = [&](int round, const std::string& variant, const std::string& role, const std::string& metric, Estimate e) {
    table.rows.push_back(MetricRow{round, variant, role, metric, e});
  };
  auto point = [](double v) { return Estimate{v, v, v, false}; };

  // Role accuracies and the marked-word split.
  std::map<std::tuple<int, std::string, std::string>, std::vector<ScoredUtterance>> cells;
  for (const auto& g : input.games) cells[{g.round, g.system, g.role}].push_back({g.words, g.success});
  for (const auto& [key, games] : cells) {
    const auto& [round, variant, role] = key;
    std::vector<int> outcomes;
    for (const auto& g : games) outcomes.push_back(g.success ? 1 : 0);
    add(round, variant, role, "accuracy", role_accuracy(outcomes, cell_seed(round, variant, role, "accuracy")));
    const auto split = marked_word_breakdown(games, marked_words, cell_seed(round, variant, role, "marked"));
    if (split.with_marked) add(round, variant, role, "accuracy_marked", *split.with_marked);
    if (split.without_marked) add(round, variant, role, "accuracy_unmarked", *split.without_marked);
  }

  // Language metrics on regenerated evaluation utterances.
  std::map<std::pair<std::string, int>, std::vector<Words>> lang;
  std::map<std::pair<std::string, int>, std::map<int, std::vector<Words>>> snd_groups;
  for (const auto& e : input.evals) {
    if (e.purpose == "lang") lang[{e.system, e.round}].push_back(e.words);
    else if (e.purpose == "snd") snd_groups[{e.system, e.round}][e.shape].push_back(e.words);
  }
  std::map<std::string, std::vector<std::pair<int, const std::vector<Words>*>>> per_variant;
  for (const auto& [key, utts] : lang) per_variant[key.first].push_back({key.second, &utts});
  for (const auto& [variant, rounds] : per_variant) {
    std::vector<std::vector<Words>> ordered;
    for (const auto& [round, utts] : rounds) ordered.push_back(*utts);
    const auto fresh = new_words(ordered);
    for (std::size_t i = 0; i < rounds.size(); ++i) {
      const int round = rounds[i].first;
      const auto& utts = *rounds[i].second;
      std::vector<double> lengths;
      for (const auto& u : utts) lengths.push_back(static_cast<double>(u.size()));
      add(round, variant, "", "utterance_length", bootstrap_mean(lengths, cell_seed(round, variant, "", "length")));
      add(round, variant, "", "effective_vocabulary", point(static_cast<double>(effective_vocabulary(utts))));
      add(round, variant, "", "new_words", point(static_cast<double>(fresh[i])));
      const auto human = lang.find({"Human", round});
      if (variant != "Human" && human != lang.end() && !utts.empty() && !human->second.empty())
        add(round, variant, "", "corpus_similarity", point(corpus_similarity(utts, human->second)));
    }
  }
  for (const auto& [key, groups] : snd_groups) {
    const bool any = std::any_of(groups.begin(), groups.end(), [](const auto& g) { return g.second.size() >= 2; });
    if (any) add(key.second, key.first, "", "snd", point(snd(groups)));
  }

  // Training-set composition.
  for (const auto& d : input.datasets) {
    for (const auto& [role_key, counts] : d.counts) {
      const std::string role = role_key == "comprehension" ? "listener" : "speaker";
      for (const auto& [prov, n] : counts) add(d.round, d.system, role, "train_" + prov, point(n));
    }
  }

  for (const auto& o : input.offline)
    if (!o.outcomes.empty())
      add(o.round, o.system, "listener", "offline_accuracy",
          role_accuracy(o.outcomes, cell_seed(o.round, o.system, "listener", "offline")));
  return table;
}

}  // namespace refloop
