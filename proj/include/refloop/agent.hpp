#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "refloop/language.hpp"
#include "refloop/rng.hpp"
#include "refloop/world.hpp"

namespace refloop {

/// Everything the agent needs to know about the game universe.
struct World {
  ShapeLibrary library;
  Vocabulary vocab;
  int max_len = 6;  // content tokens before the forced EOS

  World(ShapeLibrary lib, int num_fillers = 4, int max_len = 6);
};

struct ModelDims {
  int vocab = 0;
  int dim = 16;
  int features = 0;
  bool operator==(const ModelDims&) const = default;
};

/// Agent parameters, stored contiguously:
///   E  vocab x dim   token embeddings (shared by both roles)
///   M  dim x features shape projection (shared)
///   beta              listener scale
///   Wc dim x dim      speaker prefix mixer
///   b  vocab          speaker token bias
/// Gradients use the same type.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelDims dims);

  static ModelParams zeros(ModelDims dims) { return ModelParams(dims); }
  /// i.i.d. uniform[-scale, scale].
  static ModelParams random(ModelDims dims, std::uint64_t seed, double scale = 0.1);

  const ModelDims& dims() const { return dims_; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::size_t size() const { return data_.size(); }

  double& E(int v, int k) { return data_[idx_e(v, k)]; }
  double E(int v, int k) const { return data_[idx_e(v, k)]; }
  double& M(int k, int f) { return data_[idx_m(k, f)]; }
  double M(int k, int f) const { return data_[idx_m(k, f)]; }
  double& beta() { return data_[off_beta_]; }
  double beta() const { return data_[off_beta_]; }
  double& Wc(int i, int j) { return data_[idx_w(i, j)]; }
  double Wc(int i, int j) const { return data_[idx_w(i, j)]; }
  double& b(int v) { return data_[off_b_ + static_cast<std::size_t>(v)]; }
  double b(int v) const { return data_[off_b_ + static_cast<std::size_t>(v)]; }

  const double* E_row(int v) const { return data_.data() + idx_e(v, 0); }

  /// Adds scale * other, elementwise.
  void axpy(double scale, const ModelParams& other);
  bool all_finite() const;

  bool operator==(const ModelParams& o) const { return dims_ == o.dims_ && data_ == o.data_; }

 private:
  std::size_t idx_e(int v, int k) const { return static_cast<std::size_t>(v * dims_.dim + k); }
  std::size_t idx_m(int k, int f) const { return off_m_ + static_cast<std::size_t>(k * dims_.features + f); }
  std::size_t idx_w(int i, int j) const { return off_w_ + static_cast<std::size_t>(i * dims_.dim + j); }

  ModelDims dims_{};
  std::size_t off_m_ = 0, off_beta_ = 0, off_w_ = 0, off_b_ = 0;
  std::vector<double> data_;
};

ModelDims model_dims(const World& world, int dim = 16);

/// P_l(t | context, u) for every slot t.
std::vector<double> listener_distribution(const World& world, const ModelParams& params, const Context& context,
                                          const Utterance& utterance);
std::vector<double> listener_log_distribution(const World& world, const ModelParams& params,
                                              const Context& context, const Utterance& utterance);

/// log P_s(u | context, target), including the EOS step.
double speaker_logprob(const World& world, const ModelParams& params, const Context& context, int target,
                       const Utterance& utterance);

struct SampleOptions {
  double temperature = 0.7;
  bool greedy = false;
};

/// Ancestral sampling with logits divided by the temperature; EOS is forced
/// after max_len content tokens. Greedy mode takes the argmax with
/// lowest-id tie-break.
Utterance sample_utterance(const World& world, const ModelParams& params, const Context& context, int target,
                           const SampleOptions& options, Rng& rng);
Utterance sample_utterance(const World& world, const ModelParams& params, const Context& context, int target,
                           const SampleOptions& options, std::uint64_t seed);

/// grad += weight * d/dθ log P_l(selected | context, u). Returns the log-probability.
double accumulate_listener_grad(const World& world, const ModelParams& params, const Context& context,
                                const Utterance& utterance, int selected, double weight, ModelParams& grad);
/// grad += weight * d/dθ log P_s(u | context, target). Returns the log-probability.
double accumulate_speaker_grad(const World& world, const ModelParams& params, const Context& context, int target,
                               const Utterance& utterance, double weight, ModelParams& grad);

ModelParams grad_log_listener(const World& world, const ModelParams& params, const Context& context,
                              const Utterance& utterance, int selected);
ModelParams grad_log_speaker(const World& world, const ModelParams& params, const Context& context, int target,
                             const Utterance& utterance);

}  // namespace refloop
