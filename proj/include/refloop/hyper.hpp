#pragma once

namespace refloop {

/// Inference and training hyperparameters shared by every variant.
struct Hyper {
  double lambda_listener = 0.5;  // weight on P_l in the joint listener
  double lambda_speaker = 0.0;   // weight on P_s in the joint speaker
  int k = 10;                    // speaker samples per turn
  double temperature = 0.7;
  double ips_clip = 5.0;

  double lr = 3e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-3;
  int batch_size = 32;
  int max_epochs = 15;
  int patience = 5;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

}  // namespace refloop
