#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mhad {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AttentionScoring { additive, dot };

std::string_view to_string(AttentionScoring scoring);
AttentionScoring parse_scoring(std::string_view text);

/// Training and architecture settings. Defaults are the reference settings
/// (Adam lr 0.005 with inverse-time decay 0.01, batch 32, 40 epochs,
/// patience 3, T_y = 5 heads, T_x = 200 tokens, dropout 0.4, tau 0.7,
/// agreement stop 0.85, gamma 0.01, alpha 0.05, beta 0.01).
struct HyperParams {
  double gamma = 0.01;  // within-model head diversity weight
  double alpha = 0.05;  // cross-model orthogonality weight
  double beta = 0.01;   // within-model diversity weight during joint training
  std::size_t heads = 5;      // T_y
  std::size_t max_len = 200;  // T_x
  double tau = 0.7;
  double dropout = 0.4;
  double lr = 0.005;
  // Inverse-time decay per update: lr_t = lr / (1 + lr_decay * t).
  double lr_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  std::size_t batch = 32;
  std::size_t max_epoch = 40;
  int patience = 3;  // <= 0 disables early stopping
  double min_delta = 1e-5;
  double val_fraction = 0.15;
  double agreement_stop = 0.85;
  std::size_t max_iters = 10;
  std::size_t hidden = 64;  // per direction
  AttentionScoring scoring = AttentionScoring::additive;
  bool train_embeddings = false;
  double max_grad_norm = 0.0;  // 0 = no clipping

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

}  // namespace mhad
