#include "mhad/hyperparams.hpp"

#include <cmath>

namespace mhad {

std::string_view to_string(AttentionScoring scoring) {
  return scoring == AttentionScoring::additive ? "additive" : "dot";
}

AttentionScoring parse_scoring(std::string_view text) {
  if (text == "additive") return AttentionScoring::additive;
  if (text == "dot") return AttentionScoring::dot;
  throw ConfigError("unknown attention scoring '" + std::string(text) + "' (expected additive or dot)");
}

void HyperParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid hyperparameter: ") + what);
  };
  require(gamma >= 0.0 && std::isfinite(gamma), "gamma must be >= 0");
  require(alpha >= 0.0 && std::isfinite(alpha), "alpha must be >= 0");
  require(beta >= 0.0 && std::isfinite(beta), "beta must be >= 0");
  require(heads >= 1, "heads (T_y) must be >= 1");
  require(max_len >= 1, "max_len (T_x) must be >= 1");
  require(tau >= 0.5 && tau < 1.0, "tau must be in [0.5, 1)");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(lr > 0.0, "lr must be > 0");
  require(lr_decay >= 0.0, "lr_decay must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)");
  require(adam_epsilon > 0.0, "adam_epsilon must be > 0");
  require(batch >= 1, "batch must be >= 1");
  require(max_epoch >= 1, "max_epoch must be >= 1");
  require(min_delta >= 0.0, "min_delta must be >= 0");
  require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must be in (0, 1)");
  require(agreement_stop > 0.0 && agreement_stop <= 1.0, "agreement_stop must be in (0, 1]");
  require(max_iters >= 1, "max_iters must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
  require(max_grad_norm >= 0.0, "max_grad_norm must be >= 0");
}

}  // namespace mhad
