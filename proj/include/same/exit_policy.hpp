#ifndef SAME_EXIT_POLICY_HPP
#define SAME_EXIT_POLICY_HPP

#include <string>
#include <vector>

namespace same {

enum class PolicyKind { kEntropy, kPatience };

struct ExitPolicy {
  PolicyKind kind = PolicyKind::kEntropy;
  double entropy_threshold = 0.0;  // entropy kind
  int patience_t = 1;              // patience kind
  bool never_exit = false;  // calibration fallback: run all N layers
  bool calibration_warning = false;

  static ExitPolicy entropy(double threshold) {
    return {PolicyKind::kEntropy, threshold, 1, false, false};
  }
  static ExitPolicy patience(int t) {
    return {PolicyKind::kPatience, 0.0, t, false, false};
  }
};

struct ExitDecision {
  int exit_layer = 0;  // 1-based
  int prediction = -1;
  std::vector<int> per_layer_preds;
  std::vector<double> per_layer_entropy;
};

// -sum p ln p with 0 ln 0 := 0. Throws on negative components.
double entropy(const std::vector<double>& dist);

int argmax(const std::vector<double>& v);  // ties break to lowest index

// layer_logits: one logit vector per layer, in layer order.
ExitDecision decide(const ExitPolicy& policy,
                    const std::vector<std::vector<double>>& layer_logits);

std::string policy_to_string(const ExitPolicy& p);

}  // namespace same

#endif
