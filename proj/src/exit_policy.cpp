#include "same/exit_policy.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace same {

double entropy(const std::vector<double>& dist) {
  double sum = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw std::domain_error("entropy: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::domain_error("entropy: distribution sums to " +
                            std::to_string(sum));
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

int argmax(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

std::vector<double> softmax_vec(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

ExitDecision decide(const ExitPolicy& policy,
                    const std::vector<std::vector<double>>& layer_logits) {
  const int n = static_cast<int>(layer_logits.size());
  if (n == 0) throw std::domain_error("decide: empty logits list");
  ExitDecision d;
  d.per_layer_preds.reserve(n);
  d.per_layer_entropy.reserve(n);
  for (const auto& logits : layer_logits) {
    d.per_layer_preds.push_back(argmax(logits));
    d.per_layer_entropy.push_back(entropy(softmax_vec(logits)));
  }
  d.exit_layer = n;
  d.prediction = d.per_layer_preds.back();
  if (policy.never_exit) return d;
  if (policy.kind == PolicyKind::kEntropy) {
    for (int i = 0; i < n; ++i) {
      // Strict comparison: ties fall through to the next layer.
      if (d.per_layer_entropy[i] < policy.entropy_threshold) {
        d.exit_layer = i + 1;
        d.prediction = d.per_layer_preds[i];
        break;
      }
    }
  } else {
    int counter = 0;
    for (int i = 1; i < n; ++i) {
      counter = (d.per_layer_preds[i] == d.per_layer_preds[i - 1])
                    ? counter + 1
                    : 0;
      if (counter == policy.patience_t) {
        d.exit_layer = i + 1;
        d.prediction = d.per_layer_preds[i];
        break;
      }
    }
  }
  return d;
}

std::string policy_to_string(const ExitPolicy& p) {
  std::ostringstream os;
  if (p.never_exit) {
    os << "never-exit";
  } else if (p.kind == PolicyKind::kEntropy) {
    os << "entropy(" << p.entropy_threshold << ")";
  } else {
    os << "patience(" << p.patience_t << ")";
  }
  return os.str();
}

}  // namespace same
