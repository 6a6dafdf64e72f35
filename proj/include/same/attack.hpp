#ifndef SAME_ATTACK_HPP
#define SAME_ATTACK_HPP

#include <string>
#include <vector>

#include "same/exit_policy.hpp"
#include "same/model.hpp"
#include "same/rng.hpp"
#include "same/text.hpp"

namespace same {

enum class AttackVariant { kWord, kChar };
// Layer-weight handling, mostly for the ablation ladder: all-ones weights,
// weights frozen at the seed input's exit layer, or recomputed per candidate.
enum class WeightMode { kNone, kStatic, kDynamic };

struct AttackConfig {
  double epsilon_frac = 0.10;
  double lambda = 0.5;
  double alpha = 0.1;
  double beta = 1.2;
  double sigma = 0.5;
  int beam_width = 5;
  int char_candidates_per_kind = 25;
  int word_candidates_total = 100;
  int critical_words_considered = 10;
  int max_iters = 20;
  AttackVariant variant = AttackVariant::kWord;
  bool multi_goal = false;
  WeightMode weight_mode = WeightMode::kDynamic;
  HomoglyphTable homoglyphs = HomoglyphTable::builtin();

  void validate() const;
  int edit_budget(int word_count) const;  // floors at one modified word
};

struct HeuristicTargets {
  std::vector<int> h;  // one target class per layer
  int h0 = 0;
};

struct LayerWeights {
  std::vector<double> w;
  int exit_layer = 1;
};

struct Edit {
  int word_idx = -1;
  std::string old_word, new_word;
};

struct AttackRecord {
  Sentence original, adversarial;
  int exit_before = 0, exit_after = 0;
  int pred_before = -1, pred_after = -1;
  std::vector<Edit> edits;
  int iterations_used = 0;
  std::vector<double> objective_trace;  // best candidate objective per round
};

// Eq-style building blocks. The Tensor forms run on a tape; the scalar forms
// are tape-free recomputations used for candidate ranking.
LayerWeights layer_weights(int exit_layer, double alpha, double beta, int n);
HeuristicTargets build_heuristic_targets(
    const std::vector<std::vector<double>>& layer_logits, int h0);
Tensor mess_loss(Tape* tape, const std::vector<Tensor>& layer_logits,
                 const std::vector<double>& weights);
Tensor patience_loss(Tape* tape, const std::vector<Tensor>& layer_logits,
                     const std::vector<int>& targets,
                     const std::vector<double>& weights);
Tensor total_objective(Tape* tape, const std::vector<Tensor>& layer_logits,
                       int exit_layer, const AttackConfig& cfg, int h0);
double total_objective_value(const std::vector<std::vector<double>>& logits,
                             int exit_layer, const AttackConfig& cfg, int h0);

// Gradient of the total objective w.r.t. each token position's embedding.
// static_exit is the frozen exit layer used when weight_mode == kStatic.
std::vector<std::vector<double>> objective_embedding_grads(
    const MultiExitModel& model, const Sentence& sentence,
    const ExitPolicy& policy, const AttackConfig& cfg, int h0,
    int static_exit);

// Word indices by |sum_j grad_ij| descending; excluded indices are dropped,
// all-zero gradients fall back to left-to-right order.
std::vector<int> rank_critical_words(
    const std::vector<std::vector<double>>& grads,
    const std::vector<bool>& excluded);

// Top replacement words at word_idx, ranked by how far the swap moves the
// slowdown loss downhill along grad_row (first-order estimate), best first.
std::vector<std::string> word_replacement_candidates(
    const MultiExitModel& model, const Sentence& sentence, int word_idx,
    const std::vector<double>& grad_row, int top_k);

AttackRecord attack(const MultiExitModel& model, const ExitPolicy& policy,
                    const Sentence& sentence, const AttackConfig& cfg,
                    Rng& rng);
AttackRecord attack_multigoal(const MultiExitModel& model,
                              const ExitPolicy& policy,
                              const Sentence& sentence,
                              const AttackConfig& cfg, Rng& rng);
AttackRecord baseline_random(const MultiExitModel& model,
                             const ExitPolicy& policy, const Sentence& sentence,
                             const AttackConfig& cfg, Rng& rng);
AttackRecord baseline_accuracy_attack(const MultiExitModel& model,
                                      const ExitPolicy& policy,
                                      const Sentence& sentence,
                                      const AttackConfig& cfg, Rng& rng);

}  // namespace same

#endif
