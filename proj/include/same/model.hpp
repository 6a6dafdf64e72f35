#ifndef SAME_MODEL_HPP
#define SAME_MODEL_HPP

#include <string>
#include <vector>

#include "same/exit_policy.hpp"
#include "same/tensor.hpp"
#include "same/text.hpp"

namespace same {

struct ModelConfig {
  int n_layers = 6;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int vocab_size = 0;  // filled from the vocabulary at construction
  int n_hash_buckets = 1024;
  int n_classes = 2;
  int max_len = 64;
  uint64_t seed = 0;

  void validate() const;
};

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_g, ln1_b;
  Tensor w1, b1, w2, b2;
  Tensor ln2_g, ln2_b;
  Tensor head_w, head_b;  // internal classifier, d_model -> K
};

struct ForwardResult {
  std::vector<Tensor> layer_logits;  // n_layers tensors of shape [K]
  Tensor token_embeddings;  // [L, d_model]; grad target for word ranking
  bool truncated = false;

  std::vector<std::vector<double>> logits_values() const;
};

struct TrainHyperparams {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  uint64_t seed = 0;
};

struct TrainingReport {
  std::vector<double> epoch_loss;
  std::vector<std::vector<double>> per_layer_dev_acc;  // one row per epoch
  double final_dev_acc = 0.0;  // last layer
};

// N encoder layers, one internal classifier head per layer, mean pooling
// over token positions before each head.
class MultiExitModel {
 public:
  MultiExitModel(ModelConfig cfg, Vocabulary vocab);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Tensor& embedding_table() const { return embedding_; }

  Sentence make_sentence(const std::string& text) const;

  ForwardResult forward_all(Tape* tape, const std::vector<int>& token_ids) const;
  // Inference-only convenience: per-layer logit values.
  std::vector<std::vector<double>> layer_logits(
      const std::vector<int>& token_ids) const;
  ExitDecision infer(const ExitPolicy& policy,
                     const std::vector<int>& token_ids) const;

  // Deep copy with private parameter storage; campaign workers clone the
  // model so gradient buffers are never shared across threads.
  MultiExitModel clone() const;

  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  void zero_param_grads();

  TrainingReport train(const std::vector<Sentence>& train_set,
                       const std::vector<Sentence>& dev_set,
                       const TrainHyperparams& hp);

  // Per-layer argmax accuracy under full computation.
  std::vector<double> per_layer_accuracy(
      const std::vector<Sentence>& data) const;

  void save_checkpoint(const std::string& path) const;
  static MultiExitModel load_checkpoint(const std::string& path);

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  Tensor embedding_;      // (vocab_size + n_hash_buckets) x d_model
  Tensor pos_embedding_;  // max_len x d_model
  std::vector<EncoderLayerParams> layers_;
};

struct CalibrationResult {
  ExitPolicy policy;
  double dev_accuracy = 0.0;
  double dev_speedup = 1.0;
  double full_model_accuracy = 0.0;
};

// Largest entropy threshold (or smallest patience) on the sweep grid whose
// dev accuracy stays within max_rel_drop of the full model's.
CalibrationResult calibrate_threshold(const MultiExitModel& model,
                                      PolicyKind kind,
                                      const std::vector<Sentence>& dev_set,
                                      double max_rel_drop);

}  // namespace same

#endif
