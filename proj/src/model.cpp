#include "same/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "same/rng.hpp"

namespace same {

void ModelConfig::validate() const {
  if (n_layers < 2) throw std::invalid_argument("n_layers must be >= 2");
  if (n_classes < 2) throw std::invalid_argument("n_classes must be >= 2");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model must be divisible by n_heads");
  if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be set");
}

namespace {

Tensor init_normal(Rng& rng, Shape shape, double std_dev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.normal() * std_dev;
  return t;
}

Tensor init_const(Shape shape, double v) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.data()) x = v;
  return t;
}

Tensor linear_w(Rng& rng, int fan_in, int fan_out) {
  return init_normal(rng, {fan_in, fan_out},
                     std::sqrt(2.0 / (fan_in + fan_out)));
}

}  // namespace

MultiExitModel::MultiExitModel(ModelConfig cfg, Vocabulary vocab)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.vocab_size = vocab_.size();
  cfg_.validate();
  Rng rng(cfg_.seed ^ 0x5a4d6f64656cULL);
  const int d = cfg_.d_model;
  embedding_ = init_normal(rng, {cfg_.vocab_size + cfg_.n_hash_buckets, d}, 0.1);
  pos_embedding_ = init_normal(rng, {cfg_.max_len, d}, 0.1);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    EncoderLayerParams p;
    p.wq = linear_w(rng, d, d);
    p.bq = Tensor::zeros({d});
    p.wk = linear_w(rng, d, d);
    p.bk = Tensor::zeros({d});
    p.wv = linear_w(rng, d, d);
    p.bv = Tensor::zeros({d});
    p.wo = linear_w(rng, d, d);
    p.bo = Tensor::zeros({d});
    p.ln1_g = init_const({d}, 1.0);
    p.ln1_b = Tensor::zeros({d});
    p.w1 = linear_w(rng, d, cfg_.d_ff);
    p.b1 = Tensor::zeros({cfg_.d_ff});
    p.w2 = linear_w(rng, cfg_.d_ff, d);
    p.b2 = Tensor::zeros({d});
    p.ln2_g = init_const({d}, 1.0);
    p.ln2_b = Tensor::zeros({d});
    p.head_w = linear_w(rng, d, cfg_.n_classes);
    p.head_b = Tensor::zeros({cfg_.n_classes});
    layers_.push_back(std::move(p));
  }
}

Sentence MultiExitModel::make_sentence(const std::string& text) const {
  return tokenize(vocab_, text, cfg_.n_hash_buckets);
}

ForwardResult MultiExitModel::forward_all(
    Tape* tape, const std::vector<int>& token_ids) const {
  if (token_ids.empty())
    throw std::domain_error("forward_all: empty input");
  std::vector<int> ids = token_ids;
  ForwardResult res;
  if (static_cast<int>(ids.size()) > cfg_.max_len) {
    ids.resize(cfg_.max_len);
    res.truncated = true;
  }
  const int L = static_cast<int>(ids.size());
  const int d = cfg_.d_model;
  const int h = cfg_.n_heads;
  const int dh = d / h;

  res.token_embeddings = embedding_lookup(tape, embedding_, ids);
  std::vector<int> pos_ids(L);
  std::iota(pos_ids.begin(), pos_ids.end(), 0);
  Tensor x = add(tape, res.token_embeddings,
                 embedding_lookup(tape, pos_embedding_, pos_ids));

  for (const EncoderLayerParams& p : layers_) {
    Tensor q = add_row(tape, matmul(tape, x, p.wq), p.bq);
    Tensor k = add_row(tape, matmul(tape, x, p.wk), p.bk);
    Tensor v = add_row(tape, matmul(tape, x, p.wv), p.bv);
    std::vector<Tensor> head_outs;
    head_outs.reserve(h);
    for (int hi = 0; hi < h; ++hi) {
      Tensor qh = slice_cols(tape, q, hi * dh, dh);
      Tensor kh = slice_cols(tape, k, hi * dh, dh);
      Tensor vh = slice_cols(tape, v, hi * dh, dh);
      Tensor scores = scale(tape, matmul(tape, qh, transpose2d(tape, kh)),
                            1.0 / std::sqrt(static_cast<double>(dh)));
      Tensor attn = softmax(tape, scores);
      head_outs.push_back(matmul(tape, attn, vh));
    }
    Tensor attn_out = add_row(
        tape, matmul(tape, concat_cols(tape, head_outs), p.wo), p.bo);
    x = layer_norm(tape, add(tape, x, attn_out), p.ln1_g, p.ln1_b);
    Tensor ff = add_row(
        tape,
        matmul(tape, gelu(tape, add_row(tape, matmul(tape, x, p.w1), p.b1)),
               p.w2),
        p.b2);
    x = layer_norm(tape, add(tape, x, ff), p.ln2_g, p.ln2_b);

    Tensor pooled = reshape(tape, mean_rows(tape, x), {1, d});
    Tensor logits = reshape(
        tape, add_row(tape, matmul(tape, pooled, p.head_w), p.head_b),
        {cfg_.n_classes});
    res.layer_logits.push_back(logits);
  }
  return res;
}

std::vector<std::vector<double>> ForwardResult::logits_values() const {
  std::vector<std::vector<double>> out;
  out.reserve(layer_logits.size());
  for (const Tensor& t : layer_logits) out.push_back(t.data());
  return out;
}

std::vector<std::vector<double>> MultiExitModel::layer_logits(
    const std::vector<int>& token_ids) const {
  return forward_all(nullptr, token_ids).logits_values();
}

ExitDecision MultiExitModel::infer(const ExitPolicy& policy,
                                   const std::vector<int>& token_ids) const {
  return decide(policy, layer_logits(token_ids));
}

MultiExitModel MultiExitModel::clone() const {
  MultiExitModel copy(cfg_, vocab_);
  auto src = parameters();
  auto dst = copy.parameters();
  for (size_t i = 0; i < src.size(); ++i) dst[i].data() = src[i].data();
  return copy;
}

std::vector<Tensor> MultiExitModel::parameters() const {
  std::vector<Tensor> ps{embedding_, pos_embedding_};
  for (const EncoderLayerParams& p : layers_) {
    for (const Tensor& t :
         {p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, p.ln1_g, p.ln1_b,
          p.w1, p.b1, p.w2, p.b2, p.ln2_g, p.ln2_b, p.head_w, p.head_b})
      ps.push_back(t);
  }
  return ps;
}

std::vector<std::string> MultiExitModel::parameter_names() const {
  std::vector<std::string> names{"embedding", "pos_embedding"};
  static const char* kLayerNames[] = {
      "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b",
      "w1", "b1", "w2", "b2", "ln2_g", "ln2_b", "head_w", "head_b"};
  for (int l = 0; l < cfg_.n_layers; ++l)
    for (const char* n : kLayerNames)
      names.push_back("layer" + std::to_string(l) + "." + n);
  return names;
}

void MultiExitModel::zero_param_grads() {
  for (Tensor& p : parameters())
    if (p.has_grad()) std::fill(p.grad().begin(), p.grad().end(), 0.0);
}

namespace {

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr)
      : params_(std::move(params)), lr_(lr) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(0.9, t_);
    const double bc2 = 1.0 - std::pow(0.999, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      for (int j = 0; j < p.size(); ++j) {
        const double g = p.grad()[j] * grad_scale;
        m_[i][j] = 0.9 * m_[i][j] + 0.1 * g;
        v_[i][j] = 0.999 * v_[i][j] + 0.001 * g * g;
        p.data()[j] -=
            lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + 1e-8);
      }
      std::fill(p.grad().begin(), p.grad().end(), 0.0);
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_;
  int t_ = 0;
};

}  // namespace

TrainingReport MultiExitModel::train(const std::vector<Sentence>& train_set,
                                     const std::vector<Sentence>& dev_set,
                                     const TrainHyperparams& hp) {
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  for (const Sentence& s : train_set)
    if (s.label < 0 || s.label >= cfg_.n_classes)
      throw std::invalid_argument("train: label out of range");
  zero_param_grads();
  Adam opt(parameters(), hp.lr);
  TrainingReport report;
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    Rng rng(Rng::derive(hp.seed, epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    double epoch_loss = 0.0;
    int in_batch = 0;
    for (size_t k = 0; k < order.size(); ++k) {
      const Sentence& s = train_set[order[k]];
      Tape tape;
      ForwardResult fr = forward_all(&tape, s.token_ids);
      Tensor loss = cross_entropy(&tape, fr.layer_logits[0], s.label);
      for (int l = 1; l < cfg_.n_layers; ++l)
        loss = add(&tape, loss,
                   cross_entropy(&tape, fr.layer_logits[l], s.label));
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("training diverged (NaN loss) at epoch " +
                                 std::to_string(epoch));
      tape.backward(loss);
      epoch_loss += loss.item();
      if (++in_batch == hp.batch_size || k + 1 == order.size()) {
        opt.step(1.0 / in_batch);
        in_batch = 0;
      }
    }
    report.epoch_loss.push_back(epoch_loss / train_set.size());
    if (!dev_set.empty())
      report.per_layer_dev_acc.push_back(per_layer_accuracy(dev_set));
  }
  for (const Tensor& p : parameters())
    for (double v : p.data())
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite parameter after training");
  if (!report.per_layer_dev_acc.empty())
    report.final_dev_acc = report.per_layer_dev_acc.back().back();
  return report;
}

std::vector<double> MultiExitModel::per_layer_accuracy(
    const std::vector<Sentence>& data) const {
  std::vector<double> correct(cfg_.n_layers, 0.0);
  for (const Sentence& s : data) {
    const auto logits = layer_logits(s.token_ids);
    for (int l = 0; l < cfg_.n_layers; ++l)
      if (argmax(logits[l]) == s.label) correct[l] += 1.0;
  }
  for (double& c : correct) c /= data.size();
  return correct;
}

namespace {
constexpr char kMagic[8] = {'S', 'A', 'M', 'E', 'C', 'K', '1', '\n'};
}

void MultiExitModel::save_checkpoint(const std::string& path) const {
  nlohmann::json header;
  header["config"] = {{"n_layers", cfg_.n_layers},
                      {"d_model", cfg_.d_model},
                      {"n_heads", cfg_.n_heads},
                      {"d_ff", cfg_.d_ff},
                      {"vocab_size", cfg_.vocab_size},
                      {"n_hash_buckets", cfg_.n_hash_buckets},
                      {"n_classes", cfg_.n_classes},
                      {"max_len", cfg_.max_len},
                      {"seed", cfg_.seed}};
  std::vector<std::string> words(vocab_.words().begin() + 2,
                                 vocab_.words().end());
  header["vocab_words"] = words;
  header["vocab_fingerprint"] = vocab_.fingerprint();
  auto names = parameter_names();
  auto params = parameters();
  nlohmann::json tensors = nlohmann::json::array();
  for (size_t i = 0; i < params.size(); ++i)
    tensors.push_back({{"name", names[i]}, {"shape", params[i].shape()}});
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), hs.size());
  for (const Tensor& p : params)
    out.write(reinterpret_cast<const char*>(p.data().data()),
              p.size() * sizeof(double));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

MultiExitModel MultiExitModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint version/magic mismatch: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  auto header = nlohmann::json::parse(hs);
  const auto& c = header.at("config");
  ModelConfig cfg;
  cfg.n_layers = c.at("n_layers");
  cfg.d_model = c.at("d_model");
  cfg.n_heads = c.at("n_heads");
  cfg.d_ff = c.at("d_ff");
  cfg.vocab_size = c.at("vocab_size");
  cfg.n_hash_buckets = c.at("n_hash_buckets");
  cfg.n_classes = c.at("n_classes");
  cfg.max_len = c.at("max_len");
  cfg.seed = c.at("seed");
  Vocabulary vocab = Vocabulary::build(
      header.at("vocab_words").get<std::vector<std::string>>());
  if (vocab.fingerprint() != header.at("vocab_fingerprint").get<uint64_t>())
    throw std::runtime_error("checkpoint vocabulary fingerprint mismatch");
  if (vocab.size() != cfg.vocab_size)
    throw std::runtime_error("checkpoint vocabulary size mismatch");
  MultiExitModel model(cfg, std::move(vocab));
  auto params = model.parameters();
  auto names = model.parameter_names();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error("checkpoint tensor count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].at("name") != names[i] ||
        tensors[i].at("shape").get<Shape>() != params[i].shape())
      throw std::runtime_error("checkpoint tensor layout mismatch at " +
                               names[i]);
    in.read(reinterpret_cast<char*>(params[i].data().data()),
            params[i].size() * sizeof(double));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return model;
}

CalibrationResult calibrate_threshold(const MultiExitModel& model,
                                      PolicyKind kind,
                                      const std::vector<Sentence>& dev_set,
                                      double max_rel_drop) {
  if (dev_set.empty()) throw std::invalid_argument("calibrate: empty dev set");
  if (max_rel_drop <= 0.0 || max_rel_drop > 1.0)
    throw std::invalid_argument("calibrate: max_rel_drop outside (0,1]");
  const int n_layers = model.config().n_layers;
  std::vector<std::vector<std::vector<double>>> all_logits;
  all_logits.reserve(dev_set.size());
  for (const Sentence& s : dev_set)
    all_logits.push_back(model.layer_logits(s.token_ids));

  double full_correct = 0.0;
  for (size_t i = 0; i < dev_set.size(); ++i)
    if (argmax(all_logits[i].back()) == dev_set[i].label) full_correct += 1.0;
  const double full_acc = full_correct / dev_set.size();
  const double bound = (1.0 - max_rel_drop) * full_acc;

  auto measure = [&](const ExitPolicy& p, double& acc, double& speedup) {
    double correct = 0.0;
    long total_exit = 0;
    for (size_t i = 0; i < dev_set.size(); ++i) {
      const ExitDecision d = decide(p, all_logits[i]);
      if (d.prediction == dev_set[i].label) correct += 1.0;
      total_exit += d.exit_layer;
    }
    acc = correct / dev_set.size();
    speedup = static_cast<double>(n_layers) * dev_set.size() / total_exit;
  };

  CalibrationResult best;
  best.full_model_accuracy = full_acc;
  bool found = false;
  if (kind == PolicyKind::kEntropy) {
    // Grid: per-layer entropy quantiles of the dev set, union over layers.
    std::set<double> grid;
    for (int l = 0; l < n_layers; ++l) {
      std::vector<double> ents;
      for (const auto& logits : all_logits) {
        std::vector<double> p(logits[l].size());
        double m = *std::max_element(logits[l].begin(), logits[l].end());
        double z = 0.0;
        for (size_t k = 0; k < p.size(); ++k) {
          p[k] = std::exp(logits[l][k] - m);
          z += p[k];
        }
        for (double& v : p) v /= z;
        ents.push_back(entropy(p));
      }
      std::sort(ents.begin(), ents.end());
      // Quantiles stop short of the maximum: calibrating to the extreme
      // tail of the dev entropy distribution is noise-chasing and leaves no
      // margin between the threshold and the most uncertain clean sample.
      for (int q = 1; q <= 16; ++q) {
        size_t idx = std::min(ents.size() - 1, ents.size() * q / 20);
        // Nudge above the observed value so strict < fires for it.
        grid.insert(std::nextafter(ents[idx], 1e9));
      }
    }
    // No grid point at or above ln K: a threshold no input entropy can reach
    // would make the policy vacuous (exit at layer 1 unconditionally).
    const double ln_k = std::log(static_cast<double>(model.config().n_classes));
    while (!grid.empty() && *grid.rbegin() >= ln_k) grid.erase(std::prev(grid.end()));
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      ExitPolicy p = ExitPolicy::entropy(*it);
      double acc, sp;
      measure(p, acc, sp);
      if (acc >= bound) {
        best.policy = p;
        best.dev_accuracy = acc;
        best.dev_speedup = sp;
        found = true;
        break;
      }
    }
  } else {
    for (int t = 1; t < n_layers; ++t) {
      ExitPolicy p = ExitPolicy::patience(t);
      double acc, sp;
      measure(p, acc, sp);
      if (acc >= bound) {
        best.policy = p;
        best.dev_accuracy = acc;
        best.dev_speedup = sp;
        found = true;
        break;
      }
    }
  }
  if (!found) {
    ExitPolicy p;
    p.kind = kind;
    p.never_exit = true;
    p.calibration_warning = true;
    double acc, sp;
    measure(p, acc, sp);
    best.policy = p;
    best.dev_accuracy = acc;
    best.dev_speedup = sp;
  }
  return best;
}

}  // namespace same
