#include "same/attack.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>

namespace same {

void AttackConfig::validate() const {
  if (epsilon_frac <= 0.0 || epsilon_frac > 1.0)
    throw std::invalid_argument("epsilon_frac outside (0,1]");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda outside [0,1]");
  if (beta < 1.0) throw std::invalid_argument("beta must be >= 1");
  if (beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
}

int AttackConfig::edit_budget(int word_count) const {
  return std::max(1, static_cast<int>(epsilon_frac * word_count));
}

LayerWeights layer_weights(int exit_layer, double alpha, double beta, int n) {
  if (exit_layer < 1 || exit_layer > n)
    throw std::invalid_argument("layer_weights: exit_layer out of range");
  LayerWeights lw;
  lw.exit_layer = exit_layer;
  lw.w.resize(n);
  for (int i = 1; i <= n; ++i)
    lw.w[i - 1] = (i < exit_layer) ? alpha : std::pow(beta, i - exit_layer);
  return lw;
}

namespace {

int argsecond(const std::vector<double>& v) {
  const int first = argmax(v);
  int best = -1;
  for (int i = 0; i < static_cast<int>(v.size()); ++i) {
    if (i == first) continue;
    if (best < 0 || v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> log_softmax_vec(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  const double lz = m + std::log(z);
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lz;
  return out;
}

}  // namespace

HeuristicTargets build_heuristic_targets(
    const std::vector<std::vector<double>>& layer_logits, int h0) {
  if (layer_logits.empty() || layer_logits[0].size() < 2)
    throw std::domain_error("build_heuristic_targets: need K >= 2");
  HeuristicTargets t;
  t.h0 = h0;
  int prev = h0;
  for (const auto& logits : layer_logits) {
    const int am = argmax(logits);
    const int hi = (prev != am) ? am : argsecond(logits);
    t.h.push_back(hi);
    prev = hi;
  }
  return t;
}

Tensor mess_loss(Tape* tape, const std::vector<Tensor>& layer_logits,
                 const std::vector<double>& weights) {
  if (layer_logits.size() != weights.size())
    throw std::invalid_argument("mess_loss: weights length mismatch");
  const int k = layer_logits[0].shape()[0];
  const std::vector<double> uniform(k, 1.0 / k);
  Tensor total = Tensor::scalar(0.0);
  if (tape) tape->record(total);
  for (size_t i = 0; i < layer_logits.size(); ++i)
    total = add(tape, total,
                scale(tape, soft_cross_entropy(tape, layer_logits[i], uniform),
                      weights[i]));
  return total;
}

Tensor patience_loss(Tape* tape, const std::vector<Tensor>& layer_logits,
                     const std::vector<int>& targets,
                     const std::vector<double>& weights) {
  if (layer_logits.size() != targets.size() ||
      layer_logits.size() != weights.size())
    throw std::invalid_argument("patience_loss: length mismatch");
  Tensor total = Tensor::scalar(0.0);
  if (tape) tape->record(total);
  for (size_t i = 0; i < layer_logits.size(); ++i)
    total = add(tape, total,
                scale(tape, cross_entropy(tape, layer_logits[i], targets[i]),
                      weights[i]));
  return total;
}

namespace {

std::vector<double> weights_for(const AttackConfig& cfg, int exit_layer,
                                int n) {
  if (cfg.weight_mode == WeightMode::kNone)
    return std::vector<double>(n, 1.0);
  return layer_weights(exit_layer, cfg.alpha, cfg.beta, n).w;
}

}  // namespace

Tensor total_objective(Tape* tape, const std::vector<Tensor>& layer_logits,
                       int exit_layer, const AttackConfig& cfg, int h0) {
  const int n = static_cast<int>(layer_logits.size());
  const std::vector<double> w = weights_for(cfg, exit_layer, n);
  std::vector<std::vector<double>> vals;
  vals.reserve(n);
  for (const Tensor& t : layer_logits) vals.push_back(t.data());
  const HeuristicTargets targets = build_heuristic_targets(vals, h0);
  Tensor mess = mess_loss(tape, layer_logits, w);
  Tensor pat = patience_loss(tape, layer_logits, targets.h, w);
  return add(tape, scale(tape, mess, cfg.lambda),
             scale(tape, pat, 1.0 - cfg.lambda));
}

double total_objective_value(const std::vector<std::vector<double>>& logits,
                             int exit_layer, const AttackConfig& cfg, int h0) {
  const int n = static_cast<int>(logits.size());
  const int k = static_cast<int>(logits[0].size());
  const std::vector<double> w = weights_for(cfg, exit_layer, n);
  const HeuristicTargets targets = build_heuristic_targets(logits, h0);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto ls = log_softmax_vec(logits[i]);
    double sce = 0.0;
    for (int j = 0; j < k; ++j) sce -= ls[j] / k;
    const double ce = -ls[targets.h[i]];
    total += w[i] * (cfg.lambda * sce + (1.0 - cfg.lambda) * ce);
  }
  return total;
}

std::vector<std::vector<double>> objective_embedding_grads(
    const MultiExitModel& model, const Sentence& sentence,
    const ExitPolicy& policy, const AttackConfig& cfg, int h0,
    int static_exit) {
  Tape tape;
  ForwardResult fr = model.forward_all(&tape, sentence.token_ids);
  const auto vals = fr.logits_values();
  int exit_layer = static_exit;
  if (cfg.weight_mode == WeightMode::kDynamic)
    exit_layer = decide(policy, vals).exit_layer;
  Tensor loss = total_objective(&tape, fr.layer_logits, exit_layer, cfg, h0);
  tape.backward(loss);
  const int d = model.config().d_model;
  const auto& g = fr.token_embeddings.grad();
  if (g.empty())
    throw std::logic_error("objective gradient unavailable (detached run)");
  std::vector<std::vector<double>> out(sentence.token_ids.size(),
                                       std::vector<double>(d, 0.0));
  for (size_t i = 0; i < out.size() && i < g.size() / d; ++i)
    for (int j = 0; j < d; ++j) out[i][j] = g[i * d + j];
  return out;
}

std::vector<int> rank_critical_words(
    const std::vector<std::vector<double>>& grads,
    const std::vector<bool>& excluded) {
  std::vector<int> idx;
  std::vector<double> score(grads.size(), 0.0);
  for (size_t i = 0; i < grads.size(); ++i) {
    if (i < excluded.size() && excluded[i]) continue;
    double s = 0.0;
    for (double g : grads[i]) s += g;
    // Absolute signed sum; a large negative sum still marks a critical word.
    score[i] = std::abs(s);
    idx.push_back(static_cast<int>(i));
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  return idx;
}

std::vector<std::string> word_replacement_candidates(
    const MultiExitModel& model, const Sentence& sentence, int word_idx,
    const std::vector<double>& grad_row, int top_k) {
  const Vocabulary& vocab = model.vocab();
  const int d = model.config().d_model;
  const auto& table = model.embedding_table().data();
  const int s_id = sentence.token_ids[word_idx];
  double gs = 0.0;  // grad . E(s), hoisted out of the candidate loop
  for (int j = 0; j < d; ++j) gs += grad_row[j] * table[s_id * d + j];
  std::vector<std::pair<double, int>> scored;
  for (int t = 2; t < vocab.size(); ++t) {  // skip pad/sep specials
    if (t == s_id || vocab.word(t) == sentence.words[word_idx]) continue;
    double gt = 0.0;
    for (int j = 0; j < d; ++j) gt += grad_row[j] * table[t * d + j];
    // The slowdown objective is a loss that shrinks as predictions become
    // uniform/inconsistent, so good replacements move against the gradient.
    scored.emplace_back(gs - gt, t);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (int i = 0; i < top_k && i < static_cast<int>(scored.size()); ++i)
    out.push_back(vocab.word(scored[i].second));
  return out;
}

namespace {

struct Candidate {
  Sentence sent;
  std::vector<Edit> edits;
  std::vector<bool> edited;
  std::vector<std::vector<double>> logits;
  ExitDecision dec;
  double objective = 0.0;
  double score = 0.0;
  int last_edit_idx = -1;
};

std::optional<Sentence> replace_word(const MultiExitModel& model,
                                     const Sentence& s, int idx,
                                     const std::string& new_word) {
  const auto parts = split_words(new_word);
  if (parts.size() != 1 || parts[0] == s.words[idx]) return std::nullopt;
  Sentence out = s;
  out.words[idx] = parts[0];
  out.token_ids[idx] =
      model.vocab().token_id(parts[0], model.config().n_hash_buckets);
  out.raw = out.joined();
  return out;
}

using ProposalFn = std::function<std::vector<std::pair<int, std::string>>(
    const Candidate&, Rng&)>;
using ScoreFn = std::function<double(const Candidate&)>;

AttackRecord run_beam_attack(const MultiExitModel& model,
                             const ExitPolicy& policy, const Sentence& sentence,
                             const AttackConfig& cfg, Rng& rng,
                             const ProposalFn& propose, const ScoreFn& scorer,
                             double stop_score, int static_exit, int h0) {
  cfg.validate();
  const int budget = cfg.edit_budget(static_cast<int>(sentence.words.size()));

  auto evaluate = [&](Candidate& c) {
    c.logits = model.layer_logits(c.sent.token_ids);
    c.dec = decide(policy, c.logits);
    const int exit_for_weights =
        cfg.weight_mode == WeightMode::kDynamic ? c.dec.exit_layer
                                                : static_exit;
    c.objective = total_objective_value(c.logits, exit_for_weights, cfg, h0);
    c.score = scorer(c);
  };

  Candidate clean;
  clean.sent = sentence;
  clean.edited.assign(sentence.words.size(), false);
  evaluate(clean);

  AttackRecord rec;
  rec.original = sentence;
  rec.exit_before = clean.dec.exit_layer;
  rec.pred_before = clean.dec.prediction;

  Candidate best = clean;
  if (clean.score >= stop_score) {
    rec.adversarial = clean.sent;
    rec.exit_after = clean.dec.exit_layer;
    rec.pred_after = clean.dec.prediction;
    return rec;
  }

  std::vector<Candidate> beam{clean};
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    std::vector<Candidate> pool;
    std::set<std::string> seen;
    for (const Candidate& item : beam) {
      if (static_cast<int>(item.edits.size()) >= budget) continue;
      for (const auto& [idx, word] : propose(item, rng)) {
        auto mutated = replace_word(model, item.sent, idx, word);
        if (!mutated) continue;
        if (!seen.insert(mutated->joined()).second) continue;
        Candidate c;
        c.sent = std::move(*mutated);
        c.edits = item.edits;
        c.edits.push_back({idx, item.sent.words[idx], c.sent.words[idx]});
        c.edited = item.edited;
        c.edited[idx] = true;
        c.last_edit_idx = idx;
        evaluate(c);
        pool.push_back(std::move(c));
      }
    }
    if (pool.empty()) break;
    rec.iterations_used = iter + 1;
    std::sort(pool.begin(), pool.end(), [](const Candidate& a,
                                           const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.objective != b.objective) return a.objective < b.objective;
      if (a.last_edit_idx != b.last_edit_idx)
        return a.last_edit_idx < b.last_edit_idx;
      return a.sent.raw < b.sent.raw;
    });
    if (static_cast<int>(pool.size()) > cfg.beam_width)
      pool.resize(cfg.beam_width);
    rec.objective_trace.push_back(pool.front().objective);
    if (pool.front().score > best.score) best = pool.front();
    if (best.score >= stop_score) break;
    beam = std::move(pool);
  }

  rec.adversarial = best.sent;
  rec.exit_after = best.dec.exit_layer;
  rec.pred_after = best.dec.prediction;
  rec.edits = best.edits;
  return rec;
}

ProposalFn gradient_proposer(const MultiExitModel& model,
                             const ExitPolicy& policy, const AttackConfig& cfg,
                             int h0, int static_exit, bool accuracy_mode,
                             int y_true) {
  return [&model, &policy, cfg, h0, static_exit, accuracy_mode, y_true](
             const Candidate& item, Rng& rng) {
    std::vector<std::vector<double>> grads;
    if (accuracy_mode) {
      Tape tape;
      ForwardResult fr = model.forward_all(&tape, item.sent.token_ids);
      Tensor loss =
          cross_entropy(&tape, fr.layer_logits.back(), y_true);
      tape.backward(loss);
      const int d = model.config().d_model;
      const auto& g = fr.token_embeddings.grad();
      grads.assign(item.sent.token_ids.size(), std::vector<double>(d, 0.0));
      // This baseline maximizes the true-label loss, and the replacement
      // ranking walks downhill, so feed it the negated gradient.
      for (size_t i = 0; i < grads.size(); ++i)
        for (int j = 0; j < d; ++j) grads[i][j] = -g[i * d + j];
    } else {
      grads = objective_embedding_grads(model, item.sent, policy, cfg, h0,
                                        static_exit);
    }
    std::vector<int> ranked = rank_critical_words(grads, item.edited);
    const int n_words =
        std::min<int>(cfg.critical_words_considered,
                      static_cast<int>(ranked.size()));
    std::vector<std::pair<int, std::string>> proposals;
    if (n_words == 0) return proposals;
    if (cfg.variant == AttackVariant::kChar) {
      const int per_kind =
          std::max(1, cfg.char_candidates_per_kind / n_words);
      for (int i = 0; i < n_words; ++i) {
        const int idx = ranked[i];
        for (const std::string& w : char_mutations(
                 item.sent.words[idx], cfg.homoglyphs, rng, per_kind))
          proposals.emplace_back(idx, w);
      }
    } else {
      const int per_word = std::max(1, cfg.word_candidates_total / n_words);
      for (int i = 0; i < n_words; ++i) {
        const int idx = ranked[i];
        for (const std::string& w : word_replacement_candidates(
                 model, item.sent, idx, grads[idx], per_word))
          proposals.emplace_back(idx, w);
      }
    }
    return proposals;
  };
}

}  // namespace

AttackRecord attack(const MultiExitModel& model, const ExitPolicy& policy,
                    const Sentence& sentence, const AttackConfig& cfg,
                    Rng& rng) {
  const auto clean_logits = model.layer_logits(sentence.token_ids);
  const int h0 = argmax(clean_logits[0]);  // frozen from the seed input
  const int static_exit = decide(policy, clean_logits).exit_layer;
  const int n = model.config().n_layers;
  auto scorer = [](const Candidate& c) {
    return static_cast<double>(c.dec.exit_layer);
  };
  return run_beam_attack(model, policy, sentence, cfg, rng,
                         gradient_proposer(model, policy, cfg, h0, static_exit,
                                           false, -1),
                         scorer, static_cast<double>(n), static_exit, h0);
}

AttackRecord attack_multigoal(const MultiExitModel& model,
                              const ExitPolicy& policy,
                              const Sentence& sentence,
                              const AttackConfig& cfg, Rng& rng) {
  if (sentence.label < 0)
    throw std::invalid_argument("attack_multigoal: sentence has no label");
  const auto clean_logits = model.layer_logits(sentence.token_ids);
  const int h0 = argmax(clean_logits[0]);
  const int static_exit = decide(policy, clean_logits).exit_layer;
  const int n = model.config().n_layers;
  const double sigma = cfg.sigma;
  const int y = sentence.label;
  auto scorer = [sigma, y](const Candidate& c) {
    return c.dec.exit_layer + sigma * (c.dec.prediction != y ? 1.0 : 0.0);
  };
  return run_beam_attack(model, policy, sentence, cfg, rng,
                         gradient_proposer(model, policy, cfg, h0, static_exit,
                                           false, -1),
                         scorer, n + (sigma > 0.0 ? sigma : 0.0), static_exit,
                         h0);
}

AttackRecord baseline_random(const MultiExitModel& model,
                             const ExitPolicy& policy, const Sentence& sentence,
                             const AttackConfig& cfg, Rng& rng) {
  const auto clean_logits = model.layer_logits(sentence.token_ids);
  const int h0 = argmax(clean_logits[0]);
  const int static_exit = decide(policy, clean_logits).exit_layer;
  const int n = model.config().n_layers;
  const Vocabulary& vocab = model.vocab();
  AttackConfig c = cfg;
  auto propose = [&model, &vocab, c](const Candidate& item, Rng& rng) {
    std::vector<std::pair<int, std::string>> proposals;
    std::vector<int> free_idx;
    for (size_t i = 0; i < item.edited.size(); ++i)
      if (!item.edited[i]) free_idx.push_back(static_cast<int>(i));
    if (free_idx.empty()) return proposals;
    for (int k = 0; k < c.word_candidates_total; ++k) {
      const int idx =
          free_idx[rng.uniform_int(static_cast<int>(free_idx.size()))];
      if (c.variant == AttackVariant::kWord) {
        const int t = 2 + rng.uniform_int(vocab.size() - 2);
        proposals.emplace_back(idx, vocab.word(t));
      } else {
        auto muts =
            char_mutations(item.sent.words[idx], c.homoglyphs, rng, 1);
        if (!muts.empty())
          proposals.emplace_back(
              idx, muts[rng.uniform_int(static_cast<int>(muts.size()))]);
      }
    }
    return proposals;
  };
  auto scorer = [](const Candidate& cd) {
    return static_cast<double>(cd.dec.exit_layer);
  };
  return run_beam_attack(model, policy, sentence, cfg, rng, propose, scorer,
                         static_cast<double>(n), static_exit, h0);
}

AttackRecord baseline_accuracy_attack(const MultiExitModel& model,
                                      const ExitPolicy& policy,
                                      const Sentence& sentence,
                                      const AttackConfig& cfg, Rng& rng) {
  if (sentence.label < 0)
    throw std::invalid_argument("baseline_accuracy_attack: no label");
  const auto clean_logits = model.layer_logits(sentence.token_ids);
  const int h0 = argmax(clean_logits[0]);
  const int static_exit = decide(policy, clean_logits).exit_layer;
  const int y = sentence.label;
  // Classic misclassification objective: maximize final-layer cross entropy
  // against the true label; slowdown is measured afterward as a side effect.
  auto scorer = [y](const Candidate& c) {
    const auto ls = log_softmax_vec(c.logits.back());
    return -ls[y];
  };
  // Stop once the final prediction flips; approximated by a loss level that
  // guarantees argmax != y for any K.
  const double stop = std::log(static_cast<double>(clean_logits[0].size()));
  return run_beam_attack(model, policy, sentence, cfg, rng,
                         gradient_proposer(model, policy, cfg, h0, static_exit,
                                           true, y),
                         scorer, stop, static_exit, h0);
}

}  // namespace same
