// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits with the number of failures. argv[1] (optional) is the path to the
// command-line binary, used for the config-rerun byte-identity check.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "same/config.hpp"

using namespace same;

namespace {

int failures = 0;

void report(int number, bool pass, const std::string& detail) {
  std::printf("AC-%d: %s — %s\n", number, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

std::vector<Sentence> to_sentences(const MultiExitModel& m,
                                   const RawDataset& r) {
  std::vector<Sentence> v;
  for (size_t i = 0; i < r.texts.size(); ++i) {
    Sentence s = m.make_sentence(r.texts[i]);
    s.label = r.labels[i];
    v.push_back(std::move(s));
  }
  return v;
}

// Independent brute-force reference for exit decisions (used by AC-8).
struct SimResult {
  int exit_layer;
  int prediction;
};

int sim_argmax(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

double sim_entropy(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0;
  for (double v : z) s += std::exp(v - mx);
  double h = 0;
  for (double v : z) {
    const double p = std::exp(v - mx) / s;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

SimResult simulate(const ExitPolicy& policy,
                   const std::vector<std::vector<double>>& trace) {
  const int n = static_cast<int>(trace.size());
  if (policy.kind == PolicyKind::kEntropy) {
    for (int i = 0; i < n; ++i)
      if (sim_entropy(trace[i]) < policy.entropy_threshold)
        return {i + 1, sim_argmax(trace[i])};
  } else {
    int counter = 0;
    for (int i = 1; i < n; ++i) {
      counter = sim_argmax(trace[i]) == sim_argmax(trace[i - 1]) ? counter + 1
                                                                 : 0;
      if (counter == policy.patience_t) return {i + 1, sim_argmax(trace[i])};
    }
  }
  return {n, sim_argmax(trace[n - 1])};
}

// Straight-line transcription of the per-layer target recurrence (AC-10).
std::vector<int> reference_targets(
    const std::vector<std::vector<double>>& logits, int h0) {
  std::vector<int> h;
  int prev = h0;
  for (const auto& row : logits) {
    int top = 0, second = 1;
    if (row[1] > row[0]) { top = 1; second = 0; }
    for (size_t k = 2; k < row.size(); ++k) {
      if (row[k] > row[top]) { second = top; top = static_cast<int>(k); }
      else if (row[k] > row[second]) second = static_cast<int>(k);
    }
    const int target = (prev != top) ? top : second;
    h.push_back(target);
    prev = target;
  }
  return h;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";

  // ---- Shared victim: 5000 train / 1000 dev, master seed 7 ----
  RawDataset train_raw =
      synth_task(SynthTask::kKeywordSentiment, 5000, Rng::derive(7, 101));
  RawDataset dev_raw =
      synth_task(SynthTask::kKeywordSentiment, 1000, Rng::derive(7, 102));
  Vocabulary vocab = build_vocab(train_raw.texts);
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.d_ff = 64;
  mc.max_len = 32;
  mc.seed = Rng::derive(7, 1);
  MultiExitModel model(mc, vocab);
  auto train_set = to_sentences(model, train_raw);
  auto dev_set = to_sentences(model, dev_raw);
  TrainHyperparams hp;
  hp.epochs = 1;
  hp.batch_size = 128;
  hp.seed = Rng::derive(7, 2);

  const auto t0 = std::chrono::steady_clock::now();
  auto train_report = model.train(train_set, dev_set, hp);
  const double train_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  report(1,
         train_report.final_dev_acc >= 0.90 && train_secs < 600.0,
         fmt("final dev accuracy %.4f (need >= 0.90) in %.0f s (< 600 s)",
             train_report.final_dev_acc, train_secs));

  // ---- AC-2: calibrated early exiting ----
  auto cal_e = calibrate_threshold(model, PolicyKind::kEntropy, dev_set, 0.02);
  auto cal_p = calibrate_threshold(model, PolicyKind::kPatience, dev_set, 0.02);
  const bool ac2 =
      cal_e.dev_speedup >= 1.5 && cal_p.dev_speedup >= 1.5 &&
      cal_e.dev_accuracy >= 0.98 * cal_e.full_model_accuracy - 1e-12 &&
      cal_p.dev_accuracy >= 0.98 * cal_p.full_model_accuracy - 1e-12 &&
      !cal_e.policy.never_exit && !cal_p.policy.never_exit;
  report(2, ac2,
         fmt("clean speedup %.2fx (%s) and %.2fx (%s), both >= 1.5x within "
             "the 2%% accuracy bound",
             cal_e.dev_speedup, policy_to_string(cal_e.policy).c_str(),
             cal_p.dev_speedup, policy_to_string(cal_p.policy).c_str()));

  // ---- AC-3/4/5 campaigns: 200 dev samples, all attack kinds ----
  std::vector<Sentence> attack_set(dev_set.begin(), dev_set.begin() + 200);
  AttackConfig acfg;
  CampaignReport rep_e[4], rep_p[4];  // same, same+, random, accuracy
  const AttackKind kinds[4] = {AttackKind::kSame, AttackKind::kSamePlus,
                               AttackKind::kRandom, AttackKind::kAccuracy};
  for (int k = 0; k < 4; ++k) {
    rep_e[k] =
        run_campaign(model, cal_e.policy, attack_set, kinds[k], acfg, 42, 1);
    rep_p[k] =
        run_campaign(model, cal_p.policy, attack_set, kinds[k], acfg, 42, 1);
  }
  report(3,
         rep_e[0].gain_reduction >= 0.5 && rep_p[0].gain_reduction >= 0.5,
         fmt("slowdown attack gain reduction %.3f (entropy) and %.3f "
             "(patience), both >= 0.5",
             rep_e[0].gain_reduction, rep_p[0].gain_reduction));

  const double m_rand_e = rep_e[0].gain_reduction - rep_e[2].gain_reduction;
  const double m_rand_p = rep_p[0].gain_reduction - rep_p[2].gain_reduction;
  const double m_acc_e = rep_e[0].gain_reduction - rep_e[3].gain_reduction;
  const double m_acc_p = rep_p[0].gain_reduction - rep_p[3].gain_reduction;
  report(4,
         m_rand_e >= 0.15 && m_rand_p >= 0.15 && m_acc_e >= 0.15 &&
             m_acc_p >= 0.15,
         fmt("margins over baselines (need >= 0.15): random +%.3f/+%.3f, "
             "accuracy-attack +%.3f/+%.3f (entropy/patience)",
             m_rand_e, m_rand_p, m_acc_e, m_acc_p));

  const double acc_gap = rep_e[0].accuracy_adv - rep_e[1].accuracy_adv;
  const double sp_gap =
      std::fabs(rep_e[0].speedup_adv - rep_e[1].speedup_adv);
  report(5, acc_gap >= 0.10 && sp_gap <= 0.10,
         fmt("multi-goal variant drops accuracy %.1f points further (need "
             ">= 10) at speedup within %.3fx (need <= 0.1x), entropy campaign",
             100.0 * acc_gap, sp_gap));

  // ---- AC-6: transfer to a patience victim trained with another seed ----
  MultiExitModel victim2(mc, vocab);
  TrainHyperparams hp2 = hp;
  hp2.seed = Rng::derive(99, 2);
  victim2.train(train_set, dev_set, hp2);
  auto cal2 = calibrate_threshold(victim2, PolicyKind::kPatience, dev_set, 0.02);
  auto transfer = transfer_eval(rep_e[0].records, victim2, cal2.policy);
  report(6,
         transfer.gain_reduction > 0.1 &&
             transfer.gain_reduction < rep_e[0].gain_reduction,
         fmt("transferred gain reduction %.3f (need > 0.1 and below the "
             "white-box %.3f)",
             transfer.gain_reduction, rep_e[0].gain_reduction));

  // ---- AC-7: adversarial-training defense ----
  std::vector<Sentence> defense_train(train_set.begin(),
                                      train_set.begin() + 800);
  std::vector<Sentence> defense_eval(dev_set.begin() + 200,
                                     dev_set.begin() + 400);
  TrainHyperparams hp_def;
  hp_def.epochs = 20;
  hp_def.batch_size = 32;
  auto defended =
      adversarial_train(model, cal_p.policy, PolicyKind::kPatience,
                        defense_train, dev_set, defense_eval, acfg, hp_def,
                        77, 1);
  auto undefended = run_campaign(model, cal_p.policy, defense_eval,
                                 AttackKind::kSame, acfg, 77, 1);
  const double defense_drop =
      undefended.gain_reduction - defended.reattack.gain_reduction;
  report(7,
         defense_drop >= 0.1 && !defended.speedup_mismatch,
         fmt("re-attack gain reduction %.3f vs undefended %.3f (drop %.3f, "
             "need >= 0.1), clean speedup matched %.2fx vs %.2fx",
             defended.reattack.gain_reduction, undefended.gain_reduction,
             defense_drop, defended.achieved_clean_speedup,
             defended.victim_clean_speedup));

  // ---- AC-8: exit-policy brute-force oracle ----
  {
    Rng rng(20240817);
    int mismatches = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      const int k = 2 + trial % 3;
      std::vector<std::vector<double>> trace(6, std::vector<double>(k));
      for (auto& row : trace)
        for (double& v : row) v = rng.normal() * 3.0;
      ExitPolicy policy =
          trial % 2 == 0
              ? ExitPolicy::entropy(rng.uniform() * std::log(k) * 1.2)
              : ExitPolicy::patience(1 + rng.uniform_int(5));
      auto got = decide(policy, trace);
      auto want = simulate(policy, trace);
      mismatches +=
          got.exit_layer != want.exit_layer || got.prediction != want.prediction;
    }
    // Exhaustive small-case enumeration (patience kind, all argmax traces).
    for (int n = 2; n <= 5; ++n)
      for (int k = 2; k <= 3; ++k) {
        std::vector<int> trace(n, 0);
        while (true) {
          std::vector<std::vector<double>> logits(n,
                                                  std::vector<double>(k, 0));
          for (int i = 0; i < n; ++i) logits[i][trace[i]] = 5.0;
          for (int t = 1; t < n; ++t) {
            ExitPolicy policy = ExitPolicy::patience(t);
            auto got = decide(policy, logits);
            auto want = simulate(policy, logits);
            mismatches += got.exit_layer != want.exit_layer ||
                          got.prediction != want.prediction;
          }
          int pos = n - 1;
          while (pos >= 0 && trace[pos] == k - 1) trace[pos--] = 0;
          if (pos < 0) break;
          ++trace[pos];
        }
      }
    report(8, mismatches == 0,
           fmt("%d mismatches against the brute-force simulator (10,000 "
               "random traces + exhaustive enumeration)",
               mismatches));
  }

  // ---- AC-9: objective gradient soundness over 50 random models ----
  {
    int bad = 0, pairs = 0;
    for (int trial = 0; trial < 50; ++trial) {
      Rng rng(Rng::derive(5000, trial));
      RawDataset mini =
          synth_task(SynthTask::kKeywordSentiment, 6, Rng::derive(6000, trial));
      Vocabulary v9 = build_vocab(mini.texts);
      ModelConfig m9;
      m9.n_layers = 3;
      m9.d_model = 8;
      m9.n_heads = 2;
      m9.d_ff = 16;
      m9.max_len = 16;
      m9.n_hash_buckets = 32;
      m9.seed = Rng::derive(7000, trial);
      MultiExitModel small(m9, v9);
      Sentence s = small.make_sentence(mini.texts[rng.uniform_int(6)]);
      if (s.words.size() > 6) {
        s.words.resize(6);
        s.token_ids.resize(6);
      }
      AttackConfig c9;
      ExitPolicy p9 = ExitPolicy::entropy(0.4);
      auto dec = small.infer(p9, s.token_ids);
      const int h0 = dec.per_layer_preds[0];
      auto grads =
          objective_embedding_grads(small, s, p9, c9, h0, dec.exit_layer);
      Tensor table = small.embedding_table();  // aliases model storage
      const int d = m9.d_model;
      const double step = 1e-4;
      // FD over each occupied table row; repeated tokens accumulate.
      std::vector<int> rows;
      for (int id : s.token_ids)
        if (std::find(rows.begin(), rows.end(), id) == rows.end())
          rows.push_back(id);
      ++pairs;
      for (int row : rows) {
        for (int j = 0; j < d; ++j) {
          double analytic = 0.0;
          for (size_t i = 0; i < s.token_ids.size(); ++i)
            if (s.token_ids[i] == row) analytic += grads[i][j];
          double& cell = table.data()[row * d + j];
          const double keep = cell;
          cell = keep + step;
          const double hi = total_objective_value(
              small.layer_logits(s.token_ids), dec.exit_layer, c9, h0);
          cell = keep - step;
          const double lo = total_objective_value(
              small.layer_logits(s.token_ids), dec.exit_layer, c9, h0);
          cell = keep;
          const double numeric = (hi - lo) / (2.0 * step);
          const double scale =
              std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
          if (std::fabs(numeric - analytic) / scale >= 1e-3) ++bad;
        }
      }
    }
    report(9, bad == 0 && pairs == 50,
           fmt("%d of 50 random (model, input) pairs had gradient entries "
               "off from central finite differences (tolerance 1e-3)",
               bad == 0 ? 0 : bad));
  }

  // ---- AC-10: formula exactness ----
  {
    int mismatches = 0;
    Rng rng(31337);
    for (int n : {2, 6, 12, 24})
      for (int exit = 1; exit <= n; ++exit)
        for (double alpha : {0.05, 0.1, 0.7})
          for (double beta : {1.0, 1.2, 1.7}) {
            auto got = layer_weights(exit, alpha, beta, n);
            for (int i = 1; i <= n; ++i) {
              const double want = i < exit ? alpha : std::pow(beta, i - exit);
              if (std::fabs(got.w[i - 1] - want) > 1e-12) ++mismatches;
            }
          }
    for (int trial = 0; trial < 1000; ++trial) {
      const int k = 2 + trial % 3;
      std::vector<std::vector<double>> logits(6, std::vector<double>(k));
      for (auto& row : logits)
        for (double& v : row) v = rng.normal();
      const int h0 = rng.uniform_int(k);
      if (build_heuristic_targets(logits, h0).h !=
          reference_targets(logits, h0))
        ++mismatches;
    }
    auto close = [](double a, double b) { return std::fabs(a - b) < 1e-9; };
    mismatches += !close(speedup(std::vector<int>(10, 6), 12), 2.0);
    mismatches += !close(speedup(std::vector<int>(4, 12), 12), 1.0);
    mismatches += !close(speedup({4, 12}, 12), 1.5);
    mismatches += !close(high_computation_ratio({11, 12, 5, 6}, 12), 0.5);
    mismatches += !close(high_computation_ratio(std::vector<int>(5, 1), 12),
                         0.0);
    mismatches += !close(gain_reduction(2.0, 1.0), 1.0);
    mismatches += !close(gain_reduction(2.0, 2.0), 0.0);
    mismatches += !close(entropy({0.5, 0.5}), std::log(2.0));
    mismatches += !close(entropy({0.0, 1.0}), 0.0);
    std::vector<Tensor> unif;
    for (int i = 0; i < 6; ++i) unif.push_back(Tensor({2}, {0.0, 0.0}));
    mismatches += !close(mess_loss(nullptr, unif, std::vector<double>(6, 1.0))
                             .item(),
                         6.0 * std::log(2.0));
    mismatches +=
        !close(cross_entropy(nullptr, Tensor({2}, {0, 0}), 0).item(),
               std::log(2.0));
    report(10, mismatches == 0,
           fmt("%d mismatches across the weight-schedule sweep, target "
               "recurrence sweep, and frozen metric examples",
               mismatches));
  }

  // ---- AC-11: budget safety and byte-identical reruns ----
  {
    int over_budget = 0;
    long checked = 0;
    auto audit = [&](const CampaignReport& r) {
      for (const AttackRecord& rec : r.records) {
        const int budget = acfg.edit_budget(
            static_cast<int>(rec.original.words.size()));
        over_budget += static_cast<int>(rec.edits.size()) > budget;
        ++checked;
      }
    };
    for (int k = 0; k < 4; ++k) {
      audit(rep_e[k]);
      audit(rep_p[k]);
    }
    audit(undefended);
    audit(defended.reattack);
    auto rerun =
        run_campaign(model, cal_e.policy, attack_set, AttackKind::kSame, acfg,
                     42, 2);
    const bool identical = report_to_json(rerun) == report_to_json(rep_e[0]);

    bool cli_identical = true;
    std::string cli_note = "library rerun only";
    if (!cli.empty()) {
      const std::string cfg_path = "acceptance_cli_cfg.json";
      std::ofstream(cfg_path) << R"({
        "seed": 11, "workers": 1,
        "model": {"d_model": 16, "n_heads": 2, "d_ff": 32, "max_len": 32},
        "train": {"epochs": 1, "batch_size": 32},
        "policy": {"kind": "entropy", "entropy_threshold": 0.5},
        "checkpoint": "acceptance_cli_train/model.ckpt",
        "data": {"synth_task": "keyword-sentiment",
                  "synth_train": 300, "synth_dev": 60, "synth_eval": 40}
      })";
      const std::string train_cmd =
          cli + " train --config " + cfg_path +
          " --out acceptance_cli_train > /dev/null 2>&1";
      const std::string cmd1 = cli + " attack --config " + cfg_path +
                               " --out acceptance_cli_a > /dev/null 2>&1";
      const std::string cmd2 = cli + " attack --config " + cfg_path +
                               " --out acceptance_cli_b > /dev/null 2>&1";
      cli_identical = std::system(train_cmd.c_str()) == 0 &&
                      std::system(cmd1.c_str()) == 0 &&
                      std::system(cmd2.c_str()) == 0;
      const std::string a = slurp("acceptance_cli_a/attack_report.json");
      const std::string b = slurp("acceptance_cli_b/attack_report.json");
      cli_identical = cli_identical && !a.empty() && a == b;
      cli_note = cli_identical ? "command-line rerun byte-identical"
                               : "command-line rerun differed or failed";
    }
    report(11,
           over_budget == 0 && identical && cli_identical,
           fmt("%ld records audited, %d over budget; campaign rerun "
               "byte-identical: %s; %s",
               checked, over_budget, identical ? "yes" : "no",
               cli_note.c_str()));
  }

  std::printf("%s (%d failure%s)\n", failures == 0 ? "ALL PASS" : "FAILED",
              failures, failures == 1 ? "" : "s");
  return failures;
}
