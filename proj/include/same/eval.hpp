#ifndef SAME_EVAL_HPP
#define SAME_EVAL_HPP

#include <string>
#include <vector>

#include "same/attack.hpp"
#include "same/model.hpp"

namespace same {

enum class AttackKind { kSame, kSamePlus, kRandom, kAccuracy, kIdentity };
std::string attack_kind_name(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

// Metrics (layer counts only; wall clock is informational).
double speedup(const std::vector<int>& exit_layers, int n_layers);
double high_computation_ratio(const std::vector<int>& exit_layers,
                              int n_layers);  // exit >= N-1
double gain_reduction(double speedup_clean, double speedup_adv);

struct CampaignReport {
  std::string model_id;
  std::string policy;
  std::string attack;
  int n_samples = 0;
  double mean_exit_clean = 0.0, mean_exit_adv = 0.0;
  double speedup_clean = 1.0, speedup_adv = 1.0;
  // Secondary per-sample-mean reading of the speedup definition.
  double mean_ratio_speedup_clean = 1.0, mean_ratio_speedup_adv = 1.0;
  double high_comp_ratio_clean = 0.0, high_comp_ratio_adv = 0.0;
  double gain_reduction = 0.0;
  double accuracy_clean = 0.0, accuracy_adv = 0.0;
  double wall_clock_per_sample_s = 0.0;
  std::vector<AttackRecord> records;

  std::string table_line() const;  // "1.51x (20.34%)" style cell pair
};

// Attacks every sample; per-sample RNG streams derive from (seed, index) so
// results are identical for any worker count.
CampaignReport run_campaign(const MultiExitModel& model,
                            const ExitPolicy& policy,
                            const std::vector<Sentence>& dataset,
                            AttackKind kind, const AttackConfig& cfg,
                            uint64_t seed, int workers = 1);

// Replays recorded adversarial texts through another model/policy.
CampaignReport transfer_eval(const std::vector<AttackRecord>& source_records,
                             const MultiExitModel& target_model,
                             const ExitPolicy& target_policy);

struct AdvTrainOutcome {
  MultiExitModel model;
  ExitPolicy policy;
  double victim_clean_speedup = 0.0;
  double achieved_clean_speedup = 0.0;
  bool speedup_mismatch = false;  // recalibration missed the ±5% window
  CampaignReport reattack;        // SAME re-run against the defended model
  int mixture_size = 0;
};

// 50/50 clean/adversarial retraining with exit-threshold recalibration to the
// victim's clean speedup, then a fresh attack campaign on eval_set.
AdvTrainOutcome adversarial_train(const MultiExitModel& victim,
                                  const ExitPolicy& victim_policy,
                                  PolicyKind retrain_policy_kind,
                                  const std::vector<Sentence>& train_set,
                                  const std::vector<Sentence>& dev_set,
                                  const std::vector<Sentence>& eval_set,
                                  const AttackConfig& attack_cfg,
                                  const TrainHyperparams& train_hp,
                                  uint64_t seed, int workers = 1);

// Line-delimited record stream + JSON report serialization.
std::string record_to_json(const AttackRecord& rec);
AttackRecord record_from_json(const std::string& line,
                              const MultiExitModel& model);
void write_records(const std::vector<AttackRecord>& recs,
                   const std::string& path);
std::string report_to_json(const CampaignReport& r);
std::string report_table(const CampaignReport& r);

}  // namespace same

#endif
