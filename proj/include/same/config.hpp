#ifndef SAME_CONFIG_HPP
#define SAME_CONFIG_HPP

#include <string>

#include "same/attack.hpp"
#include "same/eval.hpp"
#include "same/model.hpp"

namespace same {

// Where a command's input data comes from: JSONL files on disk, or a
// built-in synthetic task generated from the run seed.
struct DataConfig {
  std::string train_path, dev_path, eval_path;
  std::string synth_task;  // empty = files only
  int synth_train = 5000, synth_dev = 1000, synth_eval = 500;
};

// One file that drives every CLI command; commands read the subset they
// need. Unknown keys anywhere in the file are an error.
struct RunConfig {
  uint64_t seed = 0;
  int workers = 1;
  std::string out_dir = "out";

  ModelConfig model;
  TrainHyperparams train;
  AttackConfig attack;
  AttackKind attack_kind = AttackKind::kSame;

  // Inline policy; ignored when policy_file is set.
  ExitPolicy policy = ExitPolicy::entropy(0.35);
  std::string policy_file;

  DataConfig data;
  std::string checkpoint;         // victim / source model
  std::string target_checkpoint;  // transfer target
  std::string records_path;       // recorded attacks to replay
  std::string homoglyphs_path;    // optional override table

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;  // effective config, defaults filled in

  ExitPolicy resolve_policy() const;  // inline or loaded from policy_file
};

std::string policy_to_json(const ExitPolicy& p);
ExitPolicy policy_from_json_text(const std::string& text);
ExitPolicy load_policy_file(const std::string& path);
void save_policy_file(const ExitPolicy& p, const std::string& path);

}  // namespace same

#endif
