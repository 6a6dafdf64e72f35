// Command-line front end: train / calibrate / attack / transfer / advtrain /
// ablate, all driven by one JSON run config. Errors exit nonzero with a
// single machine-parsable reason line on stderr.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "same/config.hpp"

namespace fs = std::filesystem;
using namespace same;

namespace {

struct LabeledTexts {
  std::vector<std::string> texts;
  std::vector<int> labels;
};

LabeledTexts read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset-not-found: " + path);
  LabeledTexts out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      out.texts.push_back(j.at("text").get<std::string>());
      out.labels.push_back(j.at("label").get<int>());
    } catch (const std::exception&) {
      throw std::runtime_error("dataset-malformed: " + path + ":" +
                               std::to_string(lineno));
    }
  }
  if (out.texts.empty()) throw std::runtime_error("dataset-empty: " + path);
  return out;
}

LabeledTexts get_split(const RunConfig& cfg, const std::string& which) {
  const DataConfig& d = cfg.data;
  const std::string& path = which == "train" ? d.train_path
                            : which == "dev" ? d.dev_path
                                             : d.eval_path;
  if (!path.empty()) return read_jsonl(path);
  if (d.synth_task.empty())
    throw std::runtime_error("dataset-missing: no " + which +
                             " path and no synth_task configured");
  const SynthTask task = synth_task_from_string(d.synth_task);
  const int n = which == "train" ? d.synth_train
                : which == "dev" ? d.synth_dev
                                 : d.synth_eval;
  const uint64_t salt = which == "train" ? 101 : which == "dev" ? 102 : 103;
  RawDataset raw = synth_task(task, n, Rng::derive(cfg.seed, salt));
  return {std::move(raw.texts), std::move(raw.labels)};
}

std::vector<Sentence> to_sentences(const MultiExitModel& model,
                                   const LabeledTexts& raw) {
  std::vector<Sentence> out;
  out.reserve(raw.texts.size());
  for (size_t i = 0; i < raw.texts.size(); ++i) {
    Sentence s = model.make_sentence(raw.texts[i]);
    s.label = raw.labels[i];
    out.push_back(std::move(s));
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot-write: " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

fs::path prepare_out(const RunConfig& cfg) {
  fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  write_file(dir / "effective_config.json", cfg.to_json_text());
  return dir;
}

MultiExitModel load_model(const std::string& path) {
  if (path.empty()) throw std::runtime_error("checkpoint-missing: no path set");
  if (!fs::exists(path))
    throw std::runtime_error("checkpoint-not-found: " + path);
  return MultiExitModel::load_checkpoint(path);
}

int cmd_train(RunConfig cfg) {
  const fs::path out = prepare_out(cfg);
  LabeledTexts train_raw = get_split(cfg, "train");
  LabeledTexts dev_raw = get_split(cfg, "dev");
  Vocabulary vocab = build_vocab(train_raw.texts);

  ModelConfig mc = cfg.model;
  if (mc.seed == 0) mc.seed = Rng::derive(cfg.seed, 1);
  MultiExitModel model(mc, std::move(vocab));

  std::vector<Sentence> train_set = to_sentences(model, train_raw);
  std::vector<Sentence> dev_set = to_sentences(model, dev_raw);

  TrainHyperparams hp = cfg.train;
  if (hp.seed == 0) hp.seed = Rng::derive(cfg.seed, 2);
  TrainingReport rep = model.train(train_set, dev_set, hp);

  model.save_checkpoint((out / "model.ckpt").string());
  nlohmann::json j{{"epoch_loss", rep.epoch_loss},
                   {"per_layer_dev_acc", rep.per_layer_dev_acc},
                   {"final_dev_acc", rep.final_dev_acc}};
  write_file(out / "train_report.json", j.dump(2));
  std::cout << "trained: dev_acc=" << rep.final_dev_acc << " checkpoint="
            << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_calibrate(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  MultiExitModel model = load_model(cfg.checkpoint);
  std::vector<Sentence> dev = to_sentences(model, get_split(cfg, "dev"));
  nlohmann::json summary = nlohmann::json::array();
  const struct {
    double drop;
    const char* name;
  } targets[] = {{0.02, "policy_pd2.json"}, {0.04, "policy_pd4.json"}};
  for (const auto& t : targets) {
    CalibrationResult r =
        calibrate_threshold(model, cfg.policy.kind, dev, t.drop);
    save_policy_file(r.policy, (out / t.name).string());
    summary.push_back({{"file", t.name},
                       {"max_rel_drop", t.drop},
                       {"policy", nlohmann::json::parse(policy_to_json(r.policy))},
                       {"dev_accuracy", r.dev_accuracy},
                       {"dev_speedup", r.dev_speedup},
                       {"full_model_accuracy", r.full_model_accuracy}});
    std::cout << t.name << ": " << policy_to_string(r.policy)
              << " speedup=" << r.dev_speedup << " acc=" << r.dev_accuracy
              << "\n";
  }
  write_file(out / "calibration_report.json", summary.dump(2));
  return 0;
}

CampaignReport run_and_write(const MultiExitModel& model,
                             const ExitPolicy& policy,
                             const std::vector<Sentence>& eval_set,
                             AttackKind kind, const AttackConfig& acfg,
                             uint64_t seed, int workers, const fs::path& out,
                             const std::string& stem) {
  CampaignReport r =
      run_campaign(model, policy, eval_set, kind, acfg, seed, workers);
  r.model_id = stem;
  write_file(out / (stem + "_report.json"), report_to_json(r));
  write_records(r.records, (out / (stem + "_records.jsonl")).string());
  std::cout << report_table(r);
  return r;
}

int cmd_attack(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  MultiExitModel model = load_model(cfg.checkpoint);
  ExitPolicy policy = cfg.resolve_policy();
  std::vector<Sentence> eval_set = to_sentences(model, get_split(cfg, "eval"));
  run_and_write(model, policy, eval_set, cfg.attack_kind, cfg.attack,
                Rng::derive(cfg.seed, 10), cfg.workers, out, "attack");
  return 0;
}

int cmd_transfer(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  if (cfg.records_path.empty())
    throw std::runtime_error("records-missing: no records path set");
  MultiExitModel target = load_model(cfg.target_checkpoint.empty()
                                         ? cfg.checkpoint
                                         : cfg.target_checkpoint);
  std::ifstream in(cfg.records_path);
  if (!in) throw std::runtime_error("records-not-found: " + cfg.records_path);
  std::vector<AttackRecord> records;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) records.push_back(record_from_json(line, target));
  CampaignReport r = transfer_eval(records, target, cfg.resolve_policy());
  r.model_id = "transfer";
  write_file(out / "transfer_report.json", report_to_json(r));
  std::cout << report_table(r);
  return 0;
}

int cmd_advtrain(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  MultiExitModel victim = load_model(cfg.checkpoint);
  ExitPolicy policy = cfg.resolve_policy();
  std::vector<Sentence> train_set =
      to_sentences(victim, get_split(cfg, "train"));
  std::vector<Sentence> dev_set = to_sentences(victim, get_split(cfg, "dev"));
  std::vector<Sentence> eval_set = to_sentences(victim, get_split(cfg, "eval"));
  TrainHyperparams hp = cfg.train;
  AdvTrainOutcome o = adversarial_train(
      victim, policy, cfg.policy.kind, train_set, dev_set, eval_set,
      cfg.attack, hp, Rng::derive(cfg.seed, 20), cfg.workers);
  o.model.save_checkpoint((out / "defended.ckpt").string());
  save_policy_file(o.policy, (out / "defended_policy.json").string());
  o.reattack.model_id = "defended";
  nlohmann::json j{
      {"victim_clean_speedup", o.victim_clean_speedup},
      {"achieved_clean_speedup", o.achieved_clean_speedup},
      {"speedup_mismatch", o.speedup_mismatch},
      {"mixture_size", o.mixture_size},
      {"reattack", nlohmann::json::parse(report_to_json(o.reattack))}};
  write_file(out / "advtrain_report.json", j.dump(2));
  write_records(o.reattack.records, (out / "reattack_records.jsonl").string());
  std::cout << "defended: clean speedup " << o.victim_clean_speedup << " -> "
            << o.achieved_clean_speedup
            << (o.speedup_mismatch ? " (mismatch)" : "") << "\n"
            << report_table(o.reattack);
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  MultiExitModel model = load_model(cfg.checkpoint);
  ExitPolicy policy = cfg.resolve_policy();
  std::vector<Sentence> eval_set = to_sentences(model, get_split(cfg, "eval"));
  struct Rung {
    const char* stem;
    double lambda;
    WeightMode mode;
  };
  // Objective ladder: target-only loss, uniform-mess + target mix, frozen
  // layer weights, then per-candidate weight recomputation.
  const Rung rungs[] = {{"ablate_heuristic", 0.0, WeightMode::kNone},
                        {"ablate_combined", cfg.attack.lambda, WeightMode::kNone},
                        {"ablate_weighted", cfg.attack.lambda, WeightMode::kStatic},
                        {"ablate_full", cfg.attack.lambda, WeightMode::kDynamic}};
  for (const Rung& r : rungs) {
    AttackConfig acfg = cfg.attack;
    acfg.lambda = r.lambda;
    acfg.weight_mode = r.mode;
    run_and_write(model, policy, eval_set, AttackKind::kSame, acfg,
                  Rng::derive(cfg.seed, 30), cfg.workers, out, r.stem);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-exit classifier training, early-exit calibration, and "
               "slowdown-attack evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override, variant_override;
  int64_t seed_override = -1;
  int workers_override = 0;

  app.add_option("--config", config_path, "Run config (JSON)")->required();
  app.add_option("--out", out_override, "Override output directory");
  app.add_option("--seed", seed_override, "Override global seed");
  app.add_option("--workers", workers_override, "Override worker count");
  app.add_option("--variant", variant_override, "Override attack variant")
      ->check(CLI::IsMember({"word", "char"}));

  for (const char* name :
       {"train", "calibrate", "attack", "transfer", "advtrain", "ablate"})
    app.add_subcommand(name)->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = RunConfig::from_file(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    if (workers_override > 0) cfg.workers = workers_override;
    if (variant_override == "word") cfg.attack.variant = AttackVariant::kWord;
    if (variant_override == "char") cfg.attack.variant = AttackVariant::kChar;
    cfg.attack.validate();  // model config is validated at construction

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "train") return cmd_train(std::move(cfg));
    if (cmd == "calibrate") return cmd_calibrate(cfg);
    if (cmd == "attack") return cmd_attack(cfg);
    if (cmd == "transfer") return cmd_transfer(cfg);
    if (cmd == "advtrain") return cmd_advtrain(cfg);
    if (cmd == "ablate") return cmd_ablate(cfg);
    throw std::runtime_error("unknown-command: " + cmd);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
