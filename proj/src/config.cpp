#include "same/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace same {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
  if (!j.is_object())
    throw std::invalid_argument("config: '" + ctx + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " +
                                  ctx);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig parse_model(const json& j) {
  check_keys(j, {"n_layers", "d_model", "n_heads", "d_ff", "n_hash_buckets",
                 "n_classes", "max_len", "seed"},
             "model");
  ModelConfig m;
  get_if(j, "n_layers", m.n_layers);
  get_if(j, "d_model", m.d_model);
  get_if(j, "n_heads", m.n_heads);
  get_if(j, "d_ff", m.d_ff);
  get_if(j, "n_hash_buckets", m.n_hash_buckets);
  get_if(j, "n_classes", m.n_classes);
  get_if(j, "max_len", m.max_len);
  get_if(j, "seed", m.seed);
  return m;
}

TrainHyperparams parse_train(const json& j) {
  check_keys(j, {"epochs", "batch_size", "lr", "seed"}, "train");
  TrainHyperparams t;
  get_if(j, "epochs", t.epochs);
  get_if(j, "batch_size", t.batch_size);
  get_if(j, "lr", t.lr);
  get_if(j, "seed", t.seed);
  return t;
}

AttackConfig parse_attack(const json& j) {
  check_keys(j,
             {"epsilon_frac", "lambda", "alpha", "beta", "sigma", "beam_width",
              "char_candidates_per_kind", "word_candidates_total",
              "critical_words_considered", "max_iters", "variant",
              "weight_mode"},
             "attack");
  AttackConfig a;
  get_if(j, "epsilon_frac", a.epsilon_frac);
  get_if(j, "lambda", a.lambda);
  get_if(j, "alpha", a.alpha);
  get_if(j, "beta", a.beta);
  get_if(j, "sigma", a.sigma);
  get_if(j, "beam_width", a.beam_width);
  get_if(j, "char_candidates_per_kind", a.char_candidates_per_kind);
  get_if(j, "word_candidates_total", a.word_candidates_total);
  get_if(j, "critical_words_considered", a.critical_words_considered);
  get_if(j, "max_iters", a.max_iters);
  if (j.contains("variant")) {
    const std::string v = j.at("variant");
    if (v == "word")
      a.variant = AttackVariant::kWord;
    else if (v == "char")
      a.variant = AttackVariant::kChar;
    else
      throw std::invalid_argument("config: attack.variant must be word|char");
  }
  if (j.contains("weight_mode")) {
    const std::string w = j.at("weight_mode");
    if (w == "none")
      a.weight_mode = WeightMode::kNone;
    else if (w == "static")
      a.weight_mode = WeightMode::kStatic;
    else if (w == "dynamic")
      a.weight_mode = WeightMode::kDynamic;
    else
      throw std::invalid_argument(
          "config: attack.weight_mode must be none|static|dynamic");
  }
  return a;
}

ExitPolicy parse_policy(const json& j) {
  check_keys(j, {"kind", "entropy_threshold", "patience_t", "never_exit"},
             "policy");
  ExitPolicy p;
  const std::string kind = j.value("kind", "entropy");
  if (kind == "entropy")
    p.kind = PolicyKind::kEntropy;
  else if (kind == "patience")
    p.kind = PolicyKind::kPatience;
  else
    throw std::invalid_argument("config: policy.kind must be entropy|patience");
  get_if(j, "entropy_threshold", p.entropy_threshold);
  get_if(j, "patience_t", p.patience_t);
  get_if(j, "never_exit", p.never_exit);
  return p;
}

DataConfig parse_data(const json& j) {
  check_keys(j,
             {"train", "dev", "eval", "synth_task", "synth_train", "synth_dev",
              "synth_eval"},
             "data");
  DataConfig d;
  get_if(j, "train", d.train_path);
  get_if(j, "dev", d.dev_path);
  get_if(j, "eval", d.eval_path);
  get_if(j, "synth_task", d.synth_task);
  get_if(j, "synth_train", d.synth_train);
  get_if(j, "synth_dev", d.synth_dev);
  get_if(j, "synth_eval", d.synth_eval);
  return d;
}

std::string variant_name(AttackVariant v) {
  return v == AttackVariant::kWord ? "word" : "char";
}
std::string weight_mode_name(WeightMode w) {
  switch (w) {
    case WeightMode::kNone: return "none";
    case WeightMode::kStatic: return "static";
    case WeightMode::kDynamic: return "dynamic";
  }
  return "?";
}

json policy_json(const ExitPolicy& p) {
  return {{"kind", p.kind == PolicyKind::kEntropy ? "entropy" : "patience"},
          {"entropy_threshold", p.entropy_threshold},
          {"patience_t", p.patience_t},
          {"never_exit", p.never_exit}};
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") +
                                e.what());
  }
  check_keys(j,
             {"seed", "workers", "out_dir", "model", "train", "attack",
              "attack_kind", "policy", "policy_file", "data", "checkpoint",
              "target_checkpoint", "records", "homoglyphs"},
             "top level");
  RunConfig c;
  get_if(j, "seed", c.seed);
  get_if(j, "workers", c.workers);
  get_if(j, "out_dir", c.out_dir);
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("attack")) c.attack = parse_attack(j.at("attack"));
  if (j.contains("attack_kind"))
    c.attack_kind = attack_kind_from_string(j.at("attack_kind"));
  if (j.contains("policy")) c.policy = parse_policy(j.at("policy"));
  get_if(j, "policy_file", c.policy_file);
  if (j.contains("data")) c.data = parse_data(j.at("data"));
  get_if(j, "checkpoint", c.checkpoint);
  get_if(j, "target_checkpoint", c.target_checkpoint);
  get_if(j, "records", c.records_path);
  get_if(j, "homoglyphs", c.homoglyphs_path);
  if (c.workers < 1)
    throw std::invalid_argument("config: workers must be >= 1");
  if (!c.homoglyphs_path.empty())
    c.attack.homoglyphs = HomoglyphTable::load(c.homoglyphs_path);
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config-not-found: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string RunConfig::to_json_text() const {
  json j{
      {"seed", seed},
      {"workers", workers},
      {"out_dir", out_dir},
      {"model",
       {{"n_layers", model.n_layers},
        {"d_model", model.d_model},
        {"n_heads", model.n_heads},
        {"d_ff", model.d_ff},
        {"n_hash_buckets", model.n_hash_buckets},
        {"n_classes", model.n_classes},
        {"max_len", model.max_len},
        {"seed", model.seed}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"lr", train.lr},
        {"seed", train.seed}}},
      {"attack",
       {{"epsilon_frac", attack.epsilon_frac},
        {"lambda", attack.lambda},
        {"alpha", attack.alpha},
        {"beta", attack.beta},
        {"sigma", attack.sigma},
        {"beam_width", attack.beam_width},
        {"char_candidates_per_kind", attack.char_candidates_per_kind},
        {"word_candidates_total", attack.word_candidates_total},
        {"critical_words_considered", attack.critical_words_considered},
        {"max_iters", attack.max_iters},
        {"variant", variant_name(attack.variant)},
        {"weight_mode", weight_mode_name(attack.weight_mode)}}},
      {"attack_kind", attack_kind_name(attack_kind)},
      {"policy", policy_json(policy)},
      {"policy_file", policy_file},
      {"data",
       {{"train", data.train_path},
        {"dev", data.dev_path},
        {"eval", data.eval_path},
        {"synth_task", data.synth_task},
        {"synth_train", data.synth_train},
        {"synth_dev", data.synth_dev},
        {"synth_eval", data.synth_eval}}},
      {"checkpoint", checkpoint},
      {"target_checkpoint", target_checkpoint},
      {"records", records_path},
      {"homoglyphs", homoglyphs_path}};
  return j.dump(2);
}

ExitPolicy RunConfig::resolve_policy() const {
  if (!policy_file.empty()) return load_policy_file(policy_file);
  return policy;
}

std::string policy_to_json(const ExitPolicy& p) {
  return policy_json(p).dump(2);
}

ExitPolicy policy_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("policy: invalid JSON: ") +
                                e.what());
  }
  return parse_policy(j);
}

ExitPolicy load_policy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("policy-not-found: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return policy_from_json_text(buf.str());
}

void save_policy_file(const ExitPolicy& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write policy: " + path);
  out << policy_to_json(p) << "\n";
}

}  // namespace same
