#include <stdexcept>
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "same/config.hpp"

using namespace same;

TEST_CASE("config defaults and round trip") {
  RunConfig cfg = RunConfig::from_json_text("{}");
  CHECK(cfg.seed == 0);
  CHECK(cfg.workers == 1);
  CHECK(cfg.model.n_layers == 6);
  CHECK(cfg.attack.epsilon_frac == doctest::Approx(0.10));
  CHECK(cfg.attack.lambda == doctest::Approx(0.5));
  CHECK(cfg.attack.beam_width == 5);

  // The effective echo reloads to the same values.
  RunConfig again = RunConfig::from_json_text(cfg.to_json_text());
  CHECK(again.to_json_text() == cfg.to_json_text());
}

TEST_CASE("explicit fields are honored") {
  const std::string text = R"({
    "seed": 42,
    "workers": 3,
    "out_dir": "runs/x",
    "model": {"n_layers": 4, "d_model": 32, "n_heads": 2},
    "train": {"epochs": 5, "batch_size": 16, "lr": 0.002},
    "attack": {"lambda": 0.25, "beam_width": 3, "variant": "char"},
    "attack_kind": "same+",
    "policy": {"kind": "patience", "patience_t": 2},
    "data": {"synth_task": "keyword-sentiment", "synth_train": 100}
  })";
  RunConfig cfg = RunConfig::from_json_text(text);
  CHECK(cfg.seed == 42);
  CHECK(cfg.workers == 3);
  CHECK(cfg.out_dir == "runs/x");
  CHECK(cfg.model.n_layers == 4);
  CHECK(cfg.model.d_model == 32);
  CHECK(cfg.train.epochs == 5);
  CHECK(cfg.train.lr == doctest::Approx(0.002));
  CHECK(cfg.attack.lambda == doctest::Approx(0.25));
  CHECK(cfg.attack.beam_width == 3);
  CHECK(cfg.attack.variant == AttackVariant::kChar);
  CHECK(cfg.attack_kind == AttackKind::kSamePlus);
  CHECK(cfg.policy.kind == PolicyKind::kPatience);
  CHECK(cfg.policy.patience_t == 2);
  CHECK(cfg.data.synth_task == "keyword-sentiment");
  CHECK(cfg.data.synth_train == 100);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"sede": 1})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"model": {"layers": 4}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"attack": {"sigmaa": 1}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"data": {"trainpath": "x"}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"policy": {"threshold": 1}})"),
                  std::invalid_argument);
}

TEST_CASE("malformed json is an error") {
  CHECK_THROWS(RunConfig::from_json_text("{"));
  CHECK_THROWS(RunConfig::from_file("no_such_config.json"));
}

TEST_CASE("policy files round trip") {
  ExitPolicy p = ExitPolicy::entropy(0.37);
  ExitPolicy back = policy_from_json_text(policy_to_json(p));
  CHECK(back.kind == PolicyKind::kEntropy);
  CHECK(back.entropy_threshold == doctest::Approx(0.37));

  ExitPolicy q = ExitPolicy::patience(3);
  const std::string path = "test_config_policy.json";
  save_policy_file(q, path);
  ExitPolicy loaded = load_policy_file(path);
  CHECK(loaded.kind == PolicyKind::kPatience);
  CHECK(loaded.patience_t == 3);
  std::remove(path.c_str());

  CHECK_THROWS(load_policy_file("missing_policy.json"));
}

TEST_CASE("policy resolution prefers the policy file") {
  RunConfig cfg = RunConfig::from_json_text(
      R"({"policy": {"kind": "entropy", "entropy_threshold": 0.2}})");
  CHECK(cfg.resolve_policy().entropy_threshold == doctest::Approx(0.2));

  const std::string path = "test_config_policy2.json";
  save_policy_file(ExitPolicy::patience(2), path);
  cfg.policy_file = path;
  CHECK(cfg.resolve_policy().kind == PolicyKind::kPatience);
  std::remove(path.c_str());
}
