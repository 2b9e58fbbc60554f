#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sd/adam.hpp"
#include "sd/io.hpp"
#include "sd/trainer.hpp"
#include "support.hpp"

using namespace sd;
using namespace sd::test;

namespace {

RunConfig micro_run(const std::string& out_dir = "runs/io_test") {
  RunConfig cfg;
  cfg.model = micro_config();
  cfg.task.kind = TaskKind::Copy;
  cfg.task.n_min = 3;
  cfg.task.n_max = 6;
  cfg.task.vocab_size = cfg.model.vocab_size;
  cfg.trainer.batch_size = 4;
  cfg.trainer.steps = 4;
  cfg.trainer.eval_examples = 8;
  cfg.seed = 31;
  cfg.task.seed = cfg.seed;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string temp_path(const std::string& name) { return "/tmp/sd_io_test_" + name; }

void expect_config_error(const std::string& json, const std::string& needle) {
  try {
    RunConfig::from_json(json);
    FAIL_CHECK("expected invalid_argument mentioning '" << needle << "'");
  } catch (const std::invalid_argument& err) {
    CHECK(std::string(err.what()).find(needle) != std::string::npos);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void expect_checkpoint_error(const std::string& path, const RunConfig& cfg,
                             const std::string& needle) {
  Trainer t(cfg.model, cfg.task, cfg.trainer, cfg.seed);
  try {
    load_checkpoint(path, cfg, t.state());
    FAIL_CHECK("expected runtime_error mentioning '" << needle << "'");
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find(needle) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("config serialization: canonical text survives a round trip") {
  RunConfig cfg = micro_run();
  cfg.task.kind = TaskKind::PrefixExtract;
  cfg.task.prefix_k = 2;
  cfg.trainer.reward.lambda_mode = LambdaMode::Fixed;
  cfg.trainer.reward.fixed_lambda = 0.4;
  cfg.trainer.decision_space = DecisionSpace::DecoderOnly;

  const std::string text = cfg.to_json();
  const RunConfig parsed = RunConfig::from_json(text);
  CHECK(parsed.to_json() == text);
  // Derived fields resolve from the run, not the document.
  CHECK(parsed.task.vocab_size == parsed.model.vocab_size);
  CHECK(parsed.task.seed == parsed.seed);
  CHECK(parsed.trainer.reward.lambda_mode == LambdaMode::Fixed);
  CHECK(parsed.trainer.decision_space == DecisionSpace::DecoderOnly);
  CHECK(parsed.task.kind == TaskKind::PrefixExtract);
}

TEST_CASE("config digest: out_dir is cosmetic, everything else is load-bearing") {
  const RunConfig base = micro_run("runs/a");
  RunConfig moved = micro_run("runs/elsewhere");
  CHECK(base.digest() == moved.digest());

  RunConfig reseeded = micro_run("runs/a");
  reseeded.seed = base.seed + 1;
  reseeded.task.seed = reseeded.seed;
  CHECK(base.digest() != reseeded.digest());

  RunConfig wider = micro_run("runs/a");
  wider.model.e = 16;
  CHECK(base.digest() != wider.digest());

  RunConfig longer = micro_run("runs/a");
  longer.trainer.steps = 99;
  CHECK(base.digest() != longer.digest());
}

TEST_CASE("config parsing pinpoints unknown fields, type errors and bad names") {
  const std::string good = micro_run().to_json();

  nlohmann::json doc = nlohmann::json::parse(good);
  doc["model"]["banana"] = 1;
  expect_config_error(doc.dump(), "model.banana");
  expect_config_error(doc.dump(), "unknown field");

  doc = nlohmann::json::parse(good);
  doc["trainer"]["steps"] = "many";
  expect_config_error(doc.dump(), "trainer.steps");
  expect_config_error(doc.dump(), "expected an integer");

  doc = nlohmann::json::parse(good);
  doc["trainer"]["mode"] = "adaptive";
  expect_config_error(doc.dump(), "trainer.mode");

  doc = nlohmann::json::parse(good);
  doc["task"]["kind"] = "sort";
  expect_config_error(doc.dump(), "task.kind");

  expect_config_error("not json at all", "not valid JSON");
  expect_config_error("[1,2,3]", "expected a JSON object");
}

TEST_CASE("metrics records: sorted keys, optional eval accuracy, parseable stream") {
  StepMetrics m;
  m.step = 7;
  m.loss = 1.5;
  m.greedy_loss = 1.25;
  m.fraction = 0.75;
  m.lambda = 0.5;
  m.phi = -0.25;
  m.c = 2.0;
  m.skip.att_pct = 25.0;
  m.skip.ffn_pct = 50.0;
  m.skip.token_pct = 10.0;

  const nlohmann::json parsed = nlohmann::json::parse(metrics_to_json(m));
  CHECK(parsed.at("eval_accuracy").is_null());  // uniform schema: null on non-eval steps
  CHECK(parsed.at("step") == 7);
  CHECK(parsed.at("loss") == 1.5);
  CHECK(parsed.at("att_skip_pct") == 25.0);

  m.eval_accuracy = 0.25;
  const nlohmann::json with = nlohmann::json::parse(metrics_to_json(m));
  CHECK(with.at("eval_accuracy") == 0.25);

  EvalReport report;
  report.token_accuracy = 0.5;
  report.n_examples = 12;
  const nlohmann::json ev = nlohmann::json::parse(eval_report_to_json(report));
  CHECK(ev.at("token_accuracy") == 0.5);
  CHECK(ev.at("n_examples") == 12);
}

TEST_CASE("metrics writer: one flushed line per record, truncate on reopen") {
  const std::string path = temp_path("metrics.jsonl");
  {
    MetricsWriter writer(path);
    for (int i = 1; i <= 3; ++i) {
      StepMetrics m;
      m.step = i;
      writer.write(m);
    }
  }
  {
    std::ifstream in(path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      CHECK(nlohmann::json::parse(line).at("step") == n);
    }
    CHECK(n == 3);
  }
  {
    MetricsWriter writer(path);  // reopening truncates the previous run
    StepMetrics m;
    m.step = 42;
    writer.write(m);
  }
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 1);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip restores the full training state bit for bit") {
  const RunConfig cfg = micro_run();
  const std::string path = temp_path("roundtrip.sdck");

  Trainer original(cfg.model, cfg.task, cfg.trainer, cfg.seed);
  original.step();
  original.step();
  save_checkpoint(path, cfg, original.state());

  Trainer restored(cfg.model, cfg.task, cfg.trainer, cfg.seed);
  restored.step();  // drift the fresh state first so the load has work to do
  load_checkpoint(path, cfg, restored.state());

  const TrainState& a = original.state();
  const TrainState& b = restored.state();
  CHECK(a.step == b.step);
  CHECK(a.adam_t_model == b.adam_t_model);
  CHECK(a.adam_t_policy == b.adam_t_policy);
  CHECK(a.c_ema == b.c_ema);
  CHECK(a.c_ema_init == b.c_ema_init);
  CHECK(a.rng.state() == b.rng.state());
  CHECK(flatten_values(a.model.params()) == flatten_values(b.model.params()));
  CHECK(flatten_values(a.policy.params()) == flatten_values(b.policy.params()));
  CHECK(a.model_moments.m == b.model_moments.m);
  CHECK(a.model_moments.v == b.model_moments.v);
  CHECK(a.policy_moments.m == b.policy_moments.m);
  CHECK(a.policy_moments.v == b.policy_moments.v);

  // The restored run continues exactly as the original does.
  for (int s = 0; s < 2; ++s)
    CHECK(metrics_to_json(original.step()) == metrics_to_json(restored.step()));

  CHECK(checkpoint_config(path).to_json() == cfg.to_json());
  std::remove(path.c_str());
}

TEST_CASE("checkpoints refuse corruption, truncation and foreign configs") {
  const RunConfig cfg = micro_run();
  const std::string good_path = temp_path("good.sdck");
  Trainer t(cfg.model, cfg.task, cfg.trainer, cfg.seed);
  t.step();
  save_checkpoint(good_path, cfg, t.state());
  const std::string good = read_file(good_path);
  REQUIRE(good.size() > 64);

  const std::string bad_path = temp_path("bad.sdck");

  std::string tampered = good;
  tampered[1] = 'X';  // magic
  write_file(bad_path, tampered);
  expect_checkpoint_error(bad_path, cfg, "magic");

  tampered = good;
  tampered[4] ^= 0x7;  // version word
  write_file(bad_path, tampered);
  expect_checkpoint_error(bad_path, cfg, "version");

  tampered = good;
  tampered[good.size() / 2] ^= 0x1;  // payload byte
  write_file(bad_path, tampered);
  expect_checkpoint_error(bad_path, cfg, "checksum");

  write_file(bad_path, good.substr(0, good.size() - 9));
  expect_checkpoint_error(bad_path, cfg, "length mismatch");

  write_file(bad_path, good.substr(0, 10));
  expect_checkpoint_error(bad_path, cfg, "too short");

  write_file(bad_path, good + "zz");
  expect_checkpoint_error(bad_path, cfg, "length mismatch");

  RunConfig foreign = cfg;
  foreign.seed = cfg.seed + 1;
  foreign.task.seed = foreign.seed;
  expect_checkpoint_error(good_path, foreign, "digest mismatch");

  std::remove(good_path.c_str());
  std::remove(bad_path.c_str());
}

TEST_CASE("run config load reports the file path on failure") {
  try {
    RunConfig::load("/nonexistent/config.json");
    FAIL_CHECK("expected an exception naming the missing file");
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("/nonexistent/config.json") != std::string::npos);
  }
  const std::string path = temp_path("cfg.json");
  write_file(path, micro_run().to_json());
  const RunConfig cfg = RunConfig::load(path);
  CHECK(cfg.to_json() == micro_run().to_json());
  std::remove(path.c_str());
}
