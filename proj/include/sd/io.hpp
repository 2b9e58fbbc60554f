#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "sd/model.hpp"
#include "sd/tasks.hpp"
#include "sd/trainer.hpp"

namespace sd {

// One run = one JSON config document. The task's seed and vocab are not
// stored; they resolve from the run seed and the model section when loaded.
struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  TrainerConfig trainer;
  uint64_t seed = 1;
  std::string out_dir = "runs/default";

  void validate() const;
  std::string to_json() const;  // canonical: sorted keys, compact
  // Parses and resolves; unknown or ill-typed fields fail with the exact
  // field path in the message.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);
  // Fingerprint of everything that shapes training (out_dir excluded), used
  // to pair checkpoints with configs.
  uint64_t digest() const;
};

std::string metrics_to_json(const StepMetrics& metrics);
std::string eval_report_to_json(const EvalReport& report);

// Line-delimited metrics stream, flushed after every record so a crashed
// run stays parseable up to its last complete step.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write(const StepMetrics& metrics);

 private:
  std::ofstream out_;
};

// Binary checkpoint: magic "SDCK", format version, config digest, payload
// length and checksum, then the embedded config and the full TrainState
// (weights, optimizer moments, counters, constraint tracker, RNG word).
// Little-endian doubles, lossless.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const RunConfig& config, const TrainState& state);
// Restores into a state built from `config`; refuses bad magic, other
// versions, foreign config digests, truncation and checksum mismatches.
void load_checkpoint(const std::string& path, const RunConfig& config, TrainState& state);
// The config a checkpoint was written with (for eval without the original file).
RunConfig checkpoint_config(const std::string& path);

}  // namespace sd
