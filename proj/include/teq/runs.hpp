#pragma once

// Run directories: manifest, per-step metrics records, checkpoints, and a
// prefetching training driver.

#include <filesystem>
#include <functional>
#include <string>

#include "teq/trainloop.hpp"

namespace teq {

/// Root for run directories: $TEQ_RUNS_ROOT if set, else "./runs".
std::filesystem::path runs_root();

/// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the content.
std::string content_hash(const std::string& content);

struct RunManifest {
  std::string name;
  std::string config;  // key = value text of the resolved TrainConfig
  std::uint64_t seed = 0;
  std::string dataset;
  std::string config_hash;
  std::string created;
  std::string finished;  // empty until training completes

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

RunManifest make_manifest(const TrainConfig& config, const std::string& dataset);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);
RunManifest read_manifest(const std::filesystem::path& dir);

/// One metrics.jsonl record.
std::string metrics_record(const StepRecord& record);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long step);
/// Newest ckpt_<step> in `dir`, or empty.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

struct TrainOutcome {
  long steps = 0;
  StepRecord last;
  std::filesystem::path checkpoint;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Trains to completion inside `dir`, appending metrics and writing
/// checkpoints. Resumes from the newest checkpoint when `resume` is set.
/// With config.workers > 0, batches are prepared ahead on worker threads;
/// each batch depends only on (seed, step), so results do not change.
TrainOutcome run_training(const TrainConfig& config, const Dataset& data,
                          const std::filesystem::path& dir, bool resume = false,
                          const StepCallback& on_step = {});

}  // namespace teq
