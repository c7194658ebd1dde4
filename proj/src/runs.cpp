#include "teq/runs.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace teq {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path runs_root() {
  const char* env = std::getenv("TEQ_RUNS_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string content_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("sha1 digest failed");
  }
  std::ostringstream o;
  for (unsigned int i = 0; i < len; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return o.str();
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

}  // namespace

std::string RunManifest::to_json() const {
  json j{{"name", name},       {"seed", seed},       {"dataset", dataset}, {"config_hash", config_hash},
         {"config", config},   {"created", created}, {"finished", finished}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunManifest m;
  m.name = j.at("name");
  m.seed = j.at("seed");
  m.dataset = j.at("dataset");
  m.config_hash = j.at("config_hash");
  m.config = j.at("config");
  m.created = j.at("created");
  m.finished = j.at("finished");
  return m;
}

RunManifest make_manifest(const TrainConfig& config, const std::string& dataset) {
  RunManifest m;
  m.name = config.name;
  m.config = to_key_values(config);
  m.seed = config.seed;
  m.dataset = dataset;
  m.config_hash = content_hash(m.config);
  m.created = utc_now();
  return m;
}

void write_manifest(const RunManifest& manifest, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << manifest.to_json();
    if (!out) throw Error("cannot write manifest in " + dir.string());
  }
  fs::rename(tmp, dir / "manifest.json");
}

RunManifest read_manifest(const fs::path& dir) {
  return RunManifest::from_json(slurp(dir / "manifest.json"));
}

std::string metrics_record(const StepRecord& r) {
  json j{{"step", r.step},
         {"lr", r.lr},
         {"loss", r.loss.total},
         {"equi", r.loss.equi},
         {"inst", r.loss.inst},
         {"aux_speed", r.loss.aux_speed},
         {"aux_direction", r.loss.aux_direction},
         {"aux_overlap", r.loss.aux_overlap},
         {"grad_norm", r.grad_norm}};
  return j.dump();
}

fs::path checkpoint_path(const fs::path& dir, long step) {
  return dir / ("ckpt_" + std::to_string(step));
}

fs::path latest_checkpoint(const fs::path& dir) {
  fs::path best;
  long best_step = -1;
  if (!fs::is_directory(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("ckpt_", 0) != 0) continue;
    const std::string digits = n.substr(5);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
    const long s = std::stol(digits);
    if (s > best_step) {
      best_step = s;
      best = e.path();
    }
  }
  return best;
}

namespace {

struct Prepared {
  BatchPlan plan;
  std::vector<VideoTensor> clips;
};

// Keeps metrics records strictly before `step` (used when resuming).
void truncate_metrics(const fs::path& path, long step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<long>() < step) kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::binary | std::ios::trunc) << kept;
}

}  // namespace

TrainOutcome run_training(const TrainConfig& config, const Dataset& data, const fs::path& dir,
                          bool resume, const StepCallback& on_step) {
  Trainer trainer(config, data);
  fs::create_directories(dir);
  const fs::path metrics = dir / "metrics.jsonl";
  if (resume) {
    const fs::path ckpt = latest_checkpoint(dir);
    if (!ckpt.empty()) trainer.load_checkpoint(ckpt);
    truncate_metrics(metrics, trainer.step());
  } else {
    std::ofstream(metrics, std::ios::trunc);
  }
  std::ofstream log(metrics, std::ios::app | std::ios::binary);

  const long total = trainer.total_steps();
  const int window = std::max(0, config.workers);
  std::deque<std::future<Prepared>> ahead;
  long next = trainer.step();
  auto prepare = [&trainer](long s) {
    Prepared p{trainer.plan_for_step(s), {}};
    p.clips = trainer.clips_for_step(s, p.plan);
    return p;
  };

  TrainOutcome out;
  while (trainer.step() < total) {
    StepRecord rec;
    if (window > 0) {
      while (static_cast<long>(ahead.size()) < window && next < total) {
        ahead.push_back(std::async(std::launch::async, prepare, next++));
      }
      Prepared p = ahead.front().get();
      ahead.pop_front();
      rec = trainer.train_step(p.plan, p.clips);
    } else {
      rec = trainer.train_step();
    }
    log << metrics_record(rec) << "\n";
    log.flush();
    if (on_step) on_step(rec);
    out.last = rec;
    if (config.checkpoint_every > 0 && trainer.step() % config.checkpoint_every == 0 &&
        trainer.step() < total) {
      trainer.save_checkpoint(checkpoint_path(dir, trainer.step()));
    }
  }
  out.steps = trainer.step();
  out.checkpoint = checkpoint_path(dir, trainer.step());
  trainer.save_checkpoint(out.checkpoint);
  return out;
}

}  // namespace teq
