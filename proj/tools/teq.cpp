// teq: data generation, pretraining, evaluation and sweeps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "teq/evalkit.hpp"
#include "teq/plots.hpp"
#include "teq/runs.hpp"

namespace fs = std::filesystem;
using namespace teq;
using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw Error(what + " not found: " + p.string());
}

std::string pct(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1) << 100.0 * v;
  return o.str();
}

// ----------------------------------------------------------------- generate

struct GenerateArgs {
  int classes = 8;
  int per_class = 100;
  int frames = 128;
  int size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  GenerateOptions o;
  o.n_classes = a.classes;
  o.n_per_class = a.per_class;
  o.frames = a.frames;
  o.height = o.width = a.size;
  if (a.classes < 1 || a.classes > static_cast<int>(motion_classes().size()))
    throw Error("--classes must be between 1 and " + std::to_string(motion_classes().size()));
  if (a.per_class < 1) throw Error("--per-class must be positive");
  if (a.size < 8) throw Error("--size must be at least 8");
  if (a.frames < 1) throw Error("--frames must be positive");

  const EncoderConfig enc;
  const TemporalSamplingConfig temporal;
  const auto feasible = feasible_speeds(temporal, a.frames, enc.clip_len);
  if (feasible.empty()) {
    throw Error("--frames " + std::to_string(a.frames) + " is shorter than one " +
                std::to_string(enc.clip_len) + "-frame clip");
  }
  for (int k : temporal.speed_exponents) {
    if (std::find(feasible.begin(), feasible.end(), k) == feasible.end()) {
      std::cerr << "warning: speed " << (1 << k) << "x needs " << (enc.clip_len << k)
                << " frames; infeasible for " << a.frames << "-frame videos and dropped\n";
    }
  }
  const Dataset d = generate_dataset(a.seed, o);
  save_dataset(d, a.out);
  std::cout << "wrote " << d.size() << " videos (" << a.frames << "x" << a.size << "x" << a.size
            << ") to " << a.out << "\n";
  return 0;
}

// ----------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string data;
  std::string preset;
  std::string config_file;
  std::string equivariance;
  std::string objectives;
  std::string aux;
  int batch = 0;
  int epochs = 0;
  int max_steps = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string name;
  int workers = -1;
  int checkpoint_every = -1;
  bool resume = false;
};

TrainConfig resolve_config(const PretrainArgs& a) {
  TrainConfig c;
  if (!a.preset.empty()) {
    if (a.preset.size() != 1 || kPresetRows.find(a.preset[0]) == std::string_view::npos)
      throw Error("--preset must be one of " + std::string(kPresetRows));
    c = preset_config(a.preset[0]);
  }
  if (!a.config_file.empty()) c = apply_key_values(c, read_file(a.config_file));
  if (!a.equivariance.empty()) c = apply_key_values(c, "equivariance = " + a.equivariance);
  if (!a.objectives.empty()) {
    bool inst = false, equi = false, aux = false;
    for (const auto& o : split_list(a.objectives)) {
      if (o == "inst") inst = true;
      else if (o == "equi") equi = true;
      else if (o == "aux") aux = true;
      else throw Error("unknown objective '" + o + "' (expected inst, equi, aux)");
    }
    c.weights.inst = inst;
    c.weights.equi = equi;
    c.weights.aux_speed = c.weights.aux_direction = c.weights.aux_overlap = aux;
    c.aux_speed = c.aux_direction = c.aux_overlap = aux;
  }
  if (!a.aux.empty()) c = apply_key_values(c, "aux = " + a.aux);
  if (a.batch) c.batch_size = a.batch;
  if (a.epochs) c.epochs = a.epochs;
  if (a.max_steps >= 0) c.max_steps = a.max_steps;
  if (a.seed_set) c.seed = a.seed;
  if (a.workers >= 0) c.workers = a.workers;
  if (a.checkpoint_every >= 0) c.checkpoint_every = a.checkpoint_every;
  if (!a.name.empty()) c.name = a.name;
  else if (a.name.empty() && a.config_file.empty()) c.name += "_s" + std::to_string(c.seed);
  if (c.name.empty() || c.name.find('/') != std::string::npos || c.name == "." || c.name == "..")
    throw Error("invalid run name '" + c.name + "'");
  c.validate();
  return c;
}

int cmd_pretrain(const PretrainArgs& a) {
  // everything is validated before the run directory is created
  const TrainConfig config = resolve_config(a);
  require_file(a.data, "dataset");
  const Dataset data = load_dataset(a.data);
  { Trainer probe(config, data); }
  const fs::path dir = runs_root() / config.name;
  if (!a.resume && fs::exists(dir)) {
    throw Error("run directory exists: " + dir.string() + " (use --resume or another --name)");
  }
  if (a.resume) {
    if (!fs::exists(dir / "manifest.json")) throw Error("nothing to resume in " + dir.string());
    const RunManifest m = read_manifest(dir);
    if (m.config_hash != content_hash(to_key_values(config)))
      throw Error("configuration differs from the manifest of " + dir.string());
  }

  RunManifest manifest = a.resume ? read_manifest(dir) : make_manifest(config, a.data);
  if (!a.resume) write_manifest(manifest, dir);
  std::cout << "run " << config.name << " (" << manifest.config_hash.substr(0, 12) << ") -> " << dir
            << "\n";
  try {
    const auto outcome = run_training(config, data, dir, a.resume, [](const StepRecord& r) {
      if (r.step % 50 == 0) {
        std::cout << "step " << r.step << " lr " << r.lr << " loss " << r.loss.total << "\n";
      }
    });
    manifest.finished = make_manifest(config, a.data).created;
    write_manifest(manifest, dir);
    std::cout << "done: " << outcome.steps << " steps, final loss " << outcome.last.loss.total
              << ", checkpoint " << outcome.checkpoint << "\n";
  } catch (const TrainingDiverged& e) {
    write_text(dir / "divergence.txt", e.dump);
    std::cerr << "error: " << e.what() << " (batch dump in " << (dir / "divergence.txt") << ")\n";
    return 1;
  }
  return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string train;
  std::string test;
  std::string out;
  int temporal_crops = 4;
  int spatial_crops = 1;
  int probes = 512;
  std::uint64_t seed = 0;
  bool random_init = false;
};

fs::path resolve_checkpoint(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) {
    const fs::path latest = latest_checkpoint(p);
    if (latest.empty()) throw Error("no checkpoint in " + p.string());
    return latest;
  }
  require_file(p, "checkpoint");
  return p;
}

json evaluate(Encoder<float>& encoder, const TrainConfig& config, const Dataset& train,
              const Dataset& test, const EvalArgs& a, FeatureBank* train_out, FeatureBank* test_out) {
  CropConfig crops;
  crops.temporal_crops = a.temporal_crops;
  crops.spatial_crops = a.spatial_crops;
  FeatureBank tr = extract_features(encoder, train, crops);
  FeatureBank te = extract_features(encoder, test, crops, &tr.stats);
  const std::vector<int> ks{1, 5, 10, 20};
  const auto recall = retrieval_recall(te, tr, ks);
  json j;
  for (std::size_t i = 0; i < ks.size(); ++i) j["R@" + std::to_string(ks[i])] = recall[i];
  j["nn_accuracy"] = nn_classify(tr, te);
  j["linear_probe"] = linear_probe(tr, te);
  const auto d = equivariance_diagnostic(encoder, test, a.probes, config, a.seed);
  j["equivariance_match"] = d.match_accuracy;
  j["equivariance_chance"] = d.chance;
  j["speed_accuracy"] = d.speed_accuracy;
  j["direction_accuracy"] = d.direction_accuracy;
  j["overlap_accuracy"] = d.overlap_accuracy;
  if (train_out) *train_out = std::move(tr);
  if (test_out) *test_out = std::move(te);
  return j;
}

std::vector<Series> loss_series(const fs::path& metrics) {
  std::vector<Series> s{{"total", {}, {}}, {"equi", {}, {}}, {"inst", {}, {}}, {"aux (sum)", {}, {}}};
  std::ifstream in(metrics);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json r = json::parse(line);
    const double step = r.at("step").get<double>();
    const double aux = r.at("aux_speed").get<double>() + r.at("aux_direction").get<double>() +
                       r.at("aux_overlap").get<double>();
    const double vals[] = {r.at("loss").get<double>(), r.at("equi").get<double>(),
                           r.at("inst").get<double>(), aux};
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k].x.push_back(step);
      s[k].y.push_back(vals[k]);
    }
  }
  return s;
}

int cmd_eval(const EvalArgs& a) {
  const fs::path ckpt = resolve_checkpoint(a.checkpoint);
  require_file(a.train, "training split");
  require_file(a.test, "test split");
  if (a.temporal_crops < 1) throw Error("--temporal-crops must be positive");
  if (a.spatial_crops != 1 && a.spatial_crops != 5) throw Error("--spatial-crops must be 1 or 5");
  if (a.probes < 2 || a.probes % 2 != 0) throw Error("--probes must be an even number >= 2");

  const ArrayArchive archive = ArrayArchive::load(ckpt);
  const TrainConfig config = checkpoint_config(archive);
  Encoder<float> encoder = a.random_init ? Encoder<float>(config.encoder) : load_encoder(archive);
  if (a.random_init) encoder.init(a.seed);
  const Dataset train = load_dataset(a.train);
  const Dataset test = load_dataset(a.test);
  const fs::path out = a.out.empty() ? ckpt.parent_path() / (a.random_init ? "eval_random" : "eval")
                                     : fs::path(a.out);

  FeatureBank tr, te;
  json j = evaluate(encoder, config, train, test, a, &tr, &te);
  j["checkpoint"] = ckpt.string();
  j["random_init"] = a.random_init;
  fs::create_directories(out);
  write_text(out / "eval.json", j.dump(2) + "\n");
  save_bank(tr, out / "train_features.tqa");
  save_bank(te, out / "test_features.tqa");
  write_text(out / "recall.svg",
             bar_chart_svg("Retrieval R@k (test -> train)", {"R@1", "R@5", "R@10", "R@20"},
                           {j["R@1"], j["R@5"], j["R@10"], j["R@20"]}));
  const fs::path metrics = ckpt.parent_path() / "metrics.jsonl";
  if (fs::exists(metrics)) {
    write_text(out / "loss.svg", line_chart_svg("Training losses", "step", "loss", loss_series(metrics)));
  }

  std::cout << "metric                value\n";
  for (const char* k : {"R@1", "R@5", "R@10", "R@20", "nn_accuracy", "linear_probe",
                        "equivariance_match", "equivariance_chance", "speed_accuracy",
                        "direction_accuracy", "overlap_accuracy"}) {
    std::cout << std::left << std::setw(22) << k << pct(j[k].get<double>()) << "%\n";
  }
  std::cout << "outputs in " << out << "\n";
  return 0;
}

// -------------------------------------------------------------- sweep-batch

struct SweepArgs {
  std::string data;
  std::string test;
  std::string batches = "8,16,32,64";
  std::string config_file;
  int epochs = 10;
  int max_steps = 0;
  std::uint64_t seed = 0;
  std::string name = "sweep_batch";
  int workers = 0;
};

int cmd_sweep_batch(const SweepArgs& a) {
  std::vector<int> batches;
  for (const auto& b : split_list(a.batches)) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(b, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != b.size()) throw Error("--batches: not an integer: " + b);
    batches.push_back(v);
  }
  if (batches.empty()) throw Error("--batches is empty");
  const std::string overrides = a.config_file.empty() ? "" : read_file(a.config_file);
  require_file(a.data, "dataset");
  require_file(a.test, "test split");
  const fs::path root = runs_root() / a.name;
  if (fs::exists(root)) throw Error("sweep directory exists: " + root.string());

  struct Arm {
    std::string name;
    TrainConfig base;
  };
  std::vector<Arm> arms{{"equivariant", preset_config('k')}, {"distinctiveness", distinctiveness_config()}};
  std::vector<TrainConfig> configs;
  for (const auto& arm : arms) {
    for (int b : batches) {
      TrainConfig c = apply_key_values(arm.base, overrides);
      c.batch_size = b;
      c.epochs = a.epochs;
      c.max_steps = a.max_steps;
      c.seed = a.seed;
      c.workers = a.workers;
      c.name = arm.name + "_b" + std::to_string(b);
      c.validate();
      configs.push_back(c);
    }
  }
  const Dataset train = load_dataset(a.data);
  const Dataset test = load_dataset(a.test);
  for (const auto& c : configs) Trainer probe(c, train);

  json rows = json::array();
  std::vector<Series> curves{{arms[0].name, {}, {}}, {arms[1].name, {}, {}}};
  std::cout << "arm               batch  final_loss  1-NN\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const fs::path dir = root / c.name;
    RunManifest m = make_manifest(c, a.data);
    write_manifest(m, dir);
    json row{{"arm", arms[i / batches.size()].name}, {"batch", c.batch_size}};
    try {
      const auto outcome = run_training(c, train, dir);
      Encoder<float> enc = load_encoder(ArrayArchive::load(outcome.checkpoint));
      CropConfig crops;
      FeatureBank tr = extract_features(enc, train, crops);
      FeatureBank te = extract_features(enc, test, crops, &tr.stats);
      row["final_loss"] = outcome.last.loss.total;
      row["finite"] = true;
      row["nn_accuracy"] = nn_classify(tr, te);
    } catch (const TrainingDiverged& e) {
      write_text(dir / "divergence.txt", e.dump);
      row["final_loss"] = nullptr;
      row["finite"] = false;
      row["nn_accuracy"] = nullptr;
    }
    m.finished = make_manifest(c, a.data).created;
    write_manifest(m, dir);
    rows.push_back(row);
    std::cout << std::left << std::setw(18) << row["arm"].get<std::string>() << std::setw(7)
              << c.batch_size << std::setw(12)
              << (row["finite"].get<bool>() ? std::to_string(row["final_loss"].get<double>()) : "nan")
              << (row["finite"].get<bool>() ? pct(row["nn_accuracy"].get<double>()) + "%" : "-")
              << "\n";
    auto& curve = curves[i / batches.size()];
    curve.x.push_back(c.batch_size);
    curve.y.push_back(row["finite"].get<bool>() ? row["nn_accuracy"].get<double>() * 100 : NAN);
  }
  std::ofstream out(root / "sweep.jsonl", std::ios::binary);
  for (const auto& r : rows) out << r.dump() << "\n";
  write_text(root / "sweep.svg", line_chart_svg("1-NN accuracy vs batch size", "videos per batch",
                                                "1-NN accuracy (%)", curves, true));
  std::cout << "outputs in " << root << "\n";
  return 0;
}

// ------------------------------------------------------------------ presets

int cmd_presets(const std::string& out) {
  if (out.empty()) {
    for (char r : kPresetRows) std::cout << r << "  " << preset_description(r) << "\n";
    return 0;
  }
  for (char r : kPresetRows) {
    write_text(fs::path(out) / (std::string("preset_") + r + ".conf"),
               "# " + preset_description(r) + "\n" + to_key_values(preset_config(r)));
  }
  std::cout << "wrote " << kPresetRows.size() << " presets to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-equivariant contrastive video representation learning"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render a synthetic motion dataset to an FVC file");
  g->add_option("--classes", gen.classes, "Number of motion classes")->capture_default_str();
  g->add_option("--per-class", gen.per_class, "Videos per class")->capture_default_str();
  g->add_option("--frames", gen.frames, "Frames per video")->capture_default_str();
  g->add_option("--size", gen.size, "Frame height and width")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output .fvc path")->required();

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Self-supervised pretraining");
  p->add_option("--data", pre.data, "Training split (.fvc)")->required();
  auto* preset = p->add_option("--preset", pre.preset, "Ablation preset a..o");
  p->add_option("--config", pre.config_file, "key = value configuration file");
  p->add_option("--equivariance", pre.equivariance, "temporal|spatial|both|none");
  auto* objectives = p->add_option("--objectives", pre.objectives, "Subset of inst,equi,aux");
  p->add_option("--aux", pre.aux, "Auxiliary heads: subset of speed,rev,order or none");
  p->add_option("--batch", pre.batch, "Videos per batch");
  p->add_option("--epochs", pre.epochs, "Training epochs");
  p->add_option("--max-steps", pre.max_steps, "Step budget (overrides epochs)");
  auto* seed = p->add_option("--seed", pre.seed, "Run seed");
  p->add_option("--name", pre.name, "Run name (directory under the runs root)");
  p->add_option("--workers", pre.workers, "Data preparation threads");
  p->add_option("--checkpoint-every", pre.checkpoint_every, "Checkpoint interval in steps");
  p->add_flag("--resume", pre.resume, "Continue from the newest checkpoint");
  preset->excludes(objectives);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate frozen features of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file or run directory")->required();
  e->add_option("--train", ev.train, "Training split (.fvc)")->required();
  e->add_option("--test", ev.test, "Test split (.fvc)")->required();
  e->add_option("--out", ev.out, "Output directory");
  e->add_option("--temporal-crops", ev.temporal_crops, "Temporal crops per video")->capture_default_str();
  e->add_option("--spatial-crops", ev.spatial_crops, "Spatial crops per clip (1 or 5)")->capture_default_str();
  e->add_option("--probes", ev.probes, "Codes (two per couple) for the equivariance diagnostic")->capture_default_str();
  e->add_option("--seed", ev.seed, "Diagnostic / random-init seed")->capture_default_str();
  e->add_flag("--random-init", ev.random_init, "Evaluate freshly initialised weights instead");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep-batch", "Batch-size sweep of both comparison arms");
  s->add_option("--data", sw.data, "Training split (.fvc)")->required();
  s->add_option("--test", sw.test, "Test split (.fvc)")->required();
  s->add_option("--batches", sw.batches, "Comma-separated batch sizes")->capture_default_str();
  s->add_option("--config", sw.config_file, "key = value overrides applied to both arms");
  s->add_option("--epochs", sw.epochs, "Epochs per run")->capture_default_str();
  s->add_option("--max-steps", sw.max_steps, "Step budget per run (overrides epochs)");
  s->add_option("--seed", sw.seed, "Seed")->capture_default_str();
  s->add_option("--name", sw.name, "Sweep directory name")->capture_default_str();
  s->add_option("--workers", sw.workers, "Data preparation threads");

  std::string presets_out;
  auto* ps = app.add_subcommand("presets", "List presets or write them as configuration files");
  ps->add_option("--out", presets_out, "Directory for preset_<row>.conf files");

  CLI11_PARSE(app, argc, argv);
  pre.seed_set = seed->count() > 0;

  try {
    if (*g) return cmd_generate(gen);
    if (*p) return cmd_pretrain(pre);
    if (*e) return cmd_eval(ev);
    if (*s) return cmd_sweep_batch(sw);
    if (*ps) return cmd_presets(presets_out);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
