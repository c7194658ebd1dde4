#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "teq/trainloop.hpp"

namespace teq {

void TrainConfig::validate() const {
  encoder.validate();
  if (batch_size < 4 || batch_size % 2 != 0) throw Error("batch size must be even and >= 4");
  if (epochs < 1 && max_steps < 1) throw Error("training needs epochs or max_steps");
  if (temporal.speed_exponents.empty()) throw Error("at least one speed must be allowed");
  for (int k : temporal.speed_exponents)
    if (k < 0 || k >= kNumSpeedClasses) throw Error("speed exponent out of range");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) throw Error("invalid optimiser settings");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw Error("invalid warmup fraction");
  for (double w : {weights.equi, weights.inst, weights.aux_speed, weights.aux_direction,
                   weights.aux_overlap}) {
    if (!(w >= 0.0)) throw Error("loss weights must be non-negative");
  }
  if (distinctiveness && weights.equi > 0.0) {
    throw Error("distinctiveness baseline has no equivariance pathway");
  }
  if (workers < 0 || collision_retries < 0) throw Error("invalid worker or retry count");
}

namespace {

void set_objectives(TrainConfig& c, bool inst, bool equi, bool aux) {
  c.weights.inst = inst ? 1.0 : 0.0;
  c.weights.equi = equi ? 1.0 : 0.0;
  const double a = aux ? 1.0 : 0.0;
  c.weights.aux_speed = c.weights.aux_direction = c.weights.aux_overlap = a;
  c.aux_speed = c.aux_direction = c.aux_overlap = aux;
}

}  // namespace

TrainConfig preset_config(char row) {
  TrainConfig c;
  c.name = std::string("preset_") + row;
  switch (row) {
    case 'a':  // no equivariance: everything is an invariance
      c.equivariant_temporal = false;
      set_objectives(c, true, false, false);
      break;
    case 'b':  // spatial equivariance only
      c.equivariant_temporal = false;
      c.equivariant_spatial = true;
      set_objectives(c, true, true, false);
      break;
    case 'c':
      c.equivariant_spatial = true;
      set_objectives(c, true, true, true);
      break;
    case 'd': set_objectives(c, true, true, true); break;
    case 'e': set_objectives(c, true, false, false); break;
    case 'f': set_objectives(c, false, true, false); break;
    case 'g': set_objectives(c, false, false, true); break;
    case 'h': set_objectives(c, true, true, false); break;
    case 'i': set_objectives(c, true, false, true); break;
    case 'j': set_objectives(c, false, true, true); break;
    case 'k': set_objectives(c, true, true, true); break;
    case 'l':
      set_objectives(c, true, true, true);
      c.temporal.allow_reverse = false;
      c.aux_direction = false;
      c.aux_overlap = false;
      break;
    case 'm':
      set_objectives(c, true, true, true);
      c.temporal.allow_reverse = false;
      c.aux_direction = false;
      break;
    case 'n':
      set_objectives(c, true, true, true);
      c.aux_overlap = false;
      break;
    case 'o': set_objectives(c, true, true, true); break;
    default: throw Error(std::string("unknown preset '") + row + "'");
  }
  return c;
}

TrainConfig distinctiveness_config() {
  TrainConfig c;
  c.name = "distinctiveness";
  c.distinctiveness = true;
  set_objectives(c, true, false, false);
  return c;
}

std::string preset_description(char row) {
  static const std::map<char, std::string> d{
      {'a', "no equivariance"},
      {'b', "spatial equivariance only"},
      {'c', "spatial + temporal equivariance"},
      {'d', "temporal equivariance only"},
      {'e', "L_inst"},
      {'f', "L_equi"},
      {'g', "L_aux"},
      {'h', "L_inst + L_equi"},
      {'i', "L_inst + L_aux"},
      {'j', "L_equi + L_aux"},
      {'k', "L_inst + L_equi + L_aux"},
      {'l', "aux = speed"},
      {'m', "aux = speed + order"},
      {'n', "aux = speed + rev"},
      {'o', "aux = speed + rev + order"},
  };
  auto it = d.find(row);
  if (it == d.end()) throw Error(std::string("unknown preset '") + row + "'");
  return it->second;
}

// ------------------------------------------------------------ key = value

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw Error("config key '" + key + "': not a number: " + v);
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw Error("config key '" + key + "': not an integer: " + v);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config key '" + key + "': not a boolean: " + v);
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back(static_cast<int>(parse_int(key, s)));
  return out;
}

std::map<std::string, std::string> parse_lines(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string equivariance_name(const TrainConfig& c) {
  if (c.equivariant_temporal && c.equivariant_spatial) return "both";
  if (c.equivariant_temporal) return "temporal";
  if (c.equivariant_spatial) return "spatial";
  return "none";
}

std::string aux_names(const TrainConfig& c) {
  std::vector<std::string> v;
  if (c.aux_speed) v.push_back("speed");
  if (c.aux_direction) v.push_back("rev");
  if (c.aux_overlap) v.push_back("order");
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

std::string encoder_to_key_values(const EncoderConfig& e) {
  std::ostringstream o;
  o << "clip_len = " << e.clip_len << "\n"
    << "resolution = " << e.resolution << "\n"
    << "channels = " << e.channels << "\n"
    << "widths = " << join_ints(e.widths) << "\n"
    << "dim = " << e.dim << "\n";
  return o.str();
}

EncoderConfig encoder_from_key_values(const std::string& text) {
  TrainConfig c = apply_key_values(TrainConfig{}, text);
  return c.encoder;
}

std::string to_key_values(const TrainConfig& c) {
  std::ostringstream o;
  o << "name = " << c.name << "\n"
    << "seed = " << c.seed << "\n"
    << "equivariance = " << equivariance_name(c) << "\n"
    << "weight_equi = " << fmt_double(c.weights.equi) << "\n"
    << "weight_inst = " << fmt_double(c.weights.inst) << "\n"
    << "weight_aux_speed = " << fmt_double(c.weights.aux_speed) << "\n"
    << "weight_aux_direction = " << fmt_double(c.weights.aux_direction) << "\n"
    << "weight_aux_overlap = " << fmt_double(c.weights.aux_overlap) << "\n"
    << "aux = " << aux_names(c) << "\n"
    << "distinctiveness = " << fmt_bool(c.distinctiveness) << "\n"
    << "speeds = " << join_ints(c.temporal.speed_exponents) << "\n"
    << "reverse = " << fmt_bool(c.temporal.allow_reverse) << "\n"
    << "crop_min_scale = " << fmt_double(c.spatial.min_crop_scale) << "\n"
    << "crop_max_scale = " << fmt_double(c.spatial.max_crop_scale) << "\n"
    << "flip = " << fmt_bool(c.spatial.allow_flip) << "\n"
    << "color_jitter = " << fmt_bool(c.spatial.allow_color) << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "epochs = " << c.epochs << "\n"
    << "max_steps = " << c.max_steps << "\n"
    << "base_lr = " << fmt_double(c.base_lr) << "\n"
    << "warmup_fraction = " << fmt_double(c.warmup_fraction) << "\n"
    << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
    << "grad_clip = " << fmt_double(c.grad_clip) << "\n"
    << "temperature = " << fmt_double(c.temperature) << "\n"
    << "collision_retries = " << c.collision_retries << "\n"
    << "workers = " << c.workers << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n"
    << encoder_to_key_values(c.encoder);
  return o.str();
}

TrainConfig apply_key_values(TrainConfig c, const std::string& text) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"name", [&](auto&, auto& v) { c.name = v; }},
      {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"equivariance",
       [&](auto& k, auto& v) {
         if (v == "none") c.equivariant_temporal = c.equivariant_spatial = false;
         else if (v == "temporal") c.equivariant_temporal = true, c.equivariant_spatial = false;
         else if (v == "spatial") c.equivariant_temporal = false, c.equivariant_spatial = true;
         else if (v == "both") c.equivariant_temporal = c.equivariant_spatial = true;
         else throw Error("config key '" + k + "': expected none|temporal|spatial|both");
       }},
      {"weight_equi", [&](auto& k, auto& v) { c.weights.equi = parse_double(k, v); }},
      {"weight_inst", [&](auto& k, auto& v) { c.weights.inst = parse_double(k, v); }},
      {"weight_aux_speed", [&](auto& k, auto& v) { c.weights.aux_speed = parse_double(k, v); }},
      {"weight_aux_direction",
       [&](auto& k, auto& v) { c.weights.aux_direction = parse_double(k, v); }},
      {"weight_aux_overlap",
       [&](auto& k, auto& v) { c.weights.aux_overlap = parse_double(k, v); }},
      {"aux",
       [&](auto& k, auto& v) {
         c.aux_speed = c.aux_direction = c.aux_overlap = false;
         if (v == "none") return;
         for (const auto& item : split_list(v)) {
           if (item == "speed") c.aux_speed = true;
           else if (item == "rev" || item == "direction") c.aux_direction = true;
           else if (item == "order" || item == "overlap") c.aux_overlap = true;
           else throw Error("config key '" + k + "': unknown auxiliary task " + item);
         }
       }},
      {"distinctiveness", [&](auto& k, auto& v) { c.distinctiveness = parse_bool(k, v); }},
      {"speeds", [&](auto& k, auto& v) { c.temporal.speed_exponents = parse_ints(k, v); }},
      {"reverse", [&](auto& k, auto& v) { c.temporal.allow_reverse = parse_bool(k, v); }},
      {"crop_min_scale", [&](auto& k, auto& v) { c.spatial.min_crop_scale = parse_double(k, v); }},
      {"crop_max_scale", [&](auto& k, auto& v) { c.spatial.max_crop_scale = parse_double(k, v); }},
      {"flip", [&](auto& k, auto& v) { c.spatial.allow_flip = parse_bool(k, v); }},
      {"color_jitter", [&](auto& k, auto& v) { c.spatial.allow_color = parse_bool(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = static_cast<int>(parse_int(k, v)); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = static_cast<int>(parse_int(k, v)); }},
      {"max_steps", [&](auto& k, auto& v) { c.max_steps = static_cast<int>(parse_int(k, v)); }},
      {"base_lr", [&](auto& k, auto& v) { c.base_lr = parse_double(k, v); }},
      {"warmup_fraction", [&](auto& k, auto& v) { c.warmup_fraction = parse_double(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { c.weight_decay = parse_double(k, v); }},
      {"grad_clip", [&](auto& k, auto& v) { c.grad_clip = parse_double(k, v); }},
      {"temperature", [&](auto& k, auto& v) { c.temperature = parse_double(k, v); }},
      {"collision_retries",
       [&](auto& k, auto& v) { c.collision_retries = static_cast<int>(parse_int(k, v)); }},
      {"workers", [&](auto& k, auto& v) { c.workers = static_cast<int>(parse_int(k, v)); }},
      {"checkpoint_every",
       [&](auto& k, auto& v) { c.checkpoint_every = static_cast<int>(parse_int(k, v)); }},
      {"clip_len", [&](auto& k, auto& v) { c.encoder.clip_len = static_cast<int>(parse_int(k, v)); }},
      {"resolution",
       [&](auto& k, auto& v) { c.encoder.resolution = static_cast<int>(parse_int(k, v)); }},
      {"channels", [&](auto& k, auto& v) { c.encoder.channels = static_cast<int>(parse_int(k, v)); }},
      {"widths", [&](auto& k, auto& v) { c.encoder.widths = parse_ints(k, v); }},
      {"dim", [&](auto& k, auto& v) { c.encoder.dim = static_cast<int>(parse_int(k, v)); }},
  };
  for (const auto& [key, value] : parse_lines(text)) {
    auto it = setters.find(key);
    if (it == setters.end()) throw Error("unknown config key '" + key + "'");
    it->second(key, value);
  }
  return c;
}

}  // namespace teq
