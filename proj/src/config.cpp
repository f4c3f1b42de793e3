#include "semcom/config.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "semcom/errors.hpp"

namespace semcom {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename T>
void read(const json& doc, const char* name, T& out) {
  if (!doc.contains(name)) return;
  try {
    out = doc.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + name + "': " + e.what());
  }
}

void read_widths(const json& doc, const char* name, std::optional<std::vector<std::size_t>>& out) {
  if (!doc.contains(name) || doc.at(name).is_null()) return;
  std::vector<std::size_t> v;
  read(doc, name, v);
  out = std::move(v);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "variant", "K", "encoder_widths", "fusion_widths", "decoder_widths", "allow_small_k",
      "channel", "fading", "train_snr_db", "train_snr_min_db", "train_snr_max_db", "eval_snr_db",
      "eval_trials", "epoch_eval_trials", "alpha", "learning_rate", "batch_size", "epochs",
      "checkpoint_interval", "data_path", "classes", "d_hsi", "d_lidar", "synth_per_class",
      "synth_separation", "synth_correlation", "train_fraction", "stratified", "seed",
      "output_dir", "beta"};
  return keys;
}

}  // namespace

ModelSpec RunConfig::model_spec(std::size_t d_hsi, std::size_t d_lidar, std::size_t classes) const {
  ModelSpec spec = ModelSpec::defaults(variant, symbols);
  spec.d_hsi = d_hsi;
  spec.d_lidar = d_lidar;
  spec.classes = classes;
  if (encoder_widths) spec.encoder_widths = *encoder_widths;
  if (fusion_widths) spec.fusion_widths = *fusion_widths;
  if (decoder_widths) spec.decoder_widths = *decoder_widths;
  return spec;
}

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch normalization)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (eval_trials < 1 || epoch_eval_trials < 1) throw ConfigError("trial counts must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!train_snr.fixed_db && train_snr.min_db > train_snr.max_db) {
    throw ConfigError("train_snr_min_db exceeds train_snr_max_db");
  }
  loss_weights.validate();
  const std::size_t classes = synth.classes;
  if (data_path.empty()) {
    model_spec(synth.d_hsi, synth.d_lidar, classes).validate();
    if (!allow_small_k && symbols < classes) {
      throw ConfigError("K=" + std::to_string(symbols) + " is below the class count " +
                        std::to_string(classes) + " (set allow_small_k to override)");
    }
  } else if (!std::filesystem::exists(data_path)) {
    throw DataError("dataset file '" + data_path + "' does not exist");
  }
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a flat JSON object");
  for (const auto& [k, v] : doc.items()) {
    if (!known_keys().contains(k)) throw ConfigError("unknown config key '" + k + "'");
    if (v.is_object()) throw ConfigError("config key '" + k + "' must not be nested");
  }

  RunConfig c;
  std::string s;
  if (doc.contains("variant")) {
    read(doc, "variant", s);
    c.variant = parse_variant(s);
  }
  read(doc, "K", c.symbols);
  read_widths(doc, "encoder_widths", c.encoder_widths);
  read_widths(doc, "fusion_widths", c.fusion_widths);
  read_widths(doc, "decoder_widths", c.decoder_widths);
  read(doc, "allow_small_k", c.allow_small_k);
  if (doc.contains("channel")) {
    read(doc, "channel", s);
    c.channel = parse_channel_kind(s);
  }
  if (doc.contains("fading")) {
    read(doc, "fading", s);
    c.fading = parse_granularity(s);
  }
  if (doc.contains("train_snr_db") && !doc.at("train_snr_db").is_null()) {
    double v = 0.0;
    read(doc, "train_snr_db", v);
    c.train_snr.fixed_db = v;
  }
  read(doc, "train_snr_min_db", c.train_snr.min_db);
  read(doc, "train_snr_max_db", c.train_snr.max_db);
  read(doc, "eval_snr_db", c.eval_snr_db);
  read(doc, "eval_trials", c.eval_trials);
  read(doc, "epoch_eval_trials", c.epoch_eval_trials);
  read(doc, "alpha", c.loss_weights.alpha);
  read(doc, "learning_rate", c.learning_rate);
  read(doc, "batch_size", c.batch_size);
  read(doc, "epochs", c.epochs);
  read(doc, "checkpoint_interval", c.checkpoint_interval);
  read(doc, "data_path", c.data_path);
  read(doc, "classes", c.synth.classes);
  read(doc, "d_hsi", c.synth.d_hsi);
  read(doc, "d_lidar", c.synth.d_lidar);
  read(doc, "synth_per_class", c.synth.per_class);
  read(doc, "synth_separation", c.synth.separation);
  read(doc, "synth_correlation", c.synth.correlation);
  read(doc, "train_fraction", c.train_fraction);
  read(doc, "stratified", c.stratified);
  read(doc, "seed", c.seed);
  read(doc, "output_dir", c.output_dir);
  read(doc, "beta", c.beta);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string to_json(const RunConfig& c) {
  const ModelSpec spec = c.model_spec(c.synth.d_hsi, c.synth.d_lidar, c.synth.classes);
  ordered_json doc;
  doc["variant"] = to_string(c.variant);
  doc["K"] = c.symbols;
  doc["encoder_widths"] = spec.encoder_widths;
  doc["fusion_widths"] = spec.fusion_widths;
  doc["decoder_widths"] = spec.decoder_widths;
  doc["allow_small_k"] = c.allow_small_k;
  doc["channel"] = to_string(c.channel);
  doc["fading"] = to_string(c.fading);
  doc["train_snr_db"] = c.train_snr.fixed_db ? ordered_json(*c.train_snr.fixed_db) : ordered_json();
  doc["train_snr_min_db"] = c.train_snr.min_db;
  doc["train_snr_max_db"] = c.train_snr.max_db;
  doc["eval_snr_db"] = c.eval_snr_db;
  doc["eval_trials"] = c.eval_trials;
  doc["epoch_eval_trials"] = c.epoch_eval_trials;
  doc["alpha"] = c.loss_weights.alpha;
  doc["learning_rate"] = c.learning_rate;
  doc["batch_size"] = c.batch_size;
  doc["epochs"] = c.epochs;
  doc["checkpoint_interval"] = c.checkpoint_interval;
  doc["data_path"] = c.data_path;
  doc["classes"] = c.synth.classes;
  doc["d_hsi"] = c.synth.d_hsi;
  doc["d_lidar"] = c.synth.d_lidar;
  doc["synth_per_class"] = c.synth.per_class;
  doc["synth_separation"] = c.synth.separation;
  doc["synth_correlation"] = c.synth.correlation;
  doc["train_fraction"] = c.train_fraction;
  doc["stratified"] = c.stratified;
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir;
  doc["beta"] = c.beta;
  return doc.dump(2) + "\n";
}

}  // namespace semcom
