#include "ccstereo/config.hpp"

#include <cctype>

#include "ccstereo/data.hpp"
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ccs {

namespace {

nlohmann::json data_to_json(const DataConfig& d) {
  return {{"train_manifest", d.train_manifest},
          {"val_manifest", d.val_manifest},
          {"test_manifest", d.test_manifest},
          {"synth_clips", d.synth_clips},
          {"train_ratio", d.train_ratio},
          {"val_ratio", d.val_ratio},
          {"synth_itd", d.synth_itd},
          {"clip_duration_s", d.clip_duration_s},
          {"fps", d.fps}};
}

nlohmann::json optim_to_json(const OptimConfig& o) {
  return {{"lr_audio", o.lr_audio},
          {"lr_image", o.lr_image},
          {"batch_size", o.batch_size},
          {"epochs", o.epochs},
          {"batches_per_epoch", o.batches_per_epoch},
          {"seed", o.seed},
          {"shuffle_rows", o.shuffle_rows},
          {"shuffle_cols", o.shuffle_cols}};
}

nlohmann::json infer_to_json(const InferConfig& i) {
  return {{"tdss", i.tdss}, {"batch_size", i.batch_size}, {"out_dir", i.out_dir}};
}

void reject_unknown(const nlohmann::json& section, const nlohmann::json& reference,
                    const std::string& name) {
  for (auto it = section.begin(); it != section.end(); ++it) {
    if (!reference.contains(it.key()))
      throw std::invalid_argument("config: unknown key \"" + name + "." + it.key() + "\"");
  }
}

template <typename T>
void assign(const nlohmann::json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j[key].get<T>();
}

DataConfig data_from_json(const nlohmann::json& j) {
  DataConfig d;
  reject_unknown(j, data_to_json(d), "data");
  assign(j, "train_manifest", &d.train_manifest);
  assign(j, "val_manifest", &d.val_manifest);
  assign(j, "test_manifest", &d.test_manifest);
  assign(j, "synth_clips", &d.synth_clips);
  assign(j, "train_ratio", &d.train_ratio);
  assign(j, "val_ratio", &d.val_ratio);
  assign(j, "synth_itd", &d.synth_itd);
  assign(j, "clip_duration_s", &d.clip_duration_s);
  assign(j, "fps", &d.fps);
  return d;
}

OptimConfig optim_from_json(const nlohmann::json& j) {
  OptimConfig o;
  reject_unknown(j, optim_to_json(o), "optim");
  assign(j, "lr_audio", &o.lr_audio);
  assign(j, "lr_image", &o.lr_image);
  assign(j, "batch_size", &o.batch_size);
  assign(j, "epochs", &o.epochs);
  assign(j, "batches_per_epoch", &o.batches_per_epoch);
  assign(j, "seed", &o.seed);
  assign(j, "shuffle_rows", &o.shuffle_rows);
  assign(j, "shuffle_cols", &o.shuffle_cols);
  return o;
}

InferConfig infer_from_json(const nlohmann::json& j) {
  InferConfig i;
  reject_unknown(j, infer_to_json(i), "infer");
  assign(j, "tdss", &i.tdss);
  assign(j, "batch_size", &i.batch_size);
  assign(j, "out_dir", &i.out_dir);
  return i;
}

// Parses an environment string by the JSON type it replaces.
nlohmann::json parse_env_value(const std::string& raw, const nlohmann::json& current,
                               const std::string& where) {
  try {
    switch (current.type()) {
      case nlohmann::json::value_t::boolean:
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        throw std::invalid_argument("expected a boolean");
      case nlohmann::json::value_t::number_float:
        return std::stod(raw);
      case nlohmann::json::value_t::number_integer:
        return static_cast<int64_t>(std::stoll(raw));
      case nlohmann::json::value_t::number_unsigned:
        return static_cast<uint64_t>(std::stoull(raw));
      case nlohmann::json::value_t::string:
        return raw;
      case nlohmann::json::value_t::array: {
        // Comma-separated integer list (channel stacks).
        std::vector<int> values;
        std::stringstream ss(raw);
        std::string item;
        while (std::getline(ss, item, ',')) values.push_back(std::stoi(item));
        return values;
      }
      default:
        throw std::invalid_argument("unsupported value type");
    }
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: bad override " + where + "=" + raw + ": " + e.what());
  }
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  return {{"data", data_to_json(data)},
          {"model", model.to_json()},
          {"loss", loss.to_json()},
          {"optim", optim_to_json(optim)},
          {"infer", infer_to_json(infer)}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "data" && k != "model" && k != "loss" && k != "optim" && k != "infer")
      throw std::invalid_argument("config: unknown section \"" + k + "\"");
  }
  RunConfig cfg;
  if (j.contains("data")) cfg.data = data_from_json(j["data"]);
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j["model"]);
  if (j.contains("loss")) cfg.loss = LossConfig::from_json(j["loss"]);
  if (j.contains("optim")) cfg.optim = optim_from_json(j["optim"]);
  if (j.contains("infer")) cfg.infer = infer_from_json(j["infer"]);
  cfg.validate();
  return cfg;
}

nlohmann::json apply_env_overrides(nlohmann::json merged) {
  for (auto section = merged.begin(); section != merged.end(); ++section) {
    std::string sec_upper = section.key();
    for (auto& c : sec_upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (auto entry = section.value().begin(); entry != section.value().end(); ++entry) {
      std::string key_upper = entry.key();
      for (auto& c : key_upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      const std::string var = "CCS_" + sec_upper + "_" + key_upper;
      if (const char* raw = std::getenv(var.c_str()))
        entry.value() = parse_env_value(raw, entry.value(), var);
    }
  }
  return merged;
}

RunConfig RunConfig::load(const std::string& path, bool apply_env) {
  nlohmann::json merged = RunConfig{}.to_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      throw std::runtime_error("config: parse error in " + path + ": " + e.what());
    }
    // Unknown sections or keys survive the merge and are rejected by the
    // strict parse of the merged object below.
    for (auto it = file.begin(); it != file.end(); ++it) {
      if (!it.value().is_object())
        throw std::invalid_argument("config: section \"" + it.key() + "\" must be an object");
      for (auto k = it.value().begin(); k != it.value().end(); ++k)
        merged[it.key()][k.key()] = k.value();
    }
  }
  if (apply_env) merged = apply_env_overrides(merged);
  return RunConfig::from_json(merged);
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  model.validate();
  if (data.synth_clips < 0) fail("synth_clips must be non-negative");
  if (data.train_ratio < 0 || data.val_ratio < 0 || data.train_ratio + data.val_ratio > 1.0)
    fail("split ratios must be non-negative and sum to at most 1");
  if (data.clip_duration_s < kSegmentSeconds) fail("clips must be at least one segment long");
  if (data.fps <= 0) fail("fps must be positive");
  if (optim.lr_audio <= 0 || optim.lr_image <= 0) fail("learning rates must be positive");
  if (optim.batch_size < 2) fail("batch_size must be at least 2");
  if (optim.epochs < 0) fail("epochs must be non-negative");
  if (optim.batches_per_epoch < 1) fail("batches_per_epoch must be positive");
  if (optim.shuffle_rows < 1 || optim.shuffle_cols < 1) fail("shuffle grid must be positive");
  if (224 % optim.shuffle_rows != 0 || 448 % optim.shuffle_cols != 0)
    fail("shuffle grid must divide the 224x448 crop");
  if (infer.batch_size < 1) fail("infer batch_size must be positive");
}

}  // namespace ccs
