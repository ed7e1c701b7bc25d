#pragma once

#include <string>

#include <json.hpp>

#include "ccstereo/losses.hpp"
#include "ccstereo/model.hpp"

namespace ccs {

struct DataConfig {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  int synth_clips = 64;
  double train_ratio = 0.8;
  double val_ratio = 0.1;  // remainder is the test split
  bool synth_itd = false;
  double clip_duration_s = 10.0;
  int fps = 10;
};

struct OptimConfig {
  double lr_audio = 5e-4;  // everything except the image encoder
  double lr_image = 5e-5;
  int batch_size = 16;
  int epochs = 20;
  int batches_per_epoch = 3;
  uint64_t seed = 7;
  int shuffle_rows = 14;  // negative-view shuffle grid
  int shuffle_cols = 28;
};

struct InferConfig {
  bool tdss = true;
  int batch_size = 8;
  std::string out_dir = "out";
};

// Full run configuration. Parsing is strict: unknown sections or keys fail
// loudly. Environment variables CCS_<SECTION>_<KEY> override file values and
// are parsed by the type of the key they replace.
struct RunConfig {
  DataConfig data;
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  InferConfig infer;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  // Reads the file (or defaults when path is empty), applies environment
  // overrides, validates.
  static RunConfig load(const std::string& path, bool apply_env = true);

  void validate() const;
};

// Exposed for tests: merge CCS_* environment overrides into a config json.
nlohmann::json apply_env_overrides(nlohmann::json merged);

}  // namespace ccs
