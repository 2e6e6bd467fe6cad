#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deepstamp/stamping.hpp"
#include "deepstamp/training.hpp"

namespace deepstamp::config {

enum class DataSource { cifar, synthetic };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  std::string dir;                 // CIFAR binaries (cifar) or cache directory (synthetic)
  std::size_t train_subset = 5000;
  std::size_t val_size = 10000;
  std::uint64_t seed = 0;
};

struct WatermarkConfig {
  std::string path;  // PNG or RawTensorFile; empty selects the built-in logo
};

struct StampConfig {
  double blend = 0.5;
  std::optional<OpacityRange> opacity_range;
  DisplacementRange displacement_range;
  std::uint64_t seed = 0;

  StampSpec spec(StampScheme scheme, double beta) const;
};

struct NetsConfig {
  std::string classifier{"F-small"};
  std::string discriminator{"D"};
  std::string autoencoder{"V"};
  std::size_t n_discriminators = 1;
};

struct TrainConfig {
  training::ClassifierTrainConfig classifier;
  training::StamperTrainConfig stamper;
  training::ClassifierTrainConfig stamped_classifier;  // F'
  double mix_ratio = 0.0;  // fraction of clean images mixed into F' training
};

struct PlanConfig {
  std::vector<std::string> schemes{"clean", "static", "opacity", "displacement", "learned"};
  std::vector<double> blends{0.5, 1.0};
  std::vector<std::string> classifiers{"F-small"};  // F' architectures
  std::string output_dir{"runs/desk"};
  bool robustness_probe = true;
};

/// The whole document: {seed, data, watermark, stamp, nets, train, plan}.
/// After load every seed is explicit.
struct Config {
  std::uint64_t seed = 0;
  DataConfig data;
  WatermarkConfig watermark;
  StampConfig stamp;
  NetsConfig nets;
  TrainConfig train;
  PlanConfig plan;

  void validate() const;
};

/// Strict parse: unknown keys, wrong types and out-of-range values throw
/// ConfigError naming the JSON path. Absent seeds are derived from the master
/// seed and the phase name.
Config parse(std::string_view json_text);
Config load(const std::filesystem::path& path);

/// Fully resolved document (every field, every seed).
std::string to_json(const Config& config);

/// Resolved sub-documents, echoed into run reports.
std::string classifier_json(const training::ClassifierTrainConfig& c);
std::string stamper_json(const training::StamperTrainConfig& c);

}  // namespace deepstamp::config
