#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepstamp/config.hpp"
#include "deepstamp/dataio.hpp"

namespace deepstamp::evalharness {

/// A plan is a full config document; `plan` selects the grid, the other
/// sections configure each phase.
using ExperimentPlan = config::Config;

struct Accuracy {
  double clean = 0.0;    // percent on clean validation images
  double stamped = 0.0;  // percent on stamped validation images
};

/// Top-1 accuracies; throws DimensionError on an empty batch or mismatched sizes.
Accuracy evaluate(const NetworkParams& classifier, const ImageBatch& clean, const ImageBatch& stamped);

struct ResultCell {
  std::string architecture;
  std::optional<double> blend;  // empty for the clean baseline
  std::string scheme;           // clean, static, opacity, displacement, learned
  double acc_clean = 0.0;
  double acc_stamped = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
};

struct ResultTable {
  std::vector<ResultCell> cells;

  const ResultCell* find(std::string_view arch, std::string_view scheme,
                         std::optional<double> blend) const;
  std::string to_json() const;
  static ResultTable from_json(std::string_view text);
};

struct RenderedReport {
  std::string markdown;
  std::string csv;
  std::string deltas_json;
};

/// Table-shaped grid (rows: architecture x blend, columns: baseline and the
/// four schemes) with published reference numbers alongside, plus deltas to
/// the clean baseline. An empty table yields header-only files.
RenderedReport render_report(const ResultTable& table);

/// Writes reports/table.md, reports/table.csv and reports/deltas.json under `dir`.
void write_report(const ResultTable& table, const std::filesystem::path& dir);

/// Train/validation images with where they came from.
struct Splits {
  ImageBatch train;
  ImageBatch val;
  std::string train_source;
  std::string val_source;
  std::vector<std::size_t> train_indices;  // positions in the train source
};

/// CIFAR: a seeded subset of data_batch_1..5 and the head of test_batch.
/// Synthetic: two independently seeded shape sets.
Splits load_splits(const config::DataConfig& data);

/// Throws SpecError when the splits share a source record; returns the number
/// of byte-identical images shared between them (reported, not fatal).
std::size_t assert_disjoint(const Splits& splits);

struct RunOptions {
  /// Skip phases the manifest records as done.
  bool resume = true;
  /// Stop (successfully) after this phase; used to exercise resumption.
  std::optional<std::string> stop_after;
  std::function<void(const std::string&)> log;
};

/// Runs every phase of the plan under plan.plan.output_dir: data, watermark,
/// classifier, stampers, stamped datasets, F' per (architecture, scheme,
/// blend), report. Every phase's outcome goes to manifest.json (atomic
/// rename); failures are recorded and rethrown.
ResultTable run_plan(const ExperimentPlan& plan, const RunOptions& options = {});

/// Directory name for a stamped dataset, e.g. "static-0.5".
std::string cell_name(std::string_view scheme, double blend);

}  // namespace deepstamp::evalharness
