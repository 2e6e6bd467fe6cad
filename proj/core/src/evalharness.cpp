#include "deepstamp/evalharness.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <unordered_map>

#include "deepstamp/nets.hpp"
#include "deepstamp/rng.hpp"
#include "deepstamp/robustness.hpp"
#include "deepstamp/stamping.hpp"
#include "deepstamp/synthetic.hpp"
#include "deepstamp/training.hpp"

namespace deepstamp::evalharness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarTrainFiles = 5;
constexpr std::size_t kProbeImages = 1000;

std::string fmt_blend(double b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", b);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_checksum(const fs::path& p) { return dataio::checksum(dataio::read_file(p)); }

/// Phase bookkeeping persisted as manifest.json.
class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
      const auto bytes = dataio::read_file(path_);
      try {
        doc_ = json::parse(bytes.begin(), bytes.end());
      } catch (const json::parse_error& e) {
        throw FormatError("manifest " + path_.string() + " is not valid JSON: " + e.what(), 0);
      }
    }
    if (!doc_.is_object() || !doc_.contains("phases")) doc_ = json{{"phases", json::object()}};
  }

  bool done(const std::string& name) const {
    const auto& p = doc_["phases"];
    return p.contains(name) && p[name].value("status", "") == "done";
  }
  json result(const std::string& name) const { return doc_["phases"][name].value("result", json::object()); }

  void mark_done(const std::string& name, json result) {
    doc_["phases"][name] = json{{"status", "done"}, {"result", std::move(result)}};
    save();
  }
  void mark_failed(const std::string& name, const std::string& kind, const std::string& message) {
    doc_["phases"][name] = json{{"status", "failed"}, {"error", {{"kind", kind}, {"message", message}}}};
    save();
  }

 private:
  void save() const { dataio::write_text_atomic(path_, doc_.dump(2) + "\n"); }

  fs::path path_;
  json doc_;
};

struct StopRequested {};

class Runner {
 public:
  Runner(const ExperimentPlan& plan, const RunOptions& options)
      : plan_(plan), opts_(options), root_(plan.plan.output_dir), manifest_(prepare_root()) {}

  ResultTable run();

 private:
  fs::path prepare_root() {
    fs::create_directories(root_);
    for (const char* d : {"checkpoints", "stamped", "reports", "data"}) fs::create_directories(root_ / d);
    const std::string resolved = config::to_json(plan_);
    const fs::path plan_path = root_ / "plan.json";
    if (fs::exists(plan_path) && opts_.resume) {
      // The output directory names where the run lives, not what it computes.
      auto without_dir = [](const std::string& text) {
        auto j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_object() && j.contains("plan") && j["plan"].is_object()) j["plan"].erase("output_dir");
        return j;
      };
      const auto bytes = dataio::read_file(plan_path);
      if (without_dir(std::string(bytes.begin(), bytes.end())) != without_dir(resolved)) {
        throw ConfigError("output directory " + root_.string() + " holds a different plan; use a new directory");
      }
    } else {
      if (!opts_.resume) fs::remove(root_ / "manifest.json");
      dataio::write_text_atomic(plan_path, resolved);
    }
    return root_ / "manifest.json";
  }

  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  json phase(const std::string& name, const std::function<json()>& body) {
    if (opts_.resume && manifest_.done(name)) {
      log("skip " + name + " (done)");
      return manifest_.result(name);
    }
    log("run  " + name);
    json r;
    try {
      r = body();
    } catch (const Error& e) {
      manifest_.mark_failed(name, to_string(e.kind()), e.what());
      throw;
    } catch (const std::exception& e) {
      manifest_.mark_failed(name, "internal", e.what());
      throw;
    }
    manifest_.mark_done(name, r);
    if (opts_.stop_after && *opts_.stop_after == name) throw StopRequested{};
    return r;
  }

  bool has_scheme(std::string_view s) const {
    return std::find(plan_.plan.schemes.begin(), plan_.plan.schemes.end(), s) != plan_.plan.schemes.end();
  }

  const ImageBatch& train() {
    if (!train_) train_ = dataio::load_cifar_batch(root_ / "data" / "train.bin");
    return *train_;
  }
  const ImageBatch& val() {
    if (!val_) val_ = dataio::load_cifar_batch(root_ / "data" / "val.bin");
    return *val_;
  }
  const Watermark& watermark() {
    if (!mark_) mark_ = dataio::load_watermark(root_ / "watermark.png");
    return *mark_;
  }
  fs::path stamper_dir(double beta) const { return root_ / "checkpoints" / ("stamper-" + fmt_blend(beta)); }

  json phase_data();
  json phase_watermark();
  json phase_classifier();
  json phase_stamper(double beta);
  json phase_stamp(StampScheme scheme, double beta);
  json phase_fprime(const std::string& arch, const std::string& scheme, std::optional<double> beta);
  void write_reports(const ResultTable& table);

  const ExperimentPlan& plan_;
  RunOptions opts_;
  fs::path root_;
  Manifest manifest_;
  std::optional<ImageBatch> train_, val_;
  std::optional<Watermark> mark_;
};

json Runner::phase_data() {
  Splits s = load_splits(plan_.data);
  const std::size_t shared = assert_disjoint(s);
  dataio::save_cifar_batch(s.train, root_ / "data" / "train.bin");
  dataio::save_cifar_batch(s.val, root_ / "data" / "val.bin");
  json prov{{"train_source", s.train_source},
            {"val_source", s.val_source},
            {"train_indices", s.train_indices},
            {"identical_images_across_splits", shared}};
  dataio::write_text_atomic(root_ / "data" / "provenance.json", prov.dump(2) + "\n");
  return {{"train_images", s.train.size()},
          {"val_images", s.val.size()},
          {"train_source", s.train_source},
          {"val_source", s.val_source},
          {"identical_images_across_splits", shared},
          {"train_checksum", hex64(file_checksum(root_ / "data" / "train.bin"))},
          {"val_checksum", hex64(file_checksum(root_ / "data" / "val.bin"))}};
}

json Runner::phase_watermark() {
  const Watermark w = plan_.watermark.path.empty() ? synthetic::builtin_logo()
                                                   : dataio::load_watermark(plan_.watermark.path);
  dataio::save_watermark_png(w, root_ / "watermark.png");
  return {{"source", plan_.watermark.path.empty() ? "builtin-logo" : plan_.watermark.path},
          {"checksum", hex64(file_checksum(root_ / "watermark.png"))}};
}

json Runner::phase_classifier() {
  auto cfg = plan_.train.classifier;
  cfg.architecture = plan_.nets.classifier;
  const ImageBatch& v = val();
  auto res = training::train_classifier(train(), cfg, &v);
  res.report.config_json = config::classifier_json(cfg);
  dataio::save_checkpoint(res.params, root_ / "checkpoints" / "F.dsck");
  res.report.write(root_ / "reports" / "classifier");
  return {{"architecture", cfg.architecture},
          {"acc_clean", training::accuracy(res.params, v)},
          {"steps", res.params.metadata.step},
          {"seed", cfg.seed}};
}

json Runner::phase_stamper(double beta) {
  auto cfg = plan_.train.stamper;
  cfg.blend = beta;
  cfg.seed = derive_seed(cfg.seed, "blend-" + fmt_blend(beta));
  const NetworkParams f = dataio::load_checkpoint(root_ / "checkpoints" / "F.dsck");
  const fs::path dir = stamper_dir(beta);
  fs::create_directories(dir);
  auto save = [&](const training::StamperNets& n) {
    dataio::save_checkpoint(n.watermarker, dir / "W.dsck");
    dataio::save_checkpoint(n.autoencoder, dir / "V.dsck");
    for (std::size_t j = 0; j < n.discriminators.size(); ++j) {
      dataio::save_checkpoint(n.discriminators[j], dir / ("D" + std::to_string(j) + ".dsck"));
    }
  };
  auto res = training::train_stamper(training::init_stamper(cfg), f, train(), watermark(), cfg,
                                     [&](std::uint64_t, const training::StamperNets& n) { save(n); });
  save(res.nets);
  res.report.config_json = config::stamper_json(cfg);
  res.report.write(root_ / "reports" / ("stamper-" + fmt_blend(beta)));
  json last = json::object();
  if (!res.report.rows.empty()) {
    const auto& r = res.report.rows.back();
    last = {{"l_f", r.l_f.value_or(0)}, {"l_v", r.l_v.value_or(0)}, {"l_d", r.l_d.value_or(0)},
            {"l_tot", r.l_tot.value_or(0)}, {"d_loss", r.d_loss.value_or(0)}};
  }
  return {{"blend", beta},
          {"steps", cfg.steps},
          {"seed", cfg.seed},
          {"final", last},
          {"W_checksum", hex64(file_checksum(dir / "W.dsck"))}};
}

// Stamps one split and returns the per-image effective watermarks (for the
// randomness metric) alongside the sidecar fields.
struct StampedSplit {
  ImageBatch images;
  std::vector<Watermark> marks;  // empty unless requested
  json sidecar;
};

StampedSplit stamp_split(const ImageBatch& x, const Watermark& w, StampScheme scheme, const StampSpec& spec,
                         const NetworkParams* watermarker, std::size_t keep_marks) {
  StampedSplit out;
  const std::size_t keep = std::min(keep_marks, x.size());
  switch (scheme) {
    case StampScheme::static_mark:
      out.images = stamping::stamp_static(x, w, spec);
      out.marks.assign(keep, w);
      break;
    case StampScheme::opacity: {
      auto r = stamping::stamp_opacity(x, w, spec);
      out.images = std::move(r.images);
      out.sidecar["opacities"] = r.opacities;
      for (std::size_t i = 0; i < keep; ++i) {
        // Effective matte: alpha scaled by opacity / beta.
        Watermark e = w;
        const double s = spec.blend > 0.0 ? r.opacities[i] / spec.blend : 0.0;
        for (auto& a : e.alpha.values()) a = static_cast<float>(std::clamp(a * s, 0.0, 1.0));
        out.marks.push_back(std::move(e));
      }
      break;
    }
    case StampScheme::displacement: {
      auto r = stamping::stamp_displaced(x, w, spec);
      out.images = std::move(r.images);
      json offs = json::array();
      for (const auto& o : r.offsets) offs.push_back({o.dx, o.dy});
      out.sidecar["offsets"] = offs;
      for (std::size_t i = 0; i < keep; ++i) out.marks.push_back(stamping::translate(w, r.offsets[i]));
      break;
    }
    case StampScheme::learned: {
      auto marks = nets::synthesize(*watermarker, x, w);
      out.images = stamping::stamp_learned(x, marks, spec.blend);
      marks.resize(keep);
      out.marks = std::move(marks);
      break;
    }
  }
  out.sidecar["rng_seed"] = spec.rng_seed;
  return out;
}

json Runner::phase_stamp(StampScheme scheme, double beta) {
  const std::string cell = cell_name(to_string(scheme), beta);
  const fs::path dir = root_ / "stamped" / cell;
  fs::create_directories(dir);
  StampSpec spec = plan_.stamp.spec(scheme, beta);
  std::optional<NetworkParams> w_params;
  json sidecar{{"scheme", to_string(scheme)}, {"blend", beta}};
  if (scheme == StampScheme::learned) {
    w_params = dataio::load_checkpoint(stamper_dir(beta) / "W.dsck");
    sidecar["watermarker_checksum"] = hex64(file_checksum(stamper_dir(beta) / "W.dsck"));
  }
  const std::uint64_t base = spec.rng_seed;
  spec.rng_seed = derive_seed(base, "train");
  auto tr = stamp_split(train(), watermark(), scheme, spec, w_params ? &*w_params : nullptr, kProbeImages);
  spec.rng_seed = derive_seed(base, "val");
  auto va = stamp_split(val(), watermark(), scheme, spec, w_params ? &*w_params : nullptr, 0);
  dataio::save_cifar_batch(tr.images, dir / "train.bin");
  dataio::save_cifar_batch(va.images, dir / "val.bin");
  sidecar["train"] = tr.sidecar;
  sidecar["val"] = va.sidecar;

  json result{{"cell", cell},
              {"train_checksum", hex64(file_checksum(dir / "train.bin"))},
              {"val_checksum", hex64(file_checksum(dir / "val.bin"))}};
  if (plan_.plan.robustness_probe && tr.marks.size() >= 2) {
    const auto rnd = robustness::randomness(tr.marks, base);
    json probe{{"randomness", json::parse(rnd.to_json())}};
    const std::size_t n = std::min(kProbeImages, train().size());
    if (n >= robustness::kMinAttackSamples) {
      // Attack the stored (8-bit) images, as an adversary would see them.
      const ImageBatch stored = dataio::load_cifar_batch(dir / "train.bin").slice(0, n);
      const ImageBatch clean = train().slice(0, n);
      const auto attack = robustness::mean_estimate_attack(stored, &clean, beta);
      probe["attack_residual"] = *attack.residual;
      probe["attack_images"] = n;
    }
    sidecar["robustness"] = probe;
    result["robustness"] = probe;
  }
  dataio::write_text_atomic(dir / "sidecar.json", sidecar.dump(2) + "\n");
  return result;
}

json Runner::phase_fprime(const std::string& arch, const std::string& scheme, std::optional<double> beta) {
  ImageBatch data, val_stamped;
  if (beta) {
    const fs::path dir = root_ / "stamped" / cell_name(scheme, *beta);
    data = dataio::load_cifar_batch(dir / "train.bin");
    val_stamped = dataio::load_cifar_batch(dir / "val.bin");
    if (plan_.train.mix_ratio > 0.0) {
      // Replace a seeded fraction of stamped images with their clean originals.
      std::vector<std::size_t> idx(data.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      Rng rng(derive_seed(plan_.train.stamped_classifier.seed, "mix"));
      rng.shuffle(idx.begin(), idx.end());
      const auto n_mix = static_cast<std::size_t>(plan_.train.mix_ratio * static_cast<double>(data.size()));
      for (std::size_t k = 0; k < n_mix; ++k) {
        const auto src = train().image(idx[k]);
        std::copy(src.begin(), src.end(), data.image(idx[k]).begin());
      }
    }
  } else {
    data = train();
    val_stamped = val();
  }
  auto cfg = plan_.train.stamped_classifier;
  cfg.architecture = arch;
  cfg.seed = derive_seed(cfg.seed, arch);  // shared across schemes: same init and data order
  auto res = training::train_classifier(data, cfg, &val(), &val_stamped);
  res.report.config_json = config::classifier_json(cfg);
  const std::string name = "fprime-" + arch + "-" + (beta ? cell_name(scheme, *beta) : std::string("clean"));
  dataio::save_checkpoint(res.params, root_ / "checkpoints" / (name + ".dsck"));
  res.report.write(root_ / "reports" / name);
  // The final epoch always validates; its row holds exactly these accuracies.
  const training::ReportRow* last = res.report.rows.empty() ? nullptr : &res.report.rows.back();
  const Accuracy acc = last && last->acc_clean && last->acc_stamped
                           ? Accuracy{*last->acc_clean, *last->acc_stamped}
                           : evaluate(res.params, val(), val_stamped);
  return {{"architecture", arch},
          {"scheme", scheme},
          {"blend", beta ? json(*beta) : json(nullptr)},
          {"acc_clean", acc.clean},
          {"acc_stamped", acc.stamped},
          {"steps", res.params.metadata.step},
          {"seed", cfg.seed}};
}

void Runner::write_reports(const ResultTable& table) {
  write_report(table, root_);
  json robust = json::object();
  for (const auto& s : plan_.plan.schemes) {
    if (s == "clean") continue;
    for (double b : plan_.plan.blends) {
      const std::string cell = cell_name(s, b);
      const json r = manifest_.result("stamp-" + cell);
      if (r.contains("robustness")) robust[cell] = r["robustness"];
    }
  }
  if (!robust.empty()) {
    robust["_method"] =
        "mean-estimation probe; alpha estimated per pixel by least squares of stamped on clean; "
        "residual = mean per-image RMS between recovered and clean images";
    dataio::write_text_atomic(root_ / "reports" / "robustness.json", robust.dump(2) + "\n");
  }
}

ResultTable Runner::run() {
  phase("data", [&] { return phase_data(); });
  phase("watermark", [&] { return phase_watermark(); });
  const bool learned = has_scheme("learned");
  if (learned) {
    phase("classifier", [&] { return phase_classifier(); });
    for (double b : plan_.plan.blends) phase("stamper-" + fmt_blend(b), [&] { return phase_stamper(b); });
  }
  for (const auto& s : plan_.plan.schemes) {
    if (s == "clean") continue;
    for (double b : plan_.plan.blends) {
      phase("stamp-" + cell_name(s, b), [&] { return phase_stamp(parse_scheme(s), b); });
    }
  }
  ResultTable table;
  auto add = [&](const json& r) {
    ResultCell c;
    c.architecture = r.at("architecture").get<std::string>();
    c.scheme = r.at("scheme").get<std::string>();
    if (!r.at("blend").is_null()) c.blend = r.at("blend").get<double>();
    c.acc_clean = r.at("acc_clean").get<double>();
    c.acc_stamped = r.at("acc_stamped").get<double>();
    c.steps = r.at("steps").get<std::uint64_t>();
    c.seed = r.at("seed").get<std::uint64_t>();
    table.cells.push_back(std::move(c));
  };
  for (const auto& arch : plan_.plan.classifiers) {
    for (const auto& s : plan_.plan.schemes) {
      if (s == "clean") {
        add(phase("fprime-" + arch + "-clean", [&] { return phase_fprime(arch, s, std::nullopt); }));
        continue;
      }
      for (double b : plan_.plan.blends) {
        add(phase("fprime-" + arch + "-" + cell_name(s, b), [&] { return phase_fprime(arch, s, b); }));
      }
    }
  }
  phase("report", [&] {
    write_reports(table);
    return json{{"cells", table.cells.size()}};
  });
  return table;
}

}  // namespace

std::string cell_name(std::string_view scheme, double blend) {
  return std::string(scheme) + "-" + fmt_blend(blend);
}

Accuracy evaluate(const NetworkParams& classifier, const ImageBatch& clean, const ImageBatch& stamped) {
  if (clean.size() == 0 || stamped.size() == 0) throw DimensionError("cannot evaluate an empty batch");
  if (clean.size() != stamped.size()) {
    throw DimensionError("clean and stamped validation sets differ in size (" + std::to_string(clean.size()) +
                         " vs " + std::to_string(stamped.size()) + ")");
  }
  return {training::accuracy(classifier, clean), training::accuracy(classifier, stamped)};
}

Splits load_splits(const config::DataConfig& data) {
  Splits s;
  if (data.source == config::DataSource::synthetic) {
    s.train = synthetic::make_shapes(data.train_subset, derive_seed(data.seed, "train"));
    s.val = synthetic::make_shapes(data.val_size, derive_seed(data.seed, "val"));
    s.train_source = "synthetic-shapes:" + hex64(derive_seed(data.seed, "train"));
    s.val_source = "synthetic-shapes:" + hex64(derive_seed(data.seed, "val"));
    s.train_indices.resize(s.train.size());
    std::iota(s.train_indices.begin(), s.train_indices.end(), std::size_t{0});
    return s;
  }
  const fs::path dir(data.dir);
  std::vector<ImageBatch> parts;
  for (std::size_t k = 1; k <= kCifarTrainFiles; ++k) {
    parts.push_back(dataio::load_cifar_batch(dir / ("data_batch_" + std::to_string(k) + ".bin")));
  }
  const ImageBatch all = concat(parts);
  if (data.train_subset > all.size()) {
    throw ConfigError("data.train_subset " + std::to_string(data.train_subset) + " exceeds the " +
                      std::to_string(all.size()) + " training records");
  }
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(data.seed, "subset"));
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(data.train_subset);
  s.train = all.select(idx);
  s.train_indices = idx;
  s.train_source = "cifar:data_batch_1..5";
  const ImageBatch test = dataio::load_cifar_batch(dir / "test_batch.bin");
  if (data.val_size > test.size()) {
    throw ConfigError("data.val_size exceeds the " + std::to_string(test.size()) + " test records");
  }
  s.val = test.slice(0, data.val_size);
  s.val_source = "cifar:test_batch";
  return s;
}

std::size_t assert_disjoint(const Splits& splits) {
  if (splits.train_source == splits.val_source) {
    throw SpecError("train and validation splits come from the same source '" + splits.train_source + "'");
  }
  std::unordered_map<std::uint64_t, std::size_t> seen;
  auto hash = [](std::span<const float> img) {
    std::vector<std::uint8_t> q(img.size());
    for (std::size_t k = 0; k < img.size(); ++k) q[k] = dataio::quantize_pixel(img[k]);
    return dataio::checksum(q);
  };
  for (std::size_t i = 0; i < splits.train.size(); ++i) ++seen[hash(splits.train.image(i))];
  std::size_t shared = 0;
  for (std::size_t i = 0; i < splits.val.size(); ++i) shared += seen.count(hash(splits.val.image(i))) ? 1 : 0;
  return shared;
}

ResultTable run_plan(const ExperimentPlan& plan, const RunOptions& options) {
  plan.validate();
  Runner runner(plan, options);
  try {
    return runner.run();
  } catch (const StopRequested&) {
    return {};
  }
}

}  // namespace deepstamp::evalharness
