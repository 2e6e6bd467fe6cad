// deepstamp: command-line front end.
//
// Exit codes: 0 ok, 1 usage/config, 2 data/format, 3 numerical abort.
// Errors go to stderr as one JSON line.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "deepstamp/config.hpp"
#include "deepstamp/evalharness.hpp"
#include "deepstamp/nets.hpp"
#include "deepstamp/rng.hpp"
#include "deepstamp/robustness.hpp"
#include "deepstamp/stamping.hpp"
#include "deepstamp/synthetic.hpp"
#include "deepstamp/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deepstamp;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::spec:
    case ErrorKind::unsupported: return kUsage;
    case ErrorKind::numerical: return kNumerical;
    default: return kData;
  }
}

void report_error(const std::string& kind, const std::string& message, std::optional<std::uint64_t> offset = {}) {
  json j{{"error", kind}, {"message", message}};
  if (offset) j["offset"] = *offset;
  std::cerr << j.dump() << std::endl;
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

void write_config(const config::Config& c, const fs::path& dir) {
  fs::create_directories(dir);
  dataio::write_text_atomic(dir / "config.json", config::to_json(c));
}

/// A CIFAR batch file, or a directory holding train.bin / data.bin.
ImageBatch load_images(const fs::path& p) {
  if (fs::is_directory(p)) {
    for (const char* name : {"train.bin", "data.bin"}) {
      if (fs::exists(p / name)) return dataio::load_cifar_batch(p / name);
    }
    throw IoError("no train.bin or data.bin in " + p.string());
  }
  return dataio::load_cifar_batch(p);
}

fs::path watermarker_path(const fs::path& p) { return fs::is_directory(p) ? p / "W.dsck" : p; }

Watermark load_mark(const config::Config& c) {
  return c.watermark.path.empty() ? synthetic::builtin_logo() : dataio::load_watermark(c.watermark.path);
}

// ---- subcommands --------------------------------------------------------

int cmd_prepare(const fs::path& data_dir, const fs::path& out) {
  json files = json::array();
  std::size_t total = 0;
  for (int k = 1; k <= 6; ++k) {
    const std::string name = k <= 5 ? "data_batch_" + std::to_string(k) + ".bin" : "test_batch.bin";
    const fs::path p = data_dir / name;
    const auto bytes = dataio::read_file(p);
    const ImageBatch b = dataio::decode_cifar(bytes);
    std::vector<std::size_t> hist(kNumClasses, 0);
    for (int l : b.labels) ++hist[static_cast<std::size_t>(l)];
    char sum[17];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(dataio::checksum(bytes)));
    files.push_back({{"file", name}, {"records", b.size()}, {"label_histogram", hist}, {"checksum", sum}});
    total += b.size();
  }
  const json manifest{{"source", fs::absolute(data_dir).string()}, {"records", total}, {"files", files}};
  fs::create_directories(out);
  dataio::write_text_atomic(out / "dataset.json", manifest.dump(2) + "\n");
  print_json(manifest);
  return kOk;
}

int cmd_synth_data(const fs::path& out, std::size_t per_file, std::size_t test, std::uint64_t seed) {
  fs::create_directories(out);
  for (int k = 1; k <= 5; ++k) {
    const auto b = synthetic::make_shapes(per_file, derive_seed(seed, "train-" + std::to_string(k)));
    dataio::save_cifar_batch(b, out / ("data_batch_" + std::to_string(k) + ".bin"));
  }
  dataio::save_cifar_batch(synthetic::make_shapes(test, derive_seed(seed, "test")), out / "test_batch.bin");
  print_json({{"out", out.string()}, {"train_records", 5 * per_file}, {"test_records", test}, {"synthetic", true}});
  return kOk;
}

int cmd_make_watermark(const fs::path& out) {
  dataio::save_watermark_png(synthetic::builtin_logo(), out);
  print_json({{"out", out.string()}});
  return kOk;
}

int cmd_train_classifier(const fs::path& cfg_path, const fs::path& out, std::optional<std::string> arch) {
  auto c = config::load(cfg_path);
  auto cfg = c.train.classifier;
  if (arch) cfg.architecture = *arch;
  const auto splits = evalharness::load_splits(c.data);
  evalharness::assert_disjoint(splits);
  write_config(c, out);
  auto res = training::train_classifier(splits.train, cfg, &splits.val);
  res.report.config_json = config::classifier_json(cfg);
  dataio::save_checkpoint(res.params, out / "F.dsck");
  res.report.write(out / "report");
  print_json({{"checkpoint", (out / "F.dsck").string()},
              {"acc_clean", training::accuracy(res.params, splits.val)},
              {"steps", res.params.metadata.step}});
  return kOk;
}

// Discriminator built from transposed convolutions, as literally described.
void use_literal_discriminator(config::Config& c) {
  c.nets.discriminator = nets::arch_id::discriminator_transposed;
  c.train.stamper.discriminator_architecture = c.nets.discriminator;
}

int cmd_train_stamper(const fs::path& cfg_path, const fs::path& classifier, const fs::path& out, bool literal_d) {
  auto c = config::load(cfg_path);
  if (literal_d) use_literal_discriminator(c);
  const auto f = dataio::load_checkpoint(classifier);
  const auto splits = evalharness::load_splits(c.data);
  write_config(c, out);
  const auto& cfg = c.train.stamper;
  auto save = [&](const training::StamperNets& n) {
    dataio::save_checkpoint(n.watermarker, out / "W.dsck");
    dataio::save_checkpoint(n.autoencoder, out / "V.dsck");
    for (std::size_t j = 0; j < n.discriminators.size(); ++j) {
      dataio::save_checkpoint(n.discriminators[j], out / ("D" + std::to_string(j) + ".dsck"));
    }
  };
  auto res = training::train_stamper(training::init_stamper(cfg), f, splits.train, load_mark(c), cfg,
                                     [&](std::uint64_t, const training::StamperNets& n) { save(n); });
  save(res.nets);
  res.report.config_json = config::stamper_json(cfg);
  res.report.write(out / "report");
  print_json({{"out", out.string()}, {"steps", cfg.steps}});
  return kOk;
}

int cmd_stamp(const fs::path& cfg_path, const std::string& scheme_name, std::optional<fs::path> stamper,
              std::optional<fs::path> input, std::optional<double> beta, const fs::path& out) {
  auto c = config::load(cfg_path);
  const StampScheme scheme = parse_scheme(scheme_name);
  const double b = beta.value_or(c.stamp.blend);
  const ImageBatch x = input ? load_images(*input) : evalharness::load_splits(c.data).train;
  const Watermark w = load_mark(c);
  const StampSpec spec = c.stamp.spec(scheme, b);
  json sidecar{{"scheme", to_string(scheme)}, {"blend", b}, {"rng_seed", spec.rng_seed}, {"images", x.size()}};
  ImageBatch stamped;
  switch (scheme) {
    case StampScheme::static_mark: stamped = stamping::stamp_static(x, w, spec); break;
    case StampScheme::opacity: {
      auto r = stamping::stamp_opacity(x, w, spec);
      stamped = std::move(r.images);
      sidecar["opacities"] = r.opacities;
      break;
    }
    case StampScheme::displacement: {
      auto r = stamping::stamp_displaced(x, w, spec);
      stamped = std::move(r.images);
      json offs = json::array();
      for (const auto& o : r.offsets) offs.push_back({o.dx, o.dy});
      sidecar["offsets"] = offs;
      break;
    }
    case StampScheme::learned: {
      if (!stamper) throw ConfigError("--stamper is required for the learned scheme");
      const auto wp = dataio::load_checkpoint(watermarker_path(*stamper));
      stamped = stamping::stamp_learned(x, nets::synthesize(wp, x, w), b);
      sidecar["watermarker"] = watermarker_path(*stamper).string();
      break;
    }
  }
  write_config(c, out);
  dataio::save_cifar_batch(stamped, out / "data.bin");
  dataio::write_text_atomic(out / "sidecar.json", sidecar.dump(2) + "\n");
  print_json({{"out", (out / "data.bin").string()}, {"images", stamped.size()}, {"scheme", to_string(scheme)}, {"blend", b}});
  return kOk;
}

int cmd_train_on_stamped(const fs::path& cfg_path, const fs::path& data, std::optional<fs::path> val_clean,
                         std::optional<fs::path> val_stamped, std::optional<std::string> arch, const fs::path& out) {
  auto c = config::load(cfg_path);
  auto cfg = c.train.stamped_classifier;
  if (arch) cfg.architecture = *arch;
  const ImageBatch train = load_images(data);
  std::optional<ImageBatch> vc, vs;
  if (val_clean) vc = load_images(*val_clean);
  if (val_stamped) vs = load_images(*val_stamped);
  write_config(c, out);
  auto res = training::train_classifier(train, cfg, vc ? &*vc : nullptr, vs ? &*vs : nullptr);
  res.report.config_json = config::classifier_json(cfg);
  dataio::save_checkpoint(res.params, out / "F.dsck");
  res.report.write(out / "report");
  json r{{"checkpoint", (out / "F.dsck").string()}, {"steps", res.params.metadata.step}};
  if (vc) r["acc_clean"] = training::accuracy(res.params, *vc);
  if (vs) r["acc_stamped"] = training::accuracy(res.params, *vs);
  print_json(r);
  return kOk;
}

int cmd_evaluate(const fs::path& classifier, const fs::path& clean, const fs::path& stamped) {
  const auto params = dataio::load_checkpoint(classifier);
  const auto acc = evalharness::evaluate(params, load_images(clean), load_images(stamped));
  print_json({{"acc_clean", acc.clean}, {"acc_stamped", acc.stamped}});
  return kOk;
}

int cmd_probe(const fs::path& stamped_path, std::optional<fs::path> clean_path, double beta,
              std::optional<fs::path> stamper, std::optional<fs::path> watermark, std::size_t limit,
              std::optional<fs::path> out) {
  ImageBatch stamped = load_images(stamped_path);
  std::optional<ImageBatch> clean;
  if (clean_path) clean = load_images(*clean_path);
  if (limit > 0 && limit < stamped.size()) {
    stamped = stamped.slice(0, limit);
    if (clean) clean = clean->slice(0, limit);
  }
  const auto attack = robustness::mean_estimate_attack(stamped, clean ? &*clean : nullptr, beta);
  json r = json::parse(attack.to_json());
  r["blend"] = beta;
  if (stamper) {
    if (!clean) throw ConfigError("--stamper needs --clean (the watermarker's inputs)");
    const Watermark w = watermark ? dataio::load_watermark(*watermark) : synthetic::builtin_logo();
    const auto marks = nets::synthesize(dataio::load_checkpoint(watermarker_path(*stamper)), *clean, w);
    r["randomness"] = json::parse(robustness::randomness(marks).to_json());
  }
  if (out) dataio::write_text_atomic(*out, r.dump(2) + "\n");
  print_json(r);
  return kOk;
}

int cmd_run_plan(const fs::path& plan_path, bool resume, std::optional<std::string> stop_after, bool quiet,
                 bool literal_d) {
  auto plan = config::load(plan_path);
  if (literal_d) use_literal_discriminator(plan);
  evalharness::RunOptions opts;
  opts.resume = resume;
  opts.stop_after = stop_after;
  if (!quiet) opts.log = [](const std::string& m) { std::cerr << "[deepstamp] " << m << std::endl; };
  const auto table = evalharness::run_plan(plan, opts);
  std::cout << evalharness::render_report(table).markdown;
  return kOk;
}

int cmd_grad_check(const std::string& arch, const std::string& path, std::uint64_t seed) {
  const auto r = training::grad_check(arch, training::parse_loss_path(path), seed);
  json tensors = json::array();
  for (const auto& t : r.tensors) {
    tensors.push_back({{"network", t.network}, {"name", t.name}, {"max_rel_error", t.max_rel_error},
                       {"checked", t.checked}, {"kinks", t.kinks}});
  }
  print_json({{"arch", arch}, {"path", path}, {"max_rel_error", r.max_rel_error}, {"tensors", tensors}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deepstamp - learned visible watermarks for shared image datasets"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "deepstamp 0.1.0");

  std::function<int()> action;

  fs::path data_dir, out, cfg, classifier, data, clean, stamped, plan;
  std::optional<fs::path> stamper, input, val_clean, val_stamped, probe_clean, watermark, probe_out;
  std::optional<std::string> arch, stop_after;
  std::optional<double> beta;
  std::string scheme, loss_path;
  double probe_beta = 0.5;
  std::size_t per_file = 10000, test_records = 10000, limit = 0;
  std::uint64_t seed = 0;
  bool no_resume = false, quiet = false, literal_d = false;
  const char* literal_help = "Use the transposed-convolution discriminator (D-transposed)";

  auto* prepare = app.add_subcommand("prepare", "Validate CIFAR-10 binaries and write a dataset manifest");
  prepare->add_option("--data-dir", data_dir, "Directory with data_batch_1..5.bin and test_batch.bin")->required();
  prepare->add_option("--out", out, "Output directory for dataset.json")->required();
  prepare->callback([&] { action = [&] { return cmd_prepare(data_dir, out); }; });

  auto* synth = app.add_subcommand("synth-data", "Write a synthetic shapes dataset in CIFAR-10 binary layout");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--per-file", per_file, "Records per training file (5 files)")->capture_default_str();
  synth->add_option("--test", test_records, "Records in test_batch.bin")->capture_default_str();
  synth->add_option("--seed", seed, "Seed")->capture_default_str();
  synth->callback([&] { action = [&] { return cmd_synth_data(out, per_file, test_records, seed); }; });

  auto* mkwm = app.add_subcommand("make-watermark", "Write the built-in 32x32 logo watermark as RGBA PNG");
  mkwm->add_option("--out", out, "PNG path")->required();
  mkwm->callback([&] { action = [&] { return cmd_make_watermark(out); }; });

  auto* tc = app.add_subcommand("train-classifier", "Pretrain the task classifier F");
  tc->add_option("--config", cfg, "Config JSON")->required();
  tc->add_option("--out", out, "Output directory")->default_val("out/classifier");
  tc->add_option("--arch", arch, "Override nets.classifier");
  tc->callback([&] { action = [&] { return cmd_train_classifier(cfg, out, arch); }; });

  auto* ts = app.add_subcommand("train-stamper", "Train W, V and the discriminators against a frozen F");
  ts->add_option("--config", cfg, "Config JSON")->required();
  ts->add_option("--classifier", classifier, "Checkpoint of F")->required();
  ts->add_option("--out", out, "Output directory")->default_val("out/stamper");
  ts->add_flag("--d-literal-transposed", literal_d, literal_help);
  ts->callback([&] { action = [&] { return cmd_train_stamper(cfg, classifier, out, literal_d); }; });

  auto* st = app.add_subcommand("stamp", "Write a stamped dataset and its sidecar");
  st->add_option("--config", cfg, "Config JSON")->required();
  st->add_option("--scheme", scheme, "static | opacity | displacement | learned")
      ->required()
      ->check(CLI::IsMember({"static", "opacity", "displacement", "learned"}));
  st->add_option("--stamper", stamper, "W checkpoint or stamper directory (learned scheme)");
  st->add_option("--input", input, "CIFAR batch to stamp (default: the config's training split)");
  st->add_option("--beta", beta, "Blend factor (default: stamp.blend)")->check(CLI::Range(0.0, 1.0));
  st->add_option("--out", out, "Output directory")->required();
  st->callback([&] { action = [&] { return cmd_stamp(cfg, scheme, stamper, input, beta, out); }; });

  auto* tos = app.add_subcommand("train-on-stamped", "Train F' on a stamped dataset");
  tos->add_option("--config", cfg, "Config JSON")->required();
  tos->add_option("--data", data, "Stamped CIFAR batch or directory")->required();
  tos->add_option("--val-clean", val_clean, "Clean validation batch");
  tos->add_option("--val-stamped", val_stamped, "Stamped validation batch");
  tos->add_option("--arch", arch, "Override the classifier architecture");
  tos->add_option("--out", out, "Output directory")->default_val("out/fprime");
  tos->callback([&] { action = [&] { return cmd_train_on_stamped(cfg, data, val_clean, val_stamped, arch, out); }; });

  auto* ev = app.add_subcommand("evaluate", "Top-1 accuracy on clean and stamped validation sets");
  ev->add_option("--classifier", classifier, "Checkpoint")->required();
  ev->add_option("--clean", clean, "Clean validation batch")->required();
  ev->add_option("--stamped", stamped, "Stamped validation batch")->required();
  ev->callback([&] { action = [&] { return cmd_evaluate(classifier, clean, stamped); }; });

  auto* pr = app.add_subcommand("probe", "Mean-estimation removal attack and watermark randomness");
  pr->add_option("--stamped", stamped, "Stamped batch or directory")->required();
  pr->add_option("--clean", probe_clean, "Matching clean batch or directory");
  pr->add_option("--beta", probe_beta, "Blend factor known to the attacker")->required()->check(CLI::Range(0.0, 1.0));
  pr->add_option("--stamper", stamper, "W checkpoint: also report randomness of its watermarks");
  pr->add_option("--watermark", watermark, "Watermark given to W (default: built-in logo)");
  pr->add_option("--limit", limit, "Use only the first N images (0 = all)");
  pr->add_option("--out", probe_out, "Also write the result JSON here");
  pr->callback([&] {
    action = [&] { return cmd_probe(stamped, probe_clean, probe_beta, stamper, watermark, limit, probe_out); };
  });

  auto* rp = app.add_subcommand("run-plan", "Run the full experiment plan (resumable)");
  rp->add_option("--plan", plan, "Plan/config JSON")->required();
  rp->add_flag("--no-resume", no_resume, "Ignore the manifest and rerun every phase");
  rp->add_option("--stop-after", stop_after, "Stop after the named phase");
  rp->add_flag("--quiet", quiet, "No progress lines on stderr");
  rp->add_flag("--d-literal-transposed", literal_d, literal_help);
  rp->callback([&] { action = [&] { return cmd_run_plan(plan, !no_resume, stop_after, quiet, literal_d); }; });

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of one loss path (float64)");
  std::string gc_arch;
  gc->add_option("--arch", gc_arch, "Subject architecture id")->required();
  gc->add_option("--path", loss_path, "l_f | l_v | d_loss | g_loss | total | ce")->required();
  gc->add_option("--seed", seed, "Seed")->capture_default_str();
  gc->callback([&] { action = [&] { return cmd_grad_check(gc_arch, loss_path, seed); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return kUsage;
  }

  try {
    return action ? action() : kUsage;
  } catch (const FormatError& e) {
    report_error(to_string(e.kind()), e.what(), e.offset());
    return kData;
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("io", e.what());
    return kData;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kData;
  }
}
