#include "deepstamp/config.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <set>

#include "deepstamp/nets.hpp"
#include "deepstamp/rng.hpp"

namespace deepstamp::config {

using nlohmann::json;

namespace {

const char* to_string(DataSource s) { return s == DataSource::cifar ? "cifar" : "synthetic"; }

const char* to_string(training::LfMode m) { return m == training::LfMode::kl ? "kl" : "hard"; }

/// Object view that records which keys were read so leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(j_.at(key), path_ + "." + key);
  }

  template <typename T>
  std::optional<T> get_optional(const std::string& key) {
    if (!has(key) || j_.at(key).is_null()) return std::nullopt;
    return convert<T>(j_.at(key), path_ + "." + key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw ConfigError(where + ": must be finite");
      return static_cast<T>(d);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
      const auto i = v.get<std::int64_t>();
      if (i < 0) throw ConfigError(where + ": must be >= 0");
      return static_cast<T>(i);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array()) throw ConfigError(where + ": expected an array of strings");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<std::string>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<double>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

training::OptimizerConfig read_optimizer(Section s, training::OptimizerConfig d) {
  if (s.has("kind")) {
    // Switching kind switches to that kind's defaults.
    const auto kind = training::parse_optimizer(s.get<std::string>("kind", ""));
    if (kind != d.kind) {
      d = kind == training::OptimizerKind::adam ? training::OptimizerConfig::adam_default()
                                                : training::OptimizerConfig::sgd_default();
    }
  }
  d.lr = s.get("lr", d.lr);
  d.momentum = s.get("momentum", d.momentum);
  d.weight_decay = s.get("weight_decay", d.weight_decay);
  d.beta1 = s.get("beta1", d.beta1);
  d.beta2 = s.get("beta2", d.beta2);
  d.epsilon = s.get("epsilon", d.epsilon);
  s.finish();
  if (!(d.lr >= 0.0)) throw ConfigError(s.path() + ".lr: must be >= 0");
  if (!(d.momentum >= 0.0 && d.momentum < 1.0)) throw ConfigError(s.path() + ".momentum: must lie in [0,1)");
  if (!(d.beta1 >= 0.0 && d.beta1 < 1.0) || !(d.beta2 >= 0.0 && d.beta2 < 1.0)) {
    throw ConfigError(s.path() + ": adam betas must lie in [0,1)");
  }
  if (!(d.epsilon > 0.0)) throw ConfigError(s.path() + ".epsilon: must be > 0");
  if (!(d.weight_decay >= 0.0)) throw ConfigError(s.path() + ".weight_decay: must be >= 0");
  return d;
}

training::ClassifierTrainConfig read_classifier(Section s, std::uint64_t fallback_seed,
                                                const std::string& arch) {
  training::ClassifierTrainConfig c;
  c.architecture = arch;
  c.epochs = s.get("epochs", c.epochs);
  c.batch_size = s.get("batch_size", c.batch_size);
  c.eval_every = s.get("eval_every", c.eval_every);
  c.optimizer = read_optimizer(s.child("optimizer"), c.optimizer);
  c.seed = s.get_optional<std::uint64_t>("seed").value_or(fallback_seed);
  s.finish();
  if (c.batch_size == 0) throw ConfigError(s.path() + ".batch_size: must be >= 1");
  return c;
}

json optimizer_json(const training::OptimizerConfig& o) {
  return {{"kind", training::to_string(o.kind)}, {"lr", o.lr},       {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},      {"beta1", o.beta1}, {"beta2", o.beta2},
          {"epsilon", o.epsilon}};
}

json classifier_doc(const training::ClassifierTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"eval_every", c.eval_every},
          {"optimizer", optimizer_json(c.optimizer)},
          {"seed", c.seed}};
}

json stamper_doc(const training::StamperTrainConfig& c) {
  json j{{"steps", c.steps},
         {"batch_size", c.batch_size},
         {"optimizer", optimizer_json(c.optimizer)},
         {"gman_temperature", c.gman_temperature},
         {"weights", {{"task", c.weights.task}, {"visual", c.weights.visual}, {"discriminator", c.weights.discriminator}}},
         {"lf_mode", to_string(c.lf_mode)},
         {"eval_every", c.eval_every},
         {"seed", c.seed}};
  j["lr_watermarker"] = c.lr_watermarker ? json(*c.lr_watermarker) : json(nullptr);
  j["lr_discriminator"] = c.lr_discriminator ? json(*c.lr_discriminator) : json(nullptr);
  return j;
}

void check_architecture(const std::string& id, const std::string& where) {
  if (!nets::is_known_architecture(id)) throw ConfigError(where + ": unknown architecture '" + id + "'");
}

}  // namespace

StampSpec StampConfig::spec(StampScheme scheme, double beta) const {
  StampSpec s;
  s.blend = beta;
  s.scheme = scheme;
  s.displacement_range = displacement_range;
  s.rng_seed = derive_seed(seed, std::string(deepstamp::to_string(scheme)) + "-" + std::to_string(beta));
  // A configured opacity range is relative to the configured blend.
  if (opacity_range && blend > 0.0) {
    s.opacity_range = OpacityRange{opacity_range->lo * beta / blend, opacity_range->hi * beta / blend};
  }
  return s;
}

void Config::validate() const {
  if (data.train_subset == 0 || data.train_subset > 50000) throw ConfigError("data.train_subset: must lie in [1, 50000]");
  if (data.val_size == 0 || data.val_size > 10000) throw ConfigError("data.val_size: must lie in [1, 10000]");
  if (data.source == DataSource::cifar && data.dir.empty()) throw ConfigError("data.dir: required for cifar source");
  if (!(stamp.blend >= 0.0 && stamp.blend <= 1.0)) throw ConfigError("stamp.blend: must lie in [0,1]");
  if (stamp.opacity_range && !(0.0 <= stamp.opacity_range->lo && stamp.opacity_range->lo <= stamp.opacity_range->hi &&
                               stamp.opacity_range->hi <= 1.0)) {
    throw ConfigError("stamp.opacity_range: need 0 <= lo <= hi <= 1");
  }
  if (stamp.displacement_range.dx_max < 0 || stamp.displacement_range.dy_max < 0 ||
      stamp.displacement_range.dx_max >= static_cast<int>(kImageSide) ||
      stamp.displacement_range.dy_max >= static_cast<int>(kImageSide)) {
    throw ConfigError("stamp.displacement_range: offsets must lie in [0, 32)");
  }
  check_architecture(nets.classifier, "nets.classifier");
  check_architecture(nets.discriminator, "nets.discriminator");
  check_architecture(nets.autoencoder, "nets.autoencoder");
  if (nets.n_discriminators == 0) throw ConfigError("nets.n_discriminators: must be >= 1");
  try {
    train.stamper.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.stamper: ") + e.what());
  }
  if (!(train.mix_ratio >= 0.0 && train.mix_ratio <= 1.0)) throw ConfigError("train.mix_ratio: must lie in [0,1]");
  if (plan.schemes.empty()) throw ConfigError("plan.schemes: must not be empty");
  for (const auto& s : plan.schemes) {
    if (s != "clean") {
      try {
        parse_scheme(s);
      } catch (const SpecError&) {
        throw ConfigError("plan.schemes: unknown scheme '" + s + "'");
      }
    }
  }
  for (double b : plan.blends) {
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("plan.blends: values must lie in [0,1]");
  }
  if (plan.classifiers.empty()) throw ConfigError("plan.classifiers: must not be empty");
  for (const auto& c : plan.classifiers) check_architecture(c, "plan.classifiers");
  if (plan.output_dir.empty()) throw ConfigError("plan.output_dir: must not be empty");
}

Config parse(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(doc, "$");
  Config c;
  c.seed = root.get("seed", c.seed);

  {
    auto s = root.child("data");
    const auto src = s.get<std::string>("source", "synthetic");
    if (src == "cifar") {
      c.data.source = DataSource::cifar;
    } else if (src == "synthetic") {
      c.data.source = DataSource::synthetic;
    } else {
      throw ConfigError("$.data.source: expected 'cifar' or 'synthetic'");
    }
    c.data.dir = s.get("dir", c.data.dir);
    c.data.train_subset = s.get("train_subset", c.data.train_subset);
    c.data.val_size = s.get("val_size", c.data.val_size);
    c.data.seed = s.get_optional<std::uint64_t>("seed").value_or(derive_seed(c.seed, "data"));
    s.finish();
  }
  {
    auto s = root.child("watermark");
    c.watermark.path = s.get("path", c.watermark.path);
    s.finish();
  }
  {
    auto s = root.child("stamp");
    c.stamp.blend = s.get("blend", c.stamp.blend);
    if (auto r = s.get_optional<std::vector<double>>("opacity_range")) {
      if (r->size() != 2) throw ConfigError("$.stamp.opacity_range: expected [lo, hi]");
      c.stamp.opacity_range = OpacityRange{(*r)[0], (*r)[1]};
    }
    if (auto r = s.get_optional<std::vector<double>>("displacement_range")) {
      if (r->size() != 2) throw ConfigError("$.stamp.displacement_range: expected [dx_max, dy_max]");
      c.stamp.displacement_range = {static_cast<int>((*r)[0]), static_cast<int>((*r)[1])};
    }
    c.stamp.seed = s.get_optional<std::uint64_t>("seed").value_or(derive_seed(c.seed, "stamp"));
    s.finish();
  }
  {
    auto s = root.child("nets");
    c.nets.classifier = s.get("classifier", c.nets.classifier);
    c.nets.discriminator = s.get("discriminator", c.nets.discriminator);
    c.nets.autoencoder = s.get("autoencoder", c.nets.autoencoder);
    c.nets.n_discriminators = s.get("n_discriminators", c.nets.n_discriminators);
    s.finish();
  }
  {
    auto s = root.child("train");
    c.train.classifier = read_classifier(s.child("classifier"), derive_seed(c.seed, "classifier"), c.nets.classifier);
    c.train.stamped_classifier = read_classifier(s.child("stamped_classifier"),
                                                 derive_seed(c.seed, "stamped-classifier"), c.nets.classifier);
    c.train.mix_ratio = s.get("mix_ratio", c.train.mix_ratio);

    auto st = s.child("stamper");
    auto& p = c.train.stamper;
    p.steps = st.get("steps", p.steps);
    p.batch_size = st.get("batch_size", p.batch_size);
    p.optimizer = read_optimizer(st.child("optimizer"), p.optimizer);
    p.lr_watermarker = st.get_optional<double>("lr_watermarker");
    p.lr_discriminator = st.get_optional<double>("lr_discriminator");
    p.gman_temperature = st.get("gman_temperature", p.gman_temperature);
    {
      auto w = st.child("weights");
      p.weights.task = w.get("task", p.weights.task);
      p.weights.visual = w.get("visual", p.weights.visual);
      p.weights.discriminator = w.get("discriminator", p.weights.discriminator);
      w.finish();
      if (p.weights.task < 0 || p.weights.visual < 0 || p.weights.discriminator < 0) {
        throw ConfigError("$.train.stamper.weights: must be >= 0");
      }
    }
    const auto lf = st.get<std::string>("lf_mode", "kl");
    if (lf == "kl") {
      p.lf_mode = training::LfMode::kl;
    } else if (lf == "hard") {
      p.lf_mode = training::LfMode::hard;
    } else {
      throw ConfigError("$.train.stamper.lf_mode: expected 'kl' or 'hard'");
    }
    p.eval_every = st.get("eval_every", p.eval_every);
    p.seed = st.get_optional<std::uint64_t>("seed").value_or(derive_seed(c.seed, "stamper"));
    st.finish();
    s.finish();
  }
  c.train.stamper.blend = c.stamp.blend;
  c.train.stamper.n_discriminators = c.nets.n_discriminators;
  c.train.stamper.discriminator_architecture = c.nets.discriminator;
  c.train.stamper.autoencoder_architecture = c.nets.autoencoder;
  {
    auto s = root.child("plan");
    c.plan.schemes = s.get("schemes", c.plan.schemes);
    c.plan.blends = s.get("blends", c.plan.blends);
    c.plan.classifiers = s.get("classifiers", c.plan.classifiers);
    c.plan.output_dir = s.get("output_dir", c.plan.output_dir);
    c.plan.robustness_probe = s.get("robustness_probe", c.plan.robustness_probe);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

Config load(const std::filesystem::path& path) {
  std::string text;
  try {
    const auto bytes = dataio::read_file(path);
    text.assign(bytes.begin(), bytes.end());
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse(text);
}

std::string classifier_json(const training::ClassifierTrainConfig& c) {
  json j = classifier_doc(c);
  j["architecture"] = c.architecture;
  return j.dump();
}

std::string stamper_json(const training::StamperTrainConfig& c) {
  json j = stamper_doc(c);
  j["blend"] = c.blend;
  j["n_discriminators"] = c.n_discriminators;
  j["discriminator_architecture"] = c.discriminator_architecture;
  j["autoencoder_architecture"] = c.autoencoder_architecture;
  return j.dump();
}

std::string to_json(const Config& c) {
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"source", to_string(c.data.source)},
               {"dir", c.data.dir},
               {"train_subset", c.data.train_subset},
               {"val_size", c.data.val_size},
               {"seed", c.data.seed}};
  j["watermark"] = {{"path", c.watermark.path}};
  j["stamp"] = {{"blend", c.stamp.blend},
                {"displacement_range", {c.stamp.displacement_range.dx_max, c.stamp.displacement_range.dy_max}},
                {"seed", c.stamp.seed}};
  j["stamp"]["opacity_range"] =
      c.stamp.opacity_range ? json{c.stamp.opacity_range->lo, c.stamp.opacity_range->hi} : json(nullptr);
  j["nets"] = {{"classifier", c.nets.classifier},
               {"discriminator", c.nets.discriminator},
               {"autoencoder", c.nets.autoencoder},
               {"n_discriminators", c.nets.n_discriminators}};
  j["train"] = {{"classifier", classifier_doc(c.train.classifier)},
                {"stamped_classifier", classifier_doc(c.train.stamped_classifier)},
                {"stamper", stamper_doc(c.train.stamper)},
                {"mix_ratio", c.train.mix_ratio}};
  j["plan"] = {{"schemes", c.plan.schemes},
               {"blends", c.plan.blends},
               {"classifiers", c.plan.classifiers},
               {"output_dir", c.plan.output_dir},
               {"robustness_probe", c.plan.robustness_probe}};
  return j.dump(2) + "\n";
}

}  // namespace deepstamp::config
