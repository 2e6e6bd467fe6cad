// Report serialization: RunReport CSV/JSON and the comparison table.

#include <array>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "deepstamp/evalharness.hpp"
#include "deepstamp/training.hpp"

namespace deepstamp {

using nlohmann::json;

namespace training {

namespace {

std::string num(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string RunReport::to_csv() const {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + num(r.l_f) + "," + num(r.l_v) + "," + num(r.l_d) + "," +
           num(r.l_tot) + "," + num(r.d_loss) + "," + num(r.acc_clean) + "," + num(r.acc_stamped) + "," +
           num(r.train_acc) + "\n";
  }
  return out;
}

std::string RunReport::to_json() const {
  json j;
  j["phase"] = phase;
  j["config"] = config_json.empty() ? json(nullptr) : json::parse(config_json);
  j["rows"] = json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"step", r.step},
                         {"l_f", opt(r.l_f)},
                         {"l_v", opt(r.l_v)},
                         {"l_d", opt(r.l_d)},
                         {"l_tot", opt(r.l_tot)},
                         {"d_loss", opt(r.d_loss)},
                         {"acc_clean", opt(r.acc_clean)},
                         {"acc_stamped", opt(r.acc_stamped)},
                         {"train_acc", opt(r.train_acc)}});
  }
  return j.dump(2) + "\n";
}

void RunReport::write(const std::filesystem::path& stem) const {
  auto csv = stem, js = stem;
  csv += ".csv";
  js += ".json";
  dataio::write_text_atomic(csv, to_csv());
  dataio::write_text_atomic(js, to_json());
}

}  // namespace training

namespace evalharness {

namespace {

struct ReferenceRow {
  const char* arch;
  double baseline;
  double blend;
  std::array<double, 4> cells;  // S, O, D, DeepStamp; NaN = not reported
};

constexpr double kNa = std::numeric_limits<double>::quiet_NaN();

// Published full-scale CIFAR-10 accuracies, for side-by-side comparison only.
constexpr std::array<ReferenceRow, 6> kReference{{
    {"AlexNet", 82.74, 0.5, {78.50, 79.10, 80.13, 79.59}},
    {"AlexNet", 82.74, 1.0, {73.51, 73.15, 73.62, 74.09}},
    {"VGG16", 94.00, 0.5, {92.71, 92.92, 92.58, 92.74}},
    {"VGG16", 94.00, 1.0, {92.57, 92.83, 92.61, kNa}},
    {"ResNet50", 95.37, 0.5, {94.88, 94.71, 94.92, 94.18}},
    {"ResNet50", 95.37, 1.0, {94.67, 93.64, 93.66, kNa}},
}};

constexpr std::array<const char*, 4> kSchemes{"static", "opacity", "displacement", "learned"};
constexpr std::array<const char*, 4> kSchemeHeads{"S", "O", "D", "DeepStamp"};

std::string pct(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

json blend_json(const std::optional<double>& b) { return b ? json(*b) : json(nullptr); }

// (arch, blend) rows in first-seen order.
std::vector<std::pair<std::string, double>> grid_rows(const ResultTable& t) {
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& c : t.cells) {
    if (!c.blend) continue;
    const std::pair<std::string, double> key{c.architecture, *c.blend};
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  return rows;
}

std::vector<std::string> archs(const ResultTable& t) {
  std::vector<std::string> out;
  for (const auto& c : t.cells) {
    if (std::find(out.begin(), out.end(), c.architecture) == out.end()) out.push_back(c.architecture);
  }
  return out;
}

}  // namespace

const ResultCell* ResultTable::find(std::string_view arch, std::string_view scheme,
                                    std::optional<double> blend) const {
  for (const auto& c : cells) {
    if (c.architecture != arch || c.scheme != scheme) continue;
    if (scheme == "clean" || c.blend == blend) return &c;
  }
  return nullptr;
}

std::string ResultTable::to_json() const {
  json j = json::array();
  for (const auto& c : cells) {
    j.push_back({{"architecture", c.architecture},
                 {"blend", blend_json(c.blend)},
                 {"scheme", c.scheme},
                 {"acc_clean", c.acc_clean},
                 {"acc_stamped", c.acc_stamped},
                 {"steps", c.steps},
                 {"seed", c.seed}});
  }
  return json{{"cells", j}}.dump(2) + "\n";
}

ResultTable ResultTable::from_json(std::string_view text) {
  ResultTable t;
  try {
    const json j = json::parse(text.begin(), text.end());
    for (const auto& c : j.at("cells")) {
      ResultCell cell;
      cell.architecture = c.at("architecture").get<std::string>();
      if (!c.at("blend").is_null()) cell.blend = c.at("blend").get<double>();
      cell.scheme = c.at("scheme").get<std::string>();
      cell.acc_clean = c.at("acc_clean").get<double>();
      cell.acc_stamped = c.at("acc_stamped").get<double>();
      cell.steps = c.at("steps").get<std::uint64_t>();
      cell.seed = c.at("seed").get<std::uint64_t>();
      t.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("result table JSON: ") + e.what(), 0);
  }
  return t;
}

RenderedReport render_report(const ResultTable& table) {
  RenderedReport out;

  out.csv = "architecture,blend,scheme,acc_clean,acc_stamped,steps,seed\n";
  for (const auto& c : table.cells) {
    out.csv += c.architecture + "," + (c.blend ? num(*c.blend) : std::string()) + "," + c.scheme + "," +
               num(c.acc_clean) + "," + num(c.acc_stamped) + "," + std::to_string(c.steps) + "," +
               std::to_string(c.seed) + "\n";
  }

  std::ostringstream md;
  md << "| Arch | Baseline | Blend | S | O | D | DeepStamp |\n";
  md << "|---|---|---|---|---|---|---|\n";
  auto grid = [&](bool stamped_eval) {
    for (const auto& [arch, blend] : grid_rows(table)) {
      const ResultCell* base = table.find(arch, "clean", std::nullopt);
      md << "| " << arch << " | " << (base ? pct(stamped_eval ? base->acc_stamped : base->acc_clean) : "-")
         << " | " << num(blend);
      for (const char* s : kSchemes) {
        const ResultCell* c = table.find(arch, s, blend);
        md << " | " << (c ? pct(stamped_eval ? c->acc_stamped : c->acc_clean) : "-");
      }
      md << " |\n";
    }
    // A clean-only plan still gets its baseline row.
    if (grid_rows(table).empty()) {
      for (const auto& arch : archs(table)) {
        const ResultCell* base = table.find(arch, "clean", std::nullopt);
        md << "| " << arch << " | " << (base ? pct(stamped_eval ? base->acc_stamped : base->acc_clean) : "-")
           << " | - | - | - | - | - |\n";
      }
    }
  };
  grid(false);
  json deltas{{"cells", json::array()}};
  if (!table.cells.empty()) {
    md << "\nAccuracy (%) on clean validation images (above) and on validation images stamped "
          "with the same scheme (below).\n\n";
    md << "| Arch | Baseline | Blend | S | O | D | DeepStamp |\n";
    md << "|---|---|---|---|---|---|---|\n";
    grid(true);

    md << "\nPublished full-scale CIFAR-10 reference (not reproduced at desk scale):\n\n";
    md << "| Arch | Baseline | Blend | S | O | D | DeepStamp |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : kReference) {
      md << "| " << r.arch << " | " << pct(r.baseline) << " | " << num(r.blend);
      for (double v : r.cells) md << " | " << pct(v);
      md << " |\n";
    }

    for (const auto& c : table.cells) {
      if (c.scheme == "clean") continue;
      const ResultCell* base = table.find(c.architecture, "clean", std::nullopt);
      json d{{"architecture", c.architecture}, {"blend", blend_json(c.blend)}, {"scheme", c.scheme}};
      d["delta_clean"] = base ? json(c.acc_clean - base->acc_clean) : json(nullptr);
      d["delta_stamped"] = base ? json(c.acc_stamped - base->acc_clean) : json(nullptr);
      deltas["cells"].push_back(d);
    }
    json ref = json::array();
    for (const auto& r : kReference) {
      for (std::size_t k = 0; k < kSchemes.size(); ++k) {
        if (std::isnan(r.cells[k])) continue;
        ref.push_back({{"architecture", r.arch},
                       {"blend", r.blend},
                       {"scheme", kSchemes[k]},
                       {"label", kSchemeHeads[k]},
                       {"delta", r.cells[k] - r.baseline}});
      }
    }
    deltas["reference"] = ref;
  }
  out.markdown = md.str();
  out.deltas_json = deltas.dump(2) + "\n";
  return out;
}

void write_report(const ResultTable& table, const std::filesystem::path& dir) {
  const auto r = render_report(table);
  std::filesystem::create_directories(dir / "reports");
  dataio::write_text_atomic(dir / "reports" / "table.md", r.markdown);
  dataio::write_text_atomic(dir / "reports" / "table.csv", r.csv);
  dataio::write_text_atomic(dir / "reports" / "deltas.json", r.deltas_json);
}

}  // namespace evalharness
}  // namespace deepstamp
