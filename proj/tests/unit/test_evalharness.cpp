#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "deepstamp/evalharness.hpp"
#include "deepstamp/stamping.hpp"
#include "deepstamp/synthetic.hpp"
#include "fixtures.hpp"

using namespace deepstamp;
using namespace deepstamp::evalharness;
using nlohmann::json;

namespace {

std::string read_text(const std::filesystem::path& p) {
  const auto b = dataio::read_file(p);
  return {b.begin(), b.end()};
}

config::Config tiny_plan(const std::filesystem::path& out) {
  auto c = config::parse(R"({
    "seed": 4,
    "data": {"train_subset": 64, "val_size": 32},
    "train": {"classifier": {"epochs": 1, "batch_size": 16},
              "stamped_classifier": {"epochs": 1, "batch_size": 16}},
    "plan": {"schemes": ["clean", "static", "opacity"], "blends": [0.5]}
  })");
  c.plan.output_dir = out.string();
  return c;
}

}  // namespace

TEST(Report, EmptyTableIsHeaderOnly) {
  const auto r = render_report({});
  EXPECT_EQ(r.csv, "architecture,blend,scheme,acc_clean,acc_stamped,steps,seed\n");
  EXPECT_EQ(r.markdown, "| Arch | Baseline | Blend | S | O | D | DeepStamp |\n|---|---|---|---|---|---|---|\n");
  EXPECT_TRUE(json::parse(r.deltas_json).at("cells").empty());
}

TEST(Report, DeltasAgainstCleanBaseline) {
  ResultTable t;
  t.cells.push_back({"F-small", std::nullopt, "clean", 60.0, 60.0, 10, 1});
  t.cells.push_back({"F-small", 0.5, "static", 57.5, 58.0, 10, 1});
  const auto r = render_report(t);
  const auto d = json::parse(r.deltas_json);
  ASSERT_EQ(d.at("cells").size(), 1u);
  EXPECT_DOUBLE_EQ(d["cells"][0]["delta_clean"].get<double>(), -2.5);
  EXPECT_DOUBLE_EQ(d["cells"][0]["delta_stamped"].get<double>(), -2.0);
  EXPECT_NE(r.markdown.find("| F-small | 60.00 | 0.5 | 57.50 | - | - | - |"), std::string::npos);
  EXPECT_FALSE(d.at("reference").empty());
}

TEST(ResultTableJson, RoundTrips) {
  ResultTable t;
  t.cells.push_back({"F-small", std::nullopt, "clean", 61.25, 60.5, 100, 3});
  t.cells.push_back({"F-alexnet", 1.0, "learned", 40.0, 39.0, 200, 4});
  const auto back = ResultTable::from_json(t.to_json());
  ASSERT_EQ(back.cells.size(), 2u);
  EXPECT_EQ(back.to_json(), t.to_json());
  EXPECT_FALSE(back.cells[0].blend);
  EXPECT_EQ(back.find("F-alexnet", "learned", 1.0)->seed, 4u);
  EXPECT_EQ(back.find("F-alexnet", "learned", 0.5), nullptr);
  EXPECT_THROW(ResultTable::from_json("{\"cells\": [{}]}"), FormatError);
}

TEST(CellName, Formats) {
  EXPECT_EQ(cell_name("static", 0.5), "static-0.5");
  EXPECT_EQ(cell_name("learned", 1.0), "learned-1");
}

TEST(Evaluate, StampedEqualToCleanGivesEqualAccuracies) {
  const auto x = synthetic::make_shapes(50, 1);
  const auto f = nets::build("F-small", 2);
  const auto a = evaluate(f, x, x);
  EXPECT_EQ(a.clean, a.stamped);
  EXPECT_THROW(evaluate(f, x, x.slice(0, 10)), DimensionError);
  EXPECT_THROW(evaluate(f, x.slice(0, 0), x.slice(0, 0)), DimensionError);
}

TEST(Splits, SyntheticSplitsAreDisjoint) {
  config::DataConfig d;
  d.train_subset = 100;
  d.val_size = 50;
  d.seed = 8;
  const auto s = load_splits(d);
  EXPECT_EQ(s.train.size(), 100u);
  EXPECT_EQ(s.val.size(), 50u);
  EXPECT_EQ(assert_disjoint(s), 0u);
  auto same = s;
  same.val_source = same.train_source;
  EXPECT_THROW(assert_disjoint(same), SpecError);
}

TEST(Splits, MissingCifarDirectoryIsIoError) {
  config::DataConfig d;
  d.source = config::DataSource::cifar;
  d.dir = "/nonexistent/cifar";
  EXPECT_THROW(load_splits(d), IoError);
}

TEST(RunPlan, ProducesTableAndResumes) {
  deepstamp::testing::TempDir dir("plan");
  const auto plan = tiny_plan(dir / "run");

  RunOptions stop;
  stop.stop_after = "stamp-static-0.5";
  EXPECT_TRUE(run_plan(plan, stop).cells.empty());
  auto manifest = json::parse(read_text(dir / "run" / "manifest.json"));
  EXPECT_EQ(manifest["phases"]["stamp-static-0.5"]["status"], "done");
  EXPECT_FALSE(manifest["phases"].contains("report"));

  std::vector<std::string> lines;
  RunOptions resume;
  resume.log = [&](const std::string& l) { lines.push_back(l); };
  const auto table = run_plan(plan, resume);
  EXPECT_NE(std::find(lines.begin(), lines.end(), "skip data (done)"), lines.end());
  EXPECT_NE(std::find(lines.begin(), lines.end(), "skip stamp-static-0.5 (done)"), lines.end());
  ASSERT_EQ(table.cells.size(), 3u);
  EXPECT_TRUE(table.find("F-small", "clean", std::nullopt));
  EXPECT_TRUE(table.find("F-small", "opacity", 0.5));
  for (const char* f : {"table.md", "table.csv", "deltas.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "reports" / f)) << f;
  }

  // A second full pass is all skips and reproduces the table.
  lines.clear();
  EXPECT_EQ(run_plan(plan, resume).to_json(), table.to_json());
  for (const auto& l : lines) EXPECT_EQ(l.rfind("skip", 0), 0u) << l;

  // The same directory spelled differently still resumes.
  auto respelled = plan;
  respelled.plan.output_dir = (dir / "." / "run").string();
  lines.clear();
  EXPECT_EQ(run_plan(respelled, resume).to_json(), table.to_json());
  for (const auto& l : lines) EXPECT_EQ(l.rfind("skip", 0), 0u) << l;

  // Same directory, different plan.
  auto other = plan;
  other.seed = 99;
  EXPECT_THROW(run_plan(other, resume), ConfigError);
}
