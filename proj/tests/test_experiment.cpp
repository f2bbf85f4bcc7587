#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clf/experiment.hpp"

using namespace clf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "clf_experiment_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// fast settings for driver tests: tiny corpus, tiny model, one epoch
ExperimentConfig tiny_experiment(const fs::path& out, Method method = Method::FineTune,
                                 DebiasKind kind = DebiasKind::None) {
  ExperimentConfig cfg;
  cfg.synth.n_train = 160;
  cfg.synth.n_validation = 40;
  cfg.synth.n_test = 80;
  cfg.synth.tokens_per_sample = 6;
  cfg.model.d_emb = 8;
  cfg.model.d_h = 8;
  cfg.train.method = method;
  cfg.train.debiaser.kind = kind;
  cfg.train.epochs = 1;
  cfg.train.mtl_epochs = 1;
  cfg.train.batch_size = 32;
  cfg.sequences.mode = SequenceSpec::Mode::Explicit;
  cfg.sequences.order = {AttributeKind::Age, AttributeKind::Gender};
  cfg.seeds = {1};
  cfg.out_dir = out.string();
  cfg.parallel = 1;
  return cfg;
}

}  // namespace

TEST_CASE("experiment config json round-trips") {
  ExperimentConfig cfg = tiny_experiment(fresh_dir("roundtrip"));
  cfg.train.debiaser.kind = DebiasKind::Pgd;
  cfg.train.gamma = 0.07;
  cfg.seeds = {3, 4};
  std::string text = cfg.to_json_string();
  ExperimentConfig parsed = ExperimentConfig::from_json_string(text);
  CHECK(parsed.to_json_string() == text);
  CHECK(parsed.train.debiaser.kind == DebiasKind::Pgd);
  CHECK(parsed.train.gamma == 0.07);
  CHECK(parsed.seeds == std::vector<uint64_t>{3, 4});
}

TEST_CASE("omitted loss weights default to the backbone's grid values") {
  std::string text = R"({
    "corpus": {"synthetic": {"n_train": 100, "n_validation": 10, "n_test": 10}},
    "train": {"method": "clf", "debiaser": {"kind": "atc"}},
    "seeds": [1],
    "out_dir": "x"
  })";
  ExperimentConfig cfg = ExperimentConfig::from_json_string(text);
  CHECK(cfg.train.gamma == 0.05);
  CHECK(cfg.train.alpha == 0.1);
  CHECK(cfg.train.sigma == 0.05);

  // explicit values win over the defaults
  std::string pinned = R"({
    "corpus": {"synthetic": {"n_train": 100, "n_validation": 10, "n_test": 10}},
    "train": {"method": "clf", "debiaser": {"kind": "atc"}, "gamma": 0.5},
    "seeds": [1],
    "out_dir": "x"
  })";
  CHECK(ExperimentConfig::from_json_string(pinned).train.gamma == 0.5);
}

TEST_CASE("config validation rejects bad input") {
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("not json"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string(R"({"seeds": []})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string(
                      R"({"sequences": {"mode": "wat"}, "seeds": [1], "out_dir": "x"})"),
                  ConfigError);
  ExperimentConfig cfg = tiny_experiment(fresh_dir("validate"));
  cfg.ablate = "everything";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("sequence resolution counts match the permutation design") {
  ExperimentConfig cfg = tiny_experiment(fresh_dir("sequences"));
  cfg.sequences.mode = SequenceSpec::Mode::All;
  CHECK(resolve_sequences(cfg).size() == 24);
  cfg.sequences.mode = SequenceSpec::Mode::Length;
  cfg.sequences.length = 2;
  CHECK(resolve_sequences(cfg).size() == 12);
  cfg.sequences.length = 3;
  CHECK(resolve_sequences(cfg).size() == 24);
  cfg.sequences.mode = SequenceSpec::Mode::Explicit;
  cfg.sequences.order = {AttributeKind::Country};
  CHECK(resolve_sequences(cfg).size() == 1);
}

TEST_CASE("job tags name the sequence and seed") {
  CHECK(job_tag({AttributeKind::Age, AttributeKind::Gender, AttributeKind::Country,
                 AttributeKind::Ethnicity}, 3) == "agce-seed3");
  CHECK(job_tag({}, 12) == "joint-seed12");
}

TEST_CASE("fairness_report computes bc from the stage history") {
  RunResult run;
  StageResult s1;
  s1.stage = 1;
  s1.focus = AttributeKind::Age;
  s1.fped = {0.05, 0.02, 0.02, 0.02};
  StageResult s2;
  s2.stage = 2;
  s2.focus = AttributeKind::Gender;
  s2.fped = {0.04, 0.06, 0.02, 0.02};
  s2.accuracy = 0.9;
  s2.f1_macro = 0.85;
  run.stages = {s1, s2};

  FairnessReport rep = fairness_report(run);
  CHECK(rep.accuracy == 0.9);
  CHECK(rep.aab == doctest::Approx((0.04 + 0.06 + 0.02 + 0.02) / 4.0));
  REQUIRE(rep.bc.has_value());
  // only stage 1's attribute contributes: fped(age) moved 0.05 -> 0.04
  CHECK(*rep.bc == doctest::Approx(-0.01));

  RunResult single;
  single.stages = {s1};
  CHECK(!fairness_report(single).bc.has_value());
}

TEST_CASE("gen writes splits and a manifest that tallies them") {
  fs::path dir = fresh_dir("gen");
  ExperimentConfig cfg = tiny_experiment(dir);
  cmd_gen(cfg);

  CHECK(fs::exists(dir / "train.jsonl"));
  CHECK(fs::exists(dir / "validation.jsonl"));
  CHECK(fs::exists(dir / "test.jsonl"));
  json manifest = json::parse(read_file(dir / "gen_manifest.json"));
  CHECK(manifest["record_type"] == "gen_manifest");
  CHECK(manifest["splits"]["train"]["count"] == 160);
  int64_t strata_total = 0;
  for (const json& v : manifest["splits"]["train"]["strata_counts"]) {
    strata_total += v.get<int64_t>();
  }
  CHECK(strata_total == 160);

  CHECK(load_jsonl((dir / "train.jsonl").string()).size() == 160);

  // byte-identical on a second run
  std::string before = read_file(dir / "train.jsonl");
  cmd_gen(cfg);
  CHECK(read_file(dir / "train.jsonl") == before);
}

TEST_CASE("gen manifest hate fraction tracks the configured rate") {
  fs::path dir = fresh_dir("gen_rate");
  ExperimentConfig cfg = tiny_experiment(dir);
  cfg.synth.n_train = 23276;
  cfg.synth.n_validation = 0;
  cfg.synth.n_test = 0;
  cmd_gen(cfg);
  json manifest = json::parse(read_file(dir / "gen_manifest.json"));
  double fraction = manifest["splits"]["train"]["hate_fraction"].get<double>();
  CHECK(std::abs(fraction - 6250.0 / 23276.0) < 0.01 * (6250.0 / 23276.0));
}

TEST_CASE("split produces k files and a distribution table") {
  fs::path gen_dir = fresh_dir("split_gen");
  ExperimentConfig cfg = tiny_experiment(gen_dir);
  cfg.synth.n_train = 400;
  cmd_gen(cfg);

  fs::path split_dir = fresh_dir("split_out");
  ExperimentConfig split_cfg = cfg;
  split_cfg.input_file = (gen_dir / "train.jsonl").string();
  split_cfg.out_dir = split_dir.string();
  cmd_split(split_cfg);

  json manifest = json::parse(read_file(split_dir / "split_manifest.json"));
  CHECK(manifest["files"].size() == 4);
  size_t total = 0;
  for (const json& name : manifest["files"]) {
    fs::path f = split_dir / name.get<std::string>();
    CHECK(fs::exists(f));
    total += load_jsonl(f.string()).size();
  }
  CHECK(total == 400);

  // table rows sum across subsets to the dataset column
  for (const auto& [attr, rows] : manifest["distribution"].items()) {
    for (const auto& [value, row] : rows.items()) {
      int64_t subset_sum = 0;
      for (const json& v : row["subsets"]) subset_sum += v.get<int64_t>();
      CHECK(subset_sum == row["dataset"].get<int64_t>());
    }
  }
}

TEST_CASE("run writes one result per job and resumes idempotently") {
  fs::path dir = fresh_dir("run");
  ExperimentConfig cfg = tiny_experiment(dir);
  cmd_run(cfg);

  fs::path result = dir / "result_finetune_none_ag-seed1.json";
  REQUIRE(fs::exists(result));
  json j = json::parse(read_file(result));
  CHECK(j["record_type"] == "run_result");
  CHECK(j["schema_version"] == 1);
  CHECK(j["stages"].size() == 2);
  CHECK(j["stages"][0]["confusion"]["age"]["groups"].size() == 2);
  CHECK(j["config_echo"]["train"]["method"] == "finetune");

  // rerun with the same config: nothing is recomputed, bytes are stable
  std::string before = read_file(result);
  cmd_run(cfg);
  CHECK(read_file(result) == before);

  // a changed run configuration invalidates the digest and reruns the job
  ExperimentConfig changed = cfg;
  changed.train.epochs = 2;
  cmd_run(changed);
  json j2 = json::parse(read_file(result));
  CHECK(j2["config_digest"] != j["config_digest"]);
}

TEST_CASE("all-permutations mode yields twenty-four result files") {
  fs::path dir = fresh_dir("run_all_perms");
  ExperimentConfig cfg = tiny_experiment(dir);
  cfg.synth.n_train = 80;
  cfg.synth.n_validation = 0;
  cfg.synth.n_test = 40;
  cfg.sequences.mode = SequenceSpec::Mode::All;
  cfg.parallel = 2;
  cmd_run(cfg);
  size_t results = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().rfind("result_", 0) == 0) ++results;
  }
  CHECK(results == 24);
}

TEST_CASE("identical configs give byte-identical summaries across directories") {
  fs::path dir_a = fresh_dir("det_a");
  fs::path dir_b = fresh_dir("det_b");
  ExperimentConfig a = tiny_experiment(dir_a);
  ExperimentConfig b = tiny_experiment(dir_b);
  cmd_run(a);
  cmd_run(b);
  fs::path rep_a = fresh_dir("det_rep_a");
  fs::path rep_b = fresh_dir("det_rep_b");
  cmd_report(dir_a.string(), rep_a.string());
  cmd_report(dir_b.string(), rep_b.string());
  CHECK(read_file(rep_a / "summary.csv") == read_file(rep_b / "summary.csv"));
}

TEST_CASE("run can persist final checkpoints that reload bit-exactly") {
  fs::path dir = fresh_dir("run_ckpt");
  ExperimentConfig cfg = tiny_experiment(dir);
  cfg.save_checkpoints = true;
  cmd_run(cfg);
  fs::path ckpt = dir / "model_finetune_none_ag-seed1.ckpt";
  REQUIRE(fs::exists(ckpt));
  ModelState m = ModelState::load(ckpt.string());
  CHECK(m.stage == 2);
  CHECK(m.config.d_h == 8);
}

TEST_CASE("mtl runs once per seed regardless of the sequence spec") {
  fs::path dir = fresh_dir("run_mtl");
  ExperimentConfig cfg = tiny_experiment(dir, Method::Mtl);
  cfg.sequences.mode = SequenceSpec::Mode::All;
  cfg.seeds = {1, 2};
  cmd_run(cfg);
  size_t results = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().rfind("result_", 0) == 0) ++results;
  }
  CHECK(results == 2);
  CHECK(fs::exists(dir / "result_mtl_none_joint-seed1.json"));
  CHECK(fs::exists(dir / "result_mtl_none_joint-seed2.json"));
}

TEST_CASE("ablation flags zero out the matching weight") {
  fs::path dir = fresh_dir("run_ablate");
  ExperimentConfig cfg = tiny_experiment(dir, Method::Clf, DebiasKind::Atc);
  cfg.train.gamma = 0.2;
  cfg.train.sigma = 0.3;
  cfg.ablate = "bir";
  cmd_run(cfg);
  json j = json::parse(read_file(dir / "result_clf_atc_ag-seed1.json"));
  CHECK(j["config_echo"]["train"]["sigma"] == 0.0);
  CHECK(j["config_echo"]["train"]["gamma"] == 0.2);
}

TEST_CASE("report aggregates results and keeps internal consistency") {
  fs::path dir = fresh_dir("report_runs");
  // two methods over the same two-task sequence
  ExperimentConfig ft = tiny_experiment(dir, Method::FineTune);
  cmd_run(ft);
  ExperimentConfig mtl = tiny_experiment(dir, Method::Mtl);
  cmd_run(mtl);

  fs::path report_dir = fresh_dir("report_out");
  cmd_report(dir.string(), report_dir.string());

  std::string csv = read_file(report_dir / "summary.csv");
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "method,debiaser,acc,f1_macro,fped_gender,fped_age,fped_country,fped_ethnicity,aab,bc,"
        "dto,acc_var,f1_macro_var,fped_gender_var,fped_age_var,fped_country_var,"
        "fped_ethnicity_var,aab_var,bc_var");
  int rows = 0;
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++rows;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() >= 11);
    // aab equals the mean of the four fped columns
    double mean_fped = (std::stod(cells[4]) + std::stod(cells[5]) + std::stod(cells[6]) +
                        std::stod(cells[7])) / 4.0;
    CHECK(std::stod(cells[8]) == doctest::Approx(mean_fped).epsilon(1e-6));
    // single runs report zero variance
    CHECK(std::stod(cells[11]) == 0.0);
  }
  CHECK(rows == 2);

  json report = json::parse(read_file(report_dir / "report.json"));
  CHECK(report["groups"].size() == 2);
  // the sequential run has a BC entry, the joint run does not
  CHECK(report["bc_table"].size() == 1);

  // report output is deterministic
  fs::path report_dir2 = fresh_dir("report_out2");
  cmd_report(dir.string(), report_dir2.string());
  CHECK(read_file(report_dir2 / "summary.csv") == csv);

  CHECK_THROWS_AS(cmd_report(fresh_dir("report_empty").string(), report_dir.string()),
                  InputError);
}

TEST_CASE("report pairs methods for significance when enough runs exist") {
  fs::path dir = fresh_dir("sig_runs");
  ExperimentConfig base = tiny_experiment(dir, Method::FineTune, DebiasKind::Atc);
  base.synth.n_train = 120;
  base.synth.n_test = 60;
  base.sequences.mode = SequenceSpec::Mode::Length;
  base.sequences.length = 2;  // 12 sequences
  base.seeds = {1};
  base.parallel = 2;
  cmd_run(base);
  ExperimentConfig clf_cfg = base;
  clf_cfg.train.method = Method::Clf;
  cmd_run(clf_cfg);

  fs::path report_dir = fresh_dir("sig_out");
  cmd_report(dir.string(), report_dir.string());
  json report = json::parse(read_file(report_dir / "report.json"));
  REQUIRE(report["significance"].size() == 1);
  const json& entry = report["significance"][0];
  CHECK(entry["debiaser"] == "atc");
  CHECK(entry["method_a"] == "clf");
  CHECK(entry["method_b"] == "finetune");
  CHECK(entry["paired_runs"] == 12);
  bool has_outcome = entry.contains("p_value") || entry.contains("skipped");
  CHECK(has_outcome);
}

TEST_CASE("run via files matches the construction pipeline") {
  // gen + split to files, then run from those files
  fs::path data = fresh_dir("files_data");
  ExperimentConfig gen_cfg = tiny_experiment(data);
  gen_cfg.synth.n_train = 200;
  cmd_gen(gen_cfg);
  ExperimentConfig split_cfg = gen_cfg;
  split_cfg.input_file = (data / "train.jsonl").string();
  cmd_split(split_cfg);

  fs::path out = fresh_dir("files_out");
  ExperimentConfig run_cfg = tiny_experiment(out);
  run_cfg.use_synthetic = false;
  run_cfg.subset_files = {
      (data / "subset_age.jsonl").string(),
      (data / "subset_gender.jsonl").string(),
      (data / "subset_country.jsonl").string(),
      (data / "subset_ethnicity.jsonl").string(),
  };
  run_cfg.subset_focuses = {AttributeKind::Age, AttributeKind::Gender, AttributeKind::Country,
                            AttributeKind::Ethnicity};
  run_cfg.test_file = (data / "test.jsonl").string();
  run_cfg.hash_dims = gen_cfg.synth.vocab_size();
  cmd_run(run_cfg);
  CHECK(fs::exists(out / "result_finetune_none_ag-seed1.json"));
}
