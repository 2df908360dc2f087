#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mi3d/errors.hpp"
#include "mi3d/experiment.hpp"

using namespace mi3d;

namespace {

CohortConfig small_cohort_config(std::size_t per_class, std::size_t points, bool noise_free) {
  CohortConfig c = CohortConfig::defaults();
  c.n_normal = per_class;
  c.n_prevalent = per_class;
  c.n_incident = 0;
  c.population.points_per_structure = points;
  if (noise_free) {
    c.normal.volume_change.std = 0.005;
    c.prevalent.volume_change.std = 0.005;
    c.normal.rv_volume_change.std = 0.005;
    c.prevalent.rv_volume_change.std = 0.005;
  }
  return c;
}

HarnessConfig tiny_harness() {
  HarnessConfig h;
  h.classifier.use_input_tnet = false;
  h.classifier.use_feature_tnet = false;
  h.classifier.encoder_widths = {8, 16};
  h.classifier.head_widths = {8, 1};
  h.classifier.dropout_probs = {0.0};
  h.classifier.use_batch_norm = false;
  h.training.batch_size = 8;
  h.training.learning_rate = 0.0;
  h.training.epochs = 1;
  h.estimator = VolumeEstimator::kAnalytic;
  return h;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("stratified folds on 8 balanced subjects put one of each class per fold") {
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1};
  const auto folds = stratified_kfold(labels, 4, 9);
  REQUIRE(folds.size() == 4);
  for (const auto& fold : folds) {
    REQUIRE(fold.val_indices.size() == 2);
    CHECK(labels[fold.val_indices[0]] + labels[fold.val_indices[1]] == 1);
    CHECK(fold.train_indices.size() == 6);
  }
}

TEST_CASE("validation splits are disjoint and exhaustive") {
  std::vector<int> labels;
  for (int i = 0; i < 103; ++i) labels.push_back(i % 3 == 0 ? 1 : 0);
  const auto folds = stratified_kfold(labels, 4, 10);
  std::set<std::size_t> seen;
  for (const auto& fold : folds) {
    for (std::size_t idx : fold.val_indices) {
      CHECK(seen.insert(idx).second);  // disjoint
    }
    // train = complement of validation
    std::set<std::size_t> val(fold.val_indices.begin(), fold.val_indices.end());
    for (std::size_t idx : fold.train_indices) CHECK(val.count(idx) == 0);
    CHECK(fold.train_indices.size() + fold.val_indices.size() == labels.size());
  }
  CHECK(seen.size() == labels.size());  // exhaustive
}

TEST_CASE("per-class fold counts on the 539/294/235 cohort stay within one") {
  std::vector<int> labels;
  for (int i = 0; i < 539; ++i) labels.push_back(0);
  for (int i = 0; i < 294; ++i) labels.push_back(1);
  for (int i = 0; i < 235; ++i) labels.push_back(2);
  const auto folds = stratified_kfold(labels, 4, 11);
  const std::size_t expected[3] = {539, 294, 235};
  for (int cls = 0; cls < 3; ++cls) {
    std::size_t lo = labels.size(), hi = 0;
    for (const auto& fold : folds) {
      std::size_t count = 0;
      for (std::size_t idx : fold.val_indices) {
        if (labels[idx] == cls) ++count;
      }
      lo = std::min(lo, count);
      hi = std::max(hi, count);
    }
    CHECK(hi - lo <= 1);
    CHECK(hi * 4 >= expected[cls]);
  }
}

TEST_CASE("splits are a pure function of (labels, k, seed)") {
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 2);
  const auto a = stratified_kfold(labels, 4, 123);
  const auto b = stratified_kfold(labels, 4, 123);
  const auto c = stratified_kfold(labels, 4, 124);
  bool same = true, different = false;
  for (std::size_t f = 0; f < a.size(); ++f) {
    same = same && a[f].val_indices == b[f].val_indices;
    different = different || a[f].val_indices != c[f].val_indices;
  }
  CHECK(same);
  CHECK(different);
}

TEST_CASE("a class smaller than k raises a stratification error") {
  std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(stratified_kfold(labels, 4, 1), StratificationError);
}

TEST_CASE("auroc hand-enumerated example equals 0.75") {
  // pairs: (0.35 vs 0.1) +, (0.35 vs 0.4) -, (0.8 vs 0.1) +, (0.8 vs 0.4) +
  const std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> labels = {0, 0, 1, 1};
  CHECK(auroc(scores, labels) == 0.75);
  CHECK(auroc_trapezoidal(scores, labels) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("auroc edge values") {
  CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), UndefinedAurocError);
  CHECK_THROWS_AS(auroc({0.1}, {1, 0}), DimensionError);
}

TEST_CASE("auroc is exactly invariant under strictly increasing transforms") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.uniform_index(60);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    labels[0] = 0;
    labels[1] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform(-3.0, 3.0);
      if (i > 1) labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    std::vector<double> transformed(n);
    for (std::size_t i = 0; i < n; ++i) transformed[i] = std::exp(scores[i]);
    CHECK(auroc(scores, labels) == auroc(transformed, labels));
  }
}

TEST_CASE("auroc(s) + auroc(-s) = 1 without ties") {
  Rng rng(13);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 41; ++i) {
    scores.push_back(rng.normal());  // continuous draws: ties have measure zero
    labels.push_back(i % 3 == 0 ? 1 : 0);
  }
  std::vector<double> neg(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) neg[i] = -scores[i];
  CHECK(auroc(scores, labels) + auroc(neg, labels) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rank and trapezoidal routes agree within 1e-12 including ties") {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(199);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    labels[0] = 0;
    labels[1] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse grid forces plenty of ties
      scores[i] = static_cast<double>(rng.uniform_index(12)) / 11.0;
      if (i > 1) labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    CHECK(std::abs(auroc(scores, labels) - auroc_trapezoidal(scores, labels)) < 1e-12);
  }
}

TEST_CASE("input encoding drops channels by selection and keeps ED-frame scale") {
  CHECK(input_channels_for(AnatomySelection::kLv, PhaseSelection::kEs) == 5);
  CHECK(input_channels_for(AnatomySelection::kLv, PhaseSelection::kEdEs) == 6);
  CHECK(input_channels_for(AnatomySelection::kLvRv, PhaseSelection::kEs) == 6);
  CHECK(input_channels_for(AnatomySelection::kLvRv, PhaseSelection::kEdEs) == 7);

  CohortConfig c = small_cohort_config(1, 64, true);
  auto cohort = generate_cohort(c, 21);
  const SubjectSample& s = cohort[0];

  TrainSample es_lv = encode_subject(s, AnatomySelection::kLv, PhaseSelection::kEs);
  CHECK(es_lv.channels == 5);
  CHECK(es_lv.n_points == 2 * 64);  // ES LV endo + epi only

  TrainSample full = encode_subject(s, AnatomySelection::kLvRv, PhaseSelection::kEdEs);
  CHECK(full.channels == 7);
  CHECK(full.n_points == 2 * 3 * 64);

  // ED block first (phase channel 0), ES second (phase channel 1)
  CHECK(full.values[6] == 0.0);
  CHECK(full.values[(full.n_points - 1) * 7 + 6] == 1.0);

  // all coordinates inside the ED-frame unit sphere, with slack for ES
  double max_r = 0.0;
  for (std::size_t i = 0; i < full.n_points; ++i) {
    const double r = std::sqrt(full.values[i * 7 + 0] * full.values[i * 7 + 0] +
                               full.values[i * 7 + 1] * full.values[i * 7 + 1] +
                               full.values[i * 7 + 2] * full.values[i * 7 + 2]);
    max_r = std::max(max_r, r);
  }
  CHECK(max_r <= 1.5);
  CHECK(max_r > 0.5);
}

TEST_CASE("task datasets pair each MI class with the shared normal pool") {
  CohortConfig c = CohortConfig::defaults();
  c.n_normal = 6;
  c.n_prevalent = 4;
  c.n_incident = 5;
  c.population.points_per_structure = 2;
  auto cohort = generate_cohort(c, 22);

  const TaskDataset prevalent = task_dataset(cohort, Task::kPrevalent);
  CHECK(prevalent.subject_indices.size() == 10);
  CHECK(std::count(prevalent.labels.begin(), prevalent.labels.end(), 1) == 4);

  const TaskDataset incident = task_dataset(cohort, Task::kIncident);
  CHECK(incident.subject_indices.size() == 11);
  CHECK(std::count(incident.labels.begin(), incident.labels.end(), 1) == 5);
}

TEST_CASE("regression cell on a noise-free separated cohort scores above 0.9") {
  CohortConfig c = small_cohort_config(16, 96, true);
  auto cohort = generate_cohort(c, 23);
  ExperimentSpec spec;
  spec.task = Task::kPrevalent;
  spec.anatomy = AnatomySelection::kLv;
  spec.phases = PhaseSelection::kEdEs;
  spec.method = Method::kRegression;
  spec.seed = 24;
  HarnessConfig h = tiny_harness();
  CellResult cell = run_cell(spec, cohort, h);
  REQUIRE(cell.folds.size() == 4);
  CHECK(cell.mean_auroc > 0.9);
}

TEST_CASE("untrained pointnet cell stays in the chance band") {
  CohortConfig c = small_cohort_config(12, 32, false);
  auto cohort = generate_cohort(c, 25);
  ExperimentSpec spec;
  spec.task = Task::kPrevalent;
  spec.anatomy = AnatomySelection::kLv;
  spec.phases = PhaseSelection::kEs;
  spec.method = Method::kPointNet;
  spec.seed = 26;
  HarnessConfig h = tiny_harness();  // learning_rate = 0
  CellResult cell = run_cell(spec, cohort, h);
  CHECK(cell.mean_auroc > 0.35);
  CHECK(cell.mean_auroc < 0.65);
}

TEST_CASE("run_cell is deterministic in (spec, seed)") {
  CohortConfig c = small_cohort_config(10, 32, false);
  auto cohort = generate_cohort(c, 27);
  ExperimentSpec spec;
  spec.task = Task::kPrevalent;
  spec.anatomy = AnatomySelection::kLv;
  spec.phases = PhaseSelection::kEs;
  spec.method = Method::kPointNet;
  spec.seed = 28;
  HarnessConfig h = tiny_harness();
  h.training.learning_rate = 1e-3;
  h.training.epochs = 3;
  CellResult a = run_cell(spec, cohort, h);
  CellResult b = run_cell(spec, cohort, h);
  REQUIRE(a.folds.size() == b.folds.size());
  for (std::size_t f = 0; f < a.folds.size(); ++f) {
    CHECK(a.folds[f].auroc == b.folds[f].auroc);
    CHECK(a.folds[f].scores == b.folds[f].scores);
  }

  // validation data never reaches the fold's training set
  const TaskDataset ds = task_dataset(cohort, spec.task);
  const auto folds = stratified_kfold(ds.labels, spec.folds, derive_seed(spec.seed, spec.cell_id()));
  for (const auto& fold : folds) {
    std::set<std::size_t> train(fold.train_indices.begin(), fold.train_indices.end());
    for (std::size_t idx : fold.val_indices) CHECK(train.count(idx) == 0);
  }
}

TEST_CASE("run_table emits the eight published rows in order") {
  CohortConfig c = small_cohort_config(10, 32, true);
  auto cohort = generate_cohort(c, 29);
  HarnessConfig h = tiny_harness();
  TableReport report = run_table(Task::kPrevalent, cohort, h, 30);
  REQUIRE(report.rows.size() == 8);
  const std::vector<std::string> expected_inputs = {
      "ES Volume", "ES 3D Shape", "Ejection Fraction", "ED+ES 3D Shape",
      "ES Volume", "ES 3D Shape", "Ejection Fraction", "ED+ES 3D Shape"};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(report.rows[i].input_label == expected_inputs[i]);
    CHECK(report.rows[i].method_label == (i % 2 == 0 ? "Regression" : "Proposed"));
    CHECK(to_string(report.rows[i].spec.anatomy) == (i < 4 ? "LV" : "LV+RV"));
  }
  REQUIRE(report.proposed_beats_regression.size() == 4);
  const std::string table = format_table(report);
  CHECK(table.find("ES Volume") != std::string::npos);
  CHECK(table.find("Proposed") != std::string::npos);
}

TEST_CASE("qualitative report selects extremes from validation scores only") {
  CohortConfig c = small_cohort_config(14, 64, false);
  auto cohort = generate_cohort(c, 31);
  ExperimentSpec spec;
  spec.task = Task::kPrevalent;
  spec.anatomy = AnatomySelection::kLv;
  spec.phases = PhaseSelection::kEdEs;
  spec.method = Method::kRegression;
  spec.seed = 32;
  HarnessConfig h = tiny_harness();
  CellResult cell = run_cell(spec, cohort, h);

  QualitativeReport report = qualitative_report(cell, cohort, 2);
  CHECK(report.cases.size() == 8);  // 2 cases x good/bad x MI/normal

  std::set<std::string> scored_ids;
  for (const auto& fold : cell.folds) {
    for (const auto& id : fold.subject_ids) scored_ids.insert(id);
  }
  for (const auto& qc : report.cases) {
    CHECK(scored_ids.count(qc.subject_id) == 1);
    CHECK(qc.lv_ef > 0.0);
    CHECK(qc.lv_ef < 1.0);
    CHECK(qc.mean_wall_ed_mm > 0.0);
    CHECK(qc.defect_thickening_ratio > 0.0);
  }

  // the dual-signal pattern: well-classified MI cases have lower EF and a
  // lower thickening ratio than misclassified ones on average
  double good_ef = 0, bad_ef = 0, good_thick = 0, bad_thick = 0;
  int n_good = 0, n_bad = 0;
  for (const auto& qc : report.cases) {
    if (qc.label != 1) continue;
    if (qc.good) {
      good_ef += qc.lv_ef;
      good_thick += qc.defect_thickening_ratio;
      ++n_good;
    } else {
      bad_ef += qc.lv_ef;
      bad_thick += qc.defect_thickening_ratio;
      ++n_bad;
    }
  }
  REQUIRE(n_good == 2);
  REQUIRE(n_bad == 2);
  CHECK(good_ef / n_good < bad_ef / n_bad);
  CHECK(good_thick / n_good < bad_thick / n_bad);

  // requesting more cases than available flags the report
  QualitativeReport big = qualitative_report(cell, cohort, 50);
  CHECK(big.truncated);
}

}  // TEST_SUITE
