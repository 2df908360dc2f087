#include "mi3d/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "mi3d/errors.hpp"
#include "mi3d/parallel.hpp"

namespace mi3d {

std::string to_string(Task t) { return t == Task::kPrevalent ? "prevalent" : "incident"; }

std::string to_string(Method m) { return m == Method::kPointNet ? "pointnet" : "regression"; }

std::uint64_t ExperimentSpec::cell_id() const {
  return (task == Task::kPrevalent ? 0u : 1u) * 8u +
         (anatomy == AnatomySelection::kLv ? 0u : 1u) * 4u +
         (phases == PhaseSelection::kEs ? 0u : 1u) * 2u + (method == Method::kRegression ? 0u : 1u);
}

std::string ExperimentSpec::slug() const {
  std::string s = anatomy == AnatomySelection::kLv ? "lv" : "lvrv";
  s += phases == PhaseSelection::kEs ? "_es" : "_edes";
  s += method == Method::kRegression ? "_regression" : "_pointnet";
  return s;
}

std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, std::size_t k,
                                        std::uint64_t seed) {
  if (k < 2) throw ParameterError("stratified_kfold: k must be at least 2");
  if (labels.empty()) throw ParameterError("stratified_kfold: empty label vector");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [cls, members] : by_class) {
    if (members.size() < k) {
      throw StratificationError("class " + std::to_string(cls) + " has " +
                                std::to_string(members.size()) + " members, fewer than k=" +
                                std::to_string(k));
    }
  }

  Rng rng(derive_seed(seed, 0xF01Du));
  std::vector<std::vector<std::size_t>> val(k);
  for (auto& [cls, members] : by_class) {
    for (std::size_t i = members.size(); i > 1; --i) {
      std::size_t j = rng.uniform_index(i);
      std::swap(members[i - 1], members[j]);
    }
    for (std::size_t i = 0; i < members.size(); ++i) val[i % k].push_back(members[i]);
  }

  std::vector<FoldSplit> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(val[f].begin(), val[f].end());
    folds[f].val_indices = val[f];
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      folds[f].train_indices.insert(folds[f].train_indices.end(), val[g].begin(), val[g].end());
    }
    std::sort(folds[f].train_indices.begin(), folds[f].train_indices.end());
  }
  return folds;
}

namespace {

void check_scores_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (int y : labels) pos += y ? 1 : 0;
  if (pos == 0 || pos == labels.size()) {
    throw UndefinedAurocError("auroc undefined: labels contain a single class");
  }
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores_labels(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]]) {
        rank_sum_pos += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  const double p = static_cast<double>(positives);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores_labels(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::size_t positives = 0;
  for (int y : labels) positives += y ? 1 : 0;
  const std::size_t negatives = n - positives;

  std::vector<RocPoint> curve;
  curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]]) {
        ++tp;
      } else {
        ++fp;
      }
    }
    curve.push_back({scores[idx[i]], static_cast<double>(tp) / static_cast<double>(positives),
                     static_cast<double>(fp) / static_cast<double>(negatives)});
    i = j;
  }
  return curve;
}

double auroc_trapezoidal(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto curve = roc_curve(scores, labels);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
  }
  return area;
}

std::size_t input_channels_for(AnatomySelection anatomy, PhaseSelection phases) {
  std::size_t c = 3 + 2;  // xyz + LV endo/epi indicators
  if (anatomy == AnatomySelection::kLvRv) ++c;
  if (phases == PhaseSelection::kEdEs) ++c;
  return c;
}

TrainSample encode_subject(const SubjectSample& sample, AnatomySelection anatomy,
                           PhaseSelection phases) {
  const bool with_rv = anatomy == AnatomySelection::kLvRv;
  const bool with_ed = phases == PhaseSelection::kEdEs;
  const std::size_t channels = input_channels_for(anatomy, phases);

  auto selected = [with_rv](Structure s) {
    return with_rv || s != Structure::kRvEndo;
  };

  // ED-frame normalization over the selected structures.
  double cx = 0.0, cy = 0.0, cz = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < sample.ed_cloud.size(); ++i) {
    if (!selected(sample.ed_cloud.structures[i])) continue;
    cx += sample.ed_cloud.points[i][0];
    cy += sample.ed_cloud.points[i][1];
    cz += sample.ed_cloud.points[i][2];
    ++count;
  }
  if (count == 0) throw EmptyCloudError("encode_subject: no points in the selected structures");
  cx /= static_cast<double>(count);
  cy /= static_cast<double>(count);
  cz /= static_cast<double>(count);
  double max_radius = 0.0;
  for (std::size_t i = 0; i < sample.ed_cloud.size(); ++i) {
    if (!selected(sample.ed_cloud.structures[i])) continue;
    const auto& p = sample.ed_cloud.points[i];
    const double r = std::sqrt((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy) +
                               (p[2] - cz) * (p[2] - cz));
    max_radius = std::max(max_radius, r);
  }
  if (max_radius <= 0.0) throw EmptyCloudError("encode_subject: degenerate ED cloud");

  TrainSample out;
  out.channels = channels;
  auto append_cloud = [&](const PointCloud& cloud, double phase_value) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Structure st = cloud.structures[i];
      if (!selected(st)) continue;
      const auto& p = cloud.points[i];
      out.values.push_back((p[0] - cx) / max_radius);
      out.values.push_back((p[1] - cy) / max_radius);
      out.values.push_back((p[2] - cz) / max_radius);
      out.values.push_back(st == Structure::kLvEndo ? 1.0 : 0.0);
      out.values.push_back(st == Structure::kLvEpi ? 1.0 : 0.0);
      if (with_rv) out.values.push_back(st == Structure::kRvEndo ? 1.0 : 0.0);
      if (with_ed) out.values.push_back(phase_value);
      ++out.n_points;
    }
  };
  if (with_ed) append_cloud(sample.ed_cloud, 0.0);
  append_cloud(sample.es_cloud, 1.0);
  return out;
}

TaskDataset task_dataset(const std::vector<SubjectSample>& cohort, Task task) {
  const ClassLabel mi_class =
      task == Task::kPrevalent ? ClassLabel::kPrevalentMi : ClassLabel::kIncidentMi;
  TaskDataset ds;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (cohort[i].label == ClassLabel::kNormal) {
      ds.subject_indices.push_back(i);
      ds.labels.push_back(0);
    } else if (cohort[i].label == mi_class) {
      ds.subject_indices.push_back(i);
      ds.labels.push_back(1);
    }
  }
  return ds;
}

namespace {

FoldResult run_regression_fold(const ExperimentSpec& spec, const HarnessConfig& config,
                               const std::vector<SubjectSample>& cohort, const TaskDataset& ds,
                               const std::vector<std::vector<double>>& features,
                               const FoldSplit& fold, std::size_t fold_index) {
  std::vector<std::vector<double>> train_x;
  std::vector<int> train_y;
  for (std::size_t idx : fold.train_indices) {
    train_x.push_back(features[idx]);
    train_y.push_back(ds.labels[idx]);
  }
  const LogisticModel model = logistic_fit(train_x, train_y);

  FoldResult result;
  result.fold_index = fold_index;
  for (std::size_t idx : fold.val_indices) {
    result.subject_ids.push_back(cohort[ds.subject_indices[idx]].subject_id);
    result.scores.push_back(logistic_predict(model, features[idx]));
    result.labels.push_back(ds.labels[idx]);
  }
  result.auroc = auroc(result.scores, result.labels);
  (void)spec;
  (void)config;
  return result;
}

struct PointNetFoldOutput {
  FoldResult result;
  std::vector<double> dropout;
};

PointNetFoldOutput run_pointnet_fold(const ExperimentSpec& spec, const HarnessConfig& config,
                                     const std::vector<SubjectSample>& cohort,
                                     const TaskDataset& ds,
                                     const std::vector<TrainSample>& samples,
                                     const FoldSplit& fold, std::size_t fold_index) {
  ClassifierConfig cls = config.classifier;
  cls.input_channels = input_channels_for(spec.anatomy, spec.phases);

  const std::uint64_t fold_seed = derive_seed(spec.seed, spec.cell_id(), fold_index);
  TrainConfig tcfg = config.training;
  tcfg.seed = derive_seed(fold_seed, 0x17A11);

  std::vector<double> dropout = cls.dropout_probs;
  if (!config.dropout_grid.empty()) {
    if (config.dropout_grid.size() == 1) {
      dropout = config.dropout_grid.front();
    } else {
      // Nested tuning inside the fold's training split only.
      std::vector<TrainSample> inner_samples;
      std::vector<int> inner_labels;
      for (std::size_t idx : fold.train_indices) {
        inner_samples.push_back(samples[idx]);
        inner_labels.push_back(ds.labels[idx]);
      }
      const auto inner_folds = stratified_kfold(inner_labels, config.grid_inner_folds,
                                                derive_seed(fold_seed, 0x919D));
      TrainConfig inner_cfg = tcfg;
      inner_cfg.seed = derive_seed(fold_seed, 0x919E);
      const GridSearchResult gs =
          grid_search_dropout(cls, inner_samples, config.dropout_grid, inner_folds, inner_cfg);
      dropout = gs.best_setting;
    }
  }
  cls.dropout_probs = dropout;

  Model model = build_model(cls, derive_seed(fold_seed, 0xB11D));
  std::vector<TrainSample> train_set;
  for (std::size_t idx : fold.train_indices) train_set.push_back(samples[idx]);
  Model trained = train(model, train_set, tcfg);

  PointNetFoldOutput out;
  out.dropout = dropout;
  out.result.fold_index = fold_index;
  for (std::size_t idx : fold.val_indices) {
    out.result.subject_ids.push_back(cohort[ds.subject_indices[idx]].subject_id);
    out.result.scores.push_back(predict(trained, samples[idx]));
    out.result.labels.push_back(ds.labels[idx]);
  }
  out.result.auroc = auroc(out.result.scores, out.result.labels);
  return out;
}

}  // namespace

CellResult run_cell(const ExperimentSpec& spec, const std::vector<SubjectSample>& cohort,
                    const HarnessConfig& config) {
  const TaskDataset ds = task_dataset(cohort, spec.task);
  if (ds.subject_indices.empty()) throw DatasetError("run_cell: task dataset is empty");

  const auto folds =
      stratified_kfold(ds.labels, spec.folds, derive_seed(spec.seed, spec.cell_id()));

  CellResult result;
  result.spec = spec;
  result.folds.resize(folds.size());

  if (spec.method == Method::kRegression) {
    std::vector<std::vector<double>> features(ds.subject_indices.size());
    for (std::size_t i = 0; i < ds.subject_indices.size(); ++i) {
      features[i] = extract_features(cohort[ds.subject_indices[i]], spec.anatomy, spec.phases,
                                     config.estimator, config.n_discs);
    }
    for (std::size_t f = 0; f < folds.size(); ++f) {
      result.folds[f] = run_regression_fold(spec, config, cohort, ds, features, folds[f], f);
    }
  } else {
    std::vector<TrainSample> samples(ds.subject_indices.size());
    for (std::size_t i = 0; i < ds.subject_indices.size(); ++i) {
      samples[i] = encode_subject(cohort[ds.subject_indices[i]], spec.anatomy, spec.phases);
      samples[i].label = ds.labels[i];
    }
    std::vector<PointNetFoldOutput> outputs(folds.size());
    parallel_for(folds.size(), config.jobs, [&](std::size_t f) {
      outputs[f] = run_pointnet_fold(spec, config, cohort, ds, samples, folds[f], f);
    });
    for (std::size_t f = 0; f < folds.size(); ++f) {
      result.folds[f] = std::move(outputs[f].result);
    }
    result.chosen_dropout = outputs.front().dropout;
  }

  double mean = 0.0;
  for (const auto& fr : result.folds) mean += fr.auroc;
  result.mean_auroc = mean / static_cast<double>(result.folds.size());
  return result;
}

TableReport run_table(Task task, const std::vector<SubjectSample>& cohort,
                      const HarnessConfig& config, std::uint64_t seed) {
  struct RowSpec {
    AnatomySelection anatomy;
    PhaseSelection phases;
    Method method;
    const char* input_label;
  };
  const RowSpec layout[] = {
      {AnatomySelection::kLv, PhaseSelection::kEs, Method::kRegression, "ES Volume"},
      {AnatomySelection::kLv, PhaseSelection::kEs, Method::kPointNet, "ES 3D Shape"},
      {AnatomySelection::kLv, PhaseSelection::kEdEs, Method::kRegression, "Ejection Fraction"},
      {AnatomySelection::kLv, PhaseSelection::kEdEs, Method::kPointNet, "ED+ES 3D Shape"},
      {AnatomySelection::kLvRv, PhaseSelection::kEs, Method::kRegression, "ES Volume"},
      {AnatomySelection::kLvRv, PhaseSelection::kEs, Method::kPointNet, "ES 3D Shape"},
      {AnatomySelection::kLvRv, PhaseSelection::kEdEs, Method::kRegression, "Ejection Fraction"},
      {AnatomySelection::kLvRv, PhaseSelection::kEdEs, Method::kPointNet, "ED+ES 3D Shape"},
  };

  TableReport report;
  report.task = task;
  for (const auto& row : layout) {
    ExperimentSpec spec;
    spec.task = task;
    spec.anatomy = row.anatomy;
    spec.phases = row.phases;
    spec.method = row.method;
    spec.seed = seed;
    TableRow out;
    out.spec = spec;
    out.input_label = row.input_label;
    out.method_label = row.method == Method::kRegression ? "Regression" : "Proposed";
    out.result = run_cell(spec, cohort, config);
    report.rows.push_back(std::move(out));
  }
  for (std::size_t pair = 0; pair < report.rows.size() / 2; ++pair) {
    report.proposed_beats_regression.push_back(report.rows[2 * pair + 1].result.mean_auroc >
                                               report.rows[2 * pair].result.mean_auroc);
  }
  return report;
}

std::string format_table(const TableReport& report) {
  std::ostringstream os;
  os << "Task: " << to_string(report.task) << " MI\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %-18s %-12s %-8s %s\n", "Anatomy", "Input", "Method",
                "AUROC", "Beats regression");
  os << line;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& row = report.rows[i];
    std::string flag;
    if (row.spec.method == Method::kPointNet) {
      flag = report.proposed_beats_regression[i / 2] ? "yes" : "no";
    }
    std::snprintf(line, sizeof(line), "%-8s %-18s %-12s %-8.3f %s\n",
                  to_string(row.spec.anatomy).c_str(), row.input_label.c_str(),
                  row.method_label.c_str(), row.result.mean_auroc, flag.c_str());
    os << line;
  }
  return os.str();
}

namespace {

// Deterministic direction grid (Fibonacci sphere).
std::vector<Vec3> direction_grid(std::size_t n) {
  std::vector<Vec3> dirs;
  dirs.reserve(n);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return dirs;
}

bool within_truncation(const StarSurface& s, const Vec3& dir) {
  const double rho = s.radius(dir);
  return rho * dir[2] <= (2.0 * s.trunc_t - 1.0) * s.c + 1e-12;
}

double wall_thickness_along(const VentricleParams& p, const Vec3& dir) {
  return p.lv_epi.radius(dir) - p.lv_endo.radius(dir);
}

}  // namespace

double mean_wall_thickness(const VentricleParams& params) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Vec3& dir : direction_grid(256)) {
    if (!within_truncation(params.lv_endo, dir) || !within_truncation(params.lv_epi, dir)) continue;
    total += wall_thickness_along(params, dir);
    ++count;
  }
  if (count == 0) throw DomainError("mean_wall_thickness: no valid directions");
  return total / static_cast<double>(count);
}

double defect_thickening_ratio(const SubjectSample& sample) {
  // The cap of the subject's own defect when present, else the stock
  // defect region, so normal subjects get a comparable statistic.
  Vec3 cap_dir = RemodelingSpec{}.defect_dir;
  double cap_angle = RemodelingSpec{}.defect_angle;
  if (sample.params_es.lv_epi.dented()) {
    cap_dir = sample.params_es.lv_epi.dent_dir;
    cap_angle = sample.params_es.lv_epi.dent_angle;
  }
  const double nrm = std::sqrt(cap_dir[0] * cap_dir[0] + cap_dir[1] * cap_dir[1] +
                               cap_dir[2] * cap_dir[2]);
  cap_dir = {cap_dir[0] / nrm, cap_dir[1] / nrm, cap_dir[2] / nrm};

  double total = 0.0;
  std::size_t count = 0;
  for (const Vec3& dir : direction_grid(512)) {
    const double cos_alpha = dir[0] * cap_dir[0] + dir[1] * cap_dir[1] + dir[2] * cap_dir[2];
    if (std::acos(std::clamp(cos_alpha, -1.0, 1.0)) >= cap_angle) continue;
    if (!within_truncation(sample.params_es.lv_epi, dir) ||
        !within_truncation(sample.params_ed.lv_epi, dir)) {
      continue;
    }
    const double t_ed = wall_thickness_along(sample.params_ed, dir);
    const double t_es = wall_thickness_along(sample.params_es, dir);
    if (t_ed <= 0.0) continue;
    total += t_es / t_ed;
    ++count;
  }
  if (count == 0) throw DomainError("defect_thickening_ratio: no valid directions in cap");
  return total / static_cast<double>(count);
}

QualitativeReport qualitative_report(const CellResult& cell,
                                     const std::vector<SubjectSample>& cohort,
                                     std::size_t n_cases) {
  if (n_cases < 1) throw ParameterError("qualitative_report: n_cases must be at least 1");

  std::map<std::string, const SubjectSample*> by_id;
  for (const auto& s : cohort) by_id[s.subject_id] = &s;

  struct Scored {
    std::string id;
    double score;
    int label;
  };
  std::vector<Scored> pool;
  for (const auto& fold : cell.folds) {
    for (std::size_t i = 0; i < fold.scores.size(); ++i) {
      pool.push_back({fold.subject_ids[i], fold.scores[i], fold.labels[i]});
    }
  }
  if (pool.empty()) throw DatasetError("qualitative_report: cell has no retained scores");

  QualitativeReport report;
  auto emit_group = [&](int label) {
    std::vector<Scored> group;
    for (const auto& s : pool) {
      if (s.label == label) group.push_back(s);
    }
    // Correctness ranking: for MI cases high scores are good, for normal
    // cases low scores are good.
    std::sort(group.begin(), group.end(), [label](const Scored& a, const Scored& b) {
      return label == 1 ? a.score > b.score : a.score < b.score;
    });
    std::size_t take = n_cases;
    if (group.size() < 2 * n_cases) {
      report.truncated = true;
      take = std::min(n_cases, group.size() / 2 + group.size() % 2);
    }
    auto emit = [&](const Scored& s, bool good) {
      auto it = by_id.find(s.id);
      if (it == by_id.end()) throw DatasetError("qualitative_report: unknown subject " + s.id);
      const SubjectSample& subj = *it->second;
      QualitativeCase qc;
      qc.subject_id = s.id;
      qc.probability = s.score;
      qc.label = s.label;
      qc.good = good;
      qc.lv_edv_ml = subj.volumes.lv_edv_ml;
      qc.lv_esv_ml = subj.volumes.lv_esv_ml;
      qc.lv_ef = ejection_fraction(subj.volumes.lv_edv_ml, subj.volumes.lv_esv_ml);
      qc.mean_wall_ed_mm = mean_wall_thickness(subj.params_ed);
      qc.mean_wall_es_mm = mean_wall_thickness(subj.params_es);
      qc.defect_thickening_ratio = mi3d::defect_thickening_ratio(subj);
      report.cases.push_back(std::move(qc));
    };
    for (std::size_t i = 0; i < take && i < group.size(); ++i) emit(group[i], true);
    for (std::size_t i = 0; i < take && group.size() >= take + i + 1; ++i) {
      emit(group[group.size() - 1 - i], false);
    }
  };
  emit_group(1);
  emit_group(0);
  return report;
}

}  // namespace mi3d
