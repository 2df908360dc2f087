// Command-line driver for the synthetic cardiac shape benchmark: cohort
// generation, the classification/regression experiment grid, the slice
// misalignment demo, qualitative reports and dropout tuning.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "mi3d/errors.hpp"
#include "mi3d/experiment.hpp"
#include "mi3d/pointnet.hpp"
#include "mi3d/run_config.hpp"
#include "mi3d/runtime.hpp"
#include "mi3d/slices.hpp"
#include "mi3d/subject_io.hpp"

namespace fs = std::filesystem;
using namespace mi3d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitComputeError = 1;
constexpr int kExitConfigError = 2;

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Wall-clock timestamps go only into run.log so every other artifact is
// byte-reproducible.
class RunLog {
 public:
  explicit RunLog(const fs::path& dir) : os_(dir / "run.log", std::ios::app) {}

  void note(const std::string& msg) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    os_ << stamp << "Z " << msg << "\n";
    os_.flush();
  }

 private:
  std::ofstream os_;
};

fs::path resolve_output_dir(const RunConfig& config, const std::string& subcommand) {
  if (!config.output_dir.empty()) return config.output_dir;
  const char* root = std::getenv("MI3D_OUTPUT_ROOT");
  return fs::path(root ? root : "mi3d-out") / subcommand;
}

fs::path prepare_output_dir(const RunConfig& config, const std::string& subcommand) {
  fs::path dir = resolve_output_dir(config, subcommand);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::is_directory(dir)) {
    throw FilesystemError("cannot create output directory: " + dir.string());
  }
  atomic_write_text(dir / "config.resolved", serialize_run_config(config));
  return dir;
}

std::vector<SubjectSample> load_or_generate_cohort(const RunConfig& config, RunLog& log) {
  if (!config.cohort_dir.empty()) {
    const fs::path dir = config.cohort_dir;
    const auto entries = parse_manifest(read_text_file(dir / "cohort.manifest"));
    std::vector<SubjectSample> cohort;
    cohort.reserve(entries.size());
    for (const auto& e : entries) cohort.push_back(read_subject_file(dir / e.filename));
    log.note("loaded " + std::to_string(cohort.size()) + " subjects from " + dir.string());
    return cohort;
  }
  if (!config.generate_on_the_fly) {
    throw ConfigError("no cohort_dir given and generate_on_the_fly is disabled");
  }
  auto cohort = generate_cohort(cohort_config_from(config), config.seed);
  log.note("generated " + std::to_string(cohort.size()) + " subjects (seed " +
           std::to_string(config.seed) + ")");
  return cohort;
}

std::string scores_csv(const CellResult& cell) {
  std::ostringstream os;
  os << "subject_id,fold,label,score\n";
  for (const auto& fold : cell.folds) {
    for (std::size_t i = 0; i < fold.scores.size(); ++i) {
      os << fold.subject_ids[i] << ',' << fold.fold_index << ',' << fold.labels[i] << ','
         << format_metric(fold.scores[i]) << '\n';
    }
  }
  return os.str();
}

std::string roc_csv(const CellResult& cell) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& fold : cell.folds) {
    scores.insert(scores.end(), fold.scores.begin(), fold.scores.end());
    labels.insert(labels.end(), fold.labels.begin(), fold.labels.end());
  }
  std::ostringstream os;
  os << "threshold,tpr,fpr\n";
  for (const auto& pt : roc_curve(scores, labels)) {
    os << (std::isinf(pt.threshold) ? "inf" : format_metric(pt.threshold)) << ','
       << format_metric(pt.tpr) << ',' << format_metric(pt.fpr) << '\n';
  }
  return os.str();
}

int cmd_generate(const RunConfig& config) {
  const fs::path dir = prepare_output_dir(config, "generate");
  RunLog log(dir);
  log.note("generate start");

  const auto cohort = generate_cohort(cohort_config_from(config), config.seed);
  std::vector<ManifestEntry> manifest;
  manifest.reserve(cohort.size());
  for (const auto& subject : cohort) {
    const std::string filename = subject.subject_id + ".subject";
    write_subject_file(subject, dir / filename);
    manifest.push_back({filename, subject.label});
  }
  atomic_write_text(dir / "cohort.manifest", serialize_manifest(manifest));

  // Generation report: class counts and EF summaries.
  std::map<std::string, std::vector<double>> efs;
  for (const auto& s : cohort) {
    efs[to_string(s.label)].push_back(
        ejection_fraction(s.volumes.lv_edv_ml, s.volumes.lv_esv_ml));
  }
  std::ostringstream report;
  report << "subjects=" << cohort.size() << '\n';
  for (const auto& [label, values] : efs) {
    double mean = 0.0, var = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    report << label << ".count=" << values.size() << '\n'
           << label << ".lv_ef_mean=" << format_metric(mean) << '\n'
           << label << ".lv_ef_std=" << format_metric(std::sqrt(var)) << '\n';
  }
  atomic_write_text(dir / "generation_report.txt", report.str());

  log.note("generate done");
  std::cout << "wrote " << cohort.size() << " subjects to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_run(const RunConfig& config) {
  const fs::path dir = prepare_output_dir(config, "run");
  RunLog log(dir);
  log.note("run start");

  const auto cohort = load_or_generate_cohort(config, log);
  const HarnessConfig harness = harness_config_from(config);
  const auto specs = cells_from(config);

  std::vector<CellResult> results;
  bool any_failed = false;
  std::ostringstream results_os;
  results_os << "task,anatomy,phases,method,fold,auroc\n";

  for (const auto& spec : specs) {
    try {
      log.note("cell " + spec.slug() + " start");
      CellResult cell = run_cell(spec, cohort, harness);
      for (const auto& fold : cell.folds) {
        results_os << to_string(spec.task) << ',' << to_string(spec.anatomy) << ','
                   << to_string(spec.phases) << ',' << to_string(spec.method) << ','
                   << fold.fold_index << ',' << format_metric(fold.auroc) << '\n';
      }
      results_os << to_string(spec.task) << ',' << to_string(spec.anatomy) << ','
                 << to_string(spec.phases) << ',' << to_string(spec.method) << ",mean,"
                 << format_metric(cell.mean_auroc) << '\n';
      atomic_write_text(dir / ("roc_" + spec.slug() + ".csv"), roc_csv(cell));
      if (config.retain_scores) {
        atomic_write_text(dir / ("scores_" + spec.slug() + ".csv"), scores_csv(cell));
      }
      log.note("cell " + spec.slug() + " mean auroc " + format_metric(cell.mean_auroc));
      results.push_back(std::move(cell));
    } catch (const std::exception& e) {
      any_failed = true;
      log.note("cell " + spec.slug() + " FAILED: " + e.what());
      std::cerr << "cell " << spec.slug() << " failed: " << e.what() << "\n";
    }
  }
  atomic_write_text(dir / "results.csv", results_os.str());

  // Full-grid runs also get the published table layout with the
  // proposed-vs-regression flag column.
  if (config.cells == "all" && !any_failed) {
    TableReport report;
    report.task = task_from(config);
    const char* input_labels[] = {"ES Volume", "ES 3D Shape", "Ejection Fraction",
                                  "ED+ES 3D Shape"};
    // results arrive in (anatomy x phases x method) order; rebuild the
    // published row order: per anatomy, ES regression, ES pointnet,
    // ED+ES regression, ED+ES pointnet.
    auto find_cell = [&](AnatomySelection a, PhaseSelection p, Method m) -> const CellResult& {
      for (const auto& c : results) {
        if (c.spec.anatomy == a && c.spec.phases == p && c.spec.method == m) return c;
      }
      throw Error("missing cell in full-grid results");
    };
    for (AnatomySelection a : {AnatomySelection::kLv, AnatomySelection::kLvRv}) {
      int li = 0;
      for (PhaseSelection p : {PhaseSelection::kEs, PhaseSelection::kEdEs}) {
        for (Method m : {Method::kRegression, Method::kPointNet}) {
          TableRow row;
          row.result = find_cell(a, p, m);
          row.spec = row.result.spec;
          row.input_label = input_labels[li++];
          row.method_label = m == Method::kRegression ? "Regression" : "Proposed";
          report.rows.push_back(std::move(row));
        }
      }
    }
    for (std::size_t pair = 0; pair < report.rows.size() / 2; ++pair) {
      report.proposed_beats_regression.push_back(report.rows[2 * pair + 1].result.mean_auroc >
                                                 report.rows[2 * pair].result.mean_auroc);
    }
    atomic_write_text(dir / "table.txt", format_table(report));
    std::cout << format_table(report);
  }

  log.note(any_failed ? "run finished with failures" : "run done");
  return any_failed ? kExitComputeError : kExitOk;
}

int cmd_align_demo(const RunConfig& config) {
  const fs::path dir = prepare_output_dir(config, "align-demo");
  RunLog log(dir);
  log.note("align-demo start");

  CohortConfig cohort_cfg = cohort_config_from(config);
  const AcquisitionConfig acq_cfg = acquisition_config_from(config);

  std::ostringstream os;
  os << "subject_id,slice,z,injected_x,injected_y,recovered_x,recovered_y,error_mm,corrected\n";
  std::vector<double> errors;
  for (std::size_t i = 0; i < config.align_subjects; ++i) {
    Rng subject_rng(derive_seed(config.seed, 0xA115, i));
    SubjectSample subject = generate_subject(cohort_cfg.normal, cohort_cfg.population, subject_rng);
    char id[16];
    std::snprintf(id, sizeof(id), "A%06zu", i);
    subject.subject_id = id;

    const SliceAcquisition clean = slice_sample(subject, acq_cfg);
    Rng shift_rng(derive_seed(config.seed, 0xA116, i));
    const SliceAcquisition shifted = inject_misalignment(clean, config.shift_std, shift_rng);
    const SliceAcquisition corrected = correct_misalignment(shifted);

    for (std::size_t k = 0; k < corrected.sax.size(); ++k) {
      const SaxSlice& slice = corrected.sax[k];
      const double ex = slice.recovered_shift[0] + slice.injected_shift[0];
      const double ey = slice.recovered_shift[1] + slice.injected_shift[1];
      const double err = std::hypot(ex, ey);
      if (slice.corrected) errors.push_back(err);
      os << subject.subject_id << ',' << k << ',' << format_metric(slice.z) << ','
         << format_metric(slice.injected_shift[0]) << ',' << format_metric(slice.injected_shift[1])
         << ',' << format_metric(slice.recovered_shift[0]) << ','
         << format_metric(slice.recovered_shift[1]) << ',' << format_metric(err) << ','
         << (slice.corrected ? 1 : 0) << '\n';
    }
  }
  atomic_write_text(dir / "alignment.csv", os.str());

  std::sort(errors.begin(), errors.end());
  std::ostringstream summary;
  summary << "corrected_slices=" << errors.size() << '\n';
  if (!errors.empty()) {
    const double p95 = errors[static_cast<std::size_t>(0.95 * (errors.size() - 1))];
    summary << "p95_recovery_error_mm=" << format_metric(p95) << '\n';
    summary << "max_recovery_error_mm=" << format_metric(errors.back()) << '\n';
  }
  atomic_write_text(dir / "alignment_summary.txt", summary.str());
  std::cout << summary.str();
  log.note("align-demo done");
  return kExitOk;
}

int cmd_report(const RunConfig& cli_config, const std::string& results_dir) {
  const fs::path dir = results_dir.empty() ? resolve_output_dir(cli_config, "run")
                                           : fs::path(results_dir);
  if (!fs::exists(dir / "config.resolved")) {
    throw ConfigError("no run found in " + dir.string() + " (missing config.resolved)");
  }
  RunConfig config;
  apply_config_text(config, read_text_file(dir / "config.resolved"));
  config.report_cases = cli_config.report_cases;
  if (!cli_config.report_cell.empty()) config.report_cell = cli_config.report_cell;

  RunLog log(dir);
  log.note("report start");

  // Pick the cell: explicit slug, else the best proposed (pointnet) cell
  // by mean AUROC from results.csv.
  std::string slug = config.report_cell;
  if (slug.empty()) {
    const std::string results = read_text_file(dir / "results.csv");
    std::istringstream is(results);
    std::string line;
    std::getline(is, line);  // header
    double best = -1.0;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      std::string task, anatomy, phases, method, fold, value;
      std::getline(ls, task, ',');
      std::getline(ls, anatomy, ',');
      std::getline(ls, phases, ',');
      std::getline(ls, method, ',');
      std::getline(ls, fold, ',');
      std::getline(ls, value, ',');
      if (fold != "mean" || method != "pointnet") continue;
      const double auc = std::stod(value);
      if (auc > best) {
        best = auc;
        slug = std::string(anatomy == "LV" ? "lv" : "lvrv") +
               (phases == "ES" ? "_es" : "_edes") + "_pointnet";
      }
    }
    if (slug.empty()) {
      throw ConfigError("results.csv has no pointnet cells; pass --report-cell");
    }
  }

  const fs::path scores_path = dir / ("scores_" + slug + ".csv");
  if (!fs::exists(scores_path)) {
    throw ConfigError("per-subject scores for cell '" + slug +
                      "' were not retained; rerun the run command with retain_scores=true "
                      "(--retain-scores true)");
  }

  // Rebuild the cell result from the stored scores.
  CellResult cell;
  {
    std::istringstream is(read_text_file(scores_path));
    std::string line;
    std::getline(is, line);  // header
    std::map<std::size_t, FoldResult> folds;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string id, fold, label, score;
      std::getline(ls, id, ',');
      std::getline(ls, fold, ',');
      std::getline(ls, label, ',');
      std::getline(ls, score, ',');
      const std::size_t f = std::stoul(fold);
      folds[f].fold_index = f;
      folds[f].subject_ids.push_back(id);
      folds[f].labels.push_back(std::stoi(label));
      folds[f].scores.push_back(std::stod(score));
    }
    for (auto& [f, fr] : folds) cell.folds.push_back(std::move(fr));
  }

  const auto cohort = load_or_generate_cohort(config, log);
  const QualitativeReport report = qualitative_report(cell, cohort, config.report_cases);

  const fs::path out = dir / "qualitative";
  fs::create_directories(out);
  std::ostringstream os;
  os << "subject_id,label,good,probability,lv_edv_ml,lv_esv_ml,lv_ef,mean_wall_ed_mm,"
        "mean_wall_es_mm,defect_thickening_ratio\n";
  std::map<std::string, const SubjectSample*> by_id;
  for (const auto& s : cohort) by_id[s.subject_id] = &s;
  for (const auto& c : report.cases) {
    os << c.subject_id << ',' << c.label << ',' << (c.good ? 1 : 0) << ','
       << format_metric(c.probability) << ',' << format_metric(c.lv_edv_ml) << ','
       << format_metric(c.lv_esv_ml) << ',' << format_metric(c.lv_ef) << ','
       << format_metric(c.mean_wall_ed_mm) << ',' << format_metric(c.mean_wall_es_mm) << ','
       << format_metric(c.defect_thickening_ratio) << '\n';
    write_subject_file(*by_id.at(c.subject_id), out / (c.subject_id + ".subject"));
  }
  atomic_write_text(out / "qualitative_summary.csv", os.str());
  if (report.truncated) {
    std::cout << "note: a group had fewer subjects than requested\n";
  }
  std::cout << "exported " << report.cases.size() << " cases (cell " << slug << ") to "
            << out.string() << "\n";
  log.note("report done");
  return kExitOk;
}

int cmd_grid_search(const RunConfig& config) {
  const fs::path dir = prepare_output_dir(config, "grid-search");
  RunLog log(dir);
  log.note("grid-search start");

  const auto cohort = load_or_generate_cohort(config, log);
  HarnessConfig harness = harness_config_from(config);
  if (harness.dropout_grid.empty()) {
    throw ConfigError("grid-search needs a non-empty dropout_grid (e.g. --dropout-grid 0.0,0.3)");
  }

  const auto specs = cells_from(config);
  ExperimentSpec spec = specs.front();
  spec.method = Method::kPointNet;

  const TaskDataset ds = task_dataset(cohort, spec.task);
  std::vector<TrainSample> samples(ds.subject_indices.size());
  for (std::size_t i = 0; i < ds.subject_indices.size(); ++i) {
    samples[i] = encode_subject(cohort[ds.subject_indices[i]], spec.anatomy, spec.phases);
    samples[i].label = ds.labels[i];
  }
  ClassifierConfig cls = harness.classifier;
  cls.input_channels = input_channels_for(spec.anatomy, spec.phases);
  const auto folds = stratified_kfold(ds.labels, config.folds, derive_seed(config.seed, 0x961D));
  TrainConfig tcfg = harness.training;
  tcfg.seed = derive_seed(config.seed, 0x961E);

  const GridSearchResult gs =
      grid_search_dropout(cls, samples, harness.dropout_grid, folds, tcfg);

  std::ostringstream os;
  os << "setting,fold,auroc\n";
  for (std::size_t si = 0; si < gs.grid.size(); ++si) {
    const double p = gs.grid[si].empty() ? 0.0 : gs.grid[si].front();
    for (std::size_t fi = 0; fi < gs.fold_scores[si].size(); ++fi) {
      os << format_metric(p) << ',' << fi << ',' << format_metric(gs.fold_scores[si][fi]) << '\n';
    }
    os << format_metric(p) << ",mean," << format_metric(gs.mean_scores[si]) << '\n';
  }
  atomic_write_text(dir / "grid_search.csv", os.str());

  const double chosen = gs.best_setting.empty() ? 0.0 : gs.best_setting.front();
  atomic_write_text(dir / "chosen_dropout.txt", format_metric(chosen) + "\n");
  std::cout << "chosen dropout: " << format_metric(chosen) << "\n";
  log.note("grid-search done");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"3D cardiac shape infarction classification benchmark"};
  app.require_subcommand(1);

  RunConfig config;
  std::string config_file;
  std::string results_dir;

  // Every config key is also a flag (kebab-case). Flag values are applied
  // after the config file so the command line wins.
  std::vector<std::pair<std::string, std::string>> overrides;
  auto add_key_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key=value config file");
    for (const auto& entry : config_entries(RunConfig{})) {
      std::string flag = "--" + entry.name;
      for (auto& ch : flag) {
        if (ch == '_') ch = '-';
      }
      const std::string key = entry.name;
      cmd->add_option_function<std::string>(
             flag,
             [&overrides, key](const std::string& value) { overrides.emplace_back(key, value); },
             "config key " + entry.name)
          ->expected(1);
    }
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic cohort to disk");
  CLI::App* run = app.add_subcommand("run", "run experiment grid cells with cross validation");
  CLI::App* align = app.add_subcommand("align-demo", "slice misalignment inject/correct metrics");
  CLI::App* report = app.add_subcommand("report", "best/worst-case qualitative shape report");
  CLI::App* grid = app.add_subcommand("grid-search", "dropout grid search for one cell");
  for (CLI::App* cmd : {generate, run, align, report, grid}) add_key_flags(cmd);
  report->add_option("--results-dir", results_dir, "run output directory to report on");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_file.empty()) {
      apply_config_text(config, read_text_file(config_file));
    }
    for (const auto& [key, value] : overrides) config_set(config, key, value);
    validate_run_config(config);

    if (app.got_subcommand(generate)) return cmd_generate(config);
    if (app.got_subcommand(run)) return cmd_run(config);
    if (app.got_subcommand(align)) return cmd_align_demo(config);
    if (app.got_subcommand(report)) return cmd_report(config, results_dir);
    if (app.got_subcommand(grid)) return cmd_grid_search(config);
    std::cerr << "no subcommand\n";
    return kExitConfigError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitComputeError;
  }
}
