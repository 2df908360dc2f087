#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mi3d/anatomy.hpp"
#include "mi3d/clinical.hpp"
#include "mi3d/folds.hpp"
#include "mi3d/pointnet.hpp"

namespace mi3d {

enum class Task { kPrevalent, kIncident };
enum class Method { kPointNet, kRegression };

std::string to_string(Task t);
std::string to_string(Method m);

// One cell of the results grid: task x anatomy x phases x method.
struct ExperimentSpec {
  Task task = Task::kPrevalent;
  AnatomySelection anatomy = AnatomySelection::kLv;
  PhaseSelection phases = PhaseSelection::kEs;
  Method method = Method::kRegression;
  std::uint64_t seed = 0;
  std::size_t folds = 4;

  // Stable small id used for seed derivation and file names.
  std::uint64_t cell_id() const;
  std::string slug() const;
};

struct FoldResult {
  std::size_t fold_index = 0;
  std::vector<std::string> subject_ids;  // validation subjects
  std::vector<double> scores;
  std::vector<int> labels;
  double auroc = 0.0;
};

struct CellResult {
  ExperimentSpec spec;
  std::vector<FoldResult> folds;
  double mean_auroc = 0.0;
  std::vector<double> chosen_dropout;  // populated for pointnet cells
};

// Settings shared by every cell of a run.
struct HarnessConfig {
  ClassifierConfig classifier;  // input_channels is set per cell
  TrainConfig training;
  VolumeEstimator estimator = VolumeEstimator::kDisc;
  std::size_t n_discs = 50;
  std::size_t points_per_structure = 1024;  // must match the generated clouds
  // Dropout settings searched per fold; a single entry skips the nested
  // search and is used directly.
  std::vector<std::vector<double>> dropout_grid;
  std::size_t grid_inner_folds = 3;
  std::size_t jobs = 1;
};

// Deterministic stratified k-fold split: per-class counts across folds
// differ by at most one; validation sets are disjoint and exhaustive.
std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, std::size_t k,
                                        std::uint64_t seed);

// Mann-Whitney AUROC: (concordant + 0.5*tied) / (positives * negatives),
// computed via midranks.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);
// Trapezoidal integration of the ROC curve; agrees with auroc to 1e-12.
double auroc_trapezoidal(const std::vector<double>& scores, const std::vector<int>& labels);

struct RocPoint {
  double threshold;
  double tpr;
  double fpr;
};
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

// Input encoding for the classifier: channels [x,y,z, s_lvendo, s_lvepi,
// (s_rvendo), (phase)]; LV-only inputs drop the RV channel, ES-only inputs
// drop the phase channel. Coordinates are centered on the ED-frame
// centroid of the selected structures and scaled by the ED maximum radius,
// for both phases, so contraction stays visible.
std::size_t input_channels_for(AnatomySelection anatomy, PhaseSelection phases);
TrainSample encode_subject(const SubjectSample& sample, AnatomySelection anatomy,
                           PhaseSelection phases);

// Task dataset: MI class of the task versus the normal pool.
struct TaskDataset {
  std::vector<std::size_t> subject_indices;  // into the full cohort
  std::vector<int> labels;                   // 1 = MI class of the task
};
TaskDataset task_dataset(const std::vector<SubjectSample>& cohort, Task task);

// Runs one grid cell under four-fold (or spec.folds) cross validation.
CellResult run_cell(const ExperimentSpec& spec, const std::vector<SubjectSample>& cohort,
                    const HarnessConfig& config);

struct TableRow {
  ExperimentSpec spec;
  std::string input_label;   // "ES Volume", "ES 3D Shape", ...
  std::string method_label;  // "Regression" / "Proposed"
  CellResult result;
};

struct TableReport {
  Task task;
  std::vector<TableRow> rows;                 // 8 rows in the published order
  std::vector<bool> proposed_beats_regression;  // one flag per (regression, proposed) pairing
};

// The full 8-row grid for one task: for each of LV and LV+RV, the ES
// volume regression, ES shape, EF regression, and ED+ES shape cells.
TableReport run_table(Task task, const std::vector<SubjectSample>& cohort,
                      const HarnessConfig& config, std::uint64_t seed);

// Renders the report as an aligned text table with a "beats regression"
// flag per pairing.
std::string format_table(const TableReport& report);

struct QualitativeCase {
  std::string subject_id;
  double probability = 0.0;
  int label = 0;
  bool good = false;  // extreme of the correctness ranking in its group
  double lv_edv_ml = 0.0, lv_esv_ml = 0.0, lv_ef = 0.0;
  double mean_wall_ed_mm = 0.0, mean_wall_es_mm = 0.0;
  double defect_thickening_ratio = 0.0;  // cap-mean ES/ED wall thickness
};

struct QualitativeReport {
  std::vector<QualitativeCase> cases;
  bool truncated = false;  // a group had fewer subjects than requested
};

// Best and worst validation predictions per class with shape summaries,
// selected from the retained per-subject scores of a cell.
QualitativeReport qualitative_report(const CellResult& cell,
                                     const std::vector<SubjectSample>& cohort,
                                     std::size_t n_cases = 2);

// Shape summary helpers (deterministic direction-grid averages).
double mean_wall_thickness(const VentricleParams& params);
double defect_thickening_ratio(const SubjectSample& sample);

}  // namespace mi3d
