#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mi3d/anatomy.hpp"
#include "mi3d/experiment.hpp"
#include "mi3d/slices.hpp"

namespace mi3d {

// Flat key=value run settings. Every key is recognized; unknown keys are
// hard errors. The fully resolved config is echoed into the run's output
// directory, so any run can be reproduced from its artifacts.
struct RunConfig {
  // cohort
  std::uint64_t seed = 1;
  std::size_t n_normal = 539;
  std::size_t n_prevalent = 294;
  std::size_t n_incident = 235;
  std::string signal_mode = "dual";  // dual | defect_only | ef_only
  std::size_t points_per_structure = 1024;
  double rotation_std = 0.05;
  double translation_std = 5.0;
  double ef_normal_mean = 0.60;
  double ef_prevalent_mean = 0.48;
  double ef_incident_mean = 0.54;
  double ef_std = 0.04;
  double thickening_normal = 1.45;
  double thickening_prevalent = 1.25;
  double thickening_incident = 1.35;
  double thickening_std = 0.08;
  double suppression_prevalent = 0.85;
  double suppression_incident = 0.45;
  double defect_angle = 0.7;
  double defect_dir_jitter = 0.0;

  // acquisition
  std::size_t sax_slices = 10;
  double sax_spacing = 10.0;
  std::size_t sax_points = 48;
  std::size_t lax_points = 64;
  double z_band = 5.0;
  double shift_std = 3.0;
  std::string acquisition_phase = "ed";

  // classifier
  std::string encoder_widths = "64,64,64,128,1024";
  std::string head_widths = "512,256,1";
  std::string dropout = "0.3,0.3";
  std::string dropout_grid = "";  // uniform head dropout values, e.g. "0.0,0.1,0.2"
  bool use_input_tnet = true;
  bool use_feature_tnet = true;
  bool use_batch_norm = true;
  double ortho_reg_weight = 0.001;

  // training (paper defaults)
  std::size_t batch_size = 20;
  double learning_rate = 1e-6;
  std::size_t epochs = 200;
  bool shuffle = true;

  // experiment
  std::string task = "prevalent";  // prevalent | incident
  std::string cells = "all";       // "all" or "LV,ES,regression;LV+RV,ED+ES,pointnet"
  std::size_t folds = 4;
  std::string estimator = "disc";  // disc | analytic
  std::size_t n_discs = 50;
  std::size_t jobs = 1;
  std::size_t align_subjects = 25;
  std::size_t report_cases = 2;
  std::string report_cell = "";  // empty = best proposed cell
  bool retain_scores = true;
  bool generate_on_the_fly = true;
  std::string cohort_dir = "";
  std::string output_dir = "";
};

struct ConfigKey {
  std::string name;
  std::string value;  // serialized
};

// All keys with their serialized current values, sorted by name.
std::vector<ConfigKey> config_entries(const RunConfig& config);

// Sets one key from its string form; throws ConfigError for unknown keys
// or unparseable values.
void config_set(RunConfig& config, const std::string& key, const std::string& value);

// key=value lines, sorted; '#' starts a comment when parsing.
std::string serialize_run_config(const RunConfig& config);
void apply_config_text(RunConfig& config, const std::string& text);

// Semantic validation beyond per-key parsing.
void validate_run_config(const RunConfig& config);

// Derived module configs.
CohortConfig cohort_config_from(const RunConfig& config);
AcquisitionConfig acquisition_config_from(const RunConfig& config);
HarnessConfig harness_config_from(const RunConfig& config);
Task task_from(const RunConfig& config);

// Cell filters: "all" or semicolon-separated "anatomy,phases,method"
// triples (e.g. "LV,ES,regression"). Returned specs carry the task and
// seed from the config.
std::vector<ExperimentSpec> cells_from(const RunConfig& config);

std::vector<double> parse_double_list(const std::string& s);
std::vector<std::size_t> parse_size_list(const std::string& s);

}  // namespace mi3d
