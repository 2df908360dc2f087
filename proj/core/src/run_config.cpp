#include "mi3d/run_config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct KeyBinding {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a number");
  }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument("bad");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a non-negative integer");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("bad");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as an unsigned integer");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a boolean");
}

std::vector<KeyBinding> bindings() {
  std::vector<KeyBinding> keys;
  auto add_u64 = [&keys](const std::string& name, std::uint64_t RunConfig::* member) {
    keys.push_back({name,
                    [member](const RunConfig& c) { return std::to_string(c.*member); },
                    [member, name](RunConfig& c, const std::string& v) {
                      c.*member = parse_u64(name, v);
                    }});
  };
  auto add_size = [&keys](const std::string& name, std::size_t RunConfig::* member) {
    keys.push_back({name,
                    [member](const RunConfig& c) { return std::to_string(c.*member); },
                    [member, name](RunConfig& c, const std::string& v) {
                      c.*member = parse_size(name, v);
                    }});
  };
  auto add_double = [&keys](const std::string& name, double RunConfig::* member) {
    keys.push_back({name,
                    [member](const RunConfig& c) { return format_double(c.*member); },
                    [member, name](RunConfig& c, const std::string& v) {
                      c.*member = parse_double(name, v);
                    }});
  };
  auto add_bool = [&keys](const std::string& name, bool RunConfig::* member) {
    keys.push_back({name,
                    [member](const RunConfig& c) { return c.*member ? "true" : "false"; },
                    [member, name](RunConfig& c, const std::string& v) {
                      c.*member = parse_bool(name, v);
                    }});
  };
  auto add_string = [&keys](const std::string& name, std::string RunConfig::* member) {
    keys.push_back({name,
                    [member](const RunConfig& c) { return c.*member; },
                    [member](RunConfig& c, const std::string& v) { c.*member = v; }});
  };

  add_u64("seed", &RunConfig::seed);
  add_size("n_normal", &RunConfig::n_normal);
  add_size("n_prevalent", &RunConfig::n_prevalent);
  add_size("n_incident", &RunConfig::n_incident);
  add_string("signal_mode", &RunConfig::signal_mode);
  add_size("points_per_structure", &RunConfig::points_per_structure);
  add_double("rotation_std", &RunConfig::rotation_std);
  add_double("translation_std", &RunConfig::translation_std);
  add_double("ef_normal_mean", &RunConfig::ef_normal_mean);
  add_double("ef_prevalent_mean", &RunConfig::ef_prevalent_mean);
  add_double("ef_incident_mean", &RunConfig::ef_incident_mean);
  add_double("ef_std", &RunConfig::ef_std);
  add_double("thickening_normal", &RunConfig::thickening_normal);
  add_double("thickening_prevalent", &RunConfig::thickening_prevalent);
  add_double("thickening_incident", &RunConfig::thickening_incident);
  add_double("thickening_std", &RunConfig::thickening_std);
  add_double("suppression_prevalent", &RunConfig::suppression_prevalent);
  add_double("suppression_incident", &RunConfig::suppression_incident);
  add_double("defect_angle", &RunConfig::defect_angle);
  add_double("defect_dir_jitter", &RunConfig::defect_dir_jitter);
  add_size("sax_slices", &RunConfig::sax_slices);
  add_double("sax_spacing", &RunConfig::sax_spacing);
  add_size("sax_points", &RunConfig::sax_points);
  add_size("lax_points", &RunConfig::lax_points);
  add_double("z_band", &RunConfig::z_band);
  add_double("shift_std", &RunConfig::shift_std);
  add_string("acquisition_phase", &RunConfig::acquisition_phase);
  add_string("encoder_widths", &RunConfig::encoder_widths);
  add_string("head_widths", &RunConfig::head_widths);
  add_string("dropout", &RunConfig::dropout);
  add_string("dropout_grid", &RunConfig::dropout_grid);
  add_bool("use_input_tnet", &RunConfig::use_input_tnet);
  add_bool("use_feature_tnet", &RunConfig::use_feature_tnet);
  add_bool("use_batch_norm", &RunConfig::use_batch_norm);
  add_double("ortho_reg_weight", &RunConfig::ortho_reg_weight);
  add_size("batch_size", &RunConfig::batch_size);
  add_double("learning_rate", &RunConfig::learning_rate);
  add_size("epochs", &RunConfig::epochs);
  add_bool("shuffle", &RunConfig::shuffle);
  add_string("task", &RunConfig::task);
  add_string("cells", &RunConfig::cells);
  add_size("folds", &RunConfig::folds);
  add_string("estimator", &RunConfig::estimator);
  add_size("n_discs", &RunConfig::n_discs);
  add_size("jobs", &RunConfig::jobs);
  add_size("align_subjects", &RunConfig::align_subjects);
  add_size("report_cases", &RunConfig::report_cases);
  add_string("report_cell", &RunConfig::report_cell);
  add_bool("retain_scores", &RunConfig::retain_scores);
  add_bool("generate_on_the_fly", &RunConfig::generate_on_the_fly);
  add_string("cohort_dir", &RunConfig::cohort_dir);
  add_string("output_dir", &RunConfig::output_dir);

  std::sort(keys.begin(), keys.end(),
            [](const KeyBinding& a, const KeyBinding& b) { return a.name < b.name; });
  return keys;
}

const std::vector<KeyBinding>& key_bindings() {
  static const std::vector<KeyBinding> keys = bindings();
  return keys;
}

}  // namespace

std::vector<ConfigKey> config_entries(const RunConfig& config) {
  std::vector<ConfigKey> out;
  for (const auto& k : key_bindings()) out.push_back({k.name, k.get(config)});
  return out;
}

void config_set(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : key_bindings()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string serialize_run_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& e : config_entries(config)) os << e.name << '=' << e.value << '\n';
  return os.str();
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
      line.pop_back();
    }
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line.erase(0, start);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    }
    config_set(config, line.substr(0, eq), line.substr(eq + 1));
  }
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      out.push_back(parse_double("list", cur));
      cur.clear();
    }
  };
  for (char c : s) {
    if (c == ',') {
      flush();
    } else if (c != ' ') {
      cur += c;
    }
  }
  flush();
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (double v : parse_double_list(s)) out.push_back(static_cast<std::size_t>(v));
  return out;
}

void validate_run_config(const RunConfig& config) {
  if (config.signal_mode != "dual" && config.signal_mode != "defect_only" &&
      config.signal_mode != "ef_only") {
    throw ConfigError("signal_mode must be dual, defect_only or ef_only, got '" +
                      config.signal_mode + "'");
  }
  if (config.task != "prevalent" && config.task != "incident") {
    throw ConfigError("task must be prevalent or incident, got '" + config.task + "'");
  }
  if (config.estimator != "disc" && config.estimator != "analytic") {
    throw ConfigError("estimator must be disc or analytic, got '" + config.estimator + "'");
  }
  if (config.acquisition_phase != "ed" && config.acquisition_phase != "es") {
    throw ConfigError("acquisition_phase must be ed or es, got '" + config.acquisition_phase +
                      "'");
  }
  if (config.folds < 2) throw ConfigError("folds must be at least 2");
  if (config.points_per_structure < 1) throw ConfigError("points_per_structure must be positive");
  (void)cells_from(config);  // validates the cell filter syntax
}

CohortConfig cohort_config_from(const RunConfig& config) {
  CohortConfig c = CohortConfig::defaults();
  c.n_normal = config.n_normal;
  c.n_prevalent = config.n_prevalent;
  c.n_incident = config.n_incident;
  c.population.points_per_structure = config.points_per_structure;
  c.population.rotation_std = config.rotation_std;
  c.population.translation_std = config.translation_std;

  c.normal.volume_change = {config.ef_normal_mean, config.ef_std};
  c.normal.thickening = {config.thickening_normal, config.thickening_std};
  c.prevalent.volume_change = {config.ef_prevalent_mean, config.ef_std};
  c.prevalent.thickening = {config.thickening_prevalent, config.thickening_std};
  c.prevalent.defect_suppression = config.suppression_prevalent;
  c.incident.volume_change = {config.ef_incident_mean, config.ef_std};
  c.incident.thickening = {config.thickening_incident, config.thickening_std};
  c.incident.defect_suppression = config.suppression_incident;

  // RV volume change tracks the LV shift at half strength.
  auto rv_change = [&](double lv_mean) {
    return Dist{c.normal.rv_volume_change.mean - 0.5 * (config.ef_normal_mean - lv_mean),
                config.ef_std};
  };
  c.prevalent.rv_volume_change = rv_change(config.ef_prevalent_mean);
  c.incident.rv_volume_change = rv_change(config.ef_incident_mean);

  for (RemodelingSpec* spec : {&c.normal, &c.prevalent, &c.incident}) {
    spec->defect_angle = config.defect_angle;
    spec->defect_dir_jitter = config.defect_dir_jitter;
  }

  if (config.signal_mode == "defect_only") {
    c.prevalent.volume_change = c.normal.volume_change;
    c.prevalent.rv_volume_change = c.normal.rv_volume_change;
    c.prevalent.thickening = c.normal.thickening;
    c.incident.volume_change = c.normal.volume_change;
    c.incident.rv_volume_change = c.normal.rv_volume_change;
    c.incident.thickening = c.normal.thickening;
  } else if (config.signal_mode == "ef_only") {
    c.prevalent.defect_suppression = 0.0;
    c.incident.defect_suppression = 0.0;
    c.prevalent.thickening = c.normal.thickening;
    c.incident.thickening = c.normal.thickening;
  }
  return c;
}

AcquisitionConfig acquisition_config_from(const RunConfig& config) {
  AcquisitionConfig a;
  a.sax_slices = config.sax_slices;
  a.sax_spacing_mm = config.sax_spacing;
  a.sax_points = config.sax_points;
  a.lax_points = config.lax_points;
  a.z_band_mm = config.z_band;
  a.phase = config.acquisition_phase == "ed" ? Phase::kEd : Phase::kEs;
  return a;
}

HarnessConfig harness_config_from(const RunConfig& config) {
  HarnessConfig h;
  h.classifier.encoder_widths = parse_size_list(config.encoder_widths);
  h.classifier.head_widths = parse_size_list(config.head_widths);
  h.classifier.dropout_probs = parse_double_list(config.dropout);
  h.classifier.use_input_tnet = config.use_input_tnet;
  h.classifier.use_feature_tnet = config.use_feature_tnet;
  h.classifier.use_batch_norm = config.use_batch_norm;
  h.classifier.ortho_reg_weight = config.ortho_reg_weight;

  h.training.batch_size = config.batch_size;
  h.training.learning_rate = config.learning_rate;
  h.training.epochs = config.epochs;
  h.training.shuffle = config.shuffle;
  h.training.seed = config.seed;

  h.estimator = config.estimator == "disc" ? VolumeEstimator::kDisc : VolumeEstimator::kAnalytic;
  h.n_discs = config.n_discs;
  h.points_per_structure = config.points_per_structure;
  h.jobs = config.jobs == 0 ? 1 : config.jobs;

  const std::size_t hidden = h.classifier.head_widths.empty()
                                 ? 0
                                 : h.classifier.head_widths.size() - 1;
  for (double p : parse_double_list(config.dropout_grid)) {
    h.dropout_grid.push_back(std::vector<double>(hidden, p));
  }
  return h;
}

Task task_from(const RunConfig& config) {
  return config.task == "prevalent" ? Task::kPrevalent : Task::kIncident;
}

std::vector<ExperimentSpec> cells_from(const RunConfig& config) {
  std::vector<ExperimentSpec> specs;
  const Task task = task_from(config);

  auto make = [&](AnatomySelection a, PhaseSelection p, Method m) {
    ExperimentSpec s;
    s.task = task;
    s.anatomy = a;
    s.phases = p;
    s.method = m;
    s.seed = config.seed;
    s.folds = config.folds;
    return s;
  };

  if (config.cells == "all") {
    for (AnatomySelection a : {AnatomySelection::kLv, AnatomySelection::kLvRv}) {
      for (PhaseSelection p : {PhaseSelection::kEs, PhaseSelection::kEdEs}) {
        for (Method m : {Method::kRegression, Method::kPointNet}) {
          specs.push_back(make(a, p, m));
        }
      }
    }
    return specs;
  }

  std::istringstream is(config.cells);
  std::string triple;
  while (std::getline(is, triple, ';')) {
    std::istringstream ts(triple);
    std::string anatomy, phases, method;
    if (!std::getline(ts, anatomy, ',') || !std::getline(ts, phases, ',') ||
        !std::getline(ts, method, ',')) {
      throw ConfigError("cells: expected 'anatomy,phases,method', got '" + triple + "'");
    }
    AnatomySelection a;
    if (anatomy == "LV") {
      a = AnatomySelection::kLv;
    } else if (anatomy == "LV+RV") {
      a = AnatomySelection::kLvRv;
    } else {
      throw ConfigError("cells: anatomy must be LV or LV+RV, got '" + anatomy + "'");
    }
    PhaseSelection p;
    if (phases == "ES") {
      p = PhaseSelection::kEs;
    } else if (phases == "ED+ES") {
      p = PhaseSelection::kEdEs;
    } else {
      throw ConfigError("cells: phases must be ES or ED+ES, got '" + phases + "'");
    }
    Method m;
    if (method == "regression") {
      m = Method::kRegression;
    } else if (method == "pointnet") {
      m = Method::kPointNet;
    } else {
      throw ConfigError("cells: method must be regression or pointnet, got '" + method + "'");
    }
    specs.push_back(make(a, p, m));
  }
  if (specs.empty()) throw ConfigError("cells: no cells selected");
  return specs;
}

}  // namespace mi3d
