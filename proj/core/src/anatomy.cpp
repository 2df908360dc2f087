#include "mi3d/anatomy.hpp"

#include <algorithm>
#include <cmath>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  if (n == 0.0) throw ParameterError("cannot normalize a zero vector");
  return {a[0] / n, a[1] / n, a[2] / n};
}

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Ellipsoid support function along a unit direction: rho = 1/h(dir).
double ellipsoid_h(const StarSurface& s, const Vec3& dir) {
  const double x = dir[0] / s.a, y = dir[1] / s.b, z = dir[2] / s.c;
  return std::sqrt(x * x + y * y + z * z);
}

// Area element per unit solid angle of the direction parametrization,
// computed from central-difference tangents. Exact enough (O(h^2)) for
// rejection weights.
double area_weight(const StarSurface& s, double cos_theta, double phi) {
  const double h = 1e-5;
  auto point_at = [&s](double ct, double ph) -> Vec3 {
    double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    Vec3 dir{st * std::cos(ph), st * std::sin(ph), ct};
    double r = s.radius(dir);
    return {r * dir[0], r * dir[1], r * dir[2]};
  };
  // theta-derivative via the cos(theta) chain: d(ct) = -sin(theta) d(theta)
  double theta = std::acos(clamp(cos_theta, -1.0, 1.0));
  Vec3 pt_plus = point_at(std::cos(theta + h), phi);
  Vec3 pt_minus = point_at(std::cos(theta - h), phi);
  Vec3 pp_plus = point_at(cos_theta, phi + h);
  Vec3 pp_minus = point_at(cos_theta, phi - h);
  Vec3 d_theta{(pt_plus[0] - pt_minus[0]) / (2 * h), (pt_plus[1] - pt_minus[1]) / (2 * h),
               (pt_plus[2] - pt_minus[2]) / (2 * h)};
  Vec3 d_phi{(pp_plus[0] - pp_minus[0]) / (2 * h), (pp_plus[1] - pp_minus[1]) / (2 * h),
             (pp_plus[2] - pp_minus[2]) / (2 * h)};
  Vec3 cross{d_theta[1] * d_phi[2] - d_theta[2] * d_phi[1],
             d_theta[2] * d_phi[0] - d_theta[0] * d_phi[2],
             d_theta[0] * d_phi[1] - d_theta[1] * d_phi[0]};
  double sin_theta = std::sqrt(std::max(1e-12, 1.0 - cos_theta * cos_theta));
  return norm(cross) / sin_theta;  // dS / dOmega
}

}  // namespace

std::string to_string(Structure s) {
  switch (s) {
    case Structure::kLvEndo: return "lv_endo";
    case Structure::kLvEpi: return "lv_epi";
    case Structure::kRvEndo: return "rv_endo";
  }
  return "?";
}

std::string to_string(Phase p) { return p == Phase::kEd ? "ed" : "es"; }

std::string to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::kNormal: return "normal";
    case ClassLabel::kPrevalentMi: return "prevalent_mi";
    case ClassLabel::kIncidentMi: return "incident_mi";
  }
  return "?";
}

Structure parse_structure(const std::string& s) {
  if (s == "lv_endo") return Structure::kLvEndo;
  if (s == "lv_epi") return Structure::kLvEpi;
  if (s == "rv_endo") return Structure::kRvEndo;
  throw ParameterError("unknown structure tag '" + s + "'");
}

Phase parse_phase(const std::string& s) {
  if (s == "ed") return Phase::kEd;
  if (s == "es") return Phase::kEs;
  throw ParameterError("unknown phase tag '" + s + "'");
}

ClassLabel parse_class_label(const std::string& s) {
  if (s == "normal") return ClassLabel::kNormal;
  if (s == "prevalent_mi") return ClassLabel::kPrevalentMi;
  if (s == "incident_mi") return ClassLabel::kIncidentMi;
  throw ParameterError("unknown class label '" + s + "'");
}

double StarSurface::radius(const Vec3& dir) const {
  double rho = 1.0 / ellipsoid_h(*this, dir);
  if (dented()) {
    double cos_alpha = clamp(dot(dir, dent_dir), -1.0, 1.0);
    double alpha = std::acos(cos_alpha);
    if (alpha < dent_angle) {
      double p = std::cos(M_PI * alpha / (2.0 * dent_angle));
      rho -= dent_depth_mm * p * p;
    }
  }
  return rho;
}

double StarSurface::implicit(const Vec3& p) const {
  Vec3 q{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
  double r = norm(q);
  if (r == 0.0) return -1.0;  // center is strictly inside
  Vec3 dir{q[0] / r, q[1] / r, q[2] / r};
  return r - radius(dir);
}

void StarSurface::validate() const {
  if (a <= 0.0 || b <= 0.0 || c <= 0.0) {
    throw ParameterError("semi-axes must be positive, got a=" + std::to_string(a) +
                         " b=" + std::to_string(b) + " c=" + std::to_string(c));
  }
  if (trunc_t <= 0.0 || trunc_t > 1.0) {
    throw ParameterError("truncation fraction must be in (0,1], got " + std::to_string(trunc_t));
  }
  if (dent_depth_mm < 0.0) throw ParameterError("dent depth must be non-negative");
  if (dented() && dent_depth_mm >= std::min({a, b, c})) {
    throw ParameterError("dent depth " + std::to_string(dent_depth_mm) +
                         " must stay below the smallest semi-axis");
  }
}

const StarSurface& VentricleParams::surface(Structure s) const {
  switch (s) {
    case Structure::kLvEndo: return lv_endo;
    case Structure::kLvEpi: return lv_epi;
    case Structure::kRvEndo: return rv_endo;
  }
  throw ParameterError("unknown structure");
}

void VentricleParams::validate() const {
  lv_endo.validate();
  lv_epi.validate();
  rv_endo.validate();
  if (lv_epi.a <= lv_endo.a || lv_epi.b <= lv_endo.b || lv_epi.c <= lv_endo.c) {
    throw ParameterError("LV epicardial semi-axes must strictly exceed endocardial ones");
  }
}

std::array<double, 9> rotation_matrix(const Vec3& e) {
  const double cx = std::cos(e[0]), sx = std::sin(e[0]);
  const double cy = std::cos(e[1]), sy = std::sin(e[1]);
  const double cz = std::cos(e[2]), sz = std::sin(e[2]);
  // R = Rz * Ry * Rx
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

Vec3 heart_to_world(const VentricleParams& params, const Vec3& p) {
  const auto r = rotation_matrix(params.rotation);
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + params.translation[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + params.translation[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + params.translation[2]};
}

PointCloud sample_surface(const VentricleParams& params, Structure structure, std::size_t n_points,
                          Rng& rng) {
  if (n_points < 1) throw ParameterError("sample_surface: n_points must be at least 1");
  params.validate();
  const StarSurface& s = params.surface(structure);

  // Bound the area weight on a full-sphere direction grid; smooth surfaces
  // keep the true maximum within a few percent of the grid maximum.
  const double z_cut = 2.0 * s.trunc_t - 1.0;
  double w_max = 0.0;
  for (int i = 0; i < 48; ++i) {
    double ct = -1.0 + (i + 0.5) * 2.0 / 48.0;
    for (int j = 0; j < 96; ++j) {
      double phi = 2.0 * M_PI * (j + 0.5) / 96.0;
      w_max = std::max(w_max, area_weight(s, ct, phi));
    }
  }
  w_max *= 1.10;

  PointCloud cloud;
  cloud.points.reserve(n_points);
  cloud.structures.assign(n_points, structure);
  while (cloud.points.size() < n_points) {
    double ct = rng.uniform(-1.0, 1.0);
    double phi = rng.uniform(0.0, 2.0 * M_PI);
    double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    Vec3 dir{st * std::cos(phi), st * std::sin(phi), ct};
    double rho = s.radius(dir);
    if (rho * ct > z_cut * s.c) continue;  // beyond the base truncation
    double w = area_weight(s, ct, phi);
    if (w > w_max) {
      throw GenerationError("sample_surface: area-weight bound violated; surface too irregular");
    }
    if (rng.uniform() * w_max > w) continue;
    Vec3 heart{s.center[0] + rho * dir[0], s.center[1] + rho * dir[1], s.center[2] + rho * dir[2]};
    cloud.points.push_back(heart_to_world(params, heart));
  }
  return cloud;
}

double analytic_cavity_volume(const StarSurface& surface) {
  surface.validate();
  if (surface.dented()) {
    throw DomainError("analytic volume is only defined for undented surfaces");
  }
  const double s = 2.0 * surface.trunc_t - 1.0;
  const double v_mm3 = M_PI * surface.a * surface.b * surface.c * (s - s * s * s / 3.0 + 2.0 / 3.0);
  return v_mm3 / 1000.0;
}

double analytic_cavity_volume(const VentricleParams& params, Structure structure) {
  return analytic_cavity_volume(params.surface(structure));
}

namespace {

// Draws one set of ED-phase surfaces from the population distributions.
VentricleParams draw_ed_params(const PopulationConfig& pop, Rng& rng, double& wall_out) {
  VentricleParams p;

  const double lv_edv = std::max(40.0, pop.lv_edv_ml.sample(rng));
  const double lv_rc = std::max(1.2, pop.lv_long_ratio.sample(rng));
  const double lv_rb = std::max(0.7, pop.lv_ab_ratio.sample(rng));
  const double lv_t = clamp(pop.lv_trunc.sample(rng), 0.6, 1.0);
  const double wall = std::max(3.0, pop.lv_wall_mm.sample(rng));
  const double s_lv = 2.0 * lv_t - 1.0;
  const double shape_lv = M_PI * lv_rb * lv_rc * (s_lv - s_lv * s_lv * s_lv / 3.0 + 2.0 / 3.0);
  const double a_lv = std::cbrt(1000.0 * lv_edv / shape_lv);

  p.lv_endo.a = a_lv;
  p.lv_endo.b = a_lv * lv_rb;
  p.lv_endo.c = a_lv * lv_rc;
  p.lv_endo.trunc_t = lv_t;

  p.lv_epi.a = p.lv_endo.a + wall;
  p.lv_epi.b = p.lv_endo.b + wall;
  p.lv_epi.c = p.lv_endo.c + wall;
  p.lv_epi.trunc_t = lv_t;

  const double rv_edv = std::max(40.0, pop.rv_edv_ml.sample(rng));
  const double rv_rc = std::max(1.2, pop.rv_long_ratio.sample(rng));
  const double rv_rb = std::max(0.5, pop.rv_ab_ratio.sample(rng));
  const double rv_t = clamp(pop.rv_trunc.sample(rng), 0.6, 1.0);
  const double s_rv = 2.0 * rv_t - 1.0;
  const double shape_rv = M_PI * rv_rb * rv_rc * (s_rv - s_rv * s_rv * s_rv / 3.0 + 2.0 / 3.0);
  const double a_rv = std::cbrt(1000.0 * rv_edv / shape_rv);

  p.rv_endo.a = a_rv;
  p.rv_endo.b = a_rv * rv_rb;
  p.rv_endo.c = a_rv * rv_rc;
  p.rv_endo.trunc_t = rv_t;
  p.rv_endo.center = {std::max(20.0, pop.rv_offset_mm.sample(rng)), 0.0, 0.0};

  p.rotation = {rng.normal(0.0, pop.rotation_std), rng.normal(0.0, pop.rotation_std),
                rng.normal(0.0, pop.rotation_std)};
  p.translation = {rng.normal(0.0, pop.translation_std), rng.normal(0.0, pop.translation_std),
                   rng.normal(0.0, pop.translation_std)};

  wall_out = wall;
  return p;
}

Vec3 jitter_direction(const Vec3& dir, double jitter, Rng& rng) {
  if (jitter <= 0.0) return normalized(dir);
  Vec3 d = normalized(dir);
  // Perturb in spherical coordinates and renormalize.
  double theta = std::acos(clamp(d[2], -1.0, 1.0)) + rng.normal(0.0, jitter);
  double phi = std::atan2(d[1], d[0]) + rng.normal(0.0, jitter);
  double st = std::sin(theta);
  return normalized(Vec3{st * std::cos(phi), st * std::sin(phi), std::cos(theta)});
}

}  // namespace

SubjectSample generate_subject(const RemodelingSpec& spec, const PopulationConfig& population,
                               Rng& rng) {
  double wall = 0.0;
  VentricleParams ed = draw_ed_params(population, rng, wall);

  const double f_lv = clamp(spec.volume_change.sample(rng), 0.05, 0.9);
  const double f_rv = clamp(spec.rv_volume_change.sample(rng), 0.05, 0.9);
  const double tau = std::max(1.0, spec.thickening.sample(rng));
  const Vec3 defect_dir = jitter_direction(spec.defect_dir, spec.defect_dir_jitter, rng);

  VentricleParams es = ed;
  const double s_lv = std::cbrt(1.0 - f_lv);
  es.lv_endo.a = ed.lv_endo.a * s_lv;
  es.lv_endo.b = ed.lv_endo.b * s_lv;
  es.lv_endo.c = ed.lv_endo.c * s_lv;

  const double es_wall = tau * wall;
  es.lv_epi.a = es.lv_endo.a + es_wall;
  es.lv_epi.b = es.lv_endo.b + es_wall;
  es.lv_epi.c = es.lv_endo.c + es_wall;

  const double s_rv = std::cbrt(1.0 - f_rv);
  es.rv_endo.a = ed.rv_endo.a * s_rv;
  es.rv_endo.b = ed.rv_endo.b * s_rv;
  es.rv_endo.c = ed.rv_endo.c * s_rv;

  if (spec.defect_suppression > 0.0) {
    const double depth = spec.defect_suppression * (tau - 1.0) * wall;
    if (depth >= es_wall) {
      throw GenerationError("defect dent would erase the ES wall (depth " + std::to_string(depth) +
                            " mm vs thickness " + std::to_string(es_wall) + " mm)");
    }
    es.lv_epi.dent_depth_mm = depth;
    es.lv_epi.dent_dir = defect_dir;
    es.lv_epi.dent_angle = spec.defect_angle;
  }

  ed.validate();
  es.validate();

  SubjectSample sample;
  sample.label = spec.class_label;
  sample.params_ed = ed;
  sample.params_es = es;
  sample.volumes.lv_edv_ml = analytic_cavity_volume(ed.lv_endo);
  sample.volumes.lv_esv_ml = analytic_cavity_volume(es.lv_endo);
  sample.volumes.rv_edv_ml = analytic_cavity_volume(ed.rv_endo);
  sample.volumes.rv_esv_ml = analytic_cavity_volume(es.rv_endo);

  sample.ed_cloud.phase = Phase::kEd;
  sample.es_cloud.phase = Phase::kEs;
  for (Structure st : kAllStructures) {
    PointCloud part = sample_surface(ed, st, population.points_per_structure, rng);
    sample.ed_cloud.points.insert(sample.ed_cloud.points.end(), part.points.begin(),
                                  part.points.end());
    sample.ed_cloud.structures.insert(sample.ed_cloud.structures.end(), part.structures.begin(),
                                      part.structures.end());
  }
  for (Structure st : kAllStructures) {
    PointCloud part = sample_surface(es, st, population.points_per_structure, rng);
    sample.es_cloud.points.insert(sample.es_cloud.points.end(), part.points.begin(),
                                  part.points.end());
    sample.es_cloud.structures.insert(sample.es_cloud.structures.end(), part.structures.begin(),
                                      part.structures.end());
  }
  return sample;
}

std::vector<SubjectSample> generate_cohort(const CohortConfig& config, std::uint64_t seed) {
  std::vector<SubjectSample> cohort;
  cohort.reserve(config.n_normal + config.n_prevalent + config.n_incident);

  auto emit = [&](const RemodelingSpec& spec, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t index = cohort.size();
      Rng rng(derive_seed(seed, index));
      SubjectSample s = generate_subject(spec, config.population, rng);
      char id[16];
      std::snprintf(id, sizeof(id), "S%06zu", index);
      s.subject_id = id;
      cohort.push_back(std::move(s));
    }
  };
  emit(config.normal, config.n_normal);
  emit(config.prevalent, config.n_prevalent);
  emit(config.incident, config.n_incident);
  return cohort;
}

CohortConfig CohortConfig::defaults() {
  CohortConfig c;
  c.normal.class_label = ClassLabel::kNormal;
  c.normal.volume_change = {0.60, 0.04};
  c.normal.rv_volume_change = {0.55, 0.04};
  c.normal.thickening = {1.45, 0.08};
  c.normal.defect_suppression = 0.0;

  c.prevalent.class_label = ClassLabel::kPrevalentMi;
  c.prevalent.volume_change = {0.48, 0.04};
  c.prevalent.rv_volume_change = {0.49, 0.04};
  c.prevalent.thickening = {1.25, 0.08};
  c.prevalent.defect_suppression = 0.85;

  c.incident.class_label = ClassLabel::kIncidentMi;
  c.incident.volume_change = {0.54, 0.04};
  c.incident.rv_volume_change = {0.52, 0.04};
  c.incident.thickening = {1.35, 0.08};
  c.incident.defect_suppression = 0.45;
  return c;
}

CohortConfig CohortConfig::volume_matched() {
  CohortConfig c = defaults();
  // Same global remodeling everywhere; only the ES epicardial defect
  // separates the classes.
  c.prevalent.volume_change = c.normal.volume_change;
  c.prevalent.rv_volume_change = c.normal.rv_volume_change;
  c.prevalent.thickening = c.normal.thickening;
  c.incident.volume_change = c.normal.volume_change;
  c.incident.rv_volume_change = c.normal.rv_volume_change;
  c.incident.thickening = c.normal.thickening;
  return c;
}

CohortConfig CohortConfig::ef_only() {
  CohortConfig c = defaults();
  c.prevalent.defect_suppression = 0.0;
  c.incident.defect_suppression = 0.0;
  // Thickening differences would leak shape signal through the epicardium.
  c.prevalent.thickening = c.normal.thickening;
  c.incident.thickening = c.normal.thickening;
  return c;
}

}  // namespace mi3d
