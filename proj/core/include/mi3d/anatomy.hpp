#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mi3d/rng.hpp"

namespace mi3d {

using Vec3 = std::array<double, 3>;

enum class Structure { kLvEndo, kLvEpi, kRvEndo };
enum class Phase { kEd, kEs };
enum class ClassLabel { kNormal, kPrevalentMi, kIncidentMi };

inline constexpr std::array<Structure, 3> kAllStructures = {Structure::kLvEndo, Structure::kLvEpi,
                                                            Structure::kRvEndo};

std::string to_string(Structure s);
std::string to_string(Phase p);
std::string to_string(ClassLabel c);
Structure parse_structure(const std::string& s);
Phase parse_phase(const std::string& s);
ClassLabel parse_class_label(const std::string& s);

// Star-shaped surface about its own center: a truncated ellipsoid with an
// optional radial dent inside a spherical cap of directions. rho(dir) =
// rho_ellipsoid(dir) - depth * cos^2(pi*alpha/(2*alpha0)) for alpha =
// angle(dir, dent_dir) < alpha0. Truncation keeps (z - center_z)/c in
// [-1, 2t-1].
struct StarSurface {
  double a = 1.0, b = 1.0, c = 1.0;  // semi-axes, mm
  double trunc_t = 1.0;              // kept fraction of the long axis
  Vec3 center{0.0, 0.0, 0.0};        // heart-frame offset
  double dent_depth_mm = 0.0;
  Vec3 dent_dir{0.0, 0.0, 1.0};
  double dent_angle = 0.0;  // cap angular radius, radians

  // Radius along a unit direction measured from `center`.
  double radius(const Vec3& dir) const;
  // Signed implicit value, zero on the surface, negative inside.
  double implicit(const Vec3& p) const;
  double z_low() const { return center[2] - c; }
  double z_high() const { return center[2] + (2.0 * trunc_t - 1.0) * c; }
  bool dented() const { return dent_depth_mm != 0.0 && dent_angle > 0.0; }

  void validate() const;
};

// Rigid heart-frame pose plus the three structure surfaces. The RV crescent
// offset is rv_endo.center[0].
struct VentricleParams {
  StarSurface lv_endo;
  StarSurface lv_epi;
  StarSurface rv_endo;
  Vec3 rotation{0.0, 0.0, 0.0};     // XYZ Euler angles, radians
  Vec3 translation{0.0, 0.0, 0.0};  // mm

  const StarSurface& surface(Structure s) const;
  void validate() const;
};

// Rotation matrix (row-major 3x3) for the params' Euler angles, and the
// full heart-to-world map.
std::array<double, 9> rotation_matrix(const Vec3& euler_xyz);
Vec3 heart_to_world(const VentricleParams& params, const Vec3& p);

struct PointCloud {
  Phase phase = Phase::kEd;
  std::vector<Vec3> points;  // mm, world frame
  std::vector<Structure> structures;

  std::size_t size() const { return points.size(); }
};

struct AnalyticVolumes {
  double lv_edv_ml = 0.0, lv_esv_ml = 0.0;
  double rv_edv_ml = 0.0, rv_esv_ml = 0.0;
};

struct SubjectSample {
  std::string subject_id;
  ClassLabel label = ClassLabel::kNormal;
  PointCloud ed_cloud;
  PointCloud es_cloud;
  VentricleParams params_ed;
  VentricleParams params_es;
  AnalyticVolumes volumes;
};

// Population draw helper: normal truncated at +-3 std.
struct Dist {
  double mean = 0.0;
  double std = 0.0;

  double sample(Rng& rng) const { return rng.truncated_normal(mean, std, 3.0); }
};

// Class-conditional remodeling between the ED and ES phases.
struct RemodelingSpec {
  ClassLabel class_label = ClassLabel::kNormal;
  Dist thickening{1.45, 0.08};        // ES/ED wall thickness ratio
  Dist volume_change{0.60, 0.04};     // LV (EDV-ESV)/EDV
  Dist rv_volume_change{0.55, 0.04};  // RV (EDV-ESV)/EDV
  // Fraction of the ES thickening suppressed inside the defect cap; the
  // suppressed thickening becomes a radial dent of the ES epicardium.
  double defect_suppression = 0.0;
  Vec3 defect_dir{0.8, 0.36, 0.48};
  double defect_angle = 0.7;       // radians
  double defect_dir_jitter = 0.0;  // radians
};

// Population-level shape distributions shared by all classes.
struct PopulationConfig {
  Dist lv_edv_ml{150.0, 25.0};
  Dist lv_wall_mm{9.0, 1.0};
  Dist lv_long_ratio{1.8, 0.12};  // c/a
  Dist lv_ab_ratio{1.0, 0.05};    // b/a
  Dist lv_trunc{0.82, 0.04};
  Dist rv_edv_ml{160.0, 30.0};
  Dist rv_long_ratio{1.9, 0.15};
  Dist rv_ab_ratio{0.75, 0.06};
  Dist rv_trunc{0.85, 0.04};
  Dist rv_offset_mm{42.0, 3.0};
  double rotation_std = 0.05;    // radians, per axis
  double translation_std = 5.0;  // mm, per axis
  std::size_t points_per_structure = 1024;
};

struct CohortConfig {
  PopulationConfig population;
  RemodelingSpec normal;
  RemodelingSpec prevalent;
  RemodelingSpec incident;
  std::size_t n_normal = 539;
  std::size_t n_prevalent = 294;
  std::size_t n_incident = 235;

  // Dual signal: class-dependent volume change and thickening plus a
  // local defect for the MI classes.
  static CohortConfig defaults();
  // Volume distributions shared across classes; only the ES epicardial
  // defect separates MI from normal. Clinical volume/EF features carry
  // no signal by construction.
  static CohortConfig volume_matched();
  // Classes differ only in global volume change; no local defect.
  static CohortConfig ef_only();
};

// Area-uniform points on one structure's surface (world frame). Points lie
// exactly on the surface by construction.
PointCloud sample_surface(const VentricleParams& params, Structure structure, std::size_t n_points,
                          Rng& rng);

// Closed-form truncated-ellipsoid volume in ml:
//   V = pi*a*b*c*(s - s^3/3 + 2/3),  s = 2t - 1
// (the solid bounded by the ellipsoid and the cut plane z = s*c). Only
// defined for undented surfaces.
double analytic_cavity_volume(const VentricleParams& params, Structure structure);
double analytic_cavity_volume(const StarSurface& surface);

SubjectSample generate_subject(const RemodelingSpec& spec, const PopulationConfig& population,
                               Rng& rng);

// Deterministic cohort: subject i draws from an rng stream derived from
// (seed, i). Labels are attached in normal / prevalent / incident blocks.
std::vector<SubjectSample> generate_cohort(const CohortConfig& config, std::uint64_t seed);

}  // namespace mi3d
