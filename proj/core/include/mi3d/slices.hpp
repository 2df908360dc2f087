#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mi3d/anatomy.hpp"
#include "mi3d/rng.hpp"

namespace mi3d {

// Slice geometry lives in the heart's long-axis frame: SAX planes are
// z-normal, LAX planes contain the z axis. In-plane shifts act on x/y,
// so z coordinates are untouched by misalignment.
struct AcquisitionConfig {
  std::size_t sax_slices = 10;
  double sax_spacing_mm = 10.0;
  std::size_t sax_points = 48;  // per contour per structure
  std::size_t lax_points = 64;  // per contour per structure
  double z_band_mm = 5.0;       // anchor selection half-width
  Phase phase = Phase::kEd;
};

struct SliceContour {
  Structure structure;
  std::vector<Vec3> points;  // heart frame, mm
};

struct SaxSlice {
  double z = 0.0;
  std::vector<SliceContour> contours;
  std::array<double, 2> injected_shift{0.0, 0.0};
  std::array<double, 2> recovered_shift{0.0, 0.0};
  bool corrected = false;
  bool no_anchors = false;  // flagged when no LAX anchor fell in the band

  std::size_t point_count() const;
};

struct LaxPlane {
  Vec3 normal{0.0, 1.0, 0.0};
  std::vector<SliceContour> contours;

  std::size_t point_count() const;
};

struct SliceAcquisition {
  AcquisitionConfig config;
  std::vector<SaxSlice> sax;   // strictly ordered in z
  std::vector<LaxPlane> lax;   // two-chamber and four-chamber analogs

  std::size_t total_sax_points() const;
  std::size_t total_lax_points() const;
};

// Samples plane-surface intersection contours for every SAX level and both
// LAX planes. Planes that miss a structure yield empty contours. Throws
// EmptyAcquisitionError when nothing intersects at all.
SliceAcquisition slice_sample(const SubjectSample& sample, const AcquisitionConfig& config);

// Translates each SAX slice in-plane by an independent Gaussian 2-vector
// (std = shift_std_mm, each component truncated at +-3 sigma) and records
// the injected shifts. LAX planes are the fixed reference anchors.
SliceAcquisition inject_misalignment(const SliceAcquisition& acq, double shift_std_mm, Rng& rng);

// Translation-only registration of one slice: alternates nearest-neighbor
// assignment of anchors to translated slice points with the closed-form
// mean-shift update until the update norm drops below 1e-6 mm or 100
// iterations. The objective is non-increasing across iterations.
struct SliceRegistration {
  std::array<double, 2> shift{0.0, 0.0};
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> objective_history;
};

// Anchors and candidate points that belong together (one structure's
// contours); nearest-neighbor assignment never crosses groups, but all
// groups share the single in-plane translation.
struct RegistrationGroup {
  std::vector<std::array<double, 2>> anchors;
  std::vector<std::array<double, 2>> points;
};

SliceRegistration register_slice_translation(const std::vector<RegistrationGroup>& groups);
SliceRegistration register_slice_translation(const std::vector<std::array<double, 2>>& anchors,
                                             const std::vector<std::array<double, 2>>& points);

// Applies register_slice_translation to every SAX slice against the LAX
// anchor points within the config's z band. Slices without anchors are
// left unchanged and flagged.
SliceAcquisition correct_misalignment(const SliceAcquisition& acq);

}  // namespace mi3d
