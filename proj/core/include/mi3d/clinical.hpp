#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mi3d/anatomy.hpp"

namespace mi3d {

enum class AnatomySelection { kLv, kLvRv };
enum class PhaseSelection { kEs, kEdEs };
enum class VolumeEstimator { kAnalytic, kDisc };

std::string to_string(AnatomySelection a);
std::string to_string(PhaseSelection p);

// Per-ventricle volumes and ejection fractions of one subject.
struct ClinicalFeatures {
  double lv_edv_ml = 0.0, lv_esv_ml = 0.0, lv_ef = 0.0;
  double rv_edv_ml = 0.0, rv_esv_ml = 0.0, rv_ef = 0.0;
};

struct VolumeEstimate {
  double ml = 0.0;
  std::size_t used_slabs = 0;
  std::size_t skipped_slabs = 0;  // slabs with fewer than 3 points
};

// Disc-summation (clinical Simpson analog): partition the structure's
// points into n_discs z slabs, order each slab by angle about the slab
// centroid, take the shoelace polygon area, and sum area * thickness.
// Exact for star-shaped sections in the dense-point limit.
VolumeEstimate cavity_volume_detailed(const PointCloud& cloud, Structure structure,
                                      std::size_t n_discs);
double cavity_volume(const PointCloud& cloud, Structure structure, std::size_t n_discs = 50);

// (edv - esv) / edv; requires edv > esv > 0.
double ejection_fraction(double edv_ml, double esv_ml);

ClinicalFeatures clinical_features(const SubjectSample& sample, VolumeEstimator estimator,
                                   std::size_t n_discs = 50);

// Benchmark feature vectors: ES-phase configs yield ES volumes (one per
// included ventricle), ED+ES configs yield ejection fractions.
std::vector<double> extract_features(const SubjectSample& sample, AnatomySelection anatomy,
                                     PhaseSelection phases, VolumeEstimator estimator,
                                     std::size_t n_discs = 50);
std::vector<std::string> feature_names(AnatomySelection anatomy, PhaseSelection phases);

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  bool converged = false;
  std::size_t iterations = 0;
};

// Ridge-penalized logistic regression fit by iteratively reweighted least
// squares (Newton steps on the penalized log-likelihood; the bias is not
// penalized). Features are standardized internally. Converges when the
// largest coefficient update falls below 1e-8; throws ConvergenceError
// with iteration diagnostics otherwise.
LogisticModel logistic_fit(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, double ridge = 1e-6);

double logistic_predict(const LogisticModel& model, const std::vector<double>& features);

}  // namespace mi3d
