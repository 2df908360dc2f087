#include "mi3d/clinical.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mi3d/errors.hpp"

namespace mi3d {

std::string to_string(AnatomySelection a) { return a == AnatomySelection::kLv ? "LV" : "LV+RV"; }

std::string to_string(PhaseSelection p) { return p == PhaseSelection::kEs ? "ES" : "ED+ES"; }

VolumeEstimate cavity_volume_detailed(const PointCloud& cloud, Structure structure,
                                      std::size_t n_discs) {
  if (n_discs < 1) throw ParameterError("cavity_volume: n_discs must be at least 1");

  std::vector<Vec3> pts;
  pts.reserve(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (cloud.structures[i] == structure) pts.push_back(cloud.points[i]);
  }
  if (pts.size() < 3) {
    throw DegenerateCloudError("cavity_volume: structure " + to_string(structure) + " has only " +
                               std::to_string(pts.size()) + " points");
  }

  double z_min = std::numeric_limits<double>::infinity();
  double z_max = -std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    z_min = std::min(z_min, p[2]);
    z_max = std::max(z_max, p[2]);
  }
  const double span = z_max - z_min;
  if (span <= 0.0) {
    throw DegenerateCloudError("cavity_volume: cloud is flat along the long axis");
  }
  const double h = span / static_cast<double>(n_discs);

  std::vector<std::vector<std::array<double, 2>>> slabs(n_discs);
  for (const auto& p : pts) {
    auto k = static_cast<std::size_t>((p[2] - z_min) / h);
    if (k >= n_discs) k = n_discs - 1;
    slabs[k].push_back({p[0], p[1]});
  }

  VolumeEstimate est;
  for (auto& slab : slabs) {
    if (slab.size() < 3) {
      ++est.skipped_slabs;
      continue;
    }
    double cx = 0.0, cy = 0.0;
    for (const auto& q : slab) {
      cx += q[0];
      cy += q[1];
    }
    cx /= static_cast<double>(slab.size());
    cy /= static_cast<double>(slab.size());
    std::sort(slab.begin(), slab.end(), [cx, cy](const auto& u, const auto& v) {
      return std::atan2(u[1] - cy, u[0] - cx) < std::atan2(v[1] - cy, v[0] - cx);
    });
    double twice_area = 0.0;
    for (std::size_t i = 0; i < slab.size(); ++i) {
      const auto& u = slab[i];
      const auto& v = slab[(i + 1) % slab.size()];
      twice_area += u[0] * v[1] - v[0] * u[1];
    }
    est.ml += 0.5 * std::abs(twice_area) * h;
    ++est.used_slabs;
  }
  if (est.used_slabs == 0) {
    throw DegenerateCloudError("cavity_volume: no slab holds 3 or more points");
  }
  est.ml /= 1000.0;  // mm^3 -> ml
  return est;
}

double cavity_volume(const PointCloud& cloud, Structure structure, std::size_t n_discs) {
  return cavity_volume_detailed(cloud, structure, n_discs).ml;
}

double ejection_fraction(double edv_ml, double esv_ml) {
  if (!(edv_ml > esv_ml) || !(esv_ml > 0.0)) {
    throw DomainError("ejection_fraction requires edv > esv > 0, got edv=" +
                      std::to_string(edv_ml) + " esv=" + std::to_string(esv_ml));
  }
  return (edv_ml - esv_ml) / edv_ml;
}

ClinicalFeatures clinical_features(const SubjectSample& sample, VolumeEstimator estimator,
                                   std::size_t n_discs) {
  ClinicalFeatures f;
  if (estimator == VolumeEstimator::kAnalytic) {
    f.lv_edv_ml = sample.volumes.lv_edv_ml;
    f.lv_esv_ml = sample.volumes.lv_esv_ml;
    f.rv_edv_ml = sample.volumes.rv_edv_ml;
    f.rv_esv_ml = sample.volumes.rv_esv_ml;
  } else {
    f.lv_edv_ml = cavity_volume(sample.ed_cloud, Structure::kLvEndo, n_discs);
    f.lv_esv_ml = cavity_volume(sample.es_cloud, Structure::kLvEndo, n_discs);
    f.rv_edv_ml = cavity_volume(sample.ed_cloud, Structure::kRvEndo, n_discs);
    f.rv_esv_ml = cavity_volume(sample.es_cloud, Structure::kRvEndo, n_discs);
  }
  f.lv_ef = ejection_fraction(f.lv_edv_ml, f.lv_esv_ml);
  f.rv_ef = ejection_fraction(f.rv_edv_ml, f.rv_esv_ml);
  return f;
}

std::vector<double> extract_features(const SubjectSample& sample, AnatomySelection anatomy,
                                     PhaseSelection phases, VolumeEstimator estimator,
                                     std::size_t n_discs) {
  const bool analytic = estimator == VolumeEstimator::kAnalytic;
  auto esv = [&](Structure st, double analytic_value) {
    return analytic ? analytic_value : cavity_volume(sample.es_cloud, st, n_discs);
  };
  auto ef = [&](Structure st, double analytic_edv, double analytic_esv) {
    if (analytic) return ejection_fraction(analytic_edv, analytic_esv);
    return ejection_fraction(cavity_volume(sample.ed_cloud, st, n_discs),
                             cavity_volume(sample.es_cloud, st, n_discs));
  };

  std::vector<double> out;
  if (phases == PhaseSelection::kEs) {
    out.push_back(esv(Structure::kLvEndo, sample.volumes.lv_esv_ml));
    if (anatomy == AnatomySelection::kLvRv) {
      out.push_back(esv(Structure::kRvEndo, sample.volumes.rv_esv_ml));
    }
  } else {
    out.push_back(ef(Structure::kLvEndo, sample.volumes.lv_edv_ml, sample.volumes.lv_esv_ml));
    if (anatomy == AnatomySelection::kLvRv) {
      out.push_back(ef(Structure::kRvEndo, sample.volumes.rv_edv_ml, sample.volumes.rv_esv_ml));
    }
  }
  return out;
}

std::vector<std::string> feature_names(AnatomySelection anatomy, PhaseSelection phases) {
  std::vector<std::string> names;
  if (phases == PhaseSelection::kEs) {
    names.push_back("lv_esv_ml");
    if (anatomy == AnatomySelection::kLvRv) names.push_back("rv_esv_ml");
  } else {
    names.push_back("lv_ef");
    if (anatomy == AnatomySelection::kLvRv) names.push_back("rv_ef");
  }
  return names;
}

LogisticModel logistic_fit(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, double ridge) {
  const std::size_t n = features.size();
  if (n != labels.size()) {
    throw DimensionError("logistic_fit: " + std::to_string(n) + " feature rows vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (n < 2) throw DegenerateLabelsError("logistic_fit needs at least 2 samples");
  int positives = 0;
  for (int y : labels) positives += y ? 1 : 0;
  if (positives == 0 || positives == static_cast<int>(n)) {
    throw DegenerateLabelsError("logistic_fit: labels contain a single class");
  }
  const std::size_t d = features.front().size();
  for (const auto& row : features) {
    if (row.size() != d) throw DimensionError("logistic_fit: ragged feature matrix");
  }
  if (d == 0) throw DimensionError("logistic_fit: empty feature vectors");
  if (ridge < 0.0) throw ParameterError("ridge must be non-negative");

  LogisticModel model;
  model.feature_mean.assign(d, 0.0);
  model.feature_std.assign(d, 0.0);
  for (const auto& row : features) {
    for (std::size_t j = 0; j < d; ++j) model.feature_mean[j] += row[j];
  }
  for (std::size_t j = 0; j < d; ++j) model.feature_mean[j] /= static_cast<double>(n);
  for (const auto& row : features) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - model.feature_mean[j];
      model.feature_std[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    model.feature_std[j] = std::sqrt(model.feature_std[j] / static_cast<double>(n));
    if (model.feature_std[j] <= 0.0) {
      throw DatasetError("logistic_fit: feature " + std::to_string(j) +
                         " is constant after standardization");
    }
  }

  Eigen::MatrixXd x(n, d + 1);  // standardized features plus intercept column
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x(i, j) = (features[i][j] - model.feature_mean[j]) / model.feature_std[j];
    }
    x(i, d) = 1.0;
    y(i) = labels[i] ? 1.0 : 0.0;
  }

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(d + 1);
  constexpr std::size_t kMaxIter = 100;
  constexpr double kTol = 1e-8;
  bool converged = false;
  std::size_t iterations = 0;
  double last_step = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < kMaxIter; ++it) {
    Eigen::VectorXd eta = x * coef;
    Eigen::VectorXd p = (1.0 + (-eta.array()).exp()).inverse();
    Eigen::VectorXd w = p.array() * (1.0 - p.array());

    Eigen::VectorXd grad = x.transpose() * (y - p);
    Eigen::MatrixXd hess = x.transpose() * w.asDiagonal() * x;
    for (std::size_t j = 0; j < d; ++j) {  // penalize weights, not the bias
      grad(j) -= ridge * coef(j);
      hess(j, j) += ridge;
    }
    Eigen::VectorXd delta = hess.ldlt().solve(grad);
    coef += delta;
    iterations = it + 1;
    last_step = delta.cwiseAbs().maxCoeff();
    if (last_step < kTol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("logistic_fit did not converge in " + std::to_string(iterations) +
                           " iterations (last update " + std::to_string(last_step) + ")");
  }

  model.weights.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) model.weights[j] = coef(j);
  model.bias = coef(d);
  model.converged = true;
  model.iterations = iterations;
  return model;
}

double logistic_predict(const LogisticModel& model, const std::vector<double>& features) {
  if (features.size() != model.weights.size()) {
    throw DimensionError("logistic_predict: expected " + std::to_string(model.weights.size()) +
                         " features, got " + std::to_string(features.size()));
  }
  double eta = model.bias;
  for (std::size_t j = 0; j < features.size(); ++j) {
    eta += model.weights[j] * (features[j] - model.feature_mean[j]) / model.feature_std[j];
  }
  return 1.0 / (1.0 + std::exp(-eta));
}

}  // namespace mi3d
