#include "mi3d/slices.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace {

// Root of the surface implicit along the in-plane ray origin + rho * dir,
// assuming origin is strictly inside. Unique crossing for star-shaped
// sections; bisection to sub-nanometer residuals.
bool ray_surface_crossing(const StarSurface& s, const Vec3& origin, const Vec3& dir, double rho_hi,
                          double& rho_out) {
  double lo = 0.0, hi = rho_hi;
  auto eval = [&](double rho) {
    Vec3 p{origin[0] + rho * dir[0], origin[1] + rho * dir[1], origin[2] + rho * dir[2]};
    return s.implicit(p);
  };
  if (eval(lo) >= 0.0) return false;
  double f_hi = eval(hi);
  int grow = 0;
  while (f_hi < 0.0 && grow < 8) {
    hi *= 2.0;
    f_hi = eval(hi);
    ++grow;
  }
  if (f_hi < 0.0) return false;
  for (int it = 0; it < 90; ++it) {
    double mid = 0.5 * (lo + hi);
    if (eval(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  rho_out = 0.5 * (lo + hi);
  return true;
}

// Intersection contour of the plane z = z0 with one structure, sampled at
// n uniform azimuths about the in-plane projection of the surface center.
SliceContour sax_contour(const StarSurface& s, Structure tag, double z0, std::size_t n) {
  SliceContour contour;
  contour.structure = tag;
  if (z0 < s.z_low() - 1e-12 || z0 > s.z_high() + 1e-12) return contour;

  const Vec3 c0{s.center[0], s.center[1], z0};
  if (s.implicit(c0) >= 0.0) return contour;  // grazing cut, treat as a miss

  const double rho_hi = 2.0 * std::max({s.a, s.b, s.c});
  contour.points.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double psi = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    const Vec3 dir{std::cos(psi), std::sin(psi), 0.0};
    double rho = 0.0;
    if (ray_surface_crossing(s, c0, dir, rho_hi, rho)) {
      contour.points.push_back({c0[0] + rho * dir[0], c0[1] + rho * dir[1], z0});
    }
  }
  return contour;
}

// Intersection contour of a long-axis plane (normal in the x/y plane,
// passing through the heart origin) with one structure. The polar sweep
// runs about the projection of the surface center; points beyond the base
// truncation are dropped, so base-clipped contours are open arcs.
SliceContour lax_contour(const StarSurface& s, Structure tag, const Vec3& normal, std::size_t n) {
  SliceContour contour;
  contour.structure = tag;

  // In-plane orthonormal frame: e1 horizontal, e2 = z.
  const Vec3 e1{-normal[1], normal[0], 0.0};
  const Vec3 e2{0.0, 0.0, 1.0};
  // Project the surface center onto the plane (plane contains the origin).
  const double off = s.center[0] * normal[0] + s.center[1] * normal[1];
  const Vec3 c0{s.center[0] - off * normal[0], s.center[1] - off * normal[1], s.center[2]};
  if (s.implicit(c0) >= 0.0) return contour;

  const double rho_hi = 2.0 * std::max({s.a, s.b, s.c});
  contour.points.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double psi = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    const Vec3 dir{std::cos(psi) * e1[0] + std::sin(psi) * e2[0],
                   std::cos(psi) * e1[1] + std::sin(psi) * e2[1],
                   std::cos(psi) * e1[2] + std::sin(psi) * e2[2]};
    double rho = 0.0;
    if (!ray_surface_crossing(s, c0, dir, rho_hi, rho)) continue;
    Vec3 p{c0[0] + rho * dir[0], c0[1] + rho * dir[1], c0[2] + rho * dir[2]};
    if (p[2] > s.z_high() + 1e-9) continue;  // above the base truncation
    contour.points.push_back(p);
  }
  return contour;
}

}  // namespace

std::size_t SaxSlice::point_count() const {
  std::size_t n = 0;
  for (const auto& c : contours) n += c.points.size();
  return n;
}

std::size_t LaxPlane::point_count() const {
  std::size_t n = 0;
  for (const auto& c : contours) n += c.points.size();
  return n;
}

std::size_t SliceAcquisition::total_sax_points() const {
  std::size_t n = 0;
  for (const auto& s : sax) n += s.point_count();
  return n;
}

std::size_t SliceAcquisition::total_lax_points() const {
  std::size_t n = 0;
  for (const auto& p : lax) n += p.point_count();
  return n;
}

SliceAcquisition slice_sample(const SubjectSample& sample, const AcquisitionConfig& config) {
  const VentricleParams& params =
      config.phase == Phase::kEd ? sample.params_ed : sample.params_es;
  params.validate();

  double z_lo = std::numeric_limits<double>::infinity();
  double z_hi = -std::numeric_limits<double>::infinity();
  for (Structure st : kAllStructures) {
    const StarSurface& s = params.surface(st);
    z_lo = std::min(z_lo, s.z_low());
    z_hi = std::max(z_hi, s.z_high());
  }
  const double z_mid = 0.5 * (z_lo + z_hi);

  SliceAcquisition acq;
  acq.config = config;
  acq.sax.resize(config.sax_slices);
  for (std::size_t i = 0; i < config.sax_slices; ++i) {
    const double offset =
        (static_cast<double>(i) - 0.5 * static_cast<double>(config.sax_slices - 1)) *
        config.sax_spacing_mm;
    SaxSlice& slice = acq.sax[i];
    slice.z = z_mid + offset;
    for (Structure st : kAllStructures) {
      slice.contours.push_back(sax_contour(params.surface(st), st, slice.z, config.sax_points));
    }
  }

  // Four-chamber analog (plane y = 0) and two-chamber analog (plane x = 0).
  for (const Vec3& normal : {Vec3{0.0, 1.0, 0.0}, Vec3{1.0, 0.0, 0.0}}) {
    LaxPlane plane;
    plane.normal = normal;
    for (Structure st : kAllStructures) {
      plane.contours.push_back(lax_contour(params.surface(st), st, normal, config.lax_points));
    }
    acq.lax.push_back(std::move(plane));
  }

  if (acq.total_sax_points() + acq.total_lax_points() == 0) {
    throw EmptyAcquisitionError("no slice plane intersects the anatomy");
  }
  return acq;
}

SliceAcquisition inject_misalignment(const SliceAcquisition& acq, double shift_std_mm, Rng& rng) {
  if (shift_std_mm < 0.0) {
    throw ParameterError("shift std must be non-negative, got " + std::to_string(shift_std_mm));
  }
  SliceAcquisition out = acq;
  for (SaxSlice& slice : out.sax) {
    const double dx = rng.truncated_normal(0.0, shift_std_mm, 3.0);
    const double dy = rng.truncated_normal(0.0, shift_std_mm, 3.0);
    slice.injected_shift = {slice.injected_shift[0] + dx, slice.injected_shift[1] + dy};
    for (SliceContour& contour : slice.contours) {
      for (Vec3& p : contour.points) {
        p[0] += dx;
        p[1] += dy;
      }
    }
  }
  return out;
}

SliceRegistration register_slice_translation(const std::vector<RegistrationGroup>& groups) {
  std::size_t n_anchors = 0;
  for (const auto& g : groups) {
    if (!g.anchors.empty() && g.points.empty()) {
      throw ParameterError("registration group has anchors but no candidate points");
    }
    n_anchors += g.anchors.size();
  }
  if (n_anchors == 0) throw ParameterError("register_slice_translation needs anchors");

  SliceRegistration reg;

  // Centroid-difference initialization over all groups.
  double ax = 0.0, ay = 0.0, px = 0.0, py = 0.0;
  std::size_t n_points = 0;
  for (const auto& g : groups) {
    for (const auto& a : g.anchors) {
      ax += a[0];
      ay += a[1];
    }
    for (const auto& p : g.points) {
      px += p[0];
      py += p[1];
    }
    n_points += g.points.size();
  }
  double tx = ax / static_cast<double>(n_anchors) - px / static_cast<double>(n_points);
  double ty = ay / static_cast<double>(n_anchors) - py / static_cast<double>(n_points);

  for (std::size_t it = 0; it < 100; ++it) {
    double sum_dx = 0.0, sum_dy = 0.0, objective = 0.0;
    for (const auto& g : groups) {
      for (const auto& a : g.anchors) {
        double best = std::numeric_limits<double>::infinity();
        double best_dx = 0.0, best_dy = 0.0;
        for (const auto& p : g.points) {
          const double dx = a[0] - (p[0] + tx);
          const double dy = a[1] - (p[1] + ty);
          const double d2 = dx * dx + dy * dy;
          if (d2 < best) {
            best = d2;
            best_dx = a[0] - p[0];
            best_dy = a[1] - p[1];
          }
        }
        objective += best;
        sum_dx += best_dx;
        sum_dy += best_dy;
      }
    }
    reg.objective_history.push_back(objective);

    const double nx = sum_dx / static_cast<double>(n_anchors);
    const double ny = sum_dy / static_cast<double>(n_anchors);
    const double step = std::hypot(nx - tx, ny - ty);
    tx = nx;
    ty = ny;
    reg.iterations = it + 1;
    if (step < 1e-6) {
      reg.converged = true;
      break;
    }
  }
  reg.shift = {tx, ty};
  return reg;
}

SliceRegistration register_slice_translation(const std::vector<std::array<double, 2>>& anchors,
                                             const std::vector<std::array<double, 2>>& points) {
  if (anchors.empty() || points.empty()) {
    throw ParameterError("register_slice_translation needs anchors and points");
  }
  return register_slice_translation(std::vector<RegistrationGroup>{{anchors, points}});
}

SliceAcquisition correct_misalignment(const SliceAcquisition& acq) {
  bool any_lax = false;
  for (const auto& plane : acq.lax) {
    if (plane.point_count() > 0) any_lax = true;
  }
  if (!any_lax) {
    throw EmptyAcquisitionError("misalignment correction needs at least one non-empty LAX plane");
  }

  SliceAcquisition out = acq;
  for (SaxSlice& slice : out.sax) {
    if (slice.point_count() == 0) continue;

    // Anchors are matched within their own structure; anchors whose
    // structure is missing from this slice would snap to the wrong
    // contour, so they are dropped. Anchors on near-horizontal contour
    // segments (the apex and base caps) are dropped too: their in-plane
    // radius changes fast across the z band, so their nearest-point
    // residuals do not reflect the slice's true offset.
    std::vector<RegistrationGroup> groups;
    std::size_t n_anchors = 0;
    for (const auto& slice_contour : slice.contours) {
      if (slice_contour.points.empty()) continue;
      RegistrationGroup group;
      for (const auto& plane : out.lax) {
        for (const auto& lax_contour : plane.contours) {
          if (lax_contour.structure != slice_contour.structure) continue;
          const auto& pts = lax_contour.points;
          for (std::size_t i = 0; i < pts.size(); ++i) {
            if (std::abs(pts[i][2] - slice.z) > out.config.z_band_mm) continue;
            const Vec3& prev = pts[i == 0 ? i : i - 1];
            const Vec3& next = pts[i + 1 == pts.size() ? i : i + 1];
            const double tx = next[0] - prev[0];
            const double ty = next[1] - prev[1];
            const double tz = next[2] - prev[2];
            const double norm = std::sqrt(tx * tx + ty * ty + tz * tz);
            if (norm == 0.0 || std::abs(tz) < 0.5 * norm) continue;
            group.anchors.push_back({pts[i][0], pts[i][1]});
          }
        }
      }
      if (group.anchors.empty()) continue;
      for (const auto& p : slice_contour.points) group.points.push_back({p[0], p[1]});
      n_anchors += group.anchors.size();
      groups.push_back(std::move(group));
    }
    if (n_anchors == 0) {
      slice.no_anchors = true;
      continue;
    }

    const SliceRegistration reg = register_slice_translation(groups);
    slice.recovered_shift = reg.shift;
    slice.corrected = true;
    for (SliceContour& contour : slice.contours) {
      for (Vec3& p : contour.points) {
        p[0] += reg.shift[0];
        p[1] += reg.shift[1];
      }
    }
  }
  return out;
}

}  // namespace mi3d
