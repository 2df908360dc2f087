#include <doctest.h>

#include <array>
#include <cmath>

#include "mi3d/anatomy.hpp"
#include "mi3d/errors.hpp"

using namespace mi3d;

namespace {

VentricleParams sphere_params(double r_endo = 30.0, double r_epi = 38.0) {
  VentricleParams p;
  p.lv_endo.a = p.lv_endo.b = p.lv_endo.c = r_endo;
  p.lv_epi.a = p.lv_epi.b = p.lv_epi.c = r_epi;
  p.rv_endo.a = p.rv_endo.b = 20.0;
  p.rv_endo.c = 35.0;
  p.rv_endo.center = {45.0, 0.0, 0.0};
  return p;
}

CohortConfig zero_noise_config() {
  CohortConfig c = CohortConfig::defaults();
  PopulationConfig& pop = c.population;
  for (Dist* d : {&pop.lv_edv_ml, &pop.lv_wall_mm, &pop.lv_long_ratio, &pop.lv_ab_ratio,
                  &pop.lv_trunc, &pop.rv_edv_ml, &pop.rv_long_ratio, &pop.rv_ab_ratio,
                  &pop.rv_trunc, &pop.rv_offset_mm}) {
    d->std = 0.0;
  }
  pop.rotation_std = 0.0;
  pop.translation_std = 0.0;
  pop.points_per_structure = 16;
  for (RemodelingSpec* spec : {&c.normal, &c.prevalent, &c.incident}) {
    spec->thickening.std = 0.0;
    spec->volume_change.std = 0.0;
    spec->rv_volume_change.std = 0.0;
  }
  return c;
}

}  // namespace

TEST_SUITE("anatomy") {

TEST_CASE("sphere sampling: centroid near the center") {
  VentricleParams p = sphere_params();
  Rng rng(1);
  PointCloud cloud = sample_surface(p, Structure::kLvEndo, 100000, rng);
  double cx = 0.0, cy = 0.0, cz = 0.0;
  for (const auto& pt : cloud.points) {
    cx += pt[0];
    cy += pt[1];
    cz += pt[2];
  }
  const double n = static_cast<double>(cloud.size());
  CHECK(std::abs(cx / n) < 0.5);
  CHECK(std::abs(cy / n) < 0.5);
  CHECK(std::abs(cz / n) < 0.5);
}

TEST_CASE("sampled points satisfy the implicit surface equation") {
  VentricleParams p = sphere_params();
  p.lv_endo.a = 25.0;
  p.lv_endo.b = 30.0;
  p.lv_endo.c = 45.0;
  p.lv_endo.trunc_t = 0.8;
  p.lv_epi.a = 33.0;
  p.lv_epi.b = 38.0;
  p.lv_epi.c = 53.0;
  Rng rng(2);
  PointCloud cloud = sample_surface(p, Structure::kLvEndo, 5000, rng);
  const StarSurface& s = p.lv_endo;
  for (const auto& pt : cloud.points) {
    const double h2 = (pt[0] / s.a) * (pt[0] / s.a) + (pt[1] / s.b) * (pt[1] / s.b) +
                      (pt[2] / s.c) * (pt[2] / s.c);
    REQUIRE(std::abs(h2 - 1.0) < 1e-9);
    REQUIRE(pt[2] <= s.z_high() + 1e-9);
  }
}

TEST_CASE("area uniformity passes a chi-square test on 64 equal-area sphere bins") {
  VentricleParams p = sphere_params();
  Rng rng(1);
  const std::size_t n = 100000;
  PointCloud cloud = sample_surface(p, Structure::kLvEndo, n, rng);
  // 8 z-bands x 8 azimuth sectors, all of equal sphere area
  std::array<std::size_t, 64> bins{};
  for (const auto& pt : cloud.points) {
    const double z = pt[2] / 30.0;
    auto zi = static_cast<std::size_t>(std::min(7.0, (z + 1.0) / 2.0 * 8.0));
    const double phi = std::atan2(pt[1], pt[0]) + M_PI;
    auto pi = static_cast<std::size_t>(std::min(7.0, phi / (2.0 * M_PI) * 8.0));
    bins[zi * 8 + pi] += 1;
  }
  const double expected = static_cast<double>(n) / 64.0;
  double chi2 = 0.0;
  for (std::size_t b : bins) {
    const double d = static_cast<double>(b) - expected;
    chi2 += d * d / expected;
  }
  // upper 1% critical value of chi-square with 63 degrees of freedom
  CHECK(chi2 < 92.01);
}

TEST_CASE("analytic volume: sphere and half ellipsoid") {
  StarSurface sphere;
  sphere.a = sphere.b = sphere.c = 30.0;
  CHECK(analytic_cavity_volume(sphere) ==
        doctest::Approx(4.0 / 3.0 * M_PI * 27000.0 / 1000.0).epsilon(1e-12));

  StarSurface half;
  half.a = 20.0;
  half.b = 20.0;
  half.c = 40.0;
  half.trunc_t = 0.5;  // keep z/c in [-1, 0]
  CHECK(analytic_cavity_volume(half) ==
        doctest::Approx(2.0 / 3.0 * M_PI * 20.0 * 20.0 * 40.0 / 1000.0).epsilon(1e-12));
  CHECK(analytic_cavity_volume(half) == doctest::Approx(33.5103).epsilon(1e-4));
}

TEST_CASE("analytic volume matches Monte Carlo for arbitrary truncation") {
  StarSurface s;
  s.a = 22.0;
  s.b = 27.0;
  s.c = 48.0;
  s.trunc_t = 0.73;
  const double analytic = analytic_cavity_volume(s);

  Rng rng(4);
  const std::size_t n = 1000000;
  const double z_hi = (2.0 * s.trunc_t - 1.0) * s.c;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-s.a, s.a);
    const double y = rng.uniform(-s.b, s.b);
    const double z = rng.uniform(-s.c, z_hi);
    if ((x / s.a) * (x / s.a) + (y / s.b) * (y / s.b) + (z / s.c) * (z / s.c) <= 1.0) ++inside;
  }
  const double box = 2.0 * s.a * 2.0 * s.b * (z_hi + s.c);
  const double mc = box * static_cast<double>(inside) / static_cast<double>(n) / 1000.0;
  CHECK(std::abs(mc - analytic) / analytic < 0.005);
}

TEST_CASE("analytic volume refuses dented surfaces") {
  StarSurface s;
  s.a = s.b = s.c = 30.0;
  s.dent_depth_mm = 3.0;
  s.dent_angle = 0.5;
  CHECK_THROWS_AS(analytic_cavity_volume(s), DomainError);
}

TEST_CASE("zero-noise subject reproduces the configured volume change exactly") {
  CohortConfig c = zero_noise_config();
  Rng rng(5);
  SubjectSample s = generate_subject(c.normal, c.population, rng);
  const double ef =
      (s.volumes.lv_edv_ml - s.volumes.lv_esv_ml) / s.volumes.lv_edv_ml;
  CHECK(ef == doctest::Approx(c.normal.volume_change.mean).epsilon(1e-12));
  CHECK(s.volumes.lv_esv_ml < s.volumes.lv_edv_ml);
  CHECK(s.volumes.rv_esv_ml < s.volumes.rv_edv_ml);
  CHECK(s.volumes.lv_edv_ml == doctest::Approx(c.population.lv_edv_ml.mean).epsilon(1e-9));
}

TEST_CASE("prevalent population has lower mean EF than normal over 200 subjects") {
  CohortConfig c = CohortConfig::defaults();
  c.population.points_per_structure = 4;  // shape statistics only
  c.n_normal = 200;
  c.n_prevalent = 200;
  c.n_incident = 200;
  auto cohort = generate_cohort(c, 17);
  double means[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : cohort) {
    const double ef = (s.volumes.lv_edv_ml - s.volumes.lv_esv_ml) / s.volumes.lv_edv_ml;
    means[static_cast<int>(s.label)] += ef;
    counts[static_cast<int>(s.label)] += 1;
  }
  for (int i = 0; i < 3; ++i) means[i] /= static_cast<double>(counts[i]);
  const double normal = means[static_cast<int>(ClassLabel::kNormal)];
  const double prevalent = means[static_cast<int>(ClassLabel::kPrevalentMi)];
  const double incident = means[static_cast<int>(ClassLabel::kIncidentMi)];
  // configured separation is 3 population std-devs for prevalent
  CHECK(normal - prevalent > 2.0 * 0.04);
  // full class ordering: normal > incident > prevalent
  CHECK(normal > incident);
  CHECK(incident > prevalent);
}

TEST_CASE("subjects regenerate bitwise from the same seed") {
  CohortConfig c = CohortConfig::defaults();
  c.population.points_per_structure = 32;
  Rng a(77), b(77);
  SubjectSample sa = generate_subject(c.prevalent, c.population, a);
  SubjectSample sb = generate_subject(c.prevalent, c.population, b);
  REQUIRE(sa.ed_cloud.size() == sb.ed_cloud.size());
  bool identical = sa.volumes.lv_edv_ml == sb.volumes.lv_edv_ml &&
                   sa.volumes.lv_esv_ml == sb.volumes.lv_esv_ml;
  for (std::size_t i = 0; i < sa.ed_cloud.size(); ++i) {
    identical = identical && sa.ed_cloud.points[i] == sb.ed_cloud.points[i];
  }
  for (std::size_t i = 0; i < sa.es_cloud.size(); ++i) {
    identical = identical && sa.es_cloud.points[i] == sb.es_cloud.points[i];
  }
  CHECK(identical);
}

TEST_CASE("cohort counts and label blocks") {
  CohortConfig c = CohortConfig::defaults();
  c.population.points_per_structure = 2;
  auto cohort = generate_cohort(c, 3);
  CHECK(cohort.size() == 1068);  // 539 + 294 + 235
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : cohort) counts[static_cast<int>(s.label)] += 1;
  CHECK(counts[0] == 539);
  CHECK(counts[1] == 294);
  CHECK(counts[2] == 235);

  CohortConfig single = c;
  single.n_normal = 1;
  single.n_prevalent = 0;
  single.n_incident = 0;
  auto one = generate_cohort(single, 3);
  REQUIRE(one.size() == 1);
  CHECK(one[0].label == ClassLabel::kNormal);
  CHECK(one[0].subject_id == "S000000");
}

TEST_CASE("same seed gives identical cohorts; different seeds diverge almost everywhere") {
  CohortConfig c = CohortConfig::defaults();
  c.population.points_per_structure = 8;
  c.n_normal = 30;
  c.n_prevalent = 10;
  c.n_incident = 10;
  auto a = generate_cohort(c, 5);
  auto b = generate_cohort(c, 5);
  auto other = generate_cohort(c, 6);

  std::size_t equal_same = 0, equal_cross = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double va[4] = {a[i].volumes.lv_edv_ml, a[i].volumes.lv_esv_ml, a[i].volumes.rv_edv_ml,
                          a[i].volumes.rv_esv_ml};
    const double vb[4] = {b[i].volumes.lv_edv_ml, b[i].volumes.lv_esv_ml, b[i].volumes.rv_edv_ml,
                          b[i].volumes.rv_esv_ml};
    const double vo[4] = {other[i].volumes.lv_edv_ml, other[i].volumes.lv_esv_ml,
                          other[i].volumes.rv_edv_ml, other[i].volumes.rv_esv_ml};
    for (int k = 0; k < 4; ++k) {
      ++total;
      if (va[k] == vb[k]) ++equal_same;
      if (va[k] == vo[k]) ++equal_cross;
    }
  }
  CHECK(equal_same == total);
  CHECK(static_cast<double>(equal_cross) / static_cast<double>(total) < 0.01);
}

TEST_CASE("defect dent suppresses ES wall thickness inside the cap only") {
  CohortConfig c = zero_noise_config();
  Rng rng(9);
  SubjectSample s = generate_subject(c.prevalent, c.population, rng);
  REQUIRE(s.params_es.lv_epi.dented());

  const Vec3 in_cap = s.params_es.lv_epi.dent_dir;
  // pick a direction well outside the cap
  const Vec3 out_cap{-in_cap[0], -in_cap[1], -in_cap[2]};
  const double t_in =
      s.params_es.lv_epi.radius(in_cap) - s.params_es.lv_endo.radius(in_cap);
  const double t_out =
      s.params_es.lv_epi.radius(out_cap) - s.params_es.lv_endo.radius(out_cap);
  CHECK(t_in < t_out);
  CHECK(t_in > 0.0);  // wall never vanishes

  // volume-matched variant: cavity volumes carry no class signal
  CohortConfig vm = CohortConfig::volume_matched();
  CHECK(vm.prevalent.volume_change.mean == vm.normal.volume_change.mean);
  CHECK(vm.prevalent.thickening.mean == vm.normal.thickening.mean);
  CHECK(vm.prevalent.defect_suppression > 0.0);

  CohortConfig ef = CohortConfig::ef_only();
  CHECK(ef.prevalent.defect_suppression == 0.0);
  CHECK(ef.prevalent.volume_change.mean < ef.normal.volume_change.mean);
}

TEST_CASE("parameter validation") {
  StarSurface s;
  s.a = -1.0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s.a = 10.0;
  s.trunc_t = 1.5;
  CHECK_THROWS_AS(s.validate(), ParameterError);

  VentricleParams p = sphere_params();
  p.lv_epi.a = p.lv_endo.a;  // violates strict epi > endo
  CHECK_THROWS_AS(p.validate(), ParameterError);

  Rng rng(1);
  CHECK_THROWS_AS(sample_surface(sphere_params(), Structure::kLvEndo, 0, rng), ParameterError);
}

}  // TEST_SUITE
