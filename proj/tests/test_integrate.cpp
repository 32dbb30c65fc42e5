#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "orbitstab/integrate.hpp"
#include "orbitstab/systems.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace orbitstab;

namespace {

constexpr double kPi = std::numbers::pi;

// x' = y, y' = -x: (cos t, -sin t) from (1, 0).
const VectorField3 kRotation = VectorField3::linear((Mat3() << 0, 1, 0, -1, 0, 0, 0, 0, 0).finished());

Vec3 rotation_exact(double t) { return {std::cos(t), -std::sin(t), 0.0}; }

const IntegratorConfig kTight = IntegratorConfig::adaptive(1e-10, 1e-12);

}  // namespace

TEST_CASE("configuration validation") {
  CHECK_NOTHROW(IntegratorConfig{}.validate());
  CHECK_THROWS_AS(IntegratorConfig::adaptive(0.0, 1e-12).validate(), std::invalid_argument);
  CHECK_THROWS_AS(IntegratorConfig::adaptive(1e-10, -1.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(IntegratorConfig::fixed(0.0).validate(), std::invalid_argument);
  IntegratorConfig c;
  c.max_steps = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("rotation over a quarter turn") {
  for (const auto& cfg : {kTight, IntegratorConfig::fixed(1e-3)}) {
    const Trajectory traj = integrate(kRotation, {1, 0, 0}, kPi / 2, cfg);
    CHECK((traj.final_state() - Vec3(0, -1, 0)).norm() <= 1e-8);
    CHECK(traj.t_end() == kPi / 2);
  }
}

TEST_CASE("fixed-step scheme converges with fourth order") {
  auto err = [](double h) {
    return (integrate(kRotation, {1, 0, 0}, 1.0, IntegratorConfig::fixed(h)).final_state() - rotation_exact(1.0)).norm();
  };
  const double ratio = err(0.02) / err(0.01);
  CHECK(ratio > 14.0);
  CHECK(ratio < 18.0);
}

TEST_CASE("zero field gives a constant trajectory") {
  const Vec3 u0(0.3, -2, 5);
  const Trajectory traj = integrate(VectorField3::zero(), u0, 10.0, kTight);
  for (const auto& u : traj.states()) CHECK((u - u0).norm() == 0.0);
  CHECK((traj.at(3.3) - u0).norm() <= 1e-15);
}

TEST_CASE("zero-length integration is a single node") {
  const Trajectory traj = integrate(kRotation, {1, 0, 0}, 0.0, kTight);
  CHECK(traj.size() == 1);
  CHECK(traj.t_begin() == 0.0);
  CHECK(traj.final_state() == Vec3(1, 0, 0));
}

TEST_CASE("trajectory nodes are strictly increasing and reproduced by the interpolant") {
  const Trajectory traj = integrate(kRotation, {1, 0, 0}, 10.0, kTight);
  for (std::size_t i = 1; i < traj.size(); ++i) CHECK(traj.times()[i] > traj.times()[i - 1]);
  for (std::size_t i = 0; i < traj.size(); ++i) CHECK(traj.at(traj.times()[i]) == traj.states()[i]);

  Trajectory t;
  t.push(0.0, Vec3::Zero(), Vec3::Zero());
  CHECK_THROWS(t.push(0.0, Vec3::Zero(), Vec3::Zero()));
  CHECK_THROWS(t.push(-1.0, Vec3::Zero(), Vec3::Zero()));
}

TEST_CASE("interpolant error between nodes") {
  const Trajectory traj = integrate(kRotation, {1, 0, 0}, 2 * kPi, kTight);
  double worst = 0.0;
  for (double t : traj.uniform_times(5001)) worst = std::max(worst, (traj.at(t) - rotation_exact(t)).norm());
  CHECK(worst <= 1e-6);
}

TEST_CASE("Rikitake first integrals are conserved") {
  const SystemDef sys = systems::rikitake(1.0);
  const Trajectory traj = integrate(hamiltonian_field(sys), {1, 1, 1}, 100.0, kTight);
  double dh = 0.0, dc = 0.0;
  for (const auto& u : traj.states()) {
    dh = std::max(dh, std::abs(oracle::rikitake_H(1.0, u) + 1.0));
    dc = std::max(dc, std::abs(oracle::rikitake_C(u) - 2.0));
  }
  CHECK(dh <= 1e-6);
  CHECK(dc <= 1e-6);
  CHECK(std::max(dh, dc) <= 10 * kTight.rel_tol * 100.0);
}

TEST_CASE("integration failures") {
  const VectorField3 blowup([](const Vec3& u) { return Vec3(u.x() * u.x(), 0, 0); });
  CHECK_THROWS_AS(integrate(blowup, {1, 0, 0}, 2.0, kTight), IntegrationError);

  IntegratorConfig few = kTight;
  few.max_steps = 5;
  try {
    integrate(kRotation, {1, 0, 0}, 100.0, few);
    FAIL("expected max_steps failure");
  } catch (const IntegrationError& e) {
    CHECK(e.kind() == IntegrationError::Kind::MaxSteps);
  }

  const VectorField3 nan_field([](const Vec3& u) {
    return u.x() > 1.5 ? Vec3(std::numeric_limits<double>::quiet_NaN(), 0, 0) : Vec3(1, 0, 0);
  });
  try {
    integrate(nan_field, {0, 0, 0}, 3.0, IntegratorConfig::fixed(0.01));
    FAIL("expected non-finite failure");
  } catch (const IntegrationError& e) {
    CHECK(e.kind() == IntegrationError::Kind::NonFinite);
    CHECK(e.time() > 1.4);
  }
  CHECK_THROWS_AS(integrate(kRotation, {std::numeric_limits<double>::infinity(), 0, 0}, 1.0, kTight),
                  IntegrationError);
}

TEST_CASE("section crossing of the rotation") {
  const Section sec{Vec3::Zero(), Vec3(1, 0, 0)};
  const auto hits = locate_section_crossings(kRotation, {1, 0, 0}, sec, 2, 20.0, kTight);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].t == doctest::Approx(3 * kPi / 2).epsilon(1e-10));
  CHECK(hits[1].t == doctest::Approx(3 * kPi / 2 + 2 * kPi).epsilon(1e-10));
  CHECK(std::abs(sec(hits[0].u)) <= 1e-10);
  CHECK(kRotation(hits[0].u).dot(sec.normal) > 0.0);
}

TEST_CASE("no crossing for a field parallel to the section") {
  const VectorField3 drift([](const Vec3&) { return Vec3(0, 1, 0); });
  const Section sec{Vec3::Zero(), Vec3(1, 0, 0)};
  try {
    locate_section_crossings(drift, {-1, 0, 0}, sec, 1, 10.0, kTight);
    FAIL("expected a section error");
  } catch (const SectionError& e) {
    CHECK(e.found() == 0);
  }
  CHECK_THROWS_AS(locate_section_crossings(drift, {-1, 0, 0}, {Vec3::Zero(), Vec3::Zero()}, 1, 1.0, kTight),
                  std::invalid_argument);
}

TEST_CASE("Rikitake return to the section through the seed") {
  const VectorField3 x = hamiltonian_field(systems::rikitake(1.0));
  const Vec3 seed(1, 1, 1);
  const Section sec{seed, x(seed).normalized()};
  const auto hits = locate_section_crossings(x, seed, sec, 1, 100.0, IntegratorConfig::adaptive(1e-12, 1e-14));
  REQUIRE(hits.size() == 1);
  CHECK(std::abs(sec(hits[0].u)) <= 1e-10);
  CHECK(x(hits[0].u).dot(sec.normal) > 0.0);
  // The return closes the orbit.
  CHECK((hits[0].u - seed).norm() <= 1e-6);
  const Trajectory traj = integrate(x, seed, hits[0].t, IntegratorConfig::adaptive(1e-12, 1e-14));
  CHECK((traj.final_state() - seed).norm() <= 1e-6);
}

TEST_CASE("monodromy of a diagonal linear field") {
  const VectorField3 f = VectorField3::linear(Vec3(-1, 0, 0).asDiagonal());
  const Monodromy m = monodromy_matrix(f, Vec3::Zero(), 1.0, kTight);
  const Mat3 expected = Vec3(std::exp(-1.0), 1, 1).asDiagonal();
  CHECK((m.matrix - expected).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(m.trace_integral == doctest::Approx(-1.0));
  CHECK(m.liouville_mismatch() <= 1e-10);
  CHECK(m.periodic);
}

TEST_CASE("monodromy of the zero field") {
  const Monodromy m = monodromy_matrix(VectorField3::zero(), {1, 2, 3}, 2.0, kTight);
  CHECK((m.matrix - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("monodromy of the rotation over a full turn") {
  const Monodromy m = monodromy_matrix(kRotation, {1, 0, 0}, 2 * kPi, kTight);
  CHECK((m.matrix - Mat3::Identity()).norm() <= 1e-6);
  for (const auto& z : floquet_multipliers(m)) CHECK(std::abs(z - 1.0) <= 1e-6);
  CHECK(m.closure <= 1e-8);
}

TEST_CASE("non-periodic anchor is flagged") {
  const Monodromy m = monodromy_matrix(kRotation, {1, 0, 0}, kPi, kTight);
  CHECK_FALSE(m.periodic);
  CHECK(m.closure == doctest::Approx(2.0));
  CHECK(is_finite(m.matrix));
}

TEST_CASE("segment product matches a single variational solve") {
  const VectorField3 x = hamiltonian_field(systems::rikitake(1.0));
  const IntegratorConfig cfg = IntegratorConfig::adaptive(1e-12, 1e-14);
  const Vec3 anchor(1.05, 0.9, 1.1);
  const Monodromy one = monodromy_matrix(x, anchor, 1.0, cfg, 1, 1e9);
  const Monodromy many = monodromy_matrix(x, anchor, 1.0, cfg, 16, 1e9);
  CHECK(many.segments.size() == 16);
  CHECK((one.matrix - many.matrix).norm() <= 1e-8 * one.matrix.norm());
  CHECK(one.liouville_mismatch() <= 1e-8);
}

TEST_CASE("restarted segments reproduce the continuous monodromy") {
  const IntegratorConfig cfg = IntegratorConfig::adaptive(1e-12, 1e-14);
  std::vector<Vec3> starts;
  for (int k = 0; k < 8; ++k) starts.push_back(rotation_exact(2 * kPi * k / 8));
  const Monodromy m = monodromy_from_segments(kRotation, starts, 2 * kPi, cfg);
  CHECK(m.segments.size() == 8);
  CHECK(m.closure <= 1e-9);
  CHECK((m.matrix - Mat3::Identity()).norm() <= 1e-8);
}

TEST_CASE("multipliers of widely separated products") {
  // Product of rotated diagonal factors with known eigenvalues 1e-12, 1, 1e9.
  Monodromy m;
  const Mat3 q = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 logs(std::log(1e-12), 0.0, std::log(1e9));
  for (int k = 0; k < 8; ++k) m.segments.push_back(q * Vec3((logs / 8).array().exp()).asDiagonal() * q.transpose());
  m.matrix = q * Vec3(logs.array().exp()).asDiagonal() * q.transpose();
  m.period = 1.0;
  const auto z = floquet_multipliers(m);
  REQUIRE(z.size() == 3);
  CHECK(std::abs(z[0]) == doctest::Approx(1e-12).epsilon(1e-9));
  CHECK(std::abs(z[1]) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(z[2]) == doctest::Approx(1e9).epsilon(1e-9));
}

TEST_CASE("complex multiplier pair") {
  Monodromy m;
  const Mat3 r = Eigen::AngleAxisd(0.3, Vec3::UnitZ()).toRotationMatrix();
  const Mat3 d = Vec3(0.5, 0.5, 1.0).asDiagonal();
  m.segments = {d * r, r};
  m.matrix = d * r * r;
  const auto z = floquet_multipliers(m);
  REQUIRE(z.size() == 3);
  CHECK(std::abs(z[0]) == doctest::Approx(0.5));
  CHECK(std::abs(z[1]) == doctest::Approx(0.5));
  CHECK(std::abs(z[2] - 1.0) <= 1e-12);
  CHECK(std::abs(std::abs(std::arg(z[0])) - 0.6) <= 1e-10);
}
