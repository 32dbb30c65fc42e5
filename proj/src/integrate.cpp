#include "orbitstab/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace orbitstab {

namespace {

template <int N>
using State = Eigen::Matrix<double, N, 1>;

// Evaluates the right-hand side; a DomainError from the field is folded into
// a non-finite result so that the step controller can back off.
template <int N, class Rhs>
State<N> eval_rhs(const Rhs& f, const State<N>& y) {
  try {
    return f(y);
  } catch (const DomainError&) {
    return State<N>::Constant(std::numeric_limits<double>::quiet_NaN());
  }
}

template <int N>
double scaled_max(const State<N>& e, const State<N>& y0, const State<N>& y1, double rtol,
                  double atol) {
  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    worst = std::max(worst, std::abs(e[i]) / sc);
  }
  return worst;
}

template <int N, class Rhs>
double initial_step(const Rhs& f, const State<N>& y0, const State<N>& f0, double t_end,
                    const IntegratorConfig& cfg) {
  const State<N> sc = (cfg.abs_tol + cfg.rel_tol * y0.cwiseAbs().array()).matrix();
  const double d0 = (y0.cwiseQuotient(sc)).norm() / std::sqrt(double(N));
  const double d1 = (f0.cwiseQuotient(sc)).norm() / std::sqrt(double(N));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, t_end);
  const State<N> f1 = eval_rhs<N>(f, State<N>(y0 + h0 * f0));
  double d2 = ((f1 - f0).cwiseQuotient(sc)).norm() / std::sqrt(double(N)) / h0;
  if (!std::isfinite(d2)) d2 = 1e10;
  const double m = std::max(d1, d2);
  const double h1 = m <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / m, 0.2);
  return std::min({100.0 * h0, h1, t_end, cfg.max_step});
}

// Drives an explicit Runge-Kutta scheme from t = 0 to t_end. The observer is
// called with every accepted node (t, y, y') and may stop the run by
// returning false.
template <int N, class Rhs, class Observer>
void drive(const Rhs& f, State<N> y, double t_end, const IntegratorConfig& cfg, Observer&& obs) {
  using Kind = IntegrationError::Kind;
  cfg.validate();
  if (!(t_end >= 0.0)) throw std::invalid_argument("integrate: t_end must be non-negative");
  if (!y.allFinite()) throw IntegrationError(Kind::NonFinite, 0.0, "non-finite initial state");
  State<N> k1 = eval_rhs<N>(f, y);
  if (!k1.allFinite()) throw IntegrationError(Kind::NonFinite, 0.0, "non-finite derivative at start");
  double t = 0.0;
  if (!obs(t, y, k1) || t_end == 0.0) return;

  std::size_t steps = 0;
  if (cfg.method == Method::RK4) {
    while (t < t_end) {
      if (++steps > cfg.max_steps) throw IntegrationError(Kind::MaxSteps, t, "max_steps exceeded");
      double h = cfg.step;
      const bool last = t + h >= t_end * (1.0 - 1e-14);
      if (last) h = t_end - t;
      const State<N> k2 = eval_rhs<N>(f, State<N>(y + 0.5 * h * k1));
      const State<N> k3 = eval_rhs<N>(f, State<N>(y + 0.5 * h * k2));
      const State<N> k4 = eval_rhs<N>(f, State<N>(y + h * k3));
      y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t = last ? t_end : t + h;
      k1 = eval_rhs<N>(f, y);
      if (!y.allFinite() || !k1.allFinite()) {
        throw IntegrationError(Kind::NonFinite, t, "non-finite state encountered");
      }
      if (!obs(t, y, k1)) return;
    }
    return;
  }

  // Dormand-Prince 5(4), first-same-as-last.
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;

  double h = cfg.step > 0.0 ? std::min(cfg.step, t_end) : initial_step<N>(f, y, k1, t_end, cfg);
  h = std::min(h, cfg.max_step);
  bool last_rejected = false;
  bool last_nonfinite = false;
  while (t < t_end) {
    if (++steps > cfg.max_steps) throw IntegrationError(Kind::MaxSteps, t, "max_steps exceeded");
    if (h < 1e-14 * std::max(1.0, std::abs(t))) {
      if (last_nonfinite) throw IntegrationError(Kind::NonFinite, t, "non-finite state encountered");
      throw IntegrationError(Kind::StepUnderflow, t, "step size underflow at t = " + std::to_string(t));
    }
    const bool last = t + h >= t_end * (1.0 - 1e-14);
    if (last) h = t_end - t;

    const State<N> k2 = eval_rhs<N>(f, State<N>(y + h * a21 * k1));
    const State<N> k3 = eval_rhs<N>(f, State<N>(y + h * (a31 * k1 + a32 * k2)));
    const State<N> k4 = eval_rhs<N>(f, State<N>(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
    const State<N> k5 =
        eval_rhs<N>(f, State<N>(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
    const State<N> k6 =
        eval_rhs<N>(f, State<N>(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
    const State<N> y1 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const State<N> k7 = eval_rhs<N>(f, y1);
    const State<N> err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = scaled_max<N>(err, y, y1, cfg.rel_tol, cfg.abs_tol);
    last_nonfinite = !std::isfinite(en) || !k7.allFinite();
    if (last_nonfinite) en = std::numeric_limits<double>::infinity();

    if (en <= 1.0) {
      t = last ? t_end : t + h;
      y = y1;
      k1 = k7;
      if (!obs(t, y, k1)) return;
      double factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      if (last_rejected) factor = std::min(factor, 1.0);
      h = std::min(h * factor, cfg.max_step);
      last_rejected = false;
    } else {
      const double factor = std::isfinite(en) ? std::max(0.2, 0.9 * std::pow(en, -0.2)) : 0.2;
      h *= factor;
      last_rejected = true;
    }
  }
}

double bisect_crossing(const Section& s, double t0, const Vec3& u0, const Vec3& du0, double t1,
                       const Vec3& u1, const Vec3& du1) {
  double lo = t0, hi = t1;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (s(hermite(t0, u0, du0, t1, u1, du1, mid)) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

using Joint = State<13>;

Joint joint_rhs(const VectorField3& field, const Joint& y) {
  const Vec3 u = y.head<3>();
  const Mat3 j = field.jacobian(u);
  const Eigen::Map<const Mat3> phi(y.data() + 3);
  Joint d;
  d.head<3>() = field(u);
  Eigen::Map<Mat3>(d.data() + 3) = j * phi;
  d[12] = j.trace();
  return d;
}

struct SegmentResult {
  Mat3 phi;
  Vec3 end;
  double trace;
};

SegmentResult integrate_segment(const VectorField3& field, const Vec3& start, double duration,
                                const IntegratorConfig& cfg) {
  Joint y;
  y.head<3>() = start;
  Eigen::Map<Mat3>(y.data() + 3) = Mat3::Identity();
  y[12] = 0.0;
  Joint last = y;
  drive<13>([&field](const Joint& s) { return joint_rhs(field, s); }, y, duration, cfg,
            [&last](double, const Joint& s, const Joint&) {
              last = s;
              return true;
            });
  return {Eigen::Map<const Mat3>(last.data() + 3), last.head<3>(), last[12]};
}

Monodromy assemble(std::vector<SegmentResult> parts, double T, double closure, double closure_tol) {
  Monodromy m;
  m.period = T;
  m.closure = closure;
  m.periodic = closure <= closure_tol;
  for (const auto& p : parts) {
    m.segments.push_back(p.phi);
    m.matrix = p.phi * m.matrix;
    m.trace_integral += p.trace;
  }
  return m;
}

}  // namespace

IntegratorConfig IntegratorConfig::adaptive(double rel_tol, double abs_tol) {
  IntegratorConfig c;
  c.method = Method::DOPRI45;
  c.rel_tol = rel_tol;
  c.abs_tol = abs_tol;
  c.step = 0.0;
  return c;
}

IntegratorConfig IntegratorConfig::fixed(double step) {
  IntegratorConfig c;
  c.method = Method::RK4;
  c.step = step;
  return c;
}

void IntegratorConfig::validate() const {
  if (method == Method::RK4 && !(step > 0.0)) {
    throw std::invalid_argument("integrator: fixed step must be positive");
  }
  if (method == Method::DOPRI45 && !(rel_tol > 0.0 && abs_tol > 0.0)) {
    throw std::invalid_argument("integrator: tolerances must be positive");
  }
  if (!(max_step > 0.0)) throw std::invalid_argument("integrator: max_step must be positive");
  if (max_steps == 0) throw std::invalid_argument("integrator: max_steps must be positive");
}

IntegrationError::IntegrationError(Kind kind, double t, const std::string& what)
    : std::runtime_error(what), kind_(kind), t_(t) {}

SectionError::SectionError(const std::string& what, std::size_t found)
    : std::runtime_error(what), found_(found) {}

void Trajectory::push(double t, const Vec3& u, const Vec3& du) {
  if (!times_.empty() && !(t > times_.back())) {
    throw std::logic_error("trajectory times must be strictly increasing");
  }
  times_.push_back(t);
  states_.push_back(u);
  derivs_.push_back(du);
}

Vec3 hermite(double t0, const Vec3& u0, const Vec3& du0, double t1, const Vec3& u1,
             const Vec3& du1, double t) {
  const double h = t1 - t0;
  const double s = (t - t0) / h;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * u0 + (s3 - 2 * s2 + s) * h * du0 + (-2 * s3 + 3 * s2) * u1 +
         (s3 - s2) * h * du1;
}

Vec3 Trajectory::at(double t) const {
  if (times_.empty()) throw std::logic_error("empty trajectory");
  if (t <= times_.front()) return states_.front();
  if (t >= times_.back()) return states_.back();
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
  if (t == times_[i]) return states_[i];
  return hermite(times_[i], states_[i], derivs_[i], times_[i + 1], states_[i + 1], derivs_[i + 1], t);
}

std::vector<double> Trajectory::uniform_times(std::size_t n) const {
  if (n < 2) throw std::invalid_argument("uniform_times: need at least two samples");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = t_begin() + (t_end() - t_begin()) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  out.back() = t_end();
  return out;
}

Trajectory integrate(const VectorField3& field, const Vec3& u0, double t_end,
                     const IntegratorConfig& cfg) {
  Trajectory traj;
  drive<3>([&field](const Vec3& u) -> Vec3 { return field(u); }, u0, t_end, cfg,
           [&traj](double t, const Vec3& u, const Vec3& du) {
             traj.push(t, u, du);
             return true;
           });
  return traj;
}

std::vector<Crossing> locate_section_crossings(const VectorField3& field, const Vec3& u0,
                                               const Section& section, std::size_t count,
                                               double t_max, const IntegratorConfig& cfg) {
  if (!(section.normal.norm() > 0.0)) throw std::invalid_argument("section normal must be nonzero");
  std::vector<Crossing> found;
  if (count == 0) return found;
  bool have_prev = false;
  double tp = 0.0;
  Vec3 up, dup;
  drive<3>([&field](const Vec3& u) -> Vec3 { return field(u); }, u0, t_max, cfg,
           [&](double t, const Vec3& u, const Vec3& du) {
             if (have_prev && section(up) < 0.0 && section(u) >= 0.0) {
               const double ts = bisect_crossing(section, tp, up, dup, t, u, du);
               const Vec3 us = hermite(tp, up, dup, t, u, du, ts);
               if (field(us).dot(section.normal) > 0.0) found.push_back({ts, us});
             }
             have_prev = true;
             tp = t;
             up = u;
             dup = du;
             return found.size() < count;
           });
  if (found.size() < count) {
    throw SectionError("found " + std::to_string(found.size()) + " of " + std::to_string(count) +
                           " section crossings before t_max",
                       found.size());
  }
  return found;
}

double Monodromy::log_abs_det() const {
  double s = 0.0;
  for (const auto& p : segments) s += std::log(std::abs(p.determinant()));
  return s;
}

double Monodromy::liouville_mismatch() const {
  return std::abs(std::expm1(log_abs_det() - trace_integral));
}

Monodromy monodromy_matrix(const VectorField3& field, const Vec3& anchor, double T,
                           const IntegratorConfig& cfg, std::size_t segments, double closure_tol) {
  if (!(T > 0.0)) throw std::invalid_argument("monodromy: period must be positive");
  if (segments == 0) throw std::invalid_argument("monodromy: need at least one segment");
  std::vector<SegmentResult> parts;
  Vec3 u = anchor;
  const double dt = T / static_cast<double>(segments);
  for (std::size_t k = 0; k < segments; ++k) {
    parts.push_back(integrate_segment(field, u, dt, cfg));
    u = parts.back().end;
  }
  return assemble(std::move(parts), T, (u - anchor).norm(), closure_tol);
}

Monodromy monodromy_from_segments(const VectorField3& field, std::span<const Vec3> starts, double T,
                                  const IntegratorConfig& cfg, double closure_tol) {
  if (!(T > 0.0)) throw std::invalid_argument("monodromy: period must be positive");
  if (starts.empty()) throw std::invalid_argument("monodromy: need at least one segment");
  std::vector<SegmentResult> parts;
  const double dt = T / static_cast<double>(starts.size());
  double closure = 0.0;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    parts.push_back(integrate_segment(field, starts[k], dt, cfg));
    const Vec3& next = starts[(k + 1) % starts.size()];
    closure = std::max(closure, (parts.back().end - next).norm());
  }
  return assemble(std::move(parts), T, closure, closure_tol);
}

std::vector<std::complex<double>> floquet_multipliers(const Monodromy& m) {
  if (m.segments.empty()) throw std::invalid_argument("floquet_multipliers: empty monodromy");
  constexpr int kMaxSweeps = 24;
  constexpr double kSplitTol = 1e-13;

  Mat3 q = Mat3::Identity();
  std::vector<Mat3> rs(m.segments.size());
  Mat3 rot = Mat3::Identity();
  std::array<bool, 2> split{false, false};
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const Mat3 q0 = q;
    for (std::size_t k = 0; k < m.segments.size(); ++k) {
      Eigen::HouseholderQR<Mat3> qr(m.segments[k] * q);
      Mat3 qk = qr.householderQ();
      Mat3 r = qr.matrixQR().triangularView<Eigen::Upper>();
      for (int i = 0; i < 3; ++i) {
        if (r(i, i) < 0.0) {
          r.row(i) *= -1.0;
          qk.col(i) *= -1.0;
        }
      }
      q = qk;
      rs[k] = r;
    }
    // q0^T M q0 = rot * (R_N ... R_1)
    rot = q0.transpose() * q;
    split[0] = rot.block<2, 1>(1, 0).cwiseAbs().maxCoeff() <= kSplitTol;
    split[1] = rot.block<1, 2>(2, 0).cwiseAbs().maxCoeff() <= kSplitTol;
    if (sweep >= 2 && split[0] && split[1]) break;
  }

  std::vector<std::complex<double>> out;
  int begin = 0;
  for (int end = 1; end <= 3; ++end) {
    if (end < 3 && !split[end - 1]) continue;
    const int n = end - begin;
    if (n == 1) {
      double log_mod = 0.0;
      for (const auto& r : rs) log_mod += std::log(r(begin, begin));
      out.emplace_back(std::copysign(std::exp(log_mod), rot(begin, begin)), 0.0);
    } else {
      Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n, n);
      double log_scale = 0.0;
      for (const auto& r : rs) {
        p = r.block(begin, begin, n, n) * p;
        const double s = p.norm();
        if (s > 0.0) {
          p /= s;
          log_scale += std::log(s);
        }
      }
      const Eigen::MatrixXd b = rot.block(begin, begin, n, n) * p;
      Eigen::EigenSolver<Eigen::MatrixXd> es(b, false);
      const double scale = std::exp(log_scale);
      for (int i = 0; i < n; ++i) out.push_back(es.eigenvalues()[i] * scale);
    }
    begin = end;
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return std::abs(a) < std::abs(b); });
  return out;
}

}  // namespace orbitstab
