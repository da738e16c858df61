#pragma once

// Convex nearest-neighbour potentials V with their first two derivatives,
// the confinement radius R_V = 2 inf{R >= 1 : inf_{|x|>=R} V''(x) >= 1},
// and a finite-window validator for the growth assumption
//   0 < c_- <= V''(x) / |x|^{r-2} <= c_+ < infinity   (|x| large, r > 2).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace gradphi {

struct Derivatives {
  double value;
  double first;
  double second;
};

namespace family {

/// V(x) = scale * x^2 / 2.
struct Gaussian {
  double scale = 1.0;
  Derivatives operator()(double x) const { return {0.5 * scale * x * x, scale * x, scale}; }
  double first(double x) const { return scale * x; }
  double second(double) const { return scale; }
};

/// V(x) = |x|^r / r.
struct Power {
  double r = 4.0;
  Derivatives operator()(double x) const {
    const double ax = std::abs(x);
    const double p2 = r == 4.0 ? ax * ax : std::pow(ax, r - 2.0);
    return {p2 * ax * ax / r, std::copysign(p2 * ax, x), (r - 1.0) * p2};
  }
  double first(double x) const {
    if (r == 4.0) return x * x * x;
    return std::copysign(std::pow(std::abs(x), r - 1.0), x);
  }
  double second(double x) const {
    if (r == 4.0) return 3.0 * x * x;
    return (r - 1.0) * std::pow(std::abs(x), r - 2.0);
  }
};

/// V(x) = ((|x| - b)_+)^4 + asym * ((x - b)_+)^4. C^2, convex, and V'' == 0
/// on [-b, b].
struct FlatBottom {
  double b = 1.0;
  double asym = 0.0;
  Derivatives operator()(double x) const {
    const double u = std::max(std::abs(x) - b, 0.0);
    const double u2 = u * u;
    Derivatives out{u2 * u2, std::copysign(4.0 * u2 * u, x), 12.0 * u2};
    if (asym != 0.0 && x > b) {
      const double v = x - b;
      out.value += asym * v * v * v * v;
      out.first += asym * 4.0 * v * v * v;
      out.second += asym * 12.0 * v * v;
    }
    return out;
  }
  double first(double x) const {
    const double u = std::max(std::abs(x) - b, 0.0);
    double f = std::copysign(4.0 * u * u * u, x);
    if (asym != 0.0 && x > b) f += asym * 4.0 * (x - b) * (x - b) * (x - b);
    return f;
  }
  double second(double x) const {
    const double u = std::max(std::abs(x) - b, 0.0);
    double s = 12.0 * u * u;
    if (asym != 0.0 && x > b) s += asym * 12.0 * (x - b) * (x - b);
    return s;
  }
};

/// Natural cubic spline through tabulated (x, V(x)); continued beyond the
/// table by the quadratic with the end point's value, slope and curvature,
/// so the result stays C^2 everywhere.
struct Table {
  std::vector<double> x, y, m;  // m: second derivatives at the knots

  static Table from_points(std::vector<double> xs, std::vector<double> ys) {
    if (xs.size() != ys.size() || xs.size() < 3) throw std::invalid_argument("table potential: need >= 3 points");
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (!(xs[i] > xs[i - 1])) throw std::invalid_argument("table potential: abscissae must increase");
    const std::size_t n = xs.size();
    // Tridiagonal system for natural boundary conditions (m_0 = m_{n-1} = 0).
    std::vector<double> diag(n, 1.0), upper(n, 0.0), lower(n, 0.0), rhs(n, 0.0), m(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = xs[i] - xs[i - 1], h1 = xs[i + 1] - xs[i];
      lower[i] = h0 / 6.0;
      diag[i] = (h0 + h1) / 3.0;
      upper[i] = h1 / 6.0;
      rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
    }
    for (std::size_t i = 1; i < n; ++i) {
      const double w = lower[i] / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    return {std::move(xs), std::move(ys), std::move(m)};
  }

  Derivatives operator()(double xv) const {
    const std::size_t n = x.size();
    if (xv <= x.front() || xv >= x.back()) {
      const bool left = xv <= x.front();
      const std::size_t k = left ? 0 : n - 1;
      const Derivatives end = interior(left ? 0 : n - 2, x[k]);
      const double dx = xv - x[k];
      return {end.value + end.first * dx + 0.5 * end.second * dx * dx, end.first + end.second * dx, end.second};
    }
    const auto it = std::upper_bound(x.begin(), x.end(), xv);
    const std::size_t i = static_cast<std::size_t>(it - x.begin()) - 1;
    return interior(i, xv);
  }
  double first(double xv) const { return (*this)(xv).first; }
  double second(double xv) const { return (*this)(xv).second; }

 private:
  Derivatives interior(std::size_t i, double xv) const {
    const double h = x[i + 1] - x[i];
    const double A = (x[i + 1] - xv) / h, B = (xv - x[i]) / h;
    const double value = A * y[i] + B * y[i + 1] + ((A * A * A - A) * m[i] + (B * B * B - B) * m[i + 1]) * h * h / 6.0;
    const double first = (y[i + 1] - y[i]) / h + (-(3 * A * A - 1) * m[i] + (3 * B * B - 1) * m[i + 1]) * h / 6.0;
    const double second = A * m[i] + B * m[i + 1];
    return {value, first, second};
  }
};

}  // namespace family

enum class Family { gaussian, power, flat_bottom, user_table };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::power: return "power";
    case Family::flat_bottom: return "flat_bottom";
    case Family::user_table: return "user_table";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "power") return Family::power;
  if (s == "flat_bottom") return Family::flat_bottom;
  if (s == "user_table") return Family::user_table;
  throw std::invalid_argument("unknown potential family '" + s + "'");
}

/// Immutable potential description. Evaluation dispatches through a variant
/// so hot loops can be instantiated per family with `visit`.
class PotentialSpec {
 public:
  using Impl = std::variant<family::Gaussian, family::Power, family::FlatBottom, family::Table>;

  static PotentialSpec gaussian(double scale = 1.0) { return PotentialSpec(family::Gaussian{scale}, std::nullopt); }
  static PotentialSpec power(double r) {
    if (!(r >= 2.0)) throw std::invalid_argument("power potential: exponent must be >= 2");
    return PotentialSpec(family::Power{r}, r);
  }
  static PotentialSpec flat_bottom(double b, double asym = 0.0) {
    if (!(b >= 0.0)) throw std::invalid_argument("flat_bottom potential: b must be >= 0");
    if (!(asym >= 0.0)) throw std::invalid_argument("flat_bottom potential: asymmetry must be >= 0");
    return PotentialSpec(family::FlatBottom{b, asym}, 4.0);
  }
  static PotentialSpec table(std::vector<double> xs, std::vector<double> ys, std::optional<double> r = std::nullopt) {
    return PotentialSpec(family::Table::from_points(std::move(xs), std::move(ys)), r);
  }
  /// Two whitespace-separated columns (x, V(x)); '#' starts a comment.
  static PotentialSpec table_file(const std::string& path, std::optional<double> r = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open potential table '" + path + "'");
    std::vector<double> xs, ys;
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream ls(line);
      double a, b;
      if (ls >> a >> b) {
        xs.push_back(a);
        ys.push_back(b);
      }
    }
    return table(std::move(xs), std::move(ys), r);
  }

  Family family() const { return static_cast<Family>(impl_.index()); }
  const Impl& impl() const { return impl_; }
  /// Growth exponent r; absent for the gaussian family.
  std::optional<double> growth_exponent() const { return r_; }

  Derivatives evaluate(double x) const {
    return std::visit([x](const auto& f) { return f(x); }, impl_);
  }
  double first(double x) const {
    return std::visit([x](const auto& f) { return f.first(x); }, impl_);
  }
  double second(double x) const {
    return std::visit([x](const auto& f) { return f.second(x); }, impl_);
  }

  template <class Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit(std::forward<Fn>(fn), impl_);
  }

  /// Short tag used in file headers and hashes.
  std::string tag() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(family());
    std::visit(
        [&os](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, family::Gaussian>) os << ":scale=" << f.scale;
          if constexpr (std::is_same_v<T, family::Power>) os << ":r=" << f.r;
          if constexpr (std::is_same_v<T, family::FlatBottom>) os << ":b=" << f.b << ",asym=" << f.asym;
          if constexpr (std::is_same_v<T, family::Table>) os << ":n=" << f.x.size();
        },
        impl_);
    return os.str();
  }

 private:
  PotentialSpec(Impl impl, std::optional<double> r) : impl_(std::move(impl)), r_(r) {}

  Impl impl_;
  std::optional<double> r_;
};

inline Derivatives evaluate(const PotentialSpec& V, double x) { return V.evaluate(x); }

/// Whether V'' is known to be nondecreasing in |x| beyond the given radius,
/// which certifies the condition V'' >= 1 past the end of a probe window.
inline bool tail_monotone_beyond(const PotentialSpec& V, double radius) {
  switch (V.family()) {
    case Family::gaussian:
    case Family::power: return true;
    case Family::flat_bottom: return radius >= std::get<family::FlatBottom>(V.impl()).b;
    case Family::user_table: {
      // Past the table V'' is constant; inside it we rely on the probe grid.
      const auto& t = std::get<family::Table>(V.impl());
      return radius >= std::max(std::abs(t.x.front()), std::abs(t.x.back()));
    }
  }
  return false;
}

struct RadiusResult {
  double r_v;           // 2 * R
  double radius;        // R
  bool tail_certified;  // V'' >= 1 beyond search_bound established analytically
};

/// R_V by bisection on R in [1, search_bound] (to 1e-8). The predicate
/// "V'' >= 1 on |x| >= R" is tested at +-R and on a probe grid up to
/// search_bound; the region beyond search_bound is covered by the family's
/// tail monotonicity.
inline RadiusResult compute_r_v(const PotentialSpec& V, double search_bound = 0.0, int probe_points = 20000) {
  if (search_bound <= 0.0) search_bound = 100.0;
  const double h = search_bound / probe_points;
  auto holds = [&](double R) {
    if (V.second(R) < 1.0 || V.second(-R) < 1.0) return false;
    for (int i = 0; i <= probe_points; ++i) {
      const double x = i * h;
      if (x < R) continue;
      if (V.second(x) < 1.0 || V.second(-x) < 1.0) return false;
    }
    return true;
  };
  const bool tail = tail_monotone_beyond(V, search_bound) && V.second(search_bound) >= 1.0 &&
                    V.second(-search_bound) >= 1.0;
  if (!holds(search_bound) || !tail)
    throw std::runtime_error("R_V: V'' is not eventually >= 1 within search_bound");
  if (holds(1.0)) return {2.0, 1.0, tail};
  double lo = 1.0, hi = search_bound;
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    (holds(mid) ? hi : lo) = mid;
  }
  return {2.0 * hi, hi, tail};
}

struct ClauseResult {
  bool pass = false;
  std::string detail;
};

struct AssumptionReport {
  ClauseResult convex;       // V'' >= 0 on the probe grid
  ClauseResult continuous;   // V'' has no jumps beyond grid resolution
  ClauseResult growth;       // liminf/limsup of V''/|x|^{r-2} in (0, infinity)
  double r = 0.0;            // exponent used for the growth clause
  double c_minus = 0.0;
  double c_plus = 0.0;
  double window = 0.0;       // the certificate covers [-window, window] only
  std::vector<std::string> flags;

  bool pass() const { return convex.pass && continuous.pass && growth.pass; }
  bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

struct ProbeGrid {
  int points = 20000;
  double x_max = 0.0;  // 0: max(20, 10 R_V)
};

inline AssumptionReport validate_assumption(const PotentialSpec& V, ProbeGrid probe = {}) {
  AssumptionReport rep;
  if (probe.x_max <= 0.0) {
    double rv = 2.0;
    try {
      rv = compute_r_v(V).r_v;
    } catch (const std::exception&) {
      rep.flags.push_back("r_v-uncertified");
    }
    probe.x_max = std::max(20.0, 10.0 * rv);
  }
  rep.window = probe.x_max;
  const int n = probe.points;
  const double h = 2.0 * probe.x_max / n;

  double min_second = std::numeric_limits<double>::infinity(), scale = 0.0;
  std::vector<double> second(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double x = -probe.x_max + i * h;
    second[i] = V.second(x);
    min_second = std::min(min_second, second[i]);
    scale = std::max(scale, std::abs(second[i]));
  }
  const double tol = 1e-12 * std::max(1.0, scale);
  rep.convex.pass = min_second >= -tol;
  rep.convex.detail = "min V'' on grid = " + std::to_string(min_second);

  // A continuous V'' has its largest neighbour increment shrink when the
  // grid is refined; a jump keeps it fixed.
  auto max_jump = [&](double step) {
    double m = 0.0;
    for (double x = -probe.x_max; x + step <= probe.x_max; x += step)
      m = std::max(m, std::abs(V.second(x + step) - V.second(x)));
    return m;
  };
  const double jump_coarse = max_jump(h * 4.0), jump_fine = max_jump(h);
  rep.continuous.pass = jump_fine <= 1e-8 * std::max(1.0, scale) || jump_fine <= 0.75 * jump_coarse;
  rep.continuous.detail = "max |dV''| fine = " + std::to_string(jump_fine) + ", coarse = " + std::to_string(jump_coarse);

  if (V.family() == Family::gaussian) {
    rep.flags.push_back("gaussian-special");
    rep.r = 2.0;
    rep.c_minus = rep.c_plus = V.second(0.0);
    rep.growth.pass = false;
    rep.growth.detail = "special case: r=2 excluded by the growth assumption, supported only for the exact oracle";
    return rep;
  }

  // Outer half of the window.
  std::vector<double> lx, ls;
  for (int i = 0; i <= n; ++i) {
    const double x = -probe.x_max + i * h;
    if (std::abs(x) < 0.5 * probe.x_max) continue;
    lx.push_back(std::abs(x));
    ls.push_back(second[i]);
  }
  double r;
  if (V.growth_exponent()) {
    r = *V.growth_exponent();
  } else {
    // log V'' ~ (r-2) log|x| on the outer half.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      if (ls[i] <= 0.0) continue;
      const double a = std::log(lx[i]), b = std::log(ls[i]);
      sx += a, sy += b, sxx += a * a, sxy += a * b, ++m;
    }
    r = m > 2 ? 2.0 + (m * sxy - sx * sy) / (m * sxx - sx * sx) : 2.0;
    rep.flags.push_back("r-estimated");
  }
  rep.r = r;
  double cmin = std::numeric_limits<double>::infinity(), cmax = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double c = ls[i] / std::pow(lx[i], r - 2.0);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
  }
  rep.c_minus = cmin;
  rep.c_plus = cmax;
  rep.growth.pass = r > 2.0 && cmin > 0.0 && std::isfinite(cmax);
  rep.growth.detail = "r=" + std::to_string(r) + " c-=" + std::to_string(cmin) + " c+=" + std::to_string(cmax) +
                      " on |x| in [" + std::to_string(0.5 * probe.x_max) + ", " + std::to_string(probe.x_max) + "]";
  if (r <= 2.0) rep.growth.detail += " (r must exceed 2)";
  return rep;
}

}  // namespace gradphi
