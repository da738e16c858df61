#pragma once

// Periodic lattice geometry (the torus Z^d / (2L+1)Z^d), vertex and edge
// fields, and the discrete operators built on them.
//
// Vertices are indexed by their coordinates c in {0..2L}^d as
// sum_i c_i (2L+1)^i; the canonical representative of coordinate c_i is
// c_i when c_i <= L and c_i - (2L+1) otherwise, so vertex 0 is the origin.
// Positively oriented edges are (x, x + e_i) and carry the index x*d + i.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradphi {

using Index = std::int64_t;

class Torus {
 public:
  Torus(int dim, int half_side) : dim_(dim), half_side_(half_side) {
    if (dim < 1) throw std::invalid_argument("torus: dimension must be >= 1");
    if (half_side < 1) throw std::invalid_argument("torus: L must be >= 1");
    side_ = 2 * half_side + 1;
    // d * (2L+1)^d must fit in Index (and the neighbor tables in memory).
    constexpr auto kMax = std::numeric_limits<Index>::max() / 8;
    Index count = 1;
    for (int i = 0; i < dim; ++i) {
      if (count > kMax / side_) throw std::overflow_error("torus: vertex count overflows index type");
      count *= side_;
    }
    if (count > kMax / dim) throw std::overflow_error("torus: edge count overflows index type");
    vertex_count_ = count;

    stride_.resize(dim);
    Index s = 1;
    for (int i = 0; i < dim; ++i) {
      stride_[i] = s;
      s *= side_;
    }

    forward_.resize(static_cast<std::size_t>(vertex_count_ * dim));
    backward_.resize(forward_.size());
    norm_.resize(static_cast<std::size_t>(vertex_count_));
    std::vector<int> c(dim);
    for (Index v = 0; v < vertex_count_; ++v) {
      decode(v, c);
      double sq = 0.0;
      for (int i = 0; i < dim; ++i) {
        const int rep = canonical(c[i]);
        sq += static_cast<double>(rep) * rep;
        const Index up = c[i] + 1 == side_ ? v - (side_ - 1) * stride_[i] : v + stride_[i];
        const Index down = c[i] == 0 ? v + (side_ - 1) * stride_[i] : v - stride_[i];
        forward_[v * dim + i] = up;
        backward_[v * dim + i] = down;
      }
      norm_[v] = std::sqrt(sq);
    }

    // Edges sharing an endpoint with e, e included: e itself, the other
    // 2d-1 edges at its tail and the other 2d-1 edges at its head.
    const int closure = 4 * dim - 1;
    closure_.resize(static_cast<std::size_t>(edge_count() * closure));
    for (Index e = 0; e < edge_count(); ++e) {
      Index* out = &closure_[e * closure];
      int n = 0;
      out[n++] = e;
      for (const Index x : {edge_tail(e), edge_head(e)}) {
        for (int i = 0; i < dim; ++i) {
          const Index outgoing = x * dim + i;
          const Index incoming = backward_[x * dim + i] * dim + i;
          if (outgoing != e) out[n++] = outgoing;
          if (incoming != e) out[n++] = incoming;
        }
      }
    }
  }

  int dim() const { return dim_; }
  int half_side() const { return half_side_; }
  int side() const { return side_; }
  Index vertex_count() const { return vertex_count_; }
  Index edge_count() const { return vertex_count_ * dim_; }
  int closure_size() const { return 4 * dim_ - 1; }

  Index neighbor(Index v, int axis, int dir) const {
    return dir > 0 ? forward_[v * dim_ + axis] : backward_[v * dim_ + axis];
  }
  Index edge(Index tail, int axis) const { return tail * dim_ + axis; }
  Index edge_tail(Index e) const { return e / dim_; }
  int edge_axis(Index e) const { return static_cast<int>(e % dim_); }
  Index edge_head(Index e) const { return forward_[e]; }
  std::span<const Index> heads() const { return forward_; }

  std::span<const Index> edge_closure(Index e) const {
    return {closure_.data() + e * closure_size(), static_cast<std::size_t>(closure_size())};
  }

  /// Canonical coordinates in {-L..L}^d.
  std::vector<int> coords(Index v) const {
    std::vector<int> c(dim_);
    decode(v, c);
    for (auto& ci : c) ci = canonical(ci);
    return c;
  }

  Index vertex(std::span<const int> coords) const {
    if (static_cast<int>(coords.size()) != dim_) throw std::invalid_argument("torus: coordinate arity");
    Index v = 0;
    for (int i = 0; i < dim_; ++i) {
      const int ci = ((coords[i] % side_) + side_) % side_;
      v += ci * stride_[i];
    }
    return v;
  }

  /// Euclidean norm of the canonical representative, |x|.
  double norm(Index v) const { return norm_[v]; }
  /// |x|_* = |x| + 1.
  double anchored_norm(Index v) const { return norm_[v] + 1.0; }

  /// Vertices of the box {-r..r}^d (r <= L), in index order.
  std::vector<Index> box(int r) const {
    if (r < 0 || r > half_side_) throw std::invalid_argument("torus: box radius out of range");
    std::vector<Index> out;
    std::vector<int> c(dim_);
    for (Index v = 0; v < vertex_count_; ++v) {
      decode(v, c);
      bool inside = true;
      for (int i = 0; i < dim_ && inside; ++i) inside = std::abs(canonical(c[i])) <= r;
      if (inside) out.push_back(v);
    }
    return out;
  }

  /// Positively oriented edges with both endpoints in the box {-r..r}^d.
  std::vector<Index> box_edges(int r) const {
    std::vector<char> in(static_cast<std::size_t>(vertex_count_), 0);
    for (const Index v : box(r)) in[v] = 1;
    std::vector<Index> out;
    for (Index e = 0; e < edge_count(); ++e)
      if (in[edge_tail(e)] && in[edge_head(e)]) out.push_back(e);
    return out;
  }

  bool operator==(const Torus& o) const { return dim_ == o.dim_ && half_side_ == o.half_side_; }

 private:
  int canonical(int c) const { return c <= half_side_ ? c : c - side_; }
  void decode(Index v, std::vector<int>& c) const {
    for (int i = 0; i < dim_; ++i) {
      c[i] = static_cast<int>(v % side_);
      v /= side_;
    }
  }

  int dim_;
  int half_side_;
  int side_;
  Index vertex_count_ = 0;
  std::vector<Index> stride_;
  std::vector<Index> forward_;
  std::vector<Index> backward_;
  std::vector<double> norm_;
  std::vector<Index> closure_;
};

inline Torus build_torus(int dim, int half_side) { return Torus(dim, half_side); }

struct VertexSite {};
struct EdgeSite {};

/// Real-valued field on the vertices or the positively oriented edges of a
/// torus. The torus must outlive the field.
template <class Site>
class Field {
 public:
  Field() = default;
  explicit Field(const Torus& torus, double fill = 0.0)
      : torus_(&torus), values_(static_cast<std::size_t>(extent(torus)), fill) {}
  Field(const Torus& torus, std::vector<double> values) : torus_(&torus), values_(std::move(values)) {
    if (static_cast<Index>(values_.size()) != extent(torus)) throw std::invalid_argument("field: size mismatch");
  }

  static Index extent(const Torus& t) {
    if constexpr (std::is_same_v<Site, VertexSite>)
      return t.vertex_count();
    else
      return t.edge_count();
  }

  const Torus& torus() const { return *torus_; }
  std::size_t size() const { return values_.size(); }
  double& operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& raw() { return values_; }
  const std::vector<double>& raw() const { return values_; }

 private:
  const Torus* torus_ = nullptr;
  std::vector<double> values_;
};

using LatticeField = Field<VertexSite>;
using EdgeField = Field<EdgeSite>;

inline double gradient(std::span<const double> f, const Torus& t, Index e) {
  return f[t.edge_head(e)] - f[t.edge_tail(e)];
}
inline double gradient(const LatticeField& f, Index e) { return gradient(f.values(), f.torus(), e); }

inline EdgeField gradient_field(const LatticeField& f) {
  const Torus& t = f.torus();
  EdgeField g(t);
  for (Index e = 0; e < t.edge_count(); ++e) g[e] = gradient(f, e);
  return g;
}

inline double mean(std::span<const double> f) {
  double s = 0.0;
  for (const double v : f) s += v;
  return f.empty() ? 0.0 : s / static_cast<double>(f.size());
}

/// Subtracts the spatial mean in place.
inline void project_mean_zero(std::span<double> f) {
  const double m = mean(f);
  for (auto& v : f) v -= m;
}

/// (div a grad u)(x) summed over the 2d incident edges: outgoing edges enter
/// with a plus sign, incoming ones with a minus sign.
inline double dynamic_divergence(std::span<const double> u, std::span<const double> a, const Torus& t, Index x) {
  double s = 0.0;
  for (int i = 0; i < t.dim(); ++i) {
    const Index out = t.edge(x, i);
    const Index in = t.edge(t.neighbor(x, i, -1), i);
    s += a[out] * (u[t.edge_head(out)] - u[x]);
    s -= a[in] * (u[x] - u[t.edge_tail(in)]);
  }
  return s;
}
inline double dynamic_divergence(const LatticeField& u, const EdgeField& a, Index x) {
  return dynamic_divergence(u.values(), a.values(), u.torus(), x);
}

/// out = div a grad u on every vertex (edge-loop form).
inline void apply_dynamic_divergence(const Torus& t, std::span<const double> u, std::span<const double> a,
                                     std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const int d = t.dim();
  const auto heads = t.heads();
  for (Index x = 0; x < t.vertex_count(); ++x) {
    const double ux = u[x];
    for (int i = 0; i < d; ++i) {
      const Index e = x * d + i;
      const double flux = a[e] * (u[heads[e]] - ux);
      out[x] += flux;
      out[heads[e]] -= flux;
    }
  }
}

/// Region for norms: a vertex set, optionally with the edges E(region).
struct Region {
  std::vector<Index> vertices;
  std::vector<Index> edges;

  static Region whole(const Torus& t) {
    Region r;
    r.vertices.resize(static_cast<std::size_t>(t.vertex_count()));
    for (Index v = 0; v < t.vertex_count(); ++v) r.vertices[v] = v;
    r.edges.resize(static_cast<std::size_t>(t.edge_count()));
    for (Index e = 0; e < t.edge_count(); ++e) r.edges[e] = e;
    return r;
  }
  static Region box(const Torus& t, int r) { return {t.box(r), t.box_edges(r)}; }
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

namespace detail {
inline double lp_accumulate(std::span<const double> values, std::span<const Index> sites, double p, double count,
                            bool normalized) {
  if (count <= 0) throw std::invalid_argument("lp_norm: empty region");
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1");
  if (std::isinf(p)) {
    double m = 0.0;
    for (const Index s : sites) m = std::max(m, std::abs(values[s]));
    return m;
  }
  double acc = 0.0;
  for (const Index s : sites) acc += std::pow(std::abs(values[s]), p);
  if (normalized) acc /= count;
  return std::pow(acc, 1.0 / p);
}
}  // namespace detail

/// Plain or |region|-normalized l^p norm of a vertex field over region.
inline double lp_norm(const LatticeField& f, double p, const Region& region, bool normalized) {
  return detail::lp_accumulate(f.values(), region.vertices, p, static_cast<double>(region.vertices.size()),
                               normalized);
}

/// Edge version: sums over E(region), normalized by the vertex count |region|.
inline double lp_norm(const EdgeField& f, double p, const Region& region, bool normalized) {
  if (region.vertices.empty()) throw std::invalid_argument("lp_norm: empty region");
  return detail::lp_accumulate(f.values(), region.edges, p, static_cast<double>(region.vertices.size()),
                               normalized);
}

/// Norm with a possibly non-finite or sub-unit exponent over edge values,
/// normalized by `count`. Used for the moderation diagnostics, where the
/// exponents come from the Holder bookkeeping and may be any positive real.
inline double power_mean(std::span<const double> values, std::span<const Index> sites, double p, double count) {
  if (count <= 0) throw std::invalid_argument("power_mean: empty region");
  double acc = 0.0;
  for (const Index s : sites) acc += std::pow(std::abs(values[s]), p);
  return std::pow(acc / count, 1.0 / p);
}

}  // namespace gradphi
