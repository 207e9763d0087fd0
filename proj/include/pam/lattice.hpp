// Lattice boxes and random conductance fields.
//
// A LatticeBox is {-L..L}^d shifted by an origin offset. Vertices are indexed
// in lexicographic coordinate order (first coordinate most significant) and
// directions are numbered 2k for +e_k and 2k+1 for -e_k. Conductances are
// stored once per undirected edge, so K(x,y) = K(y,x) holds structurally.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pam/rng.hpp"
#include "pam/text.hpp"

namespace pam {

enum class Geometry { absorbing, periodic };

inline const char* to_string(Geometry g) {
  return g == Geometry::periodic ? "periodic" : "absorbing";
}

inline Geometry parse_geometry(std::string_view s) {
  if (s == "periodic") return Geometry::periodic;
  if (s == "absorbing") return Geometry::absorbing;
  throw std::invalid_argument("unknown geometry '" + std::string(s) + "'");
}

using Point = std::vector<int>;

class LatticeBox {
 public:
  LatticeBox() : LatticeBox(1, 0) {}

  LatticeBox(int dim, int radius, Geometry geometry = Geometry::absorbing,
             Point origin = {})
      : dim_(dim), radius_(radius), geometry_(geometry), origin_(std::move(origin)) {
    if (dim < 1) throw std::invalid_argument("box dimension must be >= 1");
    if (radius < 0) throw std::invalid_argument("box radius must be >= 0");
    if (origin_.empty()) origin_.assign(static_cast<std::size_t>(dim), 0);
    if (origin_.size() != static_cast<std::size_t>(dim))
      throw std::invalid_argument("origin offset has wrong dimension");
    double count = std::pow(2.0 * radius + 1.0, dim);
    if (count > 2.0e8) throw std::invalid_argument("lattice box too large");
    build_tables();
  }

  int dim() const { return dim_; }
  int radius() const { return radius_; }
  int side() const { return 2 * radius_ + 1; }
  Geometry geometry() const { return geometry_; }
  const Point& origin() const { return origin_; }
  std::size_t size() const { return tables_->size; }
  int directions() const { return 2 * dim_; }
  std::size_t edge_count() const { return tables_->edge_ends.size(); }

  Point point(std::size_t v) const {
    Point p(static_cast<std::size_t>(dim_));
    for (int k = dim_ - 1; k >= 0; --k) {
      p[static_cast<std::size_t>(k)] =
          static_cast<int>(v % static_cast<std::size_t>(side())) - radius_ +
          origin_[static_cast<std::size_t>(k)];
      v /= static_cast<std::size_t>(side());
    }
    return p;
  }

  bool contains(const Point& p) const {
    if (p.size() != static_cast<std::size_t>(dim_)) return false;
    for (int k = 0; k < dim_; ++k) {
      const int c = p[static_cast<std::size_t>(k)] - origin_[static_cast<std::size_t>(k)];
      if (c < -radius_ || c > radius_) return false;
    }
    return true;
  }

  std::optional<std::size_t> index(const Point& p) const {
    if (!contains(p)) return std::nullopt;
    std::size_t v = 0;
    for (int k = 0; k < dim_; ++k) {
      v = v * static_cast<std::size_t>(side()) +
          static_cast<std::size_t>(p[static_cast<std::size_t>(k)] -
                                   origin_[static_cast<std::size_t>(k)] + radius_);
    }
    return v;
  }

  std::size_t checked_index(const Point& p) const {
    auto v = index(p);
    if (!v) throw std::out_of_range("point outside lattice box");
    return *v;
  }

  /// Index of the origin offset (the box centre).
  std::size_t center() const { return tables_->size / 2; }

  /// Neighbour across direction dir, or -1 when the edge leaves the box.
  std::int64_t neighbour(std::size_t v, int dir) const {
    return tables_->nbr[v * static_cast<std::size_t>(directions()) +
                        static_cast<std::size_t>(dir)];
  }

  /// Undirected edge id across direction dir, or -1.
  std::int64_t edge(std::size_t v, int dir) const {
    return tables_->edge_of[v * static_cast<std::size_t>(directions()) +
                            static_cast<std::size_t>(dir)];
  }

  std::pair<std::size_t, std::size_t> edge_ends(std::size_t e) const {
    return tables_->edge_ends[e];
  }

  /// True when every point of `inner` lies in this box (no wrap-around).
  bool encloses(const LatticeBox& inner) const {
    if (inner.dim() != dim_) return false;
    for (int k = 0; k < dim_; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (inner.origin()[kk] - inner.radius() < origin_[kk] - radius_) return false;
      if (inner.origin()[kk] + inner.radius() > origin_[kk] + radius_) return false;
    }
    return true;
  }

  friend bool operator==(const LatticeBox& a, const LatticeBox& b) {
    return a.dim_ == b.dim_ && a.radius_ == b.radius_ &&
           a.geometry_ == b.geometry_ && a.origin_ == b.origin_;
  }

 private:
  struct Tables {
    std::size_t size = 0;
    std::vector<std::int32_t> nbr;
    std::vector<std::int32_t> edge_of;
    std::vector<std::pair<std::size_t, std::size_t>> edge_ends;
  };

  void build_tables() {
    auto t = std::make_shared<Tables>();
    const auto side_sz = static_cast<std::size_t>(side());
    t->size = 1;
    for (int k = 0; k < dim_; ++k) t->size *= side_sz;
    const auto dirs = static_cast<std::size_t>(directions());
    t->nbr.assign(t->size * dirs, -1);
    t->edge_of.assign(t->size * dirs, -1);
    std::vector<std::size_t> stride(static_cast<std::size_t>(dim_));
    std::size_t s = 1;
    for (int k = dim_ - 1; k >= 0; --k) {
      stride[static_cast<std::size_t>(k)] = s;
      s *= side_sz;
    }
    for (std::size_t v = 0; v < t->size; ++v) {
      for (int k = 0; k < dim_; ++k) {
        const std::size_t st = stride[static_cast<std::size_t>(k)];
        const std::size_t c = (v / st) % side_sz;
        for (int sign = 0; sign < 2; ++sign) {
          std::int64_t nc = sign == 0 ? static_cast<std::int64_t>(c) + 1
                                      : static_cast<std::int64_t>(c) - 1;
          if (nc < 0 || nc >= static_cast<std::int64_t>(side_sz)) {
            if (geometry_ != Geometry::periodic || side_sz < 3) continue;
            nc = (nc + static_cast<std::int64_t>(side_sz)) %
                 static_cast<std::int64_t>(side_sz);
          }
          const std::size_t w = v - c * st + static_cast<std::size_t>(nc) * st;
          t->nbr[v * dirs + static_cast<std::size_t>(2 * k + sign)] =
              static_cast<std::int32_t>(w);
        }
      }
    }
    for (std::size_t v = 0; v < t->size; ++v) {
      for (int k = 0; k < dim_; ++k) {
        const auto w = t->nbr[v * dirs + static_cast<std::size_t>(2 * k)];
        if (w < 0) continue;
        const auto e = static_cast<std::int32_t>(t->edge_ends.size());
        t->edge_ends.emplace_back(v, static_cast<std::size_t>(w));
        t->edge_of[v * dirs + static_cast<std::size_t>(2 * k)] = e;
        t->edge_of[static_cast<std::size_t>(w) * dirs + static_cast<std::size_t>(2 * k + 1)] = e;
      }
    }
    tables_ = std::move(t);
  }

  int dim_;
  int radius_;
  Geometry geometry_;
  Point origin_;
  std::shared_ptr<const Tables> tables_;
};

/// Conductances on the edges of a box, with ellipticity bounds and support.
class ConductanceField {
 public:
  ConductanceField(LatticeBox box, std::vector<double> rates)
      : box_(std::move(box)), rates_(std::move(rates)) {
    if (rates_.size() != box_.edge_count())
      throw std::invalid_argument("one rate per edge required");
    for (double r : rates_) {
      if (!(r > 0.0) || !std::isfinite(r))
        throw std::invalid_argument("conductances must be positive and finite");
    }
    support_ = rates_;
    std::sort(support_.begin(), support_.end());
    support_.erase(std::unique(support_.begin(), support_.end()), support_.end());
    totals_.assign(box_.size(), 0.0);
    for (std::size_t v = 0; v < box_.size(); ++v) {
      double sum = 0.0;
      for (int dir = 0; dir < box_.directions(); ++dir) sum += rate(v, dir);
      totals_[v] = sum;
    }
  }

  const LatticeBox& box() const { return box_; }
  const std::vector<double>& rates() const { return rates_; }
  double rate(std::size_t edge) const { return rates_[edge]; }

  /// Rate across direction dir from v; zero when there is no edge.
  double rate(std::size_t v, int dir) const {
    const auto e = box_.edge(v, dir);
    return e < 0 ? 0.0 : rates_[static_cast<std::size_t>(e)];
  }

  /// Sum of conductances at v.
  double total_rate(std::size_t v) const { return totals_[v]; }
  double max_total_rate() const {
    return totals_.empty() ? 0.0 : *std::max_element(totals_.begin(), totals_.end());
  }

  /// Ellipticity bounds c and C; equal to the ess-inf and ess-sup here.
  double lower() const { return support_.empty() ? 0.0 : support_.front(); }
  double upper() const { return support_.empty() ? 0.0 : support_.back(); }
  const std::vector<double>& support() const { return support_; }

 private:
  LatticeBox box_;
  std::vector<double> rates_;
  std::vector<double> support_;
  std::vector<double> totals_;
};

/// Two parallel edges (red, green) per nearest-neighbour pair.
class DecoratedConductanceField {
 public:
  DecoratedConductanceField(LatticeBox box, std::vector<double> red,
                            std::vector<double> green)
      : box_(std::move(box)), red_(std::move(red)), green_(std::move(green)) {
    if (red_.size() != box_.edge_count() || green_.size() != box_.edge_count())
      throw std::invalid_argument("one red and one green rate per pair required");
    for (std::size_t e = 0; e < red_.size(); ++e) {
      if (!(red_[e] > 0.0) || !(green_[e] > 0.0) || !std::isfinite(red_[e]) ||
          !std::isfinite(green_[e]))
        throw std::invalid_argument("decorated conductances must be positive and finite");
    }
  }

  static DecoratedConductanceField constant(const LatticeBox& box, double red,
                                            double green) {
    return {box, std::vector<double>(box.edge_count(), red),
            std::vector<double>(box.edge_count(), green)};
  }

  const LatticeBox& box() const { return box_; }
  const std::vector<double>& red() const { return red_; }
  const std::vector<double>& green() const { return green_; }

 private:
  LatticeBox box_;
  std::vector<double> red_;
  std::vector<double> green_;
};

struct ClusterSpec {
  double target = 0.0;
  double tolerance = 0.0;
  int pocket_radius = 0;
  Point pocket_center;

  LatticeBox pocket_box() const {
    return LatticeBox(static_cast<int>(pocket_center.size()), pocket_radius,
                      Geometry::absorbing, pocket_center);
  }
};

// Field laws ---------------------------------------------------------------

struct ConstantLaw {
  double kappa = 1.0;
};

struct IidDiscreteLaw {
  std::vector<double> values;
  std::vector<double> probs;
};

struct Pocket {
  Point center;
  int radius = 0;
  double value = 0.0;
};

/// i.i.d. background over `values` (uniform when probs is empty) with
/// monochromatic pockets planted on top.
struct ClusteredLaw {
  std::vector<double> values;
  std::vector<double> probs;
  std::vector<Pocket> pockets;
};

using FieldLaw = std::variant<ConstantLaw, IidDiscreteLaw, ClusteredLaw>;

namespace detail {

inline void check_values(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("law needs at least one value");
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("conductance values must lie in (0, inf)");
  }
}

inline std::vector<double> normalized_probs(const std::vector<double>& values,
                                            std::vector<double> probs) {
  if (probs.empty()) probs.assign(values.size(), 1.0 / static_cast<double>(values.size()));
  if (probs.size() != values.size())
    throw std::invalid_argument("probs and values differ in length");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("probs must sum to 1");
  return probs;
}

inline double draw_value(const std::vector<double>& values,
                         const std::vector<double>& probs, RngStream& rng) {
  const double u = rng.uniform();
  double cdf = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    cdf += probs[i];
    if (u < cdf) return values[i];
  }
  return values.back();
}

/// Edges with both endpoints in `pocket`, as ids of `box`.
inline std::vector<std::size_t> edges_within(const LatticeBox& box,
                                             const LatticeBox& pocket) {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < box.edge_count(); ++e) {
    const auto [a, b] = box.edge_ends(e);
    const Point pa = box.point(a);
    const Point pb = box.point(b);
    if (!pocket.contains(pa) || !pocket.contains(pb)) continue;
    // a wrap-around edge of a periodic box is never inside a fitted pocket
    int dist = 0;
    for (std::size_t k = 0; k < pa.size(); ++k) dist += std::abs(pa[k] - pb[k]);
    if (dist == 1) out.push_back(e);
  }
  return out;
}

}  // namespace detail

inline ConductanceField constant_field(const LatticeBox& box, double kappa) {
  return {box, std::vector<double>(box.edge_count(), kappa)};
}

inline ConductanceField generate_field(const LatticeBox& box, const FieldLaw& law,
                                       std::uint64_t seed) {
  RngStream rng(seed, stream_id(0, slot::field));
  std::vector<double> rates(box.edge_count());

  if (const auto* c = std::get_if<ConstantLaw>(&law)) {
    detail::check_values({c->kappa});
    std::fill(rates.begin(), rates.end(), c->kappa);
  } else if (const auto* iid = std::get_if<IidDiscreteLaw>(&law)) {
    detail::check_values(iid->values);
    const auto probs = detail::normalized_probs(iid->values, iid->probs);
    for (auto& r : rates) r = detail::draw_value(iid->values, probs, rng);
  } else {
    const auto& cl = std::get<ClusteredLaw>(law);
    detail::check_values(cl.values);
    const auto probs = detail::normalized_probs(cl.values, cl.probs);
    std::vector<LatticeBox> pockets;
    for (const auto& p : cl.pockets) {
      detail::check_values({p.value});
      if (p.radius < 1) throw std::invalid_argument("pocket radius must be >= 1");
      if (std::find(cl.values.begin(), cl.values.end(), p.value) == cl.values.end())
        throw std::invalid_argument("pocket value not among the law's values");
      LatticeBox pb(box.dim(), p.radius, Geometry::absorbing, p.center);
      if (!box.encloses(pb)) throw std::invalid_argument("pocket does not fit inside the box");
      for (std::size_t i = 0; i < pockets.size(); ++i) {
        bool overlap = true;
        for (int k = 0; k < box.dim(); ++k) {
          const auto kk = static_cast<std::size_t>(k);
          const int gap = std::abs(pb.origin()[kk] - pockets[i].origin()[kk]);
          if (gap > pb.radius() + pockets[i].radius()) overlap = false;
        }
        if (overlap) {
          throw std::invalid_argument("pockets " + std::to_string(i) + " and " +
                                      std::to_string(pockets.size()) + " overlap");
        }
      }
      pockets.push_back(pb);
    }
    for (auto& r : rates) r = detail::draw_value(cl.values, probs, rng);
    for (std::size_t i = 0; i < pockets.size(); ++i) {
      for (auto e : detail::edges_within(box, pockets[i])) rates[e] = cl.pockets[i].value;
    }
  }
  return {box, std::move(rates)};
}

namespace detail {

/// Candidate pocket centres ordered by squared distance to the lattice
/// origin, ties broken lexicographically.
inline std::vector<Point> pocket_centres(const LatticeBox& box, int r) {
  std::vector<Point> centres;
  if (r > box.radius()) return centres;
  LatticeBox inner(box.dim(), box.radius() - r, Geometry::absorbing, box.origin());
  centres.reserve(inner.size());
  for (std::size_t v = 0; v < inner.size(); ++v) centres.push_back(inner.point(v));
  auto norm2 = [](const Point& p) {
    long long s = 0;
    for (int c : p) s += static_cast<long long>(c) * c;
    return s;
  };
  std::stable_sort(centres.begin(), centres.end(), [&](const Point& a, const Point& b) {
    return norm2(a) < norm2(b);
  });
  return centres;
}

}  // namespace detail

/// First pocket B_r(x) whose edges all have rates in (kappa-delta,
/// kappa+delta). Exhaustive over centres with the pocket inside the box.
inline std::optional<ClusterSpec> verify_clustering(const ConductanceField& field,
                                                    double kappa, double delta,
                                                    int r) {
  const LatticeBox& box = field.box();
  if (r < 0 || r > box.radius()) throw std::invalid_argument("pocket radius exceeds box radius");
  const int d = box.dim();
  for (const Point& centre : detail::pocket_centres(box, r)) {
    LatticeBox pocket(d, r, Geometry::absorbing, centre);
    bool ok = true;
    for (std::size_t v = 0; v < pocket.size() && ok; ++v) {
      const std::size_t fv = box.checked_index(pocket.point(v));
      for (int k = 0; k < d && ok; ++k) {
        if (pocket.neighbour(v, 2 * k) < 0) continue;  // leaves the pocket
        const double rate = field.rate(fv, 2 * k);
        if (!(rate > kappa - delta && rate < kappa + delta)) ok = false;
      }
    }
    if (ok) return ClusterSpec{kappa, delta, r, centre};
  }
  return std::nullopt;
}

/// Floors every rate to the grid kappa_* + (j-1)(kappa^* - kappa_*)/n; the
/// maximum rate is kept.
inline ConductanceField discretize_field(const ConductanceField& field, int n) {
  if (n < 1) throw std::invalid_argument("discretization level must be >= 1");
  const double lo = field.lower();
  const double hi = field.upper();
  if (lo == hi) return field;
  const double h = (hi - lo) / n;
  auto grid = [&](int j) { return lo + (j - 1) * h; };
  std::vector<double> rates = field.rates();
  for (auto& r : rates) {
    if (r == hi) continue;
    int j = static_cast<int>(std::floor((r - lo) / h)) + 1;
    j = std::clamp(j, 1, n);
    while (j < n && grid(j + 1) <= r) ++j;
    while (j > 1 && grid(j) > r) --j;
    r = grid(j);
  }
  return {field.box(), std::move(rates)};
}

/// Parallel edges add: the effective rate of a pair is red + green.
inline ConductanceField decorated_to_effective(const DecoratedConductanceField& dec) {
  std::vector<double> rates(dec.red().size());
  for (std::size_t e = 0; e < rates.size(); ++e) rates[e] = dec.red()[e] + dec.green()[e];
  return {dec.box(), std::move(rates)};
}

// CSV ----------------------------------------------------------------------
//
//   dim,radius,geometry[,origin]
//   1,5,absorbing
//   x;y;rate
//   -5;-4;0.5
//
// Coordinates inside a cell are comma separated; origin is space separated
// and only written when non-zero.

namespace detail {

inline std::string format_point(const Point& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(p[i]);
  }
  return s;
}

inline Point parse_point(std::string_view s) {
  Point p;
  for (auto part : split(s, ',')) p.push_back(static_cast<int>(parse_int(part)));
  return p;
}

}  // namespace detail

inline void write_field_csv(std::ostream& os, const ConductanceField& field) {
  const auto& box = field.box();
  const bool offset = std::any_of(box.origin().begin(), box.origin().end(),
                                  [](int c) { return c != 0; });
  os << (offset ? "dim,radius,geometry,origin\n" : "dim,radius,geometry\n");
  os << box.dim() << ',' << box.radius() << ',' << to_string(box.geometry());
  if (offset) {
    os << ',';
    for (std::size_t k = 0; k < box.origin().size(); ++k)
      os << (k ? " " : "") << box.origin()[k];
  }
  os << "\nx;y;rate\n";
  for (std::size_t e = 0; e < box.edge_count(); ++e) {
    const auto [a, b] = box.edge_ends(e);
    os << detail::format_point(box.point(a)) << ';' << detail::format_point(box.point(b))
       << ';' << format_double(field.rate(e)) << '\n';
  }
}

inline ConductanceField read_field_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("dim,radius,geometry", 0) != 0)
    throw std::invalid_argument("field csv: missing 'dim,radius,geometry' header");
  if (!std::getline(is, line)) throw std::invalid_argument("field csv: missing box line");
  const auto head = split(line, ',');
  if (head.size() < 3) throw std::invalid_argument("field csv: malformed box line");
  Point origin;
  if (head.size() >= 4) {
    for (auto c : split(head[3], ' '))
      if (!c.empty()) origin.push_back(static_cast<int>(parse_int(c)));
  }
  LatticeBox box(static_cast<int>(parse_int(head[0])), static_cast<int>(parse_int(head[1])),
                 parse_geometry(head[2]), origin);
  if (!std::getline(is, line)) throw std::invalid_argument("field csv: missing column line");
  std::vector<double> rates(box.edge_count(), 0.0);
  std::vector<bool> seen(box.edge_count(), false);
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line, ';');
    if (cells.size() != 3) throw std::invalid_argument("field csv: bad row '" + line + "'");
    const auto a = box.checked_index(detail::parse_point(cells[0]));
    const auto b = box.checked_index(detail::parse_point(cells[1]));
    std::int64_t e = -1;
    for (int dir = 0; dir < box.directions() && e < 0; ++dir) {
      if (box.neighbour(a, dir) == static_cast<std::int64_t>(b)) e = box.edge(a, dir);
    }
    if (e < 0) throw std::invalid_argument("field csv: row is not an edge of the box");
    rates[static_cast<std::size_t>(e)] = parse_double(cells[2]);
    seen[static_cast<std::size_t>(e)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw std::invalid_argument("field csv: some edges have no rate");
  return {box, std::move(rates)};
}

}  // namespace pam
