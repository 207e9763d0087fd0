// Event-driven simulation of the conductance walk with generator
// (Delta^K f)(x) = sum_y K(x,y) [f(y) - f(x)].
//
// Holding time at x is Exponential(K~(x)); the next site is y with probability
// K(x,y)/K~(x). Edges leaving an absorbing box do not exist, so the walk
// cannot cross the boundary (rate truncation).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "pam/lattice.hpp"
#include "pam/rng.hpp"
#include "pam/text.hpp"

namespace pam {

struct WalkPath {
  LatticeBox box;
  std::size_t start = 0;
  double horizon = 0.0;
  std::vector<double> jump_times;
  /// positions[0] = start, positions[l] = site after the l-th jump.
  std::vector<std::size_t> positions;
  std::vector<std::uint8_t> dirs;
  /// Decorated walks only: 0 = red edge, 1 = green edge.
  std::vector<std::uint8_t> labels;

  std::size_t jumps() const { return jump_times.size(); }

  /// Number of jumps in [0, t].
  std::size_t jumps_until(double t) const {
    return static_cast<std::size_t>(
        std::upper_bound(jump_times.begin(), jump_times.end(), t) - jump_times.begin());
  }

  /// Right-continuous position at time t.
  std::size_t position_at(double t) const { return positions[jumps_until(t)]; }

  std::size_t final_position() const { return positions.back(); }
};

namespace detail {

template <class OnJump>
void simulate_into(const ConductanceField& field, std::size_t start, double horizon,
                   RngStream& rng, WalkPath& out, OnJump&& on_jump) {
  const LatticeBox& box = field.box();
  if (start >= box.size()) throw std::out_of_range("walk start outside the box");
  out.box = box;
  out.start = start;
  out.horizon = horizon;
  out.jump_times.clear();
  out.positions.clear();
  out.dirs.clear();
  out.labels.clear();
  out.positions.push_back(start);
  std::size_t x = start;
  double t = 0.0;
  const int dirs = box.directions();
  for (;;) {
    const double total = field.total_rate(x);
    if (!(total > 0.0)) break;
    t += rng.exponential(total);
    if (t > horizon) break;
    double u = rng.uniform() * total;
    int dir = 0;
    for (; dir < dirs - 1; ++dir) {
      const double r = field.rate(x, dir);
      if (u < r) break;
      u -= r;
    }
    while (field.rate(x, dir) == 0.0) --dir;  // rounding fell past the last edge
    x = static_cast<std::size_t>(box.neighbour(x, dir));
    out.jump_times.push_back(t);
    out.positions.push_back(x);
    out.dirs.push_back(static_cast<std::uint8_t>(dir));
    on_jump(out.positions[out.positions.size() - 2], dir);
  }
}

}  // namespace detail

inline void simulate_path_into(const ConductanceField& field, std::size_t start,
                               double horizon, RngStream& rng, WalkPath& out) {
  detail::simulate_into(field, start, horizon, rng, out, [](std::size_t, int) {});
}

inline WalkPath simulate_path(const ConductanceField& field, std::size_t start,
                              double horizon, RngStream& rng) {
  WalkPath path;
  simulate_path_into(field, start, horizon, rng, path);
  return path;
}

/// Walk on the decorated graph: one merged clock with the summed rate; the
/// red/green label is drawn afterwards from `label_rng`, so the jump sequence
/// consumes `rng` exactly as the walk on decorated_to_effective(dec) would.
inline WalkPath simulate_path(const DecoratedConductanceField& dec,
                              const ConductanceField& effective, std::size_t start,
                              double horizon, RngStream& rng, RngStream& label_rng) {
  if (!(effective.box() == dec.box()))
    throw std::invalid_argument("effective field box differs from decorated box");
  WalkPath path;
  detail::simulate_into(effective, start, horizon, rng, path, [&](std::size_t from, int dir) {
    const auto e = static_cast<std::size_t>(dec.box().edge(from, dir));
    const double red = dec.red()[e];
    const double p_red = red / (red + dec.green()[e]);
    path.labels.push_back(label_rng.uniform() < p_red ? 0 : 1);
  });
  return path;
}

inline WalkPath simulate_path(const DecoratedConductanceField& dec, std::size_t start,
                              double horizon, RngStream& rng, RngStream& label_rng) {
  return simulate_path(dec, decorated_to_effective(dec), start, horizon, rng, label_rng);
}

/// Site-membership mask of `pocket` over the vertices of `box`.
inline std::vector<char> pocket_mask(const LatticeBox& box, const LatticeBox& pocket) {
  std::vector<char> mask(box.size(), 0);
  for (std::size_t v = 0; v < box.size(); ++v) mask[v] = pocket.contains(box.point(v)) ? 1 : 0;
  return mask;
}

/// True iff every site visited during [0, t] lies in the mask.
inline bool confined_until(const WalkPath& path, const std::vector<char>& mask, double t) {
  const std::size_t visited = path.jumps_until(t) + 1;
  for (std::size_t l = 0; l < visited; ++l)
    if (!mask[path.positions[l]]) return false;
  return true;
}

inline bool confinement_indicator(const WalkPath& path, const LatticeBox& pocket) {
  for (auto v : path.positions)
    if (!pocket.contains(path.box.point(v))) return false;
  return true;
}

inline bool confinement_indicator(const WalkPath& path, const ClusterSpec& pocket) {
  return confinement_indicator(path, pocket.pocket_box());
}

struct GirsanovWeight {
  double log_weight = 0.0;
  double jump_term = 0.0;
  double time_term = 0.0;
};

/// Log Radon-Nikodym derivative of the `to`-walk law against the
/// `from`-walk law on the path's horizon: jump ratios plus the compensator
/// -int (K~_to - K~_from)(X(s)) ds, integrated exactly over the path.
inline GirsanovWeight girsanov_weight(const WalkPath& path, const ConductanceField& from,
                                      const ConductanceField& to) {
  if (!(from.box() == to.box()) || !(path.box == from.box()))
    throw std::invalid_argument("girsanov_weight: fields and path must share a box");
  GirsanovWeight w;
  for (std::size_t l = 0; l < path.jumps(); ++l) {
    const auto e = static_cast<std::size_t>(from.box().edge(path.positions[l], path.dirs[l]));
    w.jump_term += std::log(to.rate(e) / from.rate(e));
  }
  double prev = 0.0;
  for (std::size_t l = 0; l <= path.jumps(); ++l) {
    const double next = l < path.jumps() ? path.jump_times[l] : path.horizon;
    const auto x = path.positions[l];
    w.time_term -= (to.total_rate(x) - from.total_rate(x)) * (next - prev);
    prev = next;
  }
  w.log_weight = w.jump_term + w.time_term;
  return w;
}

/// `jump_time,site_coords(,edge_label)`; the first row is the start at time 0.
inline void write_path_csv(std::ostream& os, const WalkPath& path) {
  const bool labelled = !path.labels.empty();
  os << (labelled ? "jump_time,site_coords,edge_label\n" : "jump_time,site_coords\n");
  auto coords = [&](std::size_t v) {
    const Point p = path.box.point(v);
    std::string s;
    for (std::size_t k = 0; k < p.size(); ++k) s += (k ? " " : "") + std::to_string(p[k]);
    return s;
  };
  os << "0," << coords(path.start) << (labelled ? ",\n" : "\n");
  for (std::size_t l = 0; l < path.jumps(); ++l) {
    os << format_double(path.jump_times[l]) << ',' << coords(path.positions[l + 1]);
    if (labelled) os << ',' << (path.labels[l] == 0 ? "red" : "green");
    os << '\n';
  }
}

}  // namespace pam
