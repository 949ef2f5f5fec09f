#pragma once

// Test-side reference computations, written without the library's helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dtppo/scenario.hpp"
#include "dtppo/world.hpp"

namespace oracle {

inline double dist(const dtppo::Vec3& a, const dtppo::Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Transfer, collision and free-space terms plus the weighted total.
struct Reward {
  double trans, col, free, total;
};

inline Reward reward(const dtppo::Vec3& prev, const dtppo::Vec3& now, const dtppo::Vec3& target,
                     bool collided, double clearance) {
  const double dp = dist(target, prev);
  const double dn = dist(target, now);
  Reward r{};
  r.trans = (dp - dn) + std::max(0.0, 2.0 - dn * dn);
  r.col = collided ? -1.0 : 0.0;
  r.free = clearance > 0.5 ? 0.04 : 0.0;
  r.total = 0.45 * r.trans + 0.30 * r.col + 0.25 * r.free;
  return r;
}

// Exact distance to a closed axis-aligned box, negative inside.
inline double box_sdf(const dtppo::Vec3& p, const dtppo::Vec3& c, const dtppo::Vec3& h) {
  const double qx = std::abs(p.x - c.x) - h.x;
  const double qy = std::abs(p.y - c.y) - h.y;
  const double qz = std::abs(p.z - c.z) - h.z;
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
  return std::sqrt(ox * ox + oy * oy + oz * oz) + std::min(std::max(qx, std::max(qy, qz)), 0.0);
}

inline double cylinder_sdf(const dtppo::Vec3& p, const dtppo::Vec3& c, double r, double hh) {
  const double radial = std::hypot(p.x - c.x, p.y - c.y) - r;
  const double axial = std::abs(p.z - c.z) - hh;
  const double a = std::max(radial, 0.0), b = std::max(axial, 0.0);
  return std::sqrt(a * a + b * b) + std::min(std::max(radial, axial), 0.0);
}

inline double obstacle_sdf(const dtppo::Obstacle& o, const dtppo::Vec3& p) {
  switch (o.shape) {
    case dtppo::ShapeKind::kBox:
      return box_sdf(p, o.center, o.half_extents);
    case dtppo::ShapeKind::kCylinder:
      return cylinder_sdf(p, o.center, o.radius, o.half_height);
    case dtppo::ShapeKind::kSphere:
      return dist(p, o.center) - o.radius;
  }
  return 0.0;
}

inline double min_clearance(const dtppo::ScenarioMap& m, const dtppo::Vec3& p) {
  double best = INFINITY;
  for (const auto& o : m.obstacles) best = std::min(best, obstacle_sdf(o, p));
  return best;
}

inline bool covers(const dtppo::Obstacle& o, double x, double y) {
  if (o.shape == dtppo::ShapeKind::kBox) {
    return std::abs(x - o.center.x) <= o.half_extents.x && std::abs(y - o.center.y) <= o.half_extents.y;
  }
  const double dx = x - o.center.x, dy = y - o.center.y;
  return dx * dx + dy * dy <= o.radius * o.radius;
}

// Ground-plane coverage from an independent uniform sample stream.
inline double occupancy(const dtppo::ScenarioMap& m, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, m.spec.arena_x), uy(0.0, m.spec.arena_y);
  int hit = 0;
  for (int s = 0; s < samples; ++s) {
    const double x = ux(rng), y = uy(rng);
    for (const auto& o : m.obstacles) {
      if (covers(o, x, y)) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / samples;
}

// Generalized advantage by the definition: sum_k (gamma lambda)^k delta_{t+k}.
inline std::vector<double> gae_brute(const std::vector<double>& r, const std::vector<double>& v,
                                     const std::vector<int>& terminal, double bootstrap,
                                     double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> next(n), delta(n), adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double nv = t + 1 < n ? v[t + 1] : bootstrap;
    next[t] = terminal[t] ? 0.0 : nv;
    delta[t] = r[t] + gamma * next[t] - v[t];
  }
  for (std::size_t t = 0; t < n; ++t) {
    double w = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      adv[t] += w * delta[k];
      if (terminal[k]) break;
      w *= gamma * lambda;
    }
  }
  return adv;
}

}  // namespace oracle
