#pragma once

#include <cmath>

namespace ledge {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Disc coverage model: an AP covers every point within its radius.
struct Disc {
  Point center;
  double radius = 0.0;

  bool covers(Point p) const { return distance(center, p) <= radius; }

  friend bool operator==(const Disc&, const Disc&) = default;
};

}  // namespace ledge
