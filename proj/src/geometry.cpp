#include "rlgan/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace rlgan {

PointCloud::PointCloud(std::vector<Point3> points) : points_(std::move(points)) {
  for (const auto& p : points_) {
    if (!p.allFinite()) throw GeometryError("point cloud contains a non-finite coordinate");
  }
}

bool PointCloud::operator==(const PointCloud& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (points_[i] != other.points_[i]) return false;
  }
  return true;
}

BoundingBox bounding_box(const PointCloud& cloud) {
  if (cloud.empty()) throw GeometryError("bounding box of an empty cloud");
  BoundingBox box{cloud[0], cloud[0]};
  for (const auto& p : cloud.points()) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.size() < 2) throw GeometryError("cannot normalize a cloud with fewer than 2 points");
  const BoundingBox box = bounding_box(cloud);
  const double diagonal = box.diagonal();
  if (!(diagonal > 0.0)) throw GeometryError("cannot normalize a cloud with a degenerate bounding box");
  const Point3 center = box.center();
  const double scale = 1.0 / diagonal;
  std::vector<Point3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.emplace_back((p - center) * scale);
  return PointCloud(std::move(out));
}

// ---------------------------------------------------------------------------
// Parametric primitives

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Box {
  Point3 center;
  Point3 half;

  double area() const { return 8.0 * (half.x() * half.y() + half.y() * half.z() + half.x() * half.z()); }

  Point3 sample(Rng& rng) const {
    const std::array<double, 3> face_area{half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
    std::discrete_distribution<int> pick_axis(face_area.begin(), face_area.end());
    const int axis = pick_axis(rng);
    Point3 p;
    for (int k = 0; k < 3; ++k) p[k] = uniform(rng, -half[k], half[k]);
    p[axis] = (uniform(rng, 0.0, 1.0) < 0.5) ? -half[axis] : half[axis];
    return center + p;
  }
};

struct Cylinder {
  Point3 center;
  int axis;  // 0 = x, 1 = y, 2 = z
  double radius;
  double half_length;

  double area() const {
    return 2.0 * std::numbers::pi * radius * (2.0 * half_length) + 2.0 * std::numbers::pi * radius * radius;
  }

  Point3 sample(Rng& rng) const {
    const double lateral = 2.0 * std::numbers::pi * radius * 2.0 * half_length;
    const double cap = std::numbers::pi * radius * radius;
    const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    double rho = radius;
    double along = 0.0;
    const double u = uniform(rng, 0.0, lateral + 2.0 * cap);
    if (u < lateral) {
      along = uniform(rng, -half_length, half_length);
    } else {
      rho = radius * std::sqrt(uniform(rng, 0.0, 1.0));
      along = (u < lateral + cap) ? -half_length : half_length;
    }
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    Point3 p = Point3::Zero();
    p[axis] = along;
    p[a1] = rho * std::cos(theta);
    p[a2] = rho * std::sin(theta);
    return center + p;
  }
};

struct Ellipsoid {
  Point3 center;
  Point3 radii;

  // Knud Thomsen's approximation; only used to weight primitive selection.
  double area() const {
    constexpr double p = 1.6075;
    const double a = std::pow(radii.x(), p), b = std::pow(radii.y(), p), c = std::pow(radii.z(), p);
    return 4.0 * std::numbers::pi * std::pow((a * b + a * c + b * c) / 3.0, 1.0 / p);
  }

  // Sphere directions mapped onto the ellipsoid, thinned by the local area
  // stretch factor so the accepted points are uniform by area.
  Point3 sample(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double max_stretch = 1.0 / radii.minCoeff();
    for (;;) {
      Point3 u(normal(rng), normal(rng), normal(rng));
      const double len = u.norm();
      if (len == 0.0) continue;
      u /= len;
      const double stretch = u.cwiseQuotient(radii).norm();
      if (uniform(rng, 0.0, max_stretch) <= stretch) return center + u.cwiseProduct(radii);
    }
  }
};

struct Primitive {
  enum class Kind { box, cylinder, ellipsoid } kind;
  Box box{};
  Cylinder cylinder{};
  Ellipsoid ellipsoid{};

  static Primitive make_box(Point3 center, Point3 half) { return {Kind::box, Box{center, half}, {}, {}}; }
  static Primitive make_cylinder(Point3 center, int axis, double radius, double half_length) {
    return {Kind::cylinder, {}, Cylinder{center, axis, radius, half_length}, {}};
  }
  static Primitive make_ellipsoid(Point3 center, Point3 radii) {
    return {Kind::ellipsoid, {}, {}, Ellipsoid{center, radii}};
  }

  double area() const {
    switch (kind) {
      case Kind::box: return box.area();
      case Kind::cylinder: return cylinder.area();
      case Kind::ellipsoid: return ellipsoid.area();
    }
    return 0.0;
  }
  Point3 sample(Rng& rng) const {
    switch (kind) {
      case Kind::box: return box.sample(rng);
      case Kind::cylinder: return cylinder.sample(rng);
      case Kind::ellipsoid: return ellipsoid.sample(rng);
    }
    return Point3::Zero();
  }
};

// Four legs under a rectangular slab; y is up.
void add_legs(std::vector<Primitive>& parts, double half_w, double half_d, double height, double leg) {
  const double lh = 0.5 * height;
  for (double sx : {-1.0, 1.0}) {
    for (double sz : {-1.0, 1.0}) {
      parts.push_back(Primitive::make_box({sx * (half_w - leg), lh, sz * (half_d - leg)}, {leg, lh, leg}));
    }
  }
}

std::vector<Primitive> make_table(Rng& rng) {
  const double half_w = uniform(rng, 0.5, 0.8);
  const double half_d = uniform(rng, 0.3, 0.5);
  const double top = uniform(rng, 0.02, 0.04);
  const double height = uniform(rng, 0.6, 0.9);
  const double leg = uniform(rng, 0.025, 0.05);
  std::vector<Primitive> parts;
  parts.push_back(Primitive::make_box({0.0, height - top, 0.0}, {half_w, top, half_d}));
  add_legs(parts, half_w, half_d, height - 2.0 * top, leg);
  return parts;
}

std::vector<Primitive> make_chair(Rng& rng) {
  const double half_w = uniform(rng, 0.22, 0.3);
  const double half_d = uniform(rng, 0.22, 0.3);
  const double seat = uniform(rng, 0.02, 0.035);
  const double seat_height = uniform(rng, 0.4, 0.5);
  const double back_height = uniform(rng, 0.4, 0.7);
  const double back = uniform(rng, 0.02, 0.035);
  const double leg = uniform(rng, 0.02, 0.035);
  std::vector<Primitive> parts;
  parts.push_back(Primitive::make_box({0.0, seat_height - seat, 0.0}, {half_w, seat, half_d}));
  add_legs(parts, half_w, half_d, seat_height - 2.0 * seat, leg);
  parts.push_back(Primitive::make_box({0.0, seat_height + 0.5 * back_height, -half_d + back},
                                      {half_w, 0.5 * back_height, back}));
  return parts;
}

std::vector<Primitive> make_airplane(Rng& rng) {
  const double half_len = uniform(rng, 0.8, 1.2);
  const double body = uniform(rng, 0.07, 0.12);
  const double span = uniform(rng, 0.7, 1.1);
  const double chord = uniform(rng, 0.1, 0.18);
  const double wing_x = uniform(rng, -0.1, 0.15) * half_len;
  const double tail_span = uniform(rng, 0.2, 0.35);
  const double tail_chord = uniform(rng, 0.05, 0.08);
  const double fin_height = uniform(rng, 0.12, 0.25);
  const double tail_x = -0.85 * half_len;
  std::vector<Primitive> parts;
  parts.push_back(Primitive::make_ellipsoid({0.0, 0.0, 0.0}, {half_len, body, body}));
  parts.push_back(Primitive::make_box({wing_x, 0.0, 0.0}, {chord, 0.015, span}));
  parts.push_back(Primitive::make_box({tail_x, 0.0, 0.0}, {tail_chord, 0.01, tail_span}));
  parts.push_back(Primitive::make_box({tail_x, 0.5 * fin_height + 0.5 * body, 0.0},
                                      {tail_chord, 0.5 * fin_height, 0.01}));
  return parts;
}

std::vector<Primitive> make_car(Rng& rng) {
  const double half_len = uniform(rng, 0.45, 0.65);
  const double half_wid = uniform(rng, 0.2, 0.28);
  const double body_h = uniform(rng, 0.1, 0.15);
  const double wheel_r = uniform(rng, 0.06, 0.09);
  const double wheel_w = uniform(rng, 0.025, 0.045);
  const double cabin_len = uniform(rng, 0.45, 0.65) * half_len;
  const double cabin_h = uniform(rng, 0.08, 0.12);
  const double cabin_x = uniform(rng, -0.2, 0.1) * half_len;
  std::vector<Primitive> parts;
  const double body_y = wheel_r + body_h;
  parts.push_back(Primitive::make_box({0.0, body_y, 0.0}, {half_len, body_h, half_wid}));
  parts.push_back(Primitive::make_box({cabin_x, body_y + body_h + cabin_h, 0.0},
                                      {cabin_len, cabin_h, 0.9 * half_wid}));
  for (double sx : {-1.0, 1.0}) {
    for (double sz : {-1.0, 1.0}) {
      parts.push_back(Primitive::make_cylinder({sx * 0.7 * half_len, wheel_r, sz * (half_wid + wheel_w)}, 2,
                                               wheel_r, wheel_w));
    }
  }
  return parts;
}

}  // namespace

std::string_view category_name(ShapeCategory category) {
  switch (category) {
    case ShapeCategory::table: return "table";
    case ShapeCategory::chair: return "chair";
    case ShapeCategory::airplane: return "airplane";
    case ShapeCategory::car: return "car";
  }
  throw GeometryError("unknown shape category");
}

ShapeCategory parse_category(std::string_view name) {
  for (auto c : kAllCategories) {
    if (category_name(c) == name) return c;
  }
  throw GeometryError("unknown shape category '" + std::string(name) + "'");
}

PointCloud sample_shape(ShapeCategory category, std::size_t n_points, std::uint64_t seed) {
  if (n_points < 16) throw GeometryError("sample_shape needs at least 16 points");
  Rng rng(seed);
  std::vector<Primitive> parts;
  switch (category) {
    case ShapeCategory::table: parts = make_table(rng); break;
    case ShapeCategory::chair: parts = make_chair(rng); break;
    case ShapeCategory::airplane: parts = make_airplane(rng); break;
    case ShapeCategory::car: parts = make_car(rng); break;
  }
  std::vector<double> areas;
  areas.reserve(parts.size());
  for (const auto& part : parts) areas.push_back(part.area());
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());

  std::vector<Point3> points;
  points.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) points.push_back(parts[pick(rng)].sample(rng));
  return normalize_cloud(PointCloud(std::move(points)));
}

// ---------------------------------------------------------------------------

std::size_t missing_count(std::size_t n, double missing_ratio) {
  if (!(missing_ratio > 0.0 && missing_ratio < 1.0)) {
    throw GeometryError("missing ratio must lie in (0, 1), got " + std::to_string(missing_ratio));
  }
  return static_cast<std::size_t>(std::llround(missing_ratio * static_cast<double>(n)));
}

PointCloud corrupt_cloud_around(const PointCloud& cloud, std::size_t center_index, double missing_ratio) {
  const std::size_t n = cloud.size();
  const std::size_t k = missing_count(n, missing_ratio);
  if (k >= n) throw GeometryError("corruption would remove every point");
  if (center_index >= n) throw GeometryError("corruption centre index out of range");

  const Point3& center = cloud[center_index];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = squared_distance(cloud[i], center);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  std::vector<bool> removed(n, false);
  for (std::size_t i = 0; i < k; ++i) removed[order[i]] = true;
  std::vector<Point3> kept;
  kept.reserve(n - k);
  for (std::size_t i = 0; i < n; ++i) {
    if (!removed[i]) kept.push_back(cloud[i]);
  }
  return PointCloud(std::move(kept));
}

PointCloud corrupt_cloud(const PointCloud& cloud, const CorruptionSpec& spec) {
  if (cloud.empty()) throw GeometryError("cannot corrupt an empty cloud");
  missing_count(cloud.size(), spec.missing_ratio);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  return corrupt_cloud_around(cloud, pick(rng), spec.missing_ratio);
}

// ---------------------------------------------------------------------------

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

namespace {
constexpr std::uint32_t kLeafSize = 8;
}

KdTree::KdTree(std::span<const Point3> points) : points_(points) {
  if (points.empty()) throw GeometryError("k-d tree over an empty point set");
  order_.resize(points.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(points.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Point3 lo = points_[order_[begin]];
  Point3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  Point3 extent = hi - lo;
  Eigen::Index axis = 0;
  extent.maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].axis = static_cast<std::uint8_t>(axis);
  nodes_[id].split = split;
  return id;
}

void KdTree::search(std::int32_t node_id, const Point3& query, Hit& best) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d = squared_distance(query, points_[idx]);
      if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) best = {idx, d};
    }
    return;
  }
  // Left subtree holds coordinates <= split, right subtree >= split.
  const double diff = query[node.axis] - node.split;
  const std::int32_t near = diff <= 0.0 ? node.left : node.right;
  const std::int32_t far = diff <= 0.0 ? node.right : node.left;
  search(near, query, best);
  // Equal distances must still be visited so that the lowest index wins.
  if (diff * diff <= best.squared_distance) search(far, query, best);
}

KdTree::Hit KdTree::nearest(const Point3& query) const {
  Hit best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

double ChamferMatches::total() const {
  double forward_sum = 0.0;
  for (double d : forward_sq) forward_sum += d;
  double backward_sum = 0.0;
  for (double d : backward_sq) backward_sum += d;
  return forward_sum + backward_sum;
}

namespace {

void check_nonempty(std::span<const Point3> a, std::span<const Point3> b) {
  if (a.empty() || b.empty()) throw GeometryError("chamfer distance of an empty cloud");
}

void match_direction(std::span<const Point3> from, std::span<const Point3> to, std::vector<std::size_t>& idx,
                     std::vector<double>& sq) {
  const KdTree tree(to);
  idx.resize(from.size());
  sq.resize(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto hit = tree.nearest(from[i]);
    idx[i] = hit.index;
    sq[i] = hit.squared_distance;
  }
}

void match_direction_brute(std::span<const Point3> from, std::span<const Point3> to,
                           std::vector<std::size_t>& idx, std::vector<double>& sq) {
  idx.resize(from.size());
  sq.resize(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    std::size_t best = 0;
    double best_d = squared_distance(from[i], to[0]);
    for (std::size_t j = 1; j < to.size(); ++j) {
      const double d = squared_distance(from[i], to[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    idx[i] = best;
    sq[i] = best_d;
  }
}

// Vertical scan: the outer loop walks target points, the inner loop updates
// every query's running minimum. Same arithmetic as squared_distance, and
// strict < keeps the lowest target index on ties.
void match_direction_scan(std::span<const Point3> from, std::span<const Point3> to, std::vector<std::size_t>& idx,
                          std::vector<double>& sq) {
  const std::size_t n = from.size();
  std::vector<double> fx(n), fy(n), fz(n);
  for (std::size_t i = 0; i < n; ++i) {
    fx[i] = from[i].x();
    fy[i] = from[i].y();
    fz[i] = from[i].z();
  }
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> arg(n, 0);
  for (std::size_t j = 0; j < to.size(); ++j) {
    const double tx = to[j].x(), ty = to[j].y(), tz = to[j].z();
    const auto jj = static_cast<std::int64_t>(j);
    double* __restrict b = best.data();
    std::int64_t* __restrict a = arg.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = fx[i] - tx;
      const double dy = fy[i] - ty;
      const double dz = fz[i] - tz;
      const double d = dx * dx + dy * dy + dz * dz;
      const bool lt = d < b[i];
      b[i] = lt ? d : b[i];
      a[i] = lt ? jj : a[i];
    }
  }
  idx.assign(arg.begin(), arg.end());
  sq = std::move(best);
}

}  // namespace

ChamferMatches chamfer_matches_scan(std::span<const Point3> a, std::span<const Point3> b) {
  check_nonempty(a, b);
  ChamferMatches m;
  match_direction_scan(a, b, m.forward, m.forward_sq);
  match_direction_scan(b, a, m.backward, m.backward_sq);
  return m;
}

ChamferMatches chamfer_matches(std::span<const Point3> a, std::span<const Point3> b) {
  check_nonempty(a, b);
  ChamferMatches m;
  match_direction(a, b, m.forward, m.forward_sq);
  match_direction(b, a, m.backward, m.backward_sq);
  return m;
}

ChamferMatches chamfer_matches_brute_force(std::span<const Point3> a, std::span<const Point3> b) {
  check_nonempty(a, b);
  ChamferMatches m;
  match_direction_brute(a, b, m.forward, m.forward_sq);
  match_direction_brute(b, a, m.backward, m.backward_sq);
  return m;
}

double chamfer_distance(const PointCloud& p1, const PointCloud& p2) {
  return chamfer_matches(p1.points(), p2.points()).total();
}

double chamfer_distance_brute_force(const PointCloud& p1, const PointCloud& p2) {
  return chamfer_matches_brute_force(p1.points(), p2.points()).total();
}

double chamfer_normalized(const PointCloud& p1, const PointCloud& p2) {
  return chamfer_distance(p1, p2) / static_cast<double>(p1.size() + p2.size());
}

double chamfer_with_gradient(std::span<const Point3> target, std::span<const Point3> predicted,
                             std::span<Point3> grad_predicted) {
  if (grad_predicted.size() != predicted.size()) throw GeometryError("gradient buffer size mismatch");
  const ChamferMatches m = chamfer_matches_scan(target, predicted);
  for (auto& g : grad_predicted) g.setZero();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::size_t j = m.forward[i];
    grad_predicted[j] += 2.0 * (predicted[j] - target[i]);
  }
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    grad_predicted[j] += 2.0 * (predicted[j] - target[m.backward[j]]);
  }
  return m.total();
}

// ---------------------------------------------------------------------------

std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 48);
  char line[96];
  for (const auto& p : cloud.points()) {
    char* cur = line;
    for (int k = 0; k < 3; ++k) {
      cur = std::to_chars(cur, line + sizeof line, p[k]).ptr;
      *cur++ = k < 2 ? ' ' : '\n';
    }
    out.append(line, static_cast<std::size_t>(cur - line));
  }
  return out;
}

PointCloud parse_xyz(std::string_view text) {
  std::vector<Point3> points;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    Point3 p;
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    for (int k = 0; k < 3; ++k) {
      while (cur < end && (*cur == ' ' || *cur == '\t')) ++cur;
      const auto [ptr, ec] = std::from_chars(cur, end, p[k]);
      if (ec != std::errc{}) {
        throw GeometryError("malformed .xyz line " + std::to_string(line_no) + ": '" + std::string(line) + "'");
      }
      cur = ptr;
    }
    while (cur < end && (*cur == ' ' || *cur == '\t')) ++cur;
    if (cur != end) {
      throw GeometryError("malformed .xyz line " + std::to_string(line_no) + ": '" + std::string(line) + "'");
    }
    points.push_back(p);
  }
  return PointCloud(std::move(points));
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw GeometryError("cannot open '" + path.string() + "' for writing");
  const std::string text = format_xyz(cloud);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw GeometryError("failed writing '" + path.string() + "'");
}

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GeometryError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_xyz(buf.str());
}

}  // namespace rlgan
