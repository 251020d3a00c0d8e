#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rlgan {

using Point3 = Eigen::Vector3d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered list of 3D points. Coordinates are always finite.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point3& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Point3>& points() const { return points_; }

  bool operator==(const PointCloud& other) const;

 private:
  std::vector<Point3> points_;
};

/// Translate so the bounding-box centre is the origin and scale so the
/// bounding-box diagonal has unit length.
PointCloud normalize_cloud(const PointCloud& cloud);

struct BoundingBox {
  Point3 min;
  Point3 max;
  double diagonal() const { return (max - min).norm(); }
  Point3 center() const { return 0.5 * (min + max); }
};
BoundingBox bounding_box(const PointCloud& cloud);

// ---------------------------------------------------------------------------
// Synthetic shape categories

enum class ShapeCategory : std::uint8_t { table = 0, chair = 1, airplane = 2, car = 3 };

inline constexpr std::size_t kNumCategories = 4;
inline constexpr std::array<ShapeCategory, kNumCategories> kAllCategories{
    ShapeCategory::table, ShapeCategory::chair, ShapeCategory::airplane, ShapeCategory::car};

std::string_view category_name(ShapeCategory category);
ShapeCategory parse_category(std::string_view name);

/// Samples `n_points` points uniformly by area over the surface of a randomly
/// dimensioned member of `category`. The result is normalized.
PointCloud sample_shape(ShapeCategory category, std::size_t n_points, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corruption

struct CorruptionSpec {
  double missing_ratio = 0.5;
  std::uint64_t seed = 0;
};

/// Number of points removed from an N-point cloud at ratio m: round(m*N).
std::size_t missing_count(std::size_t n, double missing_ratio);

/// Removes the round(m*N) points nearest to `cloud[center_index]` (ties by
/// lower index). Survivors keep their input order.
PointCloud corrupt_cloud_around(const PointCloud& cloud, std::size_t center_index,
                                double missing_ratio);

/// As corrupt_cloud_around, with the centre drawn uniformly from the cloud.
PointCloud corrupt_cloud(const PointCloud& cloud, const CorruptionSpec& spec);

// ---------------------------------------------------------------------------
// Chamfer distance

double squared_distance(const Point3& a, const Point3& b);

/// Static k-d tree answering exact nearest-neighbour queries. Among points at
/// equal distance the lowest index wins, matching a linear scan.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> points);

  struct Hit {
    std::size_t index;
    double squared_distance;
  };
  Hit nearest(const Point3& query) const;

 private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint8_t axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Point3& query, Hit& best) const;

  std::span<const Point3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Per-point nearest-neighbour matches in both directions. `forward[i]` is the
/// index in `b` nearest to `a[i]`; `backward[j]` the index in `a` nearest to `b[j]`.
struct ChamferMatches {
  std::vector<std::size_t> forward;
  std::vector<double> forward_sq;
  std::vector<std::size_t> backward;
  std::vector<double> backward_sq;

  /// Sum of both directions, accumulated in index order.
  double total() const;
};

ChamferMatches chamfer_matches(std::span<const Point3> a, std::span<const Point3> b);
ChamferMatches chamfer_matches_brute_force(std::span<const Point3> a, std::span<const Point3> b);
/// Exhaustive search laid out for SIMD; faster than the tree for clouds of a
/// few thousand points. Results are identical to the other two routes.
ChamferMatches chamfer_matches_scan(std::span<const Point3> a, std::span<const Point3> b);

/// Sum over both directions of squared nearest-neighbour distances
/// (no averaging, no square root). Uses k-d tree search.
double chamfer_distance(const PointCloud& p1, const PointCloud& p2);
/// Reference O(|P1||P2|) implementation of chamfer_distance.
double chamfer_distance_brute_force(const PointCloud& p1, const PointCloud& p2);
/// chamfer_distance divided by |P1| + |P2|.
double chamfer_normalized(const PointCloud& p1, const PointCloud& p2);

/// Chamfer sum between `target` and `predicted` together with its gradient
/// with respect to the predicted coordinates. The nearest-neighbour pairing is
/// treated as constant (subgradient at ties).
double chamfer_with_gradient(std::span<const Point3> target, std::span<const Point3> predicted,
                             std::span<Point3> grad_predicted);

// ---------------------------------------------------------------------------
// .xyz files: one "x y z" line per point, shortest round-trip decimal form.

std::string format_xyz(const PointCloud& cloud);
PointCloud parse_xyz(std::string_view text);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_xyz(const std::filesystem::path& path);

}  // namespace rlgan
