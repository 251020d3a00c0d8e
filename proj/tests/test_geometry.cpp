#include "rlgan/geometry.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>

using namespace rlgan;

namespace {

// Recorded from the shape sampler; a change means the sampler changed.
constexpr double kTableChairSeed42 = 0.039379623195738941;

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = Point3(u(rng), u(rng), u(rng));
  return PointCloud(std::move(pts));
}

PointCloud cloud(std::initializer_list<Point3> pts) { return PointCloud(std::vector<Point3>(pts)); }

// Independent double loop with no shared code path.
double naive_chamfer(const PointCloud& a, const PointCloud& b) {
  double fwd = 0.0, bwd = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); ++j) best = std::min(best, (a[i] - b[j]).squaredNorm());
    fwd += best;
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size(); ++i) best = std::min(best, (a[i] - b[j]).squaredNorm());
    bwd += best;
  }
  return fwd + bwd;
}

}  // namespace

TEST(PointCloud, RejectsNonFinite) {
  EXPECT_THROW(cloud({Point3(0, 0, 0), Point3(std::nan(""), 0, 0)}), GeometryError);
  EXPECT_THROW(cloud({Point3(std::numeric_limits<double>::infinity(), 0, 0)}), GeometryError);
}

TEST(Normalize, CubeCorners) {
  std::vector<Point3> pts;
  for (int x : {0, 2})
    for (int y : {0, 2})
      for (int z : {0, 2}) pts.emplace_back(x, y, z);
  const PointCloud n = normalize_cloud(PointCloud(pts));
  const double c = 1.0 / (2.0 * std::sqrt(3.0));
  EXPECT_NEAR(n[7].x(), c, 1e-12);
  EXPECT_NEAR(n[7].y(), c, 1e-12);
  EXPECT_NEAR(n[7].z(), c, 1e-12);
  EXPECT_NEAR(n[7].x(), 0.28868, 1e-5);
  EXPECT_NEAR(n[0].x(), -c, 1e-12);
  EXPECT_NEAR(bounding_box(n).diagonal(), 1.0, 1e-12);
}

TEST(Normalize, Idempotent) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const PointCloud once = normalize_cloud(random_cloud(rng, 64, 5.0));
    const PointCloud twice = normalize_cloud(once);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_LE((once[i] - twice[i]).norm(), 1e-9);
  }
}

TEST(Normalize, CenterAndDiagonalInvariant) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const PointCloud n = normalize_cloud(random_cloud(rng, 40, 3.0));
    const BoundingBox box = bounding_box(n);
    EXPECT_LE(box.center().norm(), 1e-12);
    EXPECT_NEAR(box.diagonal(), 1.0, 1e-6);
  }
}

TEST(Normalize, DegenerateInputs) {
  EXPECT_THROW(normalize_cloud(cloud({Point3(1, 2, 3), Point3(1, 2, 3), Point3(1, 2, 3)})), GeometryError);
  EXPECT_THROW(normalize_cloud(cloud({Point3(1, 2, 3)})), GeometryError);
}

TEST(SampleShape, CountAndNormalization) {
  const PointCloud t = sample_shape(ShapeCategory::table, 512, 42);
  EXPECT_EQ(t.size(), 512u);
  EXPECT_NEAR(bounding_box(t).diagonal(), 1.0, 1e-6);
  for (ShapeCategory c : kAllCategories) {
    const PointCloud s = sample_shape(c, 100, 7);
    EXPECT_EQ(s.size(), 100u);
    EXPECT_NEAR(bounding_box(s).diagonal(), 1.0, 1e-6);
  }
}

TEST(SampleShape, Deterministic) {
  for (ShapeCategory c : kAllCategories) EXPECT_EQ(sample_shape(c, 256, 99), sample_shape(c, 256, 99));
  EXPECT_FALSE(sample_shape(ShapeCategory::car, 256, 1) == sample_shape(ShapeCategory::car, 256, 2));
}

TEST(SampleShape, CategoriesDiffer) {
  const double d = chamfer_normalized(sample_shape(ShapeCategory::table, 512, 42),
                                      sample_shape(ShapeCategory::chair, 512, 42));
  EXPECT_GT(d, 0.0);
  EXPECT_NEAR(d, kTableChairSeed42, 1e-9);
}

TEST(SampleShape, RejectsTooFewPoints) {
  EXPECT_THROW(sample_shape(ShapeCategory::table, 15, 1), GeometryError);
}

TEST(Category, NamesRoundTrip) {
  for (ShapeCategory c : kAllCategories) EXPECT_EQ(parse_category(category_name(c)), c);
  EXPECT_THROW(parse_category("sofa"), GeometryError);
}

// ---------------------------------------------------------------------------

TEST(Corrupt, SizeFormula) {
  const PointCloud c = sample_shape(ShapeCategory::airplane, 2048, 5);
  EXPECT_EQ(corrupt_cloud(c, {0.7, 1}).size(), 614u);
  EXPECT_EQ(missing_count(2048, 0.7), 1434u);
}

TEST(Corrupt, SizeFormulaRandomized) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> n_dist(2, 300);
  std::uniform_real_distribution<double> m_dist(0.001, 0.999);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = n_dist(rng);
    const double m = m_dist(rng);
    const auto k = static_cast<std::size_t>(std::llround(m * static_cast<double>(n)));
    const PointCloud c = random_cloud(rng, n);
    if (k >= n) {
      EXPECT_THROW(corrupt_cloud(c, {m, rng()}), GeometryError);
      continue;
    }
    EXPECT_EQ(corrupt_cloud(c, {m, rng()}).size(), n - k);
  }
}

TEST(Corrupt, TinyRatioIsIdentity) {
  const PointCloud c = sample_shape(ShapeCategory::chair, 100, 3);
  EXPECT_EQ(corrupt_cloud(c, {1e-4, 9}), c);
}

TEST(Corrupt, ColinearHandExample) {
  const PointCloud c = cloud({Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0), Point3(3, 0, 0)});
  const PointCloud out = corrupt_cloud_around(c, 0, 0.5);
  EXPECT_EQ(out, cloud({Point3(2, 0, 0), Point3(3, 0, 0)}));
}

TEST(Corrupt, TiesBrokenByIndex) {
  // Points 1 and 2 are equidistant from the centre; the lower index goes first.
  const PointCloud c = cloud({Point3(0, 0, 0), Point3(1, 0, 0), Point3(-1, 0, 0), Point3(5, 0, 0)});
  EXPECT_EQ(corrupt_cloud_around(c, 0, 0.5), cloud({Point3(-1, 0, 0), Point3(5, 0, 0)}));
}

TEST(Corrupt, KeepsOrderAndIsSubset) {
  const PointCloud c = sample_shape(ShapeCategory::car, 300, 8);
  const PointCloud out = corrupt_cloud(c, {0.4, 17});
  std::size_t j = 0;
  for (std::size_t i = 0; i < c.size() && j < out.size(); ++i) {
    if (c[i] == out[j]) ++j;
  }
  EXPECT_EQ(j, out.size());
}

TEST(Corrupt, RemovesNearestToCentre) {
  std::mt19937_64 rng(21);
  const PointCloud c = random_cloud(rng, 200);
  const std::size_t center = 37;
  const PointCloud out = corrupt_cloud_around(c, center, 0.3);
  double kept_min = std::numeric_limits<double>::infinity();
  for (const Point3& p : out.points()) kept_min = std::min(kept_min, (p - c[center]).squaredNorm());
  std::size_t closer = 0;
  for (const Point3& p : c.points()) closer += (p - c[center]).squaredNorm() < kept_min ? 1 : 0;
  EXPECT_EQ(closer, missing_count(200, 0.3));
}

TEST(Corrupt, OutOfRangeRatio) {
  const PointCloud c = sample_shape(ShapeCategory::table, 64, 1);
  for (double m : {0.0, 1.0, -0.1, 1.5, std::nan("")}) EXPECT_THROW(corrupt_cloud(c, {m, 1}), GeometryError);
}

TEST(Corrupt, Deterministic) {
  const PointCloud c = sample_shape(ShapeCategory::table, 256, 1);
  EXPECT_EQ(corrupt_cloud(c, {0.5, 77}), corrupt_cloud(c, {0.5, 77}));
}

// ---------------------------------------------------------------------------

TEST(Chamfer, HandCases) {
  const PointCloud a = cloud({Point3(0, 0, 0)});
  const PointCloud b = cloud({Point3(1, 0, 0)});
  const PointCloud c = cloud({Point3(0, 0, 0), Point3(2, 0, 0)});
  EXPECT_EQ(chamfer_distance(a, a), 0.0);
  EXPECT_EQ(chamfer_distance(a, b), 2.0);
  EXPECT_EQ(chamfer_distance(c, b), 3.0);
  EXPECT_EQ(chamfer_distance_brute_force(c, b), 3.0);
  EXPECT_EQ(chamfer_normalized(a, b), 1.0);
  EXPECT_EQ(chamfer_normalized(c, c), 0.0);
}

TEST(Chamfer, EmptyCloud) {
  const PointCloud a = cloud({Point3(0, 0, 0)});
  EXPECT_THROW(chamfer_distance(a, PointCloud{}), GeometryError);
  EXPECT_THROW(chamfer_distance_brute_force(PointCloud{}, a), GeometryError);
  EXPECT_THROW(chamfer_normalized(PointCloud{}, PointCloud{}), GeometryError);
}

TEST(Chamfer, RoutesAgreeWithOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> n_dist(1, 512);
  for (int t = 0; t < 100; ++t) {
    const PointCloud a = random_cloud(rng, n_dist(rng));
    const PointCloud b = random_cloud(rng, n_dist(rng));
    const double oracle = naive_chamfer(a, b);
    EXPECT_NEAR(chamfer_distance(a, b), oracle, 1e-12);
    EXPECT_NEAR(chamfer_distance_brute_force(a, b), oracle, 1e-12);
    EXPECT_NEAR(chamfer_matches_scan(a.points(), b.points()).total(), oracle, 1e-12);
  }
}

TEST(Chamfer, MatchesAgreeIndexForIndex) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    // Integer grid coordinates create many exact ties.
    std::uniform_int_distribution<int> g(-3, 3);
    std::vector<Point3> pa(120), pb(90);
    for (auto& p : pa) p = Point3(g(rng), g(rng), g(rng));
    for (auto& p : pb) p = Point3(g(rng), g(rng), g(rng));
    const auto tree = chamfer_matches(pa, pb);
    const auto brute = chamfer_matches_brute_force(pa, pb);
    const auto scan = chamfer_matches_scan(pa, pb);
    EXPECT_EQ(tree.forward, brute.forward);
    EXPECT_EQ(tree.backward, brute.backward);
    EXPECT_EQ(scan.forward, brute.forward);
    EXPECT_EQ(scan.backward, brute.backward);
  }
}

TEST(Chamfer, SymmetricBitExact) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const PointCloud a = random_cloud(rng, 100);
    const PointCloud b = random_cloud(rng, 77);
    EXPECT_EQ(chamfer_distance(a, b), chamfer_distance(b, a));
  }
}

TEST(Chamfer, ZeroIffSameSet) {
  std::mt19937_64 rng(8);
  const PointCloud a = random_cloud(rng, 50);
  std::vector<Point3> shuffled = a.points();
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.push_back(shuffled.front());  // duplicates do not matter
  EXPECT_EQ(chamfer_distance(a, PointCloud(shuffled)), 0.0);
  shuffled.back() += Point3(1e-3, 0, 0);
  EXPECT_GT(chamfer_distance(a, PointCloud(shuffled)), 0.0);
}

TEST(Chamfer, KdTreeNearestMatchesScan) {
  std::mt19937_64 rng(9);
  const PointCloud a = random_cloud(rng, 333);
  const KdTree tree(a.points());
  for (int q = 0; q < 200; ++q) {
    const Point3 p = random_cloud(rng, 1)[0];
    std::size_t best = 0;
    for (std::size_t i = 1; i < a.size(); ++i) {
      if (squared_distance(p, a[i]) < squared_distance(p, a[best])) best = i;
    }
    const auto hit = tree.nearest(p);
    EXPECT_EQ(hit.index, best);
    EXPECT_EQ(hit.squared_distance, squared_distance(p, a[best]));
  }
}

TEST(Chamfer, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const PointCloud target = random_cloud(rng, 40);
  PointCloud pred = random_cloud(rng, 30);
  std::vector<Point3> grad(pred.size());
  chamfer_with_gradient(target.points(), pred.points(), grad);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      std::vector<Point3> plus = pred.points(), minus = pred.points();
      plus[i][k] += h;
      minus[i][k] -= h;
      const double num = (naive_chamfer(target, PointCloud(plus)) - naive_chamfer(target, PointCloud(minus))) / (2 * h);
      worst = std::max(worst, std::abs(num - grad[i][k]) / std::max({std::abs(num), std::abs(grad[i][k]), 1e-6}));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

// ---------------------------------------------------------------------------

TEST(Xyz, FormatAndParse) {
  const PointCloud c = cloud({Point3(1, -2.5, 0.125), Point3(1.0 / 3.0, 0, 1e-10)});
  const std::string text = format_xyz(c);
  EXPECT_EQ(text, "1 -2.5 0.125\n0.3333333333333333 0 1e-10\n");
  EXPECT_EQ(parse_xyz(text), c);
}

TEST(Xyz, TolerantOfCrlfAndBlankLines) {
  const PointCloud c = parse_xyz("1 2 3\r\n\n4 5 6\r\n");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[1], Point3(4, 5, 6));
}

TEST(Xyz, MalformedLines) {
  EXPECT_THROW(parse_xyz("1 2\n"), GeometryError);
  EXPECT_THROW(parse_xyz("1 2 x\n"), GeometryError);
  EXPECT_THROW(parse_xyz("1 2 3 4\n"), GeometryError);
  EXPECT_THROW(parse_xyz("nan 0 0\n"), GeometryError);
}

TEST(Xyz, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "rlgan_test_roundtrip.xyz";
  const PointCloud c = sample_shape(ShapeCategory::car, 64, 2);
  write_xyz(path, c);
  const PointCloud back = read_xyz(path);
  EXPECT_EQ(back, c);
  std::filesystem::remove(path);
  EXPECT_THROW(read_xyz(path), GeometryError);
}
