#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "sigil/scoring.hpp"
#include "support.hpp"

namespace sigil {
namespace {

Vector random_vector(Eigen::Index n, std::mt19937_64& rng) { return testing::random_matrix(n, 1, rng).col(0); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Score1, HandComputedResidual) {
  Matrix x(2, 2), xhat = Matrix::Zero(2, 2);
  x << 3, 4, 0, 0;
  const Vector s = reconstruction_scores(std::vector<Matrix>{x}, std::vector<Matrix>{xhat});
  EXPECT_DOUBLE_EQ(s(0), 25.0);
  EXPECT_DOUBLE_EQ(s(1), 0.0);
  EXPECT_TRUE(reconstruction_scores(std::vector<Matrix>{x}, std::vector<Matrix>{x}).isZero());
}

TEST(Score1, SumsToFrobeniusAcrossViews) {
  std::mt19937_64 rng(1);
  const Matrix x1 = testing::random_matrix(9, 3, rng), h1 = testing::random_matrix(9, 3, rng);
  const Matrix x2 = testing::random_matrix(9, 5, rng), h2 = testing::random_matrix(9, 5, rng);
  const Vector one = reconstruction_scores(std::vector<Matrix>{x1}, std::vector<Matrix>{h1});
  EXPECT_NEAR(one.sum(), (x1 - h1).squaredNorm(), 1e-12);
  const Vector both = reconstruction_scores(std::vector<Matrix>{x1, x2}, std::vector<Matrix>{h1, h2});
  EXPECT_LT((both - one - (x2 - h2).rowwise().squaredNorm()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(reconstruction_scores(std::vector<Matrix>{x1}, std::vector<Matrix>{h2}), ShapeError);
}

TEST(Score2, ScalarHandExample) {
  Matrix z(2, 1);
  z << 0, 2;
  MahalanobisOptions options;
  options.ridge = 0.0;
  const auto result = mahalanobis_scores(std::vector<Matrix>{z}, std::vector<std::size_t>{0, 0}, options);
  EXPECT_DOUBLE_EQ(result.scores(0), 0.5);
  EXPECT_DOUBLE_EQ(result.scores(1), 0.5);
  EXPECT_TRUE(result.warnings.empty());
}

TEST(Score2, ExplicitInverseOracle) {
  std::mt19937_64 rng(4);
  const Matrix z1 = testing::random_matrix(30, 3, rng), z2 = testing::random_matrix(30, 2, rng);
  std::vector<std::size_t> clusters(30);
  for (std::size_t i = 0; i < 30; ++i) clusters[i] = i % 3;
  MahalanobisOptions options;
  options.ridge = 0.01;
  const std::vector<Matrix> views{z1, z2};
  const Vector scores = mahalanobis_scores(views, clusters, options).scores;
  // Oracle: explicit means, unbiased covariances, inverse, min over clusters of the view sum.
  for (Eigen::Index i = 0; i < 30; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < 3; ++c) {
      double total = 0.0;
      for (const Matrix& z : views) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index j = 0; j < 30; ++j)
          if (clusters[static_cast<std::size_t>(j)] == c) members.push_back(j);
        Vector mu = Vector::Zero(z.cols());
        for (auto j : members) mu += z.row(j).transpose();
        mu /= static_cast<double>(members.size());
        Matrix cov = Matrix::Zero(z.cols(), z.cols());
        for (auto j : members) cov += (z.row(j).transpose() - mu) * (z.row(j).transpose() - mu).transpose();
        cov /= static_cast<double>(members.size() - 1);
        cov += 0.01 * Matrix::Identity(z.cols(), z.cols());
        const Vector dev = z.row(i).transpose() - mu;
        total += dev.dot(cov.inverse() * dev);
      }
      best = std::min(best, total);
    }
    EXPECT_NEAR(scores(i), best, 1e-9 * std::max(1.0, best));
  }
}

TEST(Score2, IdentityFallbackIsSquaredEuclidean) {
  // Every cluster but one is a singleton; singletons use identity covariance.
  Matrix z(4, 2);
  z << 0, 0, 1, 1, 5, 5, 3, -1;
  const std::vector<std::size_t> clusters{0, 0, 1, 2};
  MahalanobisOptions options;
  options.ridge = 0.0;
  const auto result = mahalanobis_scores(std::vector<Matrix>{z}, clusters, options);
  EXPECT_EQ(result.warnings.size(), 2u);
  EXPECT_NE(result.warnings[0].find("cluster 1"), std::string::npos);
  EXPECT_EQ(result.scores(2), 0.0);
  EXPECT_EQ(result.scores(3), 0.0);
  // Cluster 0 covariance is singular (two points on a line): falls back too.
  const Vector mean(Vector::Constant(2, 0.5));
  EXPECT_NEAR(result.scores(0), (z.row(0).transpose() - mean).squaredNorm(), 1e-12);
}

TEST(Score2, NodeAtMeanScoresZeroAndScoresNonNegative) {
  std::mt19937_64 rng(6);
  Matrix z = testing::random_matrix(11, 2, rng);
  std::vector<std::size_t> clusters(11, 0);
  for (std::size_t i = 5; i < 11; ++i) clusters[i] = 1;
  // Put node 10 at the mean of cluster 1 while keeping that mean fixed.
  const Vector mean = z.middleRows(5, 5).colwise().mean().transpose();
  z.row(10) = mean.transpose();
  const Vector s = mahalanobis_scores(std::vector<Matrix>{z}, clusters).scores;
  EXPECT_NEAR(s(10), 0.0, 1e-20);
  EXPECT_TRUE((s.array() >= 0.0).all());
}

TEST(Score2, ClusterRelabelingInvariant) {
  std::mt19937_64 rng(7);
  const Matrix z = testing::random_matrix(24, 3, rng);
  std::vector<std::size_t> clusters(24), relabeled(24);
  const std::size_t map[4] = {2, 3, 0, 1};
  for (std::size_t i = 0; i < 24; ++i) {
    clusters[i] = (i * 7) % 4;
    relabeled[i] = map[clusters[i]];
  }
  const Vector a = mahalanobis_scores(std::vector<Matrix>{z, z}, clusters).scores;
  const Vector b = mahalanobis_scores(std::vector<Matrix>{z, z}, relabeled).scores;
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(Score2, MinPlacementVariant) {
  // Node 4 is close to cluster 0 in view 1 and to cluster 1 in view 2.
  Matrix z1(5, 1), z2(5, 1);
  z1 << -1, 1, 9, 11, 0;
  z2 << 9, 11, -1, 1, 0;
  const std::vector<std::size_t> clusters{0, 0, 1, 1, 0};
  MahalanobisOptions options;
  options.ridge = 0.0;
  const std::vector<Matrix> views{z1, z2};
  const Vector joint = mahalanobis_scores(views, clusters, options).scores;
  options.min_per_view = true;
  const Vector split = mahalanobis_scores(views, clusters, options).scores;
  EXPECT_TRUE((split.array() <= joint.array() + 1e-12).all());
  // Cluster 0: view 1 mean 0 var 1; view 2 mean 20/3 var ((7/3)^2 + (13/3)^2 + (20/3)^2) / 2.
  const double var0 = (49.0 + 169.0 + 400.0) / 9.0 / 2.0;
  EXPECT_NEAR(joint(4), (400.0 / 9.0) / var0, 1e-12);
  EXPECT_NEAR(split(4), 0.0, 1e-12);
}

TEST(Score2, Errors) {
  const Matrix z = Matrix::Zero(3, 2);
  EXPECT_THROW(mahalanobis_scores(std::vector<Matrix>{z}, std::vector<std::size_t>{0, 1, 2}), InvalidArgument);
  EXPECT_THROW(mahalanobis_scores(std::vector<Matrix>{z}, std::vector<std::size_t>{0, 0}), ShapeError);
}

TEST(Combine, DegenerateMixesFollowSingleScore) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Vector s1 = random_vector(40, rng), s2 = random_vector(40, rng);
    s1(3) = s1(7);  // a tie
    for (ScoreNormalizer norm : {ScoreNormalizer::zscore, ScoreNormalizer::minmax, ScoreNormalizer::none}) {
      EXPECT_EQ(combine_scores(s1, s2, 0.0, norm).ranking, rank_descending(s1));
      EXPECT_EQ(combine_scores(s1, s2, 1.0, norm).ranking, rank_descending(s2));
    }
  }
}

TEST(Combine, MixtureFormulaAndNormalizers) {
  Vector s1(4), s2(4);
  s1 << 1, 2, 3, 4;
  s2 << 10, 0, 0, 30;
  const ScoreReport raw = combine_scores(s1, s2, 0.5, ScoreNormalizer::none);
  EXPECT_DOUBLE_EQ(raw.combined(0), 5.5);
  EXPECT_DOUBLE_EQ(raw.combined(3), 17.0);
  const ScoreReport mm = combine_scores(s1, s2, 0.5, ScoreNormalizer::minmax);
  EXPECT_DOUBLE_EQ(mm.combined(3), 1.0);
  EXPECT_DOUBLE_EQ(mm.combined(1), 0.5 * (1.0 / 3.0));
  const Vector z = normalize_scores(s1, ScoreNormalizer::zscore);
  EXPECT_NEAR(z.mean(), 0.0, 1e-15);
  EXPECT_NEAR(z.squaredNorm() / 4.0, 1.0, 1e-14);
  EXPECT_TRUE(normalize_scores(Vector::Constant(5, 2.0), ScoreNormalizer::zscore).isZero());
  EXPECT_THROW(combine_scores(s1, s2, 1.5), InvalidArgument);
  EXPECT_THROW(combine_scores(s1, Vector::Zero(3), 0.5), ShapeError);
}

TEST(Ranking, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    Vector s = random_vector(50, rng);
    s(10) = s(20);
    const auto base = rank_descending(s);
    EXPECT_EQ(rank_descending((s.array() * 3.0 + 1.0).matrix()), base);
    EXPECT_EQ(rank_descending(s.array().exp().matrix()), base);
    EXPECT_EQ(rank_descending(s.array().unaryExpr([](double v) { return std::atan(v); }).matrix()), base);
  }
  Vector ties = Vector::Zero(4);
  EXPECT_EQ(rank_descending(ties), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(ScoreGraph, EndToEndOnRandomModel) {
  const MultiViewGraph g = testing::random_graph(30, 2, 4, 3);
  const SigilModel model = initialize_model(ModelSpec{30, g.feature_dims(), 8, {3}, true}, 3);
  ScoreConfig config;
  config.beta = 0.5;
  const ScoreReport report = score_graph(model, g, config);
  EXPECT_EQ(report.size(), 30u);
  std::vector<std::size_t> sorted = report.ranking;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_LT((report.score1 - reconstruction_scores(g, model)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(report.cluster_assignment, hard_clusters(encode(model, g).composed));
  const auto ranks = report.ranks();
  EXPECT_EQ(ranks[report.ranking[0]], 1u);
}

TEST(ReportFile, RoundTrip) {
  std::mt19937_64 rng(12);
  ScoreReport report = combine_scores(random_vector(15, rng), random_vector(15, rng).cwiseAbs(), 0.3);
  report.cluster_assignment.assign(15, 1);
  report.warnings = {"cluster 2 view 0 has 1 member; using identity covariance"};
  const auto dir = testing::scratch_dir("scores");
  write_score_report(dir / "a.txt", report);
  const ScoreReport back = read_score_report(dir / "a.txt");
  EXPECT_EQ(back.ranking, report.ranking);
  EXPECT_EQ(back.cluster_assignment, report.cluster_assignment);
  EXPECT_EQ(back.warnings, report.warnings);
  EXPECT_EQ(back.beta, 0.3);
  EXPECT_LT((back.combined - report.combined).cwiseAbs().maxCoeff(), 1e-11);
  write_score_report(dir / "b.txt", back);
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
  const std::string text = slurp(dir / "a.txt");
  EXPECT_NE(text.find("index score1 score2 combined rank cluster"), std::string::npos);
}

TEST(ReportFile, RejectsCorruptRanks) {
  const auto dir = testing::scratch_dir("scores_bad");
  {
    std::ofstream out(dir / "bad.txt");
    out << "# beta 0 normalizer zscore\nindex score1 score2 combined rank cluster\n0 1 1 1 1 0\n1 2 2 2 1 0\n";
  }
  EXPECT_THROW(read_score_report(dir / "bad.txt"), IoError);
  EXPECT_THROW(read_score_report(dir / "missing.txt"), IoError);
}

}  // namespace
}  // namespace sigil
