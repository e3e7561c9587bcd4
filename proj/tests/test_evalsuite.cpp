#include <gtest/gtest.h>

#include <sstream>

#include "ctxvec/evalsuite.hpp"
#include "oracles.hpp"

using namespace ctxvec;

namespace {

Embeddings make_emb(const std::vector<std::vector<double>>& rows) {
  std::vector<std::string> words;
  Matrix<double> m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    words.push_back("w" + std::to_string(i));
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return Embeddings(words, std::move(m));
}

Embeddings random_emb(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows)
    for (auto& x : r) x = rng.normal();
  return make_emb(rows);
}

}  // namespace

TEST(Ranks, AverageTies) {
  std::vector<double> x{3, 1, 3, 2};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_EQ(average_ranks(x), oracle::brute_ranks(x));
}

TEST(Spearman, BruteForceOracle) {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rep % 2 ? double(rng.below(5)) : rng.normal();  // half the lists carry ties
      b[i] = rng.normal();
    }
    auto rho = spearman(a, b);
    if (!rho) continue;
    EXPECT_NEAR(*rho, oracle::brute_spearman(a, b), 1e-12);
  }
}

TEST(Spearman, NoVarianceIsNullopt) {
  std::vector<double> a{1, 1, 1}, b{1, 2, 3};
  EXPECT_FALSE(spearman(a, b).has_value());
}

TEST(Similarity, IdenticalAndReversedOrder) {
  // Embedding angles spread so cosines to w0 are strictly decreasing.
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({std::cos(0.3 * i), std::sin(0.3 * i)});
  auto emb = make_emb(rows);
  std::stringstream up, down;
  for (int i = 1; i < 6; ++i) {
    up << "w0\tw" << i << '\t' << 10 - i << '\n';
    down << "w0\tw" << i << '\t' << i << '\n';
  }
  up << "w0\tzzz\t3\n";
  auto r = spearman_eval(emb, SimilarityBenchmark::parse(up));
  EXPECT_NEAR(*r.rho, 1.0, 1e-12);
  EXPECT_NEAR(r.coverage, 5.0 / 6.0, 1e-12);
  EXPECT_EQ(r.evaluated, 5u);
  EXPECT_NEAR(*spearman_eval(emb, SimilarityBenchmark::parse(down)).rho, -1.0, 1e-12);
}

TEST(Similarity, FiftyRandomPairsMatchOracle) {
  Rng rng(2);
  auto emb = random_emb(30, 5, rng);
  std::stringstream ss;
  std::vector<double> model, gold;
  std::set<std::pair<int, int>> used;
  while (used.size() < 50) {
    int a = int(rng.below(30)), b = int(rng.below(30));
    if (a == b || used.count({std::min(a, b), std::max(a, b)})) continue;
    used.insert({std::min(a, b), std::max(a, b)});
    const double g = double(rng.below(10));
    ss << "w" << a << "\tw" << b << '\t' << g << '\n';
    model.push_back(cosine(emb.row(a), emb.row(b)));
    gold.push_back(g);
  }
  auto r = spearman_eval(emb, SimilarityBenchmark::parse(ss));
  EXPECT_NEAR(*r.rho, oracle::brute_spearman(model, gold), 1e-12);
}

TEST(Similarity, MonotoneTransformInvariance) {
  Rng rng(3);
  auto emb = random_emb(10, 4, rng);
  std::stringstream a, b;
  for (int i = 0; i < 9; ++i) {
    const double g = rng.normal();
    a << "w" << i << "\tw" << i + 1 << '\t' << g << '\n';
    b << "w" << i << "\tw" << i + 1 << '\t' << std::exp(3 * g) << '\n';
  }
  EXPECT_NEAR(*spearman_eval(emb, SimilarityBenchmark::parse(a)).rho,
              *spearman_eval(emb, SimilarityBenchmark::parse(b)).rho, 1e-12);
}

TEST(Similarity, NoOverlap) {
  Rng rng(4);
  auto emb = random_emb(3, 2, rng);
  std::stringstream ss("x\ty\t1\n");
  EXPECT_THROW(spearman_eval(emb, SimilarityBenchmark::parse(ss)), NoOverlap);
}

TEST(Similarity, MalformedLine) {
  std::stringstream ss("a\tb\n");
  EXPECT_THROW(SimilarityBenchmark::parse(ss), ParseError);
}

TEST(RankSum, DirectionAndSignificance) {
  std::vector<double> hi, lo;
  for (int i = 0; i < 30; ++i) {
    hi.push_back(100 + i);
    lo.push_back(i);
  }
  EXPECT_LT(rank_sum_greater(hi, lo).p_value, 1e-6);
  EXPECT_GT(rank_sum_greater(lo, hi).p_value, 0.99);
  const auto same = rank_sum_greater(hi, hi);
  EXPECT_NEAR(same.p_value, 0.5, 0.05);
}

TEST(RankSum, UStatisticMatchesPairCount) {
  Rng rng(5);
  std::vector<double> x(12), y(9);
  for (auto& v : x) v = double(rng.below(6));
  for (auto& v : y) v = double(rng.below(6));
  double u = 0;
  for (double a : x)
    for (double b : y) u += a > b ? 1.0 : a == b ? 0.5 : 0.0;
  EXPECT_DOUBLE_EQ(rank_sum_greater(x, y).u, u);
}

namespace {

FeatureNormDataset norms_from(const std::vector<std::vector<int>>& labels, const std::vector<std::string>& chars,
                              const std::vector<std::string>& cats) {
  std::stringstream n, c;
  n << "entity";
  for (auto& ch : chars) n << '\t' << ch;
  n << '\n';
  for (std::size_t e = 0; e < labels.size(); ++e) {
    n << "w" << e;
    for (int l : labels[e]) n << '\t' << l;
    n << '\n';
  }
  for (std::size_t i = 0; i < chars.size(); ++i) c << chars[i] << '\t' << cats[i] << '\n';
  return FeatureNormDataset::parse(n, c);
}

}  // namespace

TEST(FeatureNorms, SeparableGivesPerfectF1) {
  Rng rng(6);
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<int>> labels;
  for (int i = 0; i < 60; ++i) {
    std::vector<double> r{rng.normal(), rng.normal(), rng.normal()};
    r[0] += r[0] > 0 ? 1.0 : -1.0;  // margin around the boundary
    labels.push_back({r[0] > 0 ? 1 : 0});
    rows.push_back(r);
  }
  auto res = feature_norm_eval(make_emb(rows), norms_from(labels, {"pos0"}, {"shape"}));
  EXPECT_DOUBLE_EQ(res.characteristic_f1.at("pos0"), 1.0);
  EXPECT_DOUBLE_EQ(res.category_f1.at("shape"), 1.0);
  EXPECT_EQ(res.covered_entities, 60u);
}

TEST(FeatureNorms, RandomLabelsNearHalf) {
  Rng rng(7);
  auto emb = random_emb(100, 5, rng);
  double total = 0;
  const int sims = 10;
  for (int s = 0; s < sims; ++s) {
    std::vector<std::vector<int>> labels(100);
    std::vector<int> col(100);
    for (int i = 0; i < 100; ++i) col[i] = i % 2;
    rng.shuffle(col);
    for (int i = 0; i < 100; ++i) labels[i] = {col[i]};
    total += feature_norm_eval(emb, norms_from(labels, {"c"}, {"cat"}), 5, s + 1).category_f1.at("cat");
  }
  EXPECT_NEAR(total / sims, 0.5, 0.15);
}

TEST(FeatureNorms, AllPositiveSkipped) {
  Rng rng(8);
  auto emb = random_emb(20, 3, rng);
  std::vector<std::vector<int>> labels;
  for (int i = 0; i < 20; ++i) labels.push_back({1, i % 2});
  auto res = feature_norm_eval(emb, norms_from(labels, {"always", "half"}, {"a", "b"}));
  EXPECT_EQ(res.skipped, 1u);
  EXPECT_EQ(res.characteristic_f1.count("always"), 0u);
  std::vector<std::vector<int>> only_pos(20, std::vector<int>{1});
  EXPECT_THROW(feature_norm_eval(emb, norms_from(only_pos, {"x"}, {"a"})), EvalError);
}

TEST(FeatureNorms, StratifiedFoldsKeepBothClasses) {
  std::vector<int> labels(40);
  for (int i = 0; i < 40; ++i) labels[i] = i < 10;
  Rng rng(9);
  auto folds = stratified_folds(labels, 5, rng);
  for (std::size_t f = 0; f < 5; ++f) {
    int pos = 0, neg = 0;
    for (int i = 0; i < 40; ++i)
      if (folds[i] == f) (labels[i] ? pos : neg)++;
    EXPECT_EQ(pos, 2);
    EXPECT_EQ(neg, 6);
  }
  Rng a(3), b(3);
  EXPECT_EQ(stratified_folds(labels, 5, a), stratified_folds(labels, 5, b));
}

TEST(F1, HandComputed) {
  std::vector<int> t{1, 1, 0, 0, 1}, p{1, 0, 1, 0, 1};
  EXPECT_NEAR(f1_score(t, p), 2.0 * 2 / (2 * 2 + 1 + 1), 1e-12);
}

TEST(Concreteness, LinearTargetFitsWell) {
  Rng rng(10);
  auto emb = random_emb(120, 3, rng);
  std::stringstream ss;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    auto r = emb.row(i);
    ss << emb.words()[i] << '\t' << (2 * r[0] - r[1] + 0.5 * r[2] + 0.001 * rng.normal()) << '\n';
  }
  EXPECT_GT(concreteness_eval(emb, ConcretenessDataset::parse(ss)).r2, 0.99);
}

TEST(Concreteness, IndependentRatingsNoSignal) {
  Rng rng(11);
  auto emb = random_emb(150, 4, rng);
  std::stringstream ss;
  for (std::size_t i = 0; i < emb.size(); ++i) ss << emb.words()[i] << '\t' << rng.normal() << '\n';
  EXPECT_LE(concreteness_eval(emb, ConcretenessDataset::parse(ss)).r2, 0.05);
}

TEST(Concreteness, DuplicatePointsStaySolvable) {
  std::vector<std::vector<double>> rows;
  std::stringstream ss;
  for (int i = 0; i < 40; ++i) {
    rows.push_back({double(i % 4), 1.0});
    ss << "w" << i << '\t' << double(i % 4) << '\n';
  }
  auto r = concreteness_eval(make_emb(rows), ConcretenessDataset::parse(ss));
  EXPECT_TRUE(std::isfinite(r.r2));
  EXPECT_GT(r.r2, 0.9);
}

TEST(Pca, LineGivesDiagonal) {
  Eigen::MatrixXd x(5, 2);
  for (int i = 0; i < 5; ++i) x.row(i) << i, i;
  auto p = pca(x, 1);
  EXPECT_NEAR(p.components(0, 0), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(p.components(1, 0), std::sqrt(0.5), 1e-12);
}

TEST(Pca, PlantedRankThreeSubspace) {
  Rng rng(12);
  const int n = 80, dim = 10, r = 3;
  Eigen::MatrixXd A(n, r), B(r, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) A(i, j) = rng.normal();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < dim; ++j) B(i, j) = rng.normal();
  Eigen::MatrixXd x = A * B;
  x.rowwise() += Eigen::RowVectorXd::Constant(dim, 5.0);
  auto p = pca(x, 3);
  EXPECT_LT(oracle::max_principal_angle(B.transpose(), p.components), 1e-6);
  // reconstruction on the top-3 subspace is exact
  Eigen::MatrixXd rec = p.projected * p.components.transpose();
  rec.rowwise() += p.mean;
  EXPECT_LT((rec - x).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(pca(x, 11), ConfigError);
}

TEST(Sequential, ZeroVisualBlockEqualsTextPca) {
  Rng rng(13);
  auto text = random_emb(20, 4, rng);
  Embeddings visual({"nothing"}, Matrix<double>(1, 3));
  auto merged = sequential_baseline(text, visual, 2);
  Eigen::MatrixXd x(20, 4);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 4; ++j) x(i, j) = text.row(i)[j];
  auto p = pca(x, 2);
  ASSERT_EQ(merged.dim(), 2u);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(std::fabs(merged.row(i)[j]), std::fabs(p.projected(i, j)), 1e-10);
  EXPECT_THROW(sequential_baseline(text, visual, 8), ConfigError);
}

TEST(Sequential, ConstantShiftInvariance) {
  Rng rng(14);
  auto text = random_emb(15, 3, rng);
  auto visual = random_emb(15, 2, rng);
  Matrix<double> shifted = text.vectors();
  for (auto& v : shifted.flat()) v += 7.0;
  auto a = sequential_baseline(text, visual, 3);
  auto b = sequential_baseline(Embeddings(text.words(), shifted), visual, 3);
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(std::fabs(a.row(i)[j]), std::fabs(b.row(i)[j]), 1e-9);
}

TEST(Shift, IdenticalEmbeddingsHaveNoVariance) {
  Rng rng(15);
  auto emb = random_emb(10, 3, rng);
  std::stringstream ss;
  for (int i = 0; i < 10; ++i) ss << "w" << i << '\t' << i << '\n';
  auto r = shift_analysis(emb, emb, ConcretenessDataset::parse(ss));
  EXPECT_FALSE(r.rho.has_value());
  EXPECT_EQ(optional_json(r.rho), "no_variance");
}

TEST(Shift, MonotoneShiftsGiveRhoOne) {
  std::vector<std::vector<double>> before, after;
  std::stringstream ss;
  for (int i = 0; i < 10; ++i) {
    before.push_back({1, 0});
    after.push_back({std::cos(0.1 * i), std::sin(0.1 * i)});
    ss << "w" << i << '\t' << 2.0 * i + 1 << '\n';
  }
  before.push_back({0, 0});  // zero vector skipped
  after.push_back({1, 1});
  ss << "w10\t100\n";
  auto r = shift_analysis(make_emb(before), make_emb(after), ConcretenessDataset::parse(ss));
  EXPECT_NEAR(*r.rho, 1.0, 1e-12);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.covered, 10u);
}

TEST(Embeddings, LoadTextAndStore) {
  auto dir = std::filesystem::temp_directory_path();
  auto store = init_store<float>(std::vector<std::string>{"a", "b"}, {}, 3, 1, InitSpec{});
  save_store(store, (dir / "ctxvec_emb.bin").string());
  {
    std::ofstream os(dir / "ctxvec_emb.txt");
    export_targets(store, os);
  }
  auto a = Embeddings::load((dir / "ctxvec_emb.bin").string());
  auto b = Embeddings::load((dir / "ctxvec_emb.txt").string());
  EXPECT_EQ(a.words(), b.words());
  EXPECT_NEAR(a.row(1)[2], b.row(1)[2], 1e-8);
  EXPECT_EQ(a.row(1)[2], double(store.T(1, 2)));
}
