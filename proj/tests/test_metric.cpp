#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "ddv/metric.hpp"
#include "support.hpp"

using namespace ddv;
using namespace ddv::metric;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Matrix random_psd(std::size_t p, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix A(p, p);
  for (auto& x : A.reshaped()) x = g(rng);
  return A * A.transpose() / static_cast<double>(p);
}

Vector random_vector(std::size_t p, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Vector v(static_cast<Eigen::Index>(p));
  for (auto& x : v) x = g(rng);
  return v;
}

TaskMetric with_matrix(Matrix M) {
  TaskMetric m = identity_metric("t", static_cast<std::size_t>(M.rows()));
  m.M = std::move(M);
  return m;
}

// Brute force: sort all candidates by (distance, id).
std::vector<std::uint64_t> sort_oracle(const TaskMetric& m, const QueryVector& q, std::span<const Candidate> cs,
                                       std::size_t n) {
  std::vector<std::pair<double, std::uint64_t>> all;
  for (const auto& c : cs) all.emplace_back(squared_distance(m.M, q.vector, c.signature), c.id);
  std::sort(all.begin(), all.end());
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < std::min(n, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

// Two classes split on the first coordinate (gap 2, sd 0.3); the second
// coordinate is wide nuisance, so Euclidean neighbours cross the classes.
void separated_clusters(std::vector<Vector>& xs, std::vector<int>& ys, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> tight(0.0, 0.3), wide(0.0, 3.0);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 20; ++i) {
      xs.push_back(vec({(c ? 1.5 : -1.5) + tight(rng), wide(rng)}));
      ys.push_back(c);
    }
}

}  // namespace

TEST_CASE("distance examples") {
  const auto id = identity_metric("t", 2);
  CHECK(mahalanobis_distance(id, vec({0, 0}), vec({3, 4})) == doctest::Approx(5.0));
  CHECK(mahalanobis_distance(id, vec({1, 7}), vec({1, 7})) == 0.0);
  Matrix D = Matrix::Zero(2, 2);
  D(0, 0) = 4;
  D(1, 1) = 1;
  CHECK(mahalanobis_distance(with_matrix(D), vec({1, 0}), vec({0, 0})) == doctest::Approx(2.0));
  CHECK_THROWS_AS(mahalanobis_distance(id, vec({1, 2, 3}), vec({0, 0})), PreconditionError);
  Matrix neg = -Matrix::Identity(2, 2);
  CHECK_THROWS_AS(mahalanobis_distance(with_matrix(neg), vec({1, 0}), vec({0, 0})), PsdViolation);
}

TEST_CASE("distance axioms hold under random PSD metrics") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = with_matrix(random_psd(6, rng));
    const auto a = random_vector(6, rng), b = random_vector(6, rng), c = random_vector(6, rng);
    const double ab = mahalanobis_distance(m, a, b);
    CHECK(ab >= 0.0);
    CHECK(ab == doctest::Approx(mahalanobis_distance(m, b, a)).epsilon(1e-12));
    CHECK(mahalanobis_distance(m, a, c) <= ab + mahalanobis_distance(m, b, c) + 1e-9);
    CHECK(mahalanobis_distance(m, a, a) == 0.0);
  }
}

TEST_CASE("PSD projection clips negative eigenvalues only") {
  std::mt19937_64 rng(4);
  const Matrix P = random_psd(5, rng);
  CHECK((project_psd(P) - P).norm() < 1e-10);
  Matrix S = Matrix::Zero(3, 3);
  S(0, 0) = 2;
  S(1, 1) = -1;
  S(2, 2) = 0.5;
  const Matrix Q = project_psd(S);
  CHECK(min_eigenvalue(Q) >= -1e-12);
  CHECK(Q(0, 0) == doctest::Approx(2.0));
  CHECK(Q(1, 1) == doctest::Approx(0.0));
  CHECK(Q(2, 2) == doctest::Approx(0.5));
}

TEST_CASE("training set counts are exact") {
  std::vector<Vector> xs;
  std::vector<int> ys;
  separated_clusters(xs, ys, 1);
  const auto ts = build_training_set("t", xs, ys, 3, 7, 2);
  CHECK(ts.pairs.size() == 40 * 3);
  CHECK(ts.triplets.size() == 40 * 7);
  for (const auto& [i, j] : ts.pairs) {
    CHECK(i != j);
    CHECK(ys[i] == ys[j]);
  }
  for (const auto& t : ts.triplets) {
    CHECK(ys[t.anchor] == ys[t.target]);
    CHECK(ys[t.anchor] != ys[t.impostor]);
  }
  const std::vector<int> one_class(xs.size(), 0);
  CHECK_THROWS_AS(build_training_set("t", xs, one_class, 3, 7, 2), PreconditionError);
}

TEST_CASE("zero iterations return the identity initialisation") {
  std::vector<Vector> xs;
  std::vector<int> ys;
  separated_clusters(xs, ys, 2);
  const std::vector<MetricTrainingSet> tasks{build_training_set("t", xs, ys, 3, 10, 1)};
  MetricHyper h;
  h.iterations = 0;
  const auto ms = train_metric(tasks, 1.0, MultiTaskCoupling::independent(), h);
  REQUIRE(ms.size() == 1);
  CHECK(ms[0].M == Matrix::Identity(2, 2));
  CHECK(ms[0].task_id == "t");
}

TEST_CASE("separated clusters: learned metric has no triplet violations, trace is PSD and descending") {
  std::vector<Vector> xs;
  std::vector<int> ys;
  separated_clusters(xs, ys, 5);
  const std::vector<MetricTrainingSet> tasks{build_training_set("t", xs, ys, 3, 10, 1)};
  CHECK(count_all_triplet_violations(identity_metric("t", 2), xs, ys) > 0);
  TrainingTrace trace;
  const auto ms = train_metric(tasks, 1.0, MultiTaskCoupling::independent(), {}, &trace);
  CHECK(count_triplet_violations(ms[0], tasks[0]) == 0);
  CHECK(count_all_triplet_violations(ms[0], xs, ys) == 0);
  REQUIRE(!trace.objectives.empty());
  for (std::size_t i = 1; i < trace.objectives.size(); ++i) CHECK(trace.objectives[i] <= trace.objectives[i - 1] + 1e-8);
  for (double e : trace.min_eigenvalues) CHECK(e >= -1e-8);
  CHECK(min_eigenvalue(ms[0].M) >= -1e-8);
}

TEST_CASE("coupled metrics with a heavy shared weight coincide") {
  // Two tasks on the same small unit-scale points with different labels.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vector> xs;
  std::vector<int> a, b;
  for (int i = 0; i < 24; ++i) {
    xs.push_back(vec({u(rng), u(rng), u(rng)}));
    a.push_back(xs.back()(0) > 0);
    b.push_back(xs.back()(1) > 0);
  }
  const std::vector<MetricTrainingSet> tasks{build_training_set("a", xs, a, 2, 4, 1),
                                             build_training_set("b", xs, b, 2, 4, 2)};
  TrainingTrace trace;
  const auto coupled = train_metric(tasks, 1.0, MultiTaskCoupling::shared(1e3), {}, &trace);
  CHECK((coupled[0].M - coupled[1].M).norm() < 1e-3);
  for (double e : trace.min_eigenvalues) CHECK(e >= -1e-8);

  const auto independent = train_metric(tasks, 1.0, MultiTaskCoupling::independent(), {});
  CHECK((independent[0].M - independent[1].M).norm() > 1e-2);
  CHECK_THROWS_AS(train_metric(tasks, 1.0, {CouplingMode::independent, 1.0}, {}), PreconditionError);
  CHECK_THROWS_AS(train_metric(tasks, 0.0, MultiTaskCoupling::independent(), {}), PreconditionError);
}

TEST_CASE("query construction") {
  const std::vector<Vector> two{vec({1, 3}), vec({3, 1})};
  CHECK(make_query("t", two).vector == vec({2, 2}));
  const std::vector<Vector> one{vec({0.5, -1})};
  CHECK(make_query("t", one).vector == one[0]);
  CHECK_THROWS_AS(make_query("t", std::span<const Vector>{}), PreconditionError);

  std::mt19937_64 rng(7);
  std::vector<Vector> many;
  for (int i = 0; i < 1456; ++i) many.push_back(random_vector(16, rng));
  // Two-pass oracle: naive mean, then add the mean residual.
  Vector mean = Vector::Zero(16);
  for (const auto& v : many) mean += v;
  mean /= 1456.0;
  Vector residual = Vector::Zero(16);
  for (const auto& v : many) residual += v - mean;
  mean += residual / 1456.0;
  CHECK((make_query("t", many).vector - mean).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("top-n retrieval: order, ties and the sort oracle") {
  const auto id = identity_metric("t", 2);
  const QueryVector origin{"t", vec({0, 0})};
  const std::vector<Candidate> line{{7, vec({3, 0})}, {8, vec({0, 1})}, {9, vec({2, 0})}};
  CHECK(retrieve_top_n(id, origin, line, 3) == std::vector<std::uint64_t>{8, 9, 7});
  CHECK(retrieve_top_n(id, origin, line, 10).size() == 3);
  const std::vector<Candidate> tie{{5, vec({1, 0})}, {2, vec({0, -1})}};
  CHECK(retrieve_top_n(id, origin, tie, 1) == std::vector<std::uint64_t>{2});

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = with_matrix(random_psd(8, rng));
    const QueryVector q{"t", random_vector(8, rng)};
    std::vector<Candidate> cs;
    for (std::uint64_t i = 0; i < 500; ++i) cs.push_back({(i * 7919) % 1000, random_vector(8, rng)});
    // A few exact duplicates to exercise the tie policy.
    cs.push_back({1001, cs[0].signature});
    cs.push_back({1002, cs[1].signature});
    const auto top = retrieve_top_n(m, q, cs, 50);
    CHECK(top == sort_oracle(m, q, cs, 50));
    CHECK(retrieve_top_n(m, q, cs, cs.size()) == sort_oracle(m, q, cs, cs.size()));

    auto scaled = m;
    scaled.M *= 3.7;
    CHECK(retrieve_top_n(scaled, q, cs, 50) == top);
  }
}

TEST_CASE("precision at N") {
  const std::vector<std::uint64_t> ranked{1, 2, 3, 4, 5, 6};
  CHECK(precision_at_n(ranked, {1, 2, 3}, 3) == 1.0);
  CHECK(precision_at_n(ranked, {9}, 3) == 0.0);
  CHECK(precision_at_n(ranked, {2, 5}, 4) == doctest::Approx(0.25));
  // Fixed ranking with the relevant items on top, relevant set no larger
  // than the smallest N: non-increasing in N.
  const std::set<std::uint64_t> rel{1, 2};
  double prev = 1.0;
  for (std::size_t n = 2; n <= 6; ++n) {
    const double p = precision_at_n(ranked, rel, n);
    CHECK(p >= 0.0);
    CHECK(p <= prev);
    prev = p;
  }
  CHECK_THROWS_AS(precision_at_n(ranked, rel, 0), PreconditionError);
}

TEST_CASE("k-NN error: separated clusters and shuffled labels") {
  std::mt19937_64 rng(9);
  const std::size_t K = 4, per = 100;
  std::vector<Vector> xs;
  std::vector<int> ys;
  for (std::size_t c = 0; c < K; ++c)
    for (std::size_t i = 0; i < per; ++i) {
      Vector v = random_vector(3, rng, 0.1);
      v(0) += 10.0 * static_cast<double>(c);
      xs.push_back(v);
      ys.push_back(static_cast<int>(c));
    }
  const auto split = split_60_20_20(xs.size(), 1);
  CHECK(split.train.size() + split.validation.size() + split.test.size() == xs.size());
  const auto id = identity_metric("t", 3);
  CHECK(knn_error(id, xs, ys, split.train, split.test) == 0.0);

  auto shuffled = ys;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const double chance = knn_error(id, xs, shuffled, split.train, split.test);
  CHECK(std::abs(chance - (1.0 - 1.0 / static_cast<double>(K))) <= 0.1);
}

TEST_CASE("one-vs-rest labels") {
  const std::vector<std::size_t> cohorts{0, 1, 2, 1};
  CHECK(one_vs_rest(cohorts, 1) == std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("retrieval sweep: lowest sigma column equals the single-level evaluation") {
  std::mt19937_64 rng(10);
  std::vector<std::size_t> labels;
  std::vector<Vector> clean;
  for (std::size_t c = 0; c < 3; ++c)
    for (int i = 0; i < 30; ++i) {
      Vector v = random_vector(4, rng, 0.3);
      v(static_cast<Eigen::Index>(c)) += 2.0;
      clean.push_back(v);
      labels.push_back(c);
    }
  std::vector<std::vector<Vector>> by_sigma{clean, clean};
  for (auto& v : by_sigma[1]) v += random_vector(4, rng, 1.0);
  const std::vector<double> sigmas{0.0, 1.0};
  const std::vector<std::size_t> tasks{0, 1, 2}, ns{10, 20};
  RetrievalConfig cfg;
  cfg.hyper.iterations = 30;
  const auto sweep = retrieval_noise_sweep(by_sigma, sigmas, labels, tasks, ns, cfg);
  const auto single = retrieval_eval(clean, labels, tasks, ns, cfg, 0.0);
  REQUIRE(sweep.size() == 12);
  for (std::size_t i = 0; i < single.size(); ++i) {
    CHECK(sweep[i].task == single[i].task);
    CHECK(sweep[i].n == single[i].n);
    CHECK(sweep[i].precision == single[i].precision);
  }
  CHECK(mean_precision(sweep, 0.0, 10) >= mean_precision(sweep, 1.0, 10));
  const std::vector<double> unsorted{1.0, 0.0};
  CHECK_THROWS_AS(retrieval_noise_sweep(by_sigma, unsorted, labels, tasks, ns, cfg), PreconditionError);
}

TEST_CASE("metric library round-trips and rejects malformed input") {
  std::mt19937_64 rng(11);
  std::vector<TaskMetric> lib{identity_metric("a", 3), with_matrix(random_psd(3, rng))};
  lib[1].task_id = "b";
  lib[1].description = "cohort 1 vs rest";
  lib[1].iterations = 12;
  lib[1].final_objective = 0.25;
  testing::TempDir dir("metric");
  save_metric_library(lib, dir / "lib.txt");
  const auto back = load_metric_library(dir / "lib.txt");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].task_id == lib[i].task_id);
    CHECK(back[i].description == lib[i].description);
    CHECK(back[i].iterations == lib[i].iterations);
    CHECK(back[i].M == lib[i].M);
  }

  std::ostringstream out;
  write_metric_library(out, lib);
  const std::string text = out.str();
  std::istringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_metric_library(truncated), ParseError);
  std::istringstream wrong("not-a-library v1 p=3 T=1\n");
  CHECK_THROWS_AS(read_metric_library(wrong), ParseError);
  std::ostringstream bad;
  std::vector<TaskMetric> neg{with_matrix(-Matrix::Identity(2, 2))};
  write_metric_library(bad, neg);
  std::istringstream neg_in(bad.str());
  CHECK_THROWS_AS(read_metric_library(neg_in), PsdViolation);
  CHECK_THROWS_AS(load_metric_library(dir / "missing.txt"), IoError);
}
