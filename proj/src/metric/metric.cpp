#include "ddv/metric.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace ddv::metric {

TaskMetric identity_metric(std::string task_id, std::size_t p) {
  TaskMetric m;
  m.task_id = std::move(task_id);
  m.M = Matrix::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  return m;
}

double squared_distance(const Matrix& M, const Vector& v, const Vector& w) {
  if (v.size() != w.size() || v.size() != M.rows() || M.rows() != M.cols())
    throw PreconditionError("dimension mismatch: metric is " + std::to_string(M.rows()) + "x" +
                            std::to_string(M.cols()) + ", vectors have " + std::to_string(v.size()) + " and " +
                            std::to_string(w.size()) + " entries");
  const Vector diff = v - w;
  return diff.dot(M * diff);
}

double mahalanobis_distance(const TaskMetric& metric, const Vector& v, const Vector& w) {
  const double q = squared_distance(metric.M, v, w);
  if (q < -1e-8) throw PsdViolation("metric " + metric.task_id + " yields a negative quadratic form " + std::to_string(q));
  return std::sqrt(std::max(q, 0.0));
}

double min_eigenvalue(const Matrix& M) {
  const Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

Matrix project_psd(const Matrix& M) {
  const Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
  const Matrix out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// ---- training set ----------------------------------------------------------

MetricTrainingSet build_training_set(std::string task_id, std::vector<Vector> signatures, std::vector<int> labels,
                                     std::size_t per_class_targets, std::size_t triplets_per_anchor,
                                     std::uint64_t seed) {
  const std::size_t n = signatures.size();
  if (labels.size() != n) throw PreconditionError("signature and label counts differ");
  if (per_class_targets == 0) throw PreconditionError("at least one target per point is required");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) throw PreconditionError("metric learning needs at least two classes");
  for (const auto& [label, idx] : members)
    if (idx.size() <= per_class_targets)
      throw PreconditionError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                              " members, too few for " + std::to_string(per_class_targets) + " targets");
  for (std::size_t i = 1; i < n; ++i)
    if (signatures[i].size() != signatures[0].size()) throw PreconditionError("signatures differ in length");

  MetricTrainingSet ts;
  ts.task_id = std::move(task_id);
  ts.pairs.reserve(n * per_class_targets);
  ts.triplets.reserve(n * triplets_per_anchor);

  std::mt19937_64 rng(seed);
  std::vector<std::pair<double, std::size_t>> near;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i) {
    near.clear();
    for (std::size_t j : members[labels[i]])
      if (j != i) near.emplace_back((signatures[i] - signatures[j]).squaredNorm(), j);
    std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(per_class_targets), near.end());
    for (std::size_t t = 0; t < per_class_targets; ++t) ts.pairs.emplace_back(i, near[t].second);

    const std::size_t other_count = n - members[labels[i]].size();
    std::uniform_int_distribution<std::size_t> pick(0, other_count - 1);
    for (std::size_t m = 0; m < triplets_per_anchor; ++m) {
      // Map the m-th draw over "all points of another label" by skipping the
      // anchor's own class.
      std::size_t r = pick(rng);
      std::size_t k = 0;
      for (const auto& [label, idx] : members) {
        if (label == labels[i]) continue;
        if (r < idx.size()) {
          k = idx[r];
          break;
        }
        r -= idx.size();
      }
      ts.triplets.push_back({i, near[m % per_class_targets].second, k});
    }
  }
  ts.signatures = std::move(signatures);
  ts.labels = std::move(labels);
  return ts;
}

// ---- objective ---------------------------------------------------------------

namespace {

struct Prepared {
  Matrix pull;    // |P| x p
  Matrix target;  // |I| x p
  Matrix other;   // |I| x p
};

Prepared prepare(const MetricTrainingSet& ts) {
  if (ts.signatures.empty()) throw PreconditionError("training set " + ts.task_id + " is empty");
  const auto p = ts.signatures.front().size();
  Prepared out{Matrix(static_cast<Eigen::Index>(ts.pairs.size()), p),
               Matrix(static_cast<Eigen::Index>(ts.triplets.size()), p),
               Matrix(static_cast<Eigen::Index>(ts.triplets.size()), p)};
  const std::size_t n = ts.signatures.size();
  for (std::size_t r = 0; r < ts.pairs.size(); ++r) {
    const auto [i, j] = ts.pairs[r];
    if (i >= n || j >= n) throw PreconditionError("target pair index out of range");
    out.pull.row(static_cast<Eigen::Index>(r)) = (ts.signatures[i] - ts.signatures[j]).transpose();
  }
  for (std::size_t r = 0; r < ts.triplets.size(); ++r) {
    const auto& t = ts.triplets[r];
    if (t.anchor >= n || t.target >= n || t.impostor >= n) throw PreconditionError("triplet index out of range");
    out.target.row(static_cast<Eigen::Index>(r)) = (ts.signatures[t.anchor] - ts.signatures[t.target]).transpose();
    out.other.row(static_cast<Eigen::Index>(r)) = (ts.signatures[t.anchor] - ts.signatures[t.impostor]).transpose();
  }
  return out;
}

Vector quad_rows(const Matrix& D, const Matrix& M) { return (D * M).cwiseProduct(D).rowwise().sum(); }

double objective(const Prepared& prep, const Matrix& M, double margin, Matrix* gradient) {
  double loss = 0.0;
  const auto p = M.rows();
  if (gradient) gradient->setZero(p, p);
  if (prep.pull.rows() > 0) {
    const double scale = 1.0 / static_cast<double>(prep.pull.rows());
    loss += scale * quad_rows(prep.pull, M).sum();
    if (gradient) gradient->noalias() += scale * prep.pull.transpose() * prep.pull;
  }
  if (prep.target.rows() > 0) {
    const double scale = 1.0 / static_cast<double>(prep.target.rows());
    const Vector hinge = (margin + quad_rows(prep.target, M).array() - quad_rows(prep.other, M).array()).matrix();
    const Vector active = (hinge.array() > 0.0).cast<double>();
    loss += scale * hinge.cwiseMax(0.0).sum();
    if (gradient && active.sum() > 0.0) {
      const Vector w = scale * active;
      gradient->noalias() += prep.target.transpose() * w.asDiagonal() * prep.target;
      gradient->noalias() -= prep.other.transpose() * w.asDiagonal() * prep.other;
    }
  }
  if (!std::isfinite(loss)) throw TrainingError("non-finite metric objective", 0);
  return loss;
}

}  // namespace

double task_objective(const MetricTrainingSet& task, const Matrix& M, double margin, Matrix* gradient) {
  return objective(prepare(task), M, margin, gradient);
}

// ---- training ------------------------------------------------------------------

namespace {

struct State {
  Matrix shared;               // coupled mode only
  std::vector<Matrix> specific;  // S_t (coupled) or M_t (independent)
};

}  // namespace

std::vector<TaskMetric> train_metric(std::span<const MetricTrainingSet> tasks, double margin,
                                     const MultiTaskCoupling& coupling, const MetricHyper& hyper,
                                     TrainingTrace* trace) {
  if (tasks.empty()) throw PreconditionError("no tasks to train");
  if (!(margin > 0.0)) throw PreconditionError("margin must be positive");
  const bool coupled = coupling.mode == CouplingMode::shared_plus_specific;
  if (coupling.shared_weight < 0.0) throw PreconditionError("shared weight must be non-negative");
  if (coupled != (coupling.shared_weight > 0.0))
    throw PreconditionError("shared weight must be positive exactly in shared_plus_specific mode");
  if (!(hyper.initial_step > 0.0)) throw PreconditionError("initial step must be positive");

  const auto p = static_cast<Eigen::Index>(tasks.front().signatures.empty() ? 0 : tasks.front().signatures.front().size());
  std::vector<Prepared> prepared;
  for (const auto& t : tasks) {
    prepared.push_back(prepare(t));
    if (prepared.back().pull.cols() != p) throw PreconditionError("tasks disagree on signature length");
  }
  const std::size_t T = tasks.size();
  const double w = coupling.shared_weight;
  const Matrix I = Matrix::Identity(p, p);

  auto metric_of = [&](const State& s, std::size_t t) -> Matrix {
    return coupled ? Matrix(s.shared + s.specific[t]) : s.specific[t];
  };
  auto total = [&](const State& s, std::vector<Matrix>* grads) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      sum += objective(prepared[t], metric_of(s, t), margin, grads ? &(*grads)[t] : nullptr);
      if (coupled) sum += w * s.specific[t].squaredNorm();
    }
    return sum;
  };
  auto min_eig = [&](const State& s) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < T; ++t) m = std::min(m, min_eigenvalue(metric_of(s, t)));
    return m;
  };

  State state;
  if (coupled) {
    state.shared = I;
    state.specific.assign(T, Matrix::Zero(p, p));
  } else {
    state.specific.assign(T, I);
  }
  std::vector<Matrix> grads(T);
  double current = total(state, &grads);
  if (trace) {
    trace->objectives.assign(1, current);
    trace->min_eigenvalues.clear();
    trace->rejected_steps = 0;
  }

  double step = hyper.initial_step;
  std::size_t accepted = 0;
  for (std::size_t it = 0; it < hyper.iterations; ++it) {
    bool moved = false;
    for (int h = 0; h <= hyper.max_halvings; ++h, step *= 0.5) {
      State next;
      if (coupled) {
        Matrix g_shared = Matrix::Zero(p, p);
        for (const auto& g : grads) g_shared += g;
        next.shared = project_psd(state.shared - step * g_shared);
        const double shrink = 1.0 / (1.0 + 2.0 * step * w);
        for (std::size_t t = 0; t < T; ++t)
          next.specific.push_back(project_psd(shrink * (state.specific[t] - step * grads[t])));
      } else {
        for (std::size_t t = 0; t < T; ++t) next.specific.push_back(project_psd(state.specific[t] - step * grads[t]));
      }
      if (trace) trace->min_eigenvalues.push_back(min_eig(next));
      std::vector<Matrix> next_grads(T);
      const double value = total(next, &next_grads);
      if (value <= current) {
        state = std::move(next);
        grads = std::move(next_grads);
        current = value;
        moved = true;
        break;
      }
      if (trace) ++trace->rejected_steps;
    }
    if (!moved) break;
    ++accepted;
    step *= hyper.step_growth;
    if (trace) trace->objectives.push_back(current);
  }

  std::vector<TaskMetric> out;
  for (std::size_t t = 0; t < T; ++t) {
    TaskMetric m;
    m.task_id = tasks[t].task_id;
    m.M = metric_of(state, t);
    m.M = 0.5 * (m.M + m.M.transpose());
    m.iterations = accepted;
    m.final_objective = objective(prepared[t], m.M, margin, nullptr);
    out.push_back(std::move(m));
  }
  return out;
}

std::size_t count_triplet_violations(const TaskMetric& metric, const MetricTrainingSet& task) {
  std::size_t bad = 0;
  for (const auto& t : task.triplets) {
    const auto& a = task.signatures[t.anchor];
    if (squared_distance(metric.M, a, task.signatures[t.impostor]) <= squared_distance(metric.M, a, task.signatures[t.target]))
      ++bad;
  }
  return bad;
}

std::size_t count_all_triplet_violations(const TaskMetric& metric, std::span<const Vector> signatures,
                                         std::span<const int> labels) {
  if (signatures.size() != labels.size()) throw PreconditionError("signature and label counts differ");
  const std::size_t n = signatures.size();
  // For each anchor compare the farthest same-label point with the nearest
  // other-label point; every triple is violated iff some such pair is.
  std::size_t bad = 0;
  std::vector<double> same, other;
  for (std::size_t i = 0; i < n; ++i) {
    same.clear();
    other.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = squared_distance(metric.M, signatures[i], signatures[j]);
      (labels[j] == labels[i] ? same : other).push_back(d);
    }
    std::sort(other.begin(), other.end());
    for (double d : same) bad += static_cast<std::size_t>(std::upper_bound(other.begin(), other.end(), d) - other.begin());
  }
  return bad;
}

// ---- retrieval -------------------------------------------------------------------

QueryVector make_query(std::string task_id, std::span<const Vector> cohort_signatures) {
  if (cohort_signatures.empty()) throw PreconditionError("query needs at least one signature");
  Vector sum = Vector::Zero(cohort_signatures.front().size());
  for (const auto& v : cohort_signatures) {
    if (v.size() != sum.size()) throw PreconditionError("signatures differ in length");
    sum += v;
  }
  return {std::move(task_id), sum / static_cast<double>(cohort_signatures.size())};
}

std::vector<std::uint64_t> retrieve_top_n(const TaskMetric& metric, const QueryVector& query,
                                          std::span<const Candidate> candidates, std::size_t n) {
  if (n == 0) throw PreconditionError("n must be at least 1");
  std::vector<std::pair<double, std::uint64_t>> scored;
  scored.reserve(candidates.size());
  for (const auto& c : candidates) {
    const double d = squared_distance(metric.M, query.vector, c.signature);
    if (d < -1e-8) throw PsdViolation("metric " + metric.task_id + " is not positive semi-definite");
    scored.emplace_back(d, c.id);
  }
  const std::size_t k = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
  std::vector<std::uint64_t> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) ids.push_back(scored[i].second);
  return ids;
}

double precision_at_n(std::span<const std::uint64_t> ranked, const std::set<std::uint64_t>& relevant, std::size_t n) {
  if (n == 0) throw PreconditionError("n must be at least 1");
  if (n > ranked.size())
    throw PreconditionError("precision@" + std::to_string(n) + " needs at least " + std::to_string(n) +
                            " ranked ids, got " + std::to_string(ranked.size()));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(ranked[i]);
  return static_cast<double>(hits) / static_cast<double>(n);
}

// ---- classification ---------------------------------------------------------------

Split split_60_20_20(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t a = n * 6 / 10;
  const std::size_t b = a + n * 2 / 10;
  Split s{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(a)},
          {idx.begin() + static_cast<std::ptrdiff_t>(a), idx.begin() + static_cast<std::ptrdiff_t>(b)},
          {idx.begin() + static_cast<std::ptrdiff_t>(b), idx.end()}};
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

double knn_error(const TaskMetric& metric, std::span<const Vector> signatures, std::span<const int> labels,
                 std::span<const std::size_t> reference, std::span<const std::size_t> eval, std::size_t k) {
  if (signatures.size() != labels.size()) throw PreconditionError("signature and label counts differ");
  if (k == 0 || reference.size() < k) throw PreconditionError("reference set smaller than k");
  if (eval.empty()) throw PreconditionError("nothing to classify");
  std::size_t errors = 0;
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t e : eval) {
    near.clear();
    for (std::size_t r : reference) near.emplace_back(squared_distance(metric.M, signatures[e], signatures[r]), r);
    std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(k), near.end());
    std::map<int, std::size_t> votes;
    for (std::size_t i = 0; i < k; ++i) ++votes[labels[near[i].second]];
    std::size_t best = 0;
    for (const auto& [label, count] : votes) best = std::max(best, count);
    int predicted = 0;
    for (std::size_t i = 0; i < k; ++i)
      if (votes[labels[near[i].second]] == best) {
        predicted = labels[near[i].second];
        break;
      }
    if (predicted != labels[e]) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(eval.size());
}

std::vector<TaskError> pairwise_classification_error(std::span<const TaskMetric> metrics,
                                                     std::span<const Vector> signatures,
                                                     std::span<const std::vector<int>> task_labels,
                                                     const Split& split, std::size_t k) {
  if (metrics.size() != task_labels.size()) throw PreconditionError("one label vector per metric is required");
  std::vector<TaskError> out;
  for (std::size_t t = 0; t < metrics.size(); ++t) {
    const auto& labels = task_labels[t];
    if (std::set<int>(labels.begin(), labels.end()).size() < 2)
      throw PreconditionError("task " + metrics[t].task_id + " has fewer than two classes");
    out.push_back({metrics[t].task_id, knn_error(metrics[t], signatures, labels, split.train, split.validation, k),
                   knn_error(metrics[t], signatures, labels, split.train, split.test, k)});
  }
  return out;
}

std::vector<int> one_vs_rest(std::span<const std::size_t> cohort_labels, std::size_t task) {
  std::vector<int> out;
  out.reserve(cohort_labels.size());
  for (std::size_t c : cohort_labels) out.push_back(c == task ? 1 : 0);
  return out;
}

// ---- retrieval evaluation --------------------------------------------------------

std::vector<RetrievalCell> retrieval_eval(std::span<const Vector> signatures,
                                          std::span<const std::size_t> cohort_labels,
                                          std::span<const std::size_t> tasks, std::span<const std::size_t> ns,
                                          const RetrievalConfig& config, double sigma,
                                          std::vector<TaskMetric>* metrics_out) {
  if (signatures.size() != cohort_labels.size()) throw PreconditionError("signature and label counts differ");
  if (tasks.empty() || ns.empty()) throw PreconditionError("need at least one task and one N");
  std::vector<MetricTrainingSet> sets;
  for (std::size_t t : tasks)
    sets.push_back(build_training_set("cohort-" + std::to_string(t), {signatures.begin(), signatures.end()},
                                      one_vs_rest(cohort_labels, t), config.per_class_targets,
                                      config.triplets_per_anchor, config.seed + 0x9e3779b97f4a7c15ULL * (t + 1)));
  const auto metrics = train_metric(sets, config.margin, config.coupling, config.hyper);

  std::vector<Candidate> candidates;
  candidates.reserve(signatures.size());
  for (std::size_t i = 0; i < signatures.size(); ++i) candidates.push_back({i, signatures[i]});
  const std::size_t max_n = *std::max_element(ns.begin(), ns.end());

  std::vector<RetrievalCell> cells;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const std::size_t t = tasks[ti];
    std::vector<Vector> members;
    std::set<std::uint64_t> relevant;
    for (std::size_t i = 0; i < signatures.size(); ++i)
      if (cohort_labels[i] == t) {
        members.push_back(signatures[i]);
        relevant.insert(i);
      }
    const auto query = make_query(metrics[ti].task_id, members);
    const auto ranked = retrieve_top_n(metrics[ti], query, candidates, max_n);
    for (std::size_t n : ns) cells.push_back({t, n, sigma, precision_at_n(ranked, relevant, n)});
  }
  if (metrics_out) *metrics_out = metrics;
  return cells;
}

std::vector<RetrievalCell> retrieval_noise_sweep(std::span<const std::vector<Vector>> signatures_by_sigma,
                                                 std::span<const double> sigmas,
                                                 std::span<const std::size_t> cohort_labels,
                                                 std::span<const std::size_t> tasks, std::span<const std::size_t> ns,
                                                 const RetrievalConfig& config) {
  if (signatures_by_sigma.size() != sigmas.size()) throw PreconditionError("one signature set per sigma is required");
  for (std::size_t i = 1; i < sigmas.size(); ++i)
    if (sigmas[i] < sigmas[i - 1]) throw PreconditionError("noise levels must be sorted ascending");
  std::vector<RetrievalCell> cells;
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    const auto part = retrieval_eval(signatures_by_sigma[s], cohort_labels, tasks, ns, config, sigmas[s]);
    cells.insert(cells.end(), part.begin(), part.end());
  }
  return cells;
}

double mean_precision(std::span<const RetrievalCell> cells, double sigma, std::size_t n) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& c : cells)
    if (c.sigma == sigma && c.n == n) {
      sum += c.precision;
      ++count;
    }
  if (count == 0) throw PreconditionError("no cells for the requested sigma and N");
  return sum / static_cast<double>(count);
}

}  // namespace ddv::metric
