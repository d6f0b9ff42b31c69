#pragma once

// Task-specific Mahalanobis metrics learned with a large-margin triplet
// objective, optional shared-plus-specific multi-task coupling, and the
// retrieval and evaluation routines built on them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ddv/error.hpp"
#include "ddv/nn.hpp"

namespace ddv::metric {

using nn::Matrix;
using nn::Vector;

class PsdViolation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct TaskMetric {
  std::string task_id;
  std::string description;
  Matrix M;
  std::size_t iterations = 0;
  double final_objective = 0.0;
};

TaskMetric identity_metric(std::string task_id, std::size_t p);

// sqrt((v - w)^T M (v - w)). Throws PsdViolation when the quadratic form is
// below -1e-8 and PreconditionError on a dimension mismatch.
double mahalanobis_distance(const TaskMetric& metric, const Vector& v, const Vector& w);
double squared_distance(const Matrix& M, const Vector& v, const Vector& w);

double min_eigenvalue(const Matrix& M);
// Symmetrises and clips negative eigenvalues to zero.
Matrix project_psd(const Matrix& M);

struct Triplet {
  std::size_t anchor;
  std::size_t target;
  std::size_t impostor;
};

struct MetricTrainingSet {
  std::string task_id;
  std::vector<Vector> signatures;
  std::vector<int> labels;
  // Target pairs: each point with its nearest same-label neighbours.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<Triplet> triplets;
};

// For every point, its `per_class_targets` nearest same-label neighbours
// (Euclidean, ties by index) form the target pairs; `triplets_per_anchor`
// triplets are drawn per point, cycling through its targets, each with a
// uniformly drawn other-label impostor. Hence |pairs| = n * targets and
// |triplets| = n * triplets_per_anchor exactly. Every label must have more
// than `per_class_targets` members and there must be at least two labels.
MetricTrainingSet build_training_set(std::string task_id, std::vector<Vector> signatures, std::vector<int> labels,
                                     std::size_t per_class_targets, std::size_t triplets_per_anchor,
                                     std::uint64_t seed);

enum class CouplingMode { independent, shared_plus_specific };

struct MultiTaskCoupling {
  CouplingMode mode = CouplingMode::independent;
  double shared_weight = 0.0;

  static MultiTaskCoupling independent() { return {}; }
  static MultiTaskCoupling shared(double weight) { return {CouplingMode::shared_plus_specific, weight}; }
};

struct MetricHyper {
  std::size_t iterations = 100;
  double initial_step = 0.1;
  int max_halvings = 20;
  double step_growth = 1.5;
};

struct TrainingTrace {
  // Objective before the first step, then after every accepted step.
  std::vector<double> objectives;
  // Smallest eigenvalue over all task metrics after every projection.
  std::vector<double> min_eigenvalues;
  std::size_t rejected_steps = 0;
};

// Per-task loss: mean squared distance over target pairs plus the mean of
// max(0, margin + d_ij^2 - d_ik^2) over triplets. Coupled mode writes
// M_t = M_0 + S_t with M_0, S_t PSD and adds shared_weight * sum_t |S_t|_F^2.
// Projected subgradient descent from M_t = I; a step is accepted only if the
// total objective does not increase, otherwise it is halved (up to
// max_halvings times, after which training stops).
std::vector<TaskMetric> train_metric(std::span<const MetricTrainingSet> tasks, double margin,
                                     const MultiTaskCoupling& coupling, const MetricHyper& hyper,
                                     TrainingTrace* trace = nullptr);

double task_objective(const MetricTrainingSet& task, const Matrix& M, double margin, Matrix* gradient = nullptr);

// Triplet (i, j, k) violates when d_ik^2 <= d_ij^2.
std::size_t count_triplet_violations(const TaskMetric& metric, const MetricTrainingSet& task);
// Over every (anchor, same-label, other-label) triple.
std::size_t count_all_triplet_violations(const TaskMetric& metric, std::span<const Vector> signatures,
                                         std::span<const int> labels);

struct QueryVector {
  std::string task_id;
  Vector vector;
};

QueryVector make_query(std::string task_id, std::span<const Vector> cohort_signatures);

struct Candidate {
  std::uint64_t id;
  Vector signature;
};

// Ascending distance, ties by ascending id; min(n, |candidates|) ids.
std::vector<std::uint64_t> retrieve_top_n(const TaskMetric& metric, const QueryVector& query,
                                          std::span<const Candidate> candidates, std::size_t n);

double precision_at_n(std::span<const std::uint64_t> ranked, const std::set<std::uint64_t>& relevant, std::size_t n);

// Train / validation / test index sets drawn 60/20/20 with a seed.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};
Split split_60_20_20(std::size_t n, std::uint64_t seed);

// k-nearest-neighbour error of `eval` against `reference` under M. Majority
// vote; a tied vote goes to the tied label with the nearest member.
double knn_error(const TaskMetric& metric, std::span<const Vector> signatures, std::span<const int> labels,
                 std::span<const std::size_t> reference, std::span<const std::size_t> eval, std::size_t k = 3);

struct TaskError {
  std::string task_id;
  double validation = 0.0;
  double test = 0.0;
};

// Per task, k-NN error of the task's labels under its own metric.
std::vector<TaskError> pairwise_classification_error(std::span<const TaskMetric> metrics,
                                                     std::span<const Vector> signatures,
                                                     std::span<const std::vector<int>> task_labels,
                                                     const Split& split, std::size_t k = 3);

// One-vs-rest labels for cohort `task`.
std::vector<int> one_vs_rest(std::span<const std::size_t> cohort_labels, std::size_t task);

struct RetrievalConfig {
  std::size_t per_class_targets = 3;
  std::size_t triplets_per_anchor = 10;
  double margin = 1.0;
  MultiTaskCoupling coupling;
  MetricHyper hyper;
  std::uint64_t seed = 0;
};

struct RetrievalCell {
  std::size_t task = 0;
  std::size_t n = 0;
  double sigma = 0.0;
  double precision = 0.0;
};

// Learns one metric per cohort task on the given signatures, queries with
// the cohort mean, ranks every signature and scores precision@N against the
// cohort's members. Cells are ordered by task, then N.
std::vector<RetrievalCell> retrieval_eval(std::span<const Vector> signatures,
                                          std::span<const std::size_t> cohort_labels,
                                          std::span<const std::size_t> tasks, std::span<const std::size_t> ns,
                                          const RetrievalConfig& config, double sigma = 0.0,
                                          std::vector<TaskMetric>* metrics = nullptr);

// signatures_by_sigma[s] holds every record's signature at sigmas[s]. Metrics
// are re-learned per noise level. Cells are ordered by sigma, task, N.
std::vector<RetrievalCell> retrieval_noise_sweep(std::span<const std::vector<Vector>> signatures_by_sigma,
                                                 std::span<const double> sigmas,
                                                 std::span<const std::size_t> cohort_labels,
                                                 std::span<const std::size_t> tasks, std::span<const std::size_t> ns,
                                                 const RetrievalConfig& config);

// Mean precision over tasks for one (sigma, N).
double mean_precision(std::span<const RetrievalCell> cells, double sigma, std::size_t n);

// Tab-separated: sigma, task, n, precision.
void write_retrieval_table(std::ostream& out, std::span<const RetrievalCell> cells);

// Text metric library:
//   ddv-metric-library v1 p=<p> T=<T>
//   task\t<task_id>\t<description>
//   meta\t<iterations>\t<final objective>
//   <p lines of p values>
//   ... (T entries)
//   end
void write_metric_library(std::ostream& out, std::span<const TaskMetric> metrics);
std::vector<TaskMetric> read_metric_library(std::istream& in);
void save_metric_library(std::span<const TaskMetric> metrics, const std::filesystem::path& path);
std::vector<TaskMetric> load_metric_library(const std::filesystem::path& path);

}  // namespace ddv::metric
