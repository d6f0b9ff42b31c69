#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ddv::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Ordered collection of named dense tensors. Biases are stored as n x 1
// matrices. Gradients and optimiser state use the same layout.
class ParamBlock {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in);

  std::size_t size() const noexcept { return values_.size(); }
  Matrix& operator[](std::size_t i) { return values_[i]; }
  const Matrix& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Eigen::Index fan_in(std::size_t i) const { return fan_in_[i]; }

  ParamBlock zeros_like() const;
  void set_zero();
  // this += alpha * other
  void axpy(double alpha, const ParamBlock& other);
  void scale(double alpha);
  double squared_norm() const;
  std::size_t parameter_count() const;
  Vector flatten() const;
  bool all_finite() const;
  bool same_shape(const ParamBlock& other) const;

  bool operator==(const ParamBlock& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::vector<Eigen::Index> fan_in_;
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor.
void init_uniform(ParamBlock& block, std::mt19937_64& rng);

class MomentumSgd {
 public:
  MomentumSgd(const ParamBlock& shape, double learning_rate, double momentum);

  void step(ParamBlock& params, const ParamBlock& grad);
  void reset();

  double learning_rate() const noexcept { return learning_rate_; }
  void set_learning_rate(double lr) noexcept { learning_rate_ = lr; }

 private:
  ParamBlock velocity_;
  double learning_rate_;
  double momentum_;
};

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// log(1 + exp(a)) without overflow.
inline double softplus(double a) { return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

}  // namespace ddv::nn
