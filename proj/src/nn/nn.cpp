#include "ddv/nn.hpp"

#include <cmath>

namespace ddv::nn {

std::size_t ParamBlock::add(std::string name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
  names_.push_back(std::move(name));
  values_.push_back(Matrix::Zero(rows, cols));
  fan_in_.push_back(fan_in);
  return values_.size() - 1;
}

ParamBlock ParamBlock::zeros_like() const {
  ParamBlock out = *this;
  out.set_zero();
  return out;
}

void ParamBlock::set_zero() {
  for (auto& m : values_) m.setZero();
}

void ParamBlock::axpy(double alpha, const ParamBlock& other) {
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * other.values_[i];
}

void ParamBlock::scale(double alpha) {
  for (auto& m : values_) m *= alpha;
}

double ParamBlock::squared_norm() const {
  double s = 0.0;
  for (const auto& m : values_) s += m.squaredNorm();
  return s;
}

std::size_t ParamBlock::parameter_count() const {
  std::size_t n = 0;
  for (const auto& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

Vector ParamBlock::flatten() const {
  Vector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index offset = 0;
  for (const auto& m : values_) {
    out.segment(offset, m.size()) = m.reshaped();
    offset += m.size();
  }
  return out;
}

bool ParamBlock::all_finite() const {
  for (const auto& m : values_)
    if (!m.allFinite()) return false;
  return true;
}

bool ParamBlock::same_shape(const ParamBlock& other) const {
  if (values_.size() != other.values_.size()) return false;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols()) return false;
  return true;
}

bool ParamBlock::operator==(const ParamBlock& other) const {
  if (names_ != other.names_ || !same_shape(other)) return false;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i] != other.values_[i]) return false;
  return true;
}

void init_uniform(ParamBlock& block, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < block.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(block.fan_in(i)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix& m = block[i];
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
  }
}

MomentumSgd::MomentumSgd(const ParamBlock& shape, double learning_rate, double momentum)
    : velocity_(shape.zeros_like()), learning_rate_(learning_rate), momentum_(momentum) {}

void MomentumSgd::step(ParamBlock& params, const ParamBlock& grad) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] - learning_rate_ * grad[i];
    params[i] += velocity_[i];
  }
}

void MomentumSgd::reset() { velocity_.set_zero(); }

}  // namespace ddv::nn
