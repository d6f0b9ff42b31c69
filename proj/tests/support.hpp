#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ddv/corpus.hpp"
#include "ddv/embed.hpp"
#include "ddv/nn.hpp"

namespace ddv::testing {

struct TensorCheck {
  std::string name;
  double relative_error = 0.0;
};

// Central differences with step h for every entry of every tensor in
// `params`, compared per tensor as |a - n| / max(|a| + |n|, 1e-12) with
// Frobenius norms. `loss` must read the current values of `params`.
inline std::vector<TensorCheck> check_gradient(nn::ParamBlock& params, const nn::ParamBlock& analytic,
                                               const std::function<double()>& loss, double h = 1e-4) {
  std::vector<TensorCheck> out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    nn::Matrix numeric(params[t].rows(), params[t].cols());
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      double& x = params[t].data()[i];
      const double keep = x;
      x = keep + h;
      const double up = loss();
      x = keep - h;
      const double down = loss();
      x = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double diff = (numeric - analytic[t]).norm();
    const double scale = std::max(numeric.norm() + analytic[t].norm(), 1e-12);
    out.push_back({params.name(t), diff / scale});
  }
  return out;
}

inline double worst(const std::vector<TensorCheck>& checks) {
  double w = 0.0;
  for (const auto& c : checks) w = std::max(w, c.relative_error);
  return w;
}

inline CorpusConfig tiny_corpus_config() {
  CorpusConfig c;
  c.patients_per_cohort = 12;
  c.mean_visits = 3.0;
  c.max_visits = 8;
  return c;
}

struct TinyModels {
  Corpus corpus;
  embed::VisitEncoderModel visit;
  embed::PatientEncoderModel patient;
};

// Briefly trained models on a small corpus; enough for plumbing tests.
inline TinyModels tiny_models(std::uint64_t seed = 3, std::size_t q = 8, std::size_t p = 8, std::size_t epochs = 5) {
  TinyModels m;
  m.corpus = generate_corpus(tiny_corpus_config(), seed);
  embed::TrainConfig tc{epochs, 16, 0.05, 0.9, 16, 5.0};
  m.visit = embed::train_visit_autoencoder(m.corpus, q, tc, seed + 1);
  m.patient = embed::train_patient_autoencoder(m.corpus, m.visit, p, tc, seed + 2);
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ddv-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ddv::testing
