#pragma once

// Two-stage signature learning. A visit-level multi-label autoencoder maps
// each multi-hot visit to a dense q-vector; a recurrent sequence autoencoder
// then compresses the sequence of visit embeddings into a p-dimensional
// patient signature. Published signatures carry Gaussian noise.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "ddv/corpus.hpp"
#include "ddv/networks.hpp"
#include "ddv/scoring.hpp"
#include "ddv/training.hpp"

namespace ddv::embed {

using nn::LossWeights;
using nn::Vector;

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  // Width of the hidden layer of the visit perceptrons.
  std::size_t hidden = 32;
  double clip_norm = 5.0;

  nn::FitConfig fit() const { return {epochs, batch_size, learning_rate, momentum, clip_norm}; }
};

struct VisitEncoderModel {
  std::size_t d = 0;
  std::size_t hidden = 0;
  std::size_t q = 0;
  nn::ParamBlock encoder;  // rho
  nn::ParamBlock decoder;  // kappa, secret
  LossWeights weights;
  std::vector<double> loss_history;
  std::uint64_t seed = 0;
  int model_version = 1;
};

struct PatientEncoderModel {
  std::size_t q = 0;
  std::size_t p = 0;
  nn::ParamBlock encoder;  // theta
  nn::ParamBlock decoder;  // gamma, secret
  std::vector<double> loss_history;
  std::uint64_t seed = 0;
  int model_version = 1;
};

// The encoder halves only; this is what providers run and what may be
// published.
struct PublicEncoder {
  std::size_t d = 0;
  std::size_t hidden = 0;
  std::size_t q = 0;
  std::size_t p = 0;
  nn::ParamBlock visit_encoder;
  nn::ParamBlock patient_encoder;
  int model_version = 1;
};

struct Signature {
  Vector vector;
  double noise_sigma = 0.0;
  int model_version = 1;
};

// Step size tau_k = tau_0 / (1 + k * decay) for the k-th online update.
struct OnlineUpdateConfig {
  double step_size_tau = 0.01;
  double decay = 0.0;

  double tau(std::size_t k) const { return step_size_tau / (1.0 + static_cast<double>(k) * decay); }
};

struct IncrementalResult {
  PatientEncoderModel model;
  double effective_tau = 0.0;
  int halvings = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

// ---- visit level -----------------------------------------------------------

std::vector<VisitVector> all_visits(std::span<const PatientRecord> records);

VisitEncoderModel train_visit_autoencoder(const Corpus& corpus, std::size_t q, const TrainConfig& config,
                                          std::uint64_t seed, const LossWeights& weights = {});
VisitEncoderModel train_visit_autoencoder(std::span<const VisitVector> visits, std::size_t d, std::size_t q,
                                          const TrainConfig& config, std::uint64_t seed,
                                          const LossWeights& weights = {});

Vector encode_visit(const VisitEncoderModel& model, const VisitVector& visit);
// Per-code probabilities.
Vector decode_visit(const VisitEncoderModel& model, const Vector& embedding);

// Mean weighted cross-entropy per visit; gradients (mean) are accumulated
// when the output blocks are given.
double visit_batch_loss(const VisitEncoderModel& model, std::span<const VisitVector> visits,
                        nn::ParamBlock* encoder_grad = nullptr, nn::ParamBlock* decoder_grad = nullptr);

PrecisionRecall visit_recovery(const VisitEncoderModel& model, std::span<const VisitVector> visits,
                               double threshold = 0.5);

// ---- patient level ---------------------------------------------------------

PatientEncoderModel train_patient_autoencoder(const Corpus& corpus, const VisitEncoderModel& visit_model,
                                              std::size_t p, const TrainConfig& config, std::uint64_t seed);
PatientEncoderModel train_patient_autoencoder(std::span<const PatientRecord> records,
                                              const VisitEncoderModel& visit_model, std::size_t p,
                                              const TrainConfig& config, std::uint64_t seed);

std::vector<Vector> embed_visits(const VisitEncoderModel& visit_model, const PatientRecord& record);

Vector encode_patient(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                      const PatientRecord& record);
// Per-visit, per-code probabilities in chronological order.
std::vector<Vector> decode_patient(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                                   const Vector& z, std::size_t n_visits);

// Mean over records of the squared Frobenius reconstruction error of the
// visit-embedding sequence.
double patient_batch_loss(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                          std::span<const PatientRecord> records, nn::ParamBlock* encoder_grad = nullptr,
                          nn::ParamBlock* decoder_grad = nullptr);

// Squared error per embedding coordinate, averaged over all visit steps.
double mean_step_mse(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                     std::span<const PatientRecord> records);
// The same quantity for a predictor that always outputs the zero vector.
double zero_predictor_mse(const VisitEncoderModel& visit_model, std::span<const PatientRecord> records);

// Micro-averaged precision/recall of decode(encode(record)) against the
// record's visits.
PrecisionRecall patient_recovery(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                                 std::span<const PatientRecord> records, double threshold = 0.5);

// ---- publication -----------------------------------------------------------

PublicEncoder public_encoder(const VisitEncoderModel& visit_model, const PatientEncoderModel& model);
Vector encode_patient(const PublicEncoder& encoder, const PatientRecord& record);

// v = f(X) + nu with nu_i ~ N(0, sigma^2) drawn fresh on every call.
Signature make_signature(const PublicEncoder& encoder, const PatientRecord& record, double sigma,
                         std::mt19937_64& rng);
Signature make_signature(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                         const PatientRecord& record, double sigma, std::mt19937_64& rng);

// One gradient step on the record's reconstruction loss with the update's
// step size; the step is halved (up to 8 times) until the record's loss does
// not increase. If no step qualifies the model is returned unchanged with an
// effective step of 0. The visit model is held fixed.
IncrementalResult incremental_update(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                                     const PatientRecord& record, const OnlineUpdateConfig& config,
                                     std::size_t update_index = 0);

// ---- model files -----------------------------------------------------------
// Structured text; files holding decoder parameters are marked secret.

enum class ModelKind { visit_autoencoder, patient_autoencoder, public_encoder };

void save_model(const VisitEncoderModel& model, const std::filesystem::path& path);
void save_model(const PatientEncoderModel& model, const std::filesystem::path& path);
void save_model(const PublicEncoder& encoder, const std::filesystem::path& path);
VisitEncoderModel load_visit_model(const std::filesystem::path& path);
PatientEncoderModel load_patient_model(const std::filesystem::path& path);
PublicEncoder load_public_encoder(const std::filesystem::path& path);

// Reads only the header.
bool model_file_is_secret(const std::filesystem::path& path);

}  // namespace ddv::embed
