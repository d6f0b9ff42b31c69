#pragma once

// Decoder re-training attack. An adversary who bought some records together
// with their published (noisy) signatures fits a decoder of the public
// architecture from signatures back to plaintext visits, then applies it to
// signatures of records it never bought.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ddv/embed.hpp"

namespace ddv::attack {

struct PurchasedPair {
  PatientRecord record;
  embed::Signature signature;
};

struct PurchasedCorpus {
  std::vector<PurchasedPair> pairs;
};

// Throws PreconditionError when empty or when signatures come from more
// than one model version.
void validate(const PurchasedCorpus& purchased);

// Publishes a signature with noise sigma for every record.
std::vector<PurchasedPair> publish(std::span<const PatientRecord> records, const embed::PublicEncoder& encoder,
                                   double sigma, std::mt19937_64& rng);

// Same layout as the secret decoder halves: patient-level recurrent decoder
// followed by the visit-level decoder. Signatures are first mapped to
// input_mean + input_gain * (v - input_mean), the per-component linear
// shrinkage estimate of the clean embedding; the provider's own decoder uses
// the identity.
struct DecoderParams {
  std::size_t d = 0;
  std::size_t hidden = 0;
  std::size_t q = 0;
  std::size_t p = 0;
  nn::Vector input_mean;
  nn::Vector input_gain;
  nn::ParamBlock patient_decoder;
  nn::ParamBlock visit_decoder;

  nn::Vector denoise(const nn::Vector& signature) const;
  // Decoder weights only.
  nn::Vector flatten() const;
};

// The provider's own decoder, for comparison.
DecoderParams original_decoder(const embed::VisitEncoderModel& visit_model, const embed::PatientEncoderModel& model);

struct AttackConfig {
  // Share of the corpus the adversary buys (noise_sweep only).
  double purchased_fraction = 0.5;
  // Share of the purchased pairs held back to pick the stopping epoch of the
  // joint stage.
  double validation_fraction = 0.2;
  // Visit decoder on the public visit embeddings of the purchased visits.
  embed::TrainConfig visit_stage{30, 32, 0.02, 0.9, 32, 5.0};
  // Recurrent decoder from signatures to visit-embedding sequences.
  embed::TrainConfig patient_stage{40, 16, 0.05, 0.9, 32, 5.0};
  // Both decoders together on the weighted cross-entropy against plaintext.
  embed::TrainConfig joint_stage{20, 16, 0.01, 0.9, 32, 5.0};
  nn::LossWeights weights;
};

// Re-estimates the secret decoder from purchased (signature, plaintext)
// pairs with the public encoder frozen. The published noise level gives the
// shrinkage gain max(0, 1 - sigma^2 / var_k) per signature component, with
// mean and variance taken over the purchased signatures. Training mirrors
// the provider's own: the visit decoder is fitted on the public embeddings of the
// purchased visits, the recurrent decoder maps signatures to embedding
// sequences, and a final joint stage minimises the weighted cross-entropy
// against the plaintext, stopped at the best validation epoch. Random
// initialisation is seeded.
DecoderParams retrain_decoder(const PurchasedCorpus& purchased, const embed::PublicEncoder& encoder,
                              const AttackConfig& config, std::uint64_t seed);

// Mean weighted cross-entropy per record of the decoder on the pairs.
double decoder_loss(const DecoderParams& decoder, std::span<const PurchasedPair> pairs,
                    const nn::LossWeights& weights = {}, nn::ParamBlock* patient_grad = nullptr,
                    nn::ParamBlock* visit_grad = nullptr);

// Per-visit, per-code probabilities in chronological order.
std::vector<nn::Vector> decode(const DecoderParams& decoder, const nn::Vector& signature, std::size_t n_visits);

// Micro-averaged precision/recall of the binarised reconstructions.
PrecisionRecall evaluate_attack(const DecoderParams& decoder, std::span<const PurchasedPair> heldout,
                                double threshold = 0.5);

struct ParameterDistance {
  double distance = 0.0;  // squared Euclidean norm of the difference
  double ratio = 0.0;     // distance / squared norm of theta_0
};

ParameterDistance parameter_distance(const nn::Vector& theta_0, const nn::Vector& theta_eps);
ParameterDistance parameter_distance(const DecoderParams& theta_0, const DecoderParams& theta_eps);

// Per-code frequency of positives over all visits.
nn::Vector marginal_frequencies(std::span<const PatientRecord> records, std::size_t d);

// The best input-independent predictor under the weighted loss: code j is
// predicted with probability w+ f_j / (w+ f_j + w- (1 - f_j)) where f_j is
// its marginal frequency in `fit`; scored on `eval`.
PrecisionRecall base_rate_recovery(std::span<const PatientRecord> fit, std::span<const PatientRecord> eval,
                                   std::size_t d, const nn::LossWeights& weights = {}, double threshold = 0.5);

struct AttackReport {
  double epsilon = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_defined = true;
  double param_distance = 0.0;
  double param_distance_ratio = 0.0;
};

// One report per sigma, in input order. The corpus is split once into a
// purchased part and a held-out part; for every sigma fresh signatures are
// published for both, the decoder is re-trained on the purchased part and
// evaluated on the held-out part. Distances are measured against the decoder
// re-trained from noiseless signatures with the same seed.
std::vector<AttackReport> noise_sweep(const Corpus& corpus, const embed::VisitEncoderModel& visit_model,
                                      const embed::PatientEncoderModel& model, std::span<const double> sigmas,
                                      const AttackConfig& config, std::uint64_t seed);

// Tab-separated: epsilon, precision, recall, param_distance, ratio.
void write_report_table(std::ostream& out, std::span<const AttackReport> reports);

}  // namespace ddv::attack
