#include <cmath>
#include <random>

#include "ddv/embed.hpp"
#include "ddv/error.hpp"

namespace ddv::embed {

namespace {

using Sequence = std::vector<Vector>;

void check_record(const VisitEncoderModel& vm, const PatientRecord& record) {
  if (record.visits.empty()) throw PreconditionError("record " + record.patient_id + " has no visits");
  for (const auto& v : record.visits)
    for (CodeIndex c : v.active_codes)
      if (c >= vm.d)
        throw PreconditionError("record " + record.patient_id + " references code " + std::to_string(c) +
                                " outside vocabulary of size " + std::to_string(vm.d));
}

void check_dims(const PatientEncoderModel& pm, const VisitEncoderModel& vm) {
  if (pm.q != vm.q) throw PreconditionError("patient model expects q = " + std::to_string(pm.q) +
                                            " but visit model produces q = " + std::to_string(vm.q));
}

// Loss and (optionally) gradients of one embedded sequence; gradients are
// scaled by `scale` before accumulation.
double sequence_loss(const PatientEncoderModel& pm, const Sequence& g, double scale, nn::ParamBlock* genc,
                     nn::ParamBlock* gdec) {
  const bool want_grad = genc != nullptr;
  nn::SequenceTrace enc_trace, dec_trace;
  const Vector z = nn::patient_encode(pm.encoder, g, want_grad ? &enc_trace : nullptr);
  const Sequence out = nn::patient_decode(pm.decoder, z, g.size(), want_grad ? &dec_trace : nullptr);
  double loss = 0.0;
  Sequence d_out(g.size());
  for (std::size_t t = 0; t < g.size(); ++t) {
    const Vector diff = out[t] - g[t];
    loss += diff.squaredNorm();
    if (want_grad) d_out[t] = 2.0 * scale * diff;
  }
  if (want_grad) {
    const Vector dz = nn::patient_decode_backward(pm.decoder, dec_trace, d_out, *gdec);
    nn::patient_encode_backward(pm.encoder, enc_trace, dz, *genc);
  }
  return loss;
}

}  // namespace

std::vector<Vector> embed_visits(const VisitEncoderModel& vm, const PatientRecord& record) {
  check_record(vm, record);
  Sequence g;
  g.reserve(record.visits.size());
  for (const auto& v : record.visits) g.push_back(nn::visit_encoder_forward(vm.encoder, v));
  return g;
}

PatientEncoderModel train_patient_autoencoder(const Corpus& corpus, const VisitEncoderModel& visit_model,
                                              std::size_t p, const TrainConfig& config, std::uint64_t seed) {
  return train_patient_autoencoder(std::span<const PatientRecord>(corpus.records), visit_model, p, config, seed);
}

PatientEncoderModel train_patient_autoencoder(std::span<const PatientRecord> records,
                                              const VisitEncoderModel& visit_model, std::size_t p,
                                              const TrainConfig& config, std::uint64_t seed) {
  if (records.empty()) throw PreconditionError("cannot train on an empty record set");
  if (p == 0) throw PreconditionError("signature size p must be at least 1");

  std::vector<Sequence> sequences;
  sequences.reserve(records.size());
  for (const auto& r : records) sequences.push_back(embed_visits(visit_model, r));

  PatientEncoderModel model;
  model.q = visit_model.q;
  model.p = p;
  model.seed = seed;
  model.encoder = nn::make_patient_encoder(model.q, p);
  model.decoder = nn::make_patient_decoder(model.q, p);
  std::mt19937_64 init(seed);
  nn::init_uniform(model.encoder, init);
  nn::init_uniform(model.decoder, init);

  auto batch_objective = [&](std::span<const std::size_t> idx, std::vector<nn::ParamBlock>& grads) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) total += sequence_loss(model, sequences[i], scale, &grads[0], &grads[1]);
    return total * scale;
  };
  auto full_objective = [&] {
    double total = 0.0;
    for (const auto& g : sequences) total += sequence_loss(model, g, 0.0, nullptr, nullptr);
    return total / static_cast<double>(sequences.size());
  };
  model.loss_history = nn::fit({&model.encoder, &model.decoder}, sequences.size(), config.fit(),
                               seed ^ 0x9e3779b97f4a7c15ULL, batch_objective, full_objective);
  return model;
}

double patient_batch_loss(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                          std::span<const PatientRecord> records, nn::ParamBlock* encoder_grad,
                          nn::ParamBlock* decoder_grad) {
  check_dims(model, visit_model);
  if (records.empty()) throw PreconditionError("empty record batch");
  nn::ParamBlock scratch_enc, scratch_dec;
  const bool want_grad = encoder_grad || decoder_grad;
  if (want_grad && !encoder_grad) {
    scratch_enc = model.encoder.zeros_like();
    encoder_grad = &scratch_enc;
  }
  if (want_grad && !decoder_grad) {
    scratch_dec = model.decoder.zeros_like();
    decoder_grad = &scratch_dec;
  }
  const double scale = 1.0 / static_cast<double>(records.size());
  double total = 0.0;
  for (const auto& r : records)
    total += sequence_loss(model, embed_visits(visit_model, r), scale, encoder_grad, decoder_grad);
  return total * scale;
}

double mean_step_mse(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                     std::span<const PatientRecord> records) {
  check_dims(model, visit_model);
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& r : records) {
    total += sequence_loss(model, embed_visits(visit_model, r), 0.0, nullptr, nullptr);
    steps += r.visits.size();
  }
  return total / static_cast<double>(steps * model.q);
}

double zero_predictor_mse(const VisitEncoderModel& visit_model, std::span<const PatientRecord> records) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& r : records) {
    for (const auto& e : embed_visits(visit_model, r)) total += e.squaredNorm();
    steps += r.visits.size();
  }
  return total / static_cast<double>(steps * visit_model.q);
}

Vector encode_patient(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                      const PatientRecord& record) {
  check_dims(model, visit_model);
  return nn::patient_encode(model.encoder, embed_visits(visit_model, record));
}

std::vector<Vector> decode_patient(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                                   const Vector& z, std::size_t n_visits) {
  check_dims(model, visit_model);
  if (static_cast<std::size_t>(z.size()) != model.p)
    throw PreconditionError("signature has length " + std::to_string(z.size()) + ", expected " +
                            std::to_string(model.p));
  if (n_visits == 0) throw PreconditionError("n_visits must be at least 1");
  Sequence out = nn::patient_decode(model.decoder, z, n_visits);
  for (auto& e : out) e = decode_visit(visit_model, e);
  return out;
}

PrecisionRecall patient_recovery(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                                 std::span<const PatientRecord> records, double threshold) {
  Confusion c;
  for (const auto& r : records) {
    const auto probs = decode_patient(model, visit_model, encode_patient(model, visit_model, r), r.visits.size());
    for (std::size_t t = 0; t < r.visits.size(); ++t) c.add(binarize(probs[t], threshold), r.visits[t]);
  }
  return score(c);
}

IncrementalResult incremental_update(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                                     const PatientRecord& record, const OnlineUpdateConfig& config,
                                     std::size_t update_index) {
  check_dims(model, visit_model);
  const double tau0 = config.tau(update_index);
  if (!(tau0 >= 0.0)) throw PreconditionError("step size must be non-negative");

  const Sequence g = embed_visits(visit_model, record);
  nn::ParamBlock genc = model.encoder.zeros_like();
  nn::ParamBlock gdec = model.decoder.zeros_like();
  const double before = sequence_loss(model, g, 1.0, &genc, &gdec);
  if (!genc.all_finite() || !gdec.all_finite() || !std::isfinite(before))
    throw TrainingError("non-finite gradient in incremental update", static_cast<int>(update_index));

  IncrementalResult result{model, 0.0, 0, before, before};
  double tau = tau0;
  for (int halvings = 0; halvings <= 8; ++halvings, tau *= 0.5) {
    PatientEncoderModel trial = model;
    trial.encoder.axpy(-tau, genc);
    trial.decoder.axpy(-tau, gdec);
    const double after = sequence_loss(trial, g, 0.0, nullptr, nullptr);
    if (after <= before) {
      if (tau > 0.0) ++trial.model_version;
      result = IncrementalResult{std::move(trial), tau, halvings, before, after};
      return result;
    }
  }
  return result;
}

}  // namespace ddv::embed
