#include <random>

#include "ddv/embed.hpp"
#include "ddv/error.hpp"

namespace ddv::embed {

std::vector<VisitVector> all_visits(std::span<const PatientRecord> records) {
  std::vector<VisitVector> out;
  for (const auto& r : records) out.insert(out.end(), r.visits.begin(), r.visits.end());
  return out;
}

namespace {

void check_visit(const VisitEncoderModel& model, const VisitVector& visit) {
  for (CodeIndex c : visit.active_codes)
    if (c >= model.d)
      throw PreconditionError("visit code " + std::to_string(c) + " outside vocabulary of size " +
                              std::to_string(model.d));
}

}  // namespace

VisitEncoderModel train_visit_autoencoder(const Corpus& corpus, std::size_t q, const TrainConfig& config,
                                          std::uint64_t seed, const LossWeights& weights) {
  if (corpus.records.empty()) throw PreconditionError("cannot train on an empty corpus");
  const auto visits = all_visits(corpus.records);
  return train_visit_autoencoder(visits, corpus.dimension(), q, config, seed, weights);
}

VisitEncoderModel train_visit_autoencoder(std::span<const VisitVector> visits, std::size_t d, std::size_t q,
                                          const TrainConfig& config, std::uint64_t seed,
                                          const LossWeights& weights) {
  if (visits.empty()) throw PreconditionError("cannot train on an empty visit set");
  if (q == 0 || q > d) throw PreconditionError("latent size q must satisfy 0 < q <= d");
  if (weights.positive <= 0.0 || weights.negative <= 0.0) throw PreconditionError("loss weights must be positive");

  VisitEncoderModel model;
  model.d = d;
  model.hidden = config.hidden;
  model.q = q;
  model.weights = weights;
  model.seed = seed;
  model.encoder = nn::make_visit_encoder(d, config.hidden, q);
  model.decoder = nn::make_visit_decoder(d, config.hidden, q);
  for (const auto& v : visits) check_visit(model, v);

  std::mt19937_64 init(seed);
  nn::init_uniform(model.encoder, init);
  nn::init_uniform(model.decoder, init);

  std::vector<VisitVector> batch;
  auto batch_objective = [&](std::span<const std::size_t> idx, std::vector<nn::ParamBlock>& grads) {
    batch.clear();
    for (std::size_t i : idx) batch.push_back(visits[i]);
    return visit_batch_loss(model, batch, &grads[0], &grads[1]);
  };
  auto full_objective = [&] { return visit_batch_loss(model, visits); };

  model.loss_history = nn::fit({&model.encoder, &model.decoder}, visits.size(), config.fit(), seed ^ 0x9e3779b97f4a7c15ULL,
                               batch_objective, full_objective);
  return model;
}

double visit_batch_loss(const VisitEncoderModel& model, std::span<const VisitVector> visits,
                        nn::ParamBlock* encoder_grad, nn::ParamBlock* decoder_grad) {
  const bool want_grad = encoder_grad || decoder_grad;
  nn::ParamBlock scratch_enc, scratch_dec;
  if (want_grad && !encoder_grad) {
    scratch_enc = model.encoder.zeros_like();
    encoder_grad = &scratch_enc;
  }
  if (want_grad && !decoder_grad) {
    scratch_dec = model.decoder.zeros_like();
    decoder_grad = &scratch_dec;
  }
  const double scale = 1.0 / static_cast<double>(visits.size());
  double total = 0.0;
  nn::VisitEncoderCache enc_cache;
  nn::VisitDecoderCache dec_cache;
  Vector dlogits;
  for (const auto& v : visits) {
    const Vector e = nn::visit_encoder_forward(model.encoder, v, want_grad ? &enc_cache : nullptr);
    const Vector logits = nn::visit_decoder_logits(model.decoder, e, want_grad ? &dec_cache : nullptr);
    total += nn::weighted_bce(logits, v, model.weights, want_grad ? &dlogits : nullptr);
    if (want_grad) {
      dlogits *= scale;
      const Vector de = nn::visit_decoder_backward(model.decoder, dec_cache, dlogits, *decoder_grad);
      nn::visit_encoder_backward(model.encoder, enc_cache, de, *encoder_grad);
    }
  }
  return total * scale;
}

Vector encode_visit(const VisitEncoderModel& model, const VisitVector& visit) {
  check_visit(model, visit);
  return nn::visit_encoder_forward(model.encoder, visit);
}

Vector decode_visit(const VisitEncoderModel& model, const Vector& embedding) {
  if (static_cast<std::size_t>(embedding.size()) != model.q)
    throw PreconditionError("embedding has length " + std::to_string(embedding.size()) + ", expected " +
                            std::to_string(model.q));
  return nn::visit_decoder_logits(model.decoder, embedding).unaryExpr([](double a) { return nn::sigmoid(a); });
}

PrecisionRecall visit_recovery(const VisitEncoderModel& model, std::span<const VisitVector> visits, double threshold) {
  Confusion c;
  for (const auto& v : visits) c.add(binarize(decode_visit(model, encode_visit(model, v)), threshold), v);
  return score(c);
}

}  // namespace ddv::embed
