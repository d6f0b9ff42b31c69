#include "ddv/attack.hpp"

#include <cstdio>
#include <numeric>
#include <ostream>

#include "ddv/error.hpp"

namespace ddv::attack {

void validate(const PurchasedCorpus& purchased) {
  if (purchased.pairs.empty()) throw PreconditionError("purchased corpus is empty");
  const int version = purchased.pairs.front().signature.model_version;
  for (const auto& pair : purchased.pairs) {
    if (pair.signature.model_version != version)
      throw PreconditionError("purchased signatures come from more than one model version");
    if (pair.record.visits.empty()) throw PreconditionError("purchased record " + pair.record.patient_id + " is empty");
  }
}

std::vector<PurchasedPair> publish(std::span<const PatientRecord> records, const embed::PublicEncoder& encoder,
                                   double sigma, std::mt19937_64& rng) {
  std::vector<PurchasedPair> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r, embed::make_signature(encoder, r, sigma, rng)});
  return out;
}

nn::Vector DecoderParams::denoise(const nn::Vector& signature) const {
  return input_mean + input_gain.cwiseProduct(signature - input_mean);
}

nn::Vector DecoderParams::flatten() const {
  const nn::Vector a = patient_decoder.flatten();
  const nn::Vector b = visit_decoder.flatten();
  nn::Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

DecoderParams original_decoder(const embed::VisitEncoderModel& visit_model, const embed::PatientEncoderModel& model) {
  const auto p = static_cast<Eigen::Index>(model.p);
  return {visit_model.d,        visit_model.hidden, visit_model.q, model.p, nn::Vector::Zero(p),
          nn::Vector::Ones(p), model.decoder,      visit_model.decoder};
}

namespace {

double pair_loss(const DecoderParams& dec, const PurchasedPair& pair, const nn::LossWeights& weights, double scale,
                 nn::ParamBlock* gpat, nn::ParamBlock* gvis) {
  const bool want_grad = gpat != nullptr;
  const auto& visits = pair.record.visits;
  nn::SequenceTrace trace;
  const auto embeddings = nn::patient_decode(dec.patient_decoder, dec.denoise(pair.signature.vector), visits.size(),
                                             want_grad ? &trace : nullptr);
  double loss = 0.0;
  std::vector<nn::Vector> d_embeddings(visits.size());
  nn::VisitDecoderCache cache;
  nn::Vector dlogits;
  for (std::size_t t = 0; t < visits.size(); ++t) {
    const nn::Vector logits = nn::visit_decoder_logits(dec.visit_decoder, embeddings[t], want_grad ? &cache : nullptr);
    loss += nn::weighted_bce(logits, visits[t], weights, want_grad ? &dlogits : nullptr);
    if (want_grad) {
      dlogits *= scale;
      d_embeddings[t] = nn::visit_decoder_backward(dec.visit_decoder, cache, dlogits, *gvis);
    }
  }
  if (want_grad) nn::patient_decode_backward(dec.patient_decoder, trace, d_embeddings, *gpat);
  return loss;
}

void check_signature(const DecoderParams& dec, const nn::Vector& v) {
  if (static_cast<std::size_t>(v.size()) != dec.p)
    throw PreconditionError("signature has length " + std::to_string(v.size()) + ", decoder expects " +
                            std::to_string(dec.p));
}

}  // namespace

double decoder_loss(const DecoderParams& decoder, std::span<const PurchasedPair> pairs, const nn::LossWeights& weights,
                    nn::ParamBlock* patient_grad, nn::ParamBlock* visit_grad) {
  if (pairs.empty()) throw PreconditionError("no pairs to evaluate");
  nn::ParamBlock scratch_p, scratch_v;
  const bool want_grad = patient_grad || visit_grad;
  if (want_grad && !patient_grad) {
    scratch_p = decoder.patient_decoder.zeros_like();
    patient_grad = &scratch_p;
  }
  if (want_grad && !visit_grad) {
    scratch_v = decoder.visit_decoder.zeros_like();
    visit_grad = &scratch_v;
  }
  const double scale = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& pair : pairs) {
    check_signature(decoder, pair.signature.vector);
    total += pair_loss(decoder, pair, weights, scale, patient_grad, visit_grad);
  }
  return total * scale;
}

DecoderParams retrain_decoder(const PurchasedCorpus& purchased, const embed::PublicEncoder& encoder,
                              const AttackConfig& config, std::uint64_t seed) {
  validate(purchased);
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
  DecoderParams dec;
  dec.d = encoder.d;
  dec.hidden = encoder.hidden;
  dec.q = encoder.q;
  dec.p = encoder.p;
  dec.patient_decoder = nn::make_patient_decoder(encoder.q, encoder.p);
  dec.visit_decoder = nn::make_visit_decoder(encoder.d, encoder.hidden, encoder.q);
  for (const auto& pair : purchased.pairs) {
    check_signature(dec, pair.signature.vector);
    for (const auto& v : pair.record.visits)
      for (CodeIndex c : v.active_codes)
        if (c >= dec.d) throw PreconditionError("purchased record " + pair.record.patient_id + " exceeds vocabulary");
  }

  const auto p = static_cast<Eigen::Index>(dec.p);
  const double n = static_cast<double>(purchased.pairs.size());
  dec.input_mean = nn::Vector::Zero(p);
  double noise_var = 0.0;
  for (const auto& pair : purchased.pairs) {
    dec.input_mean += pair.signature.vector;
    noise_var += pair.signature.noise_sigma * pair.signature.noise_sigma;
  }
  dec.input_mean /= n;
  noise_var /= n;
  nn::Vector var = nn::Vector::Zero(p);
  for (const auto& pair : purchased.pairs) var += (pair.signature.vector - dec.input_mean).cwiseAbs2();
  var /= n;
  dec.input_gain = nn::Vector::Ones(p);
  if (noise_var > 0.0)
    for (Eigen::Index k = 0; k < p; ++k) dec.input_gain[k] = var[k] > noise_var ? 1.0 - noise_var / var[k] : 0.0;

  std::mt19937_64 init(seed);
  nn::init_uniform(dec.patient_decoder, init);
  nn::init_uniform(dec.visit_decoder, init);

  std::vector<PurchasedPair> fit_pairs, val_pairs;
  {
    const auto [fit_idx, val_idx] =
        split_indices(purchased.pairs.size(), 1.0 - config.validation_fraction, seed ^ 0x6a09e667f3bcc909ULL);
    for (auto i : fit_idx) fit_pairs.push_back(purchased.pairs[i]);
    for (auto i : val_idx) val_pairs.push_back(purchased.pairs[i]);
  }
  const auto& weights = config.weights;

  // Stage 1: visit decoder on public embeddings of the purchased visits.
  std::vector<nn::Vector> embeddings;
  std::vector<const VisitVector*> targets;
  std::vector<std::vector<nn::Vector>> sequences;
  for (const auto& pair : fit_pairs) {
    sequences.emplace_back();
    for (const auto& v : pair.record.visits) {
      embeddings.push_back(nn::visit_encoder_forward(encoder.visit_encoder, v));
      targets.push_back(&v);
      sequences.back().push_back(embeddings.back());
    }
  }
  std::vector<std::vector<nn::Vector>> val_sequences;
  for (const auto& pair : val_pairs) {
    val_sequences.emplace_back();
    for (const auto& v : pair.record.visits)
      val_sequences.back().push_back(nn::visit_encoder_forward(encoder.visit_encoder, v));
  }
  auto visit_loss = [&](std::span<const std::size_t> idx, nn::ParamBlock* grad) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    nn::VisitDecoderCache cache;
    nn::Vector dlogits;
    double total = 0.0;
    for (std::size_t i : idx) {
      const nn::Vector logits = nn::visit_decoder_logits(dec.visit_decoder, embeddings[i], grad ? &cache : nullptr);
      total += nn::weighted_bce(logits, *targets[i], weights, grad ? &dlogits : nullptr);
      if (grad) {
        dlogits *= scale;
        nn::visit_decoder_backward(dec.visit_decoder, cache, dlogits, *grad);
      }
    }
    return total * scale;
  };
  std::vector<std::size_t> all_visits(embeddings.size());
  std::iota(all_visits.begin(), all_visits.end(), std::size_t{0});
  nn::fit({&dec.visit_decoder}, embeddings.size(), config.visit_stage.fit(), seed ^ 0x3c6ef372fe94f82bULL,
          [&](std::span<const std::size_t> idx, std::vector<nn::ParamBlock>& g) { return visit_loss(idx, &g[0]); },
          [&] { return visit_loss(all_visits, nullptr); });

  // Stage 2: recurrent decoder from signatures to embedding sequences,
  // stopped at the best validation epoch.
  auto sequence_loss = [&](std::span<const PurchasedPair> pairs, const std::vector<std::vector<nn::Vector>>& seqs,
                           std::span<const std::size_t> idx, nn::ParamBlock* grad) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) {
      const auto& g = seqs[i];
      nn::SequenceTrace trace;
      const auto out = nn::patient_decode(dec.patient_decoder, dec.denoise(pairs[i].signature.vector), g.size(),
                                          grad ? &trace : nullptr);
      std::vector<nn::Vector> d_out(g.size());
      for (std::size_t t = 0; t < g.size(); ++t) {
        const nn::Vector diff = out[t] - g[t];
        total += diff.squaredNorm();
        if (grad) d_out[t] = 2.0 * scale * diff;
      }
      if (grad) nn::patient_decode_backward(dec.patient_decoder, trace, d_out, *grad);
    }
    return total * scale;
  };
  std::vector<std::size_t> all_records(fit_pairs.size()), all_val(val_pairs.size());
  std::iota(all_records.begin(), all_records.end(), std::size_t{0});
  std::iota(all_val.begin(), all_val.end(), std::size_t{0});
  nn::FullObjective sequence_validation;
  if (!val_pairs.empty())
    sequence_validation = [&] { return sequence_loss(val_pairs, val_sequences, all_val, nullptr); };
  nn::fit(
      {&dec.patient_decoder}, fit_pairs.size(), config.patient_stage.fit(), seed ^ 0xa54ff53a5f1d36f1ULL,
      [&](std::span<const std::size_t> idx, std::vector<nn::ParamBlock>& g) {
        return sequence_loss(fit_pairs, sequences, idx, &g[0]);
      },
      [&] { return sequence_loss(fit_pairs, sequences, all_records, nullptr); }, sequence_validation);

  // Stage 3: both decoders on the plaintext loss.
  auto joint_batch = [&](std::span<const std::size_t> idx, std::vector<nn::ParamBlock>& grads) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) total += pair_loss(dec, fit_pairs[i], weights, scale, &grads[0], &grads[1]);
    return total * scale;
  };
  nn::FullObjective validation;
  if (!val_pairs.empty()) validation = [&] { return decoder_loss(dec, val_pairs, weights); };
  nn::fit({&dec.patient_decoder, &dec.visit_decoder}, fit_pairs.size(), config.joint_stage.fit(),
          seed ^ 0x2545f4914f6cdd1dULL, joint_batch, [&] { return decoder_loss(dec, fit_pairs, weights); },
          validation);
  return dec;
}

std::vector<nn::Vector> decode(const DecoderParams& decoder, const nn::Vector& signature, std::size_t n_visits) {
  check_signature(decoder, signature);
  if (n_visits == 0) throw PreconditionError("n_visits must be at least 1");
  auto out = nn::patient_decode(decoder.patient_decoder, decoder.denoise(signature), n_visits);
  for (auto& e : out)
    e = nn::visit_decoder_logits(decoder.visit_decoder, e).unaryExpr([](double a) { return nn::sigmoid(a); });
  return out;
}

PrecisionRecall evaluate_attack(const DecoderParams& decoder, std::span<const PurchasedPair> heldout,
                                double threshold) {
  Confusion c;
  for (const auto& pair : heldout) {
    const auto probs = decode(decoder, pair.signature.vector, pair.record.visits.size());
    for (std::size_t t = 0; t < probs.size(); ++t) c.add(binarize(probs[t], threshold), pair.record.visits[t]);
  }
  return score(c);
}

ParameterDistance parameter_distance(const nn::Vector& theta_0, const nn::Vector& theta_eps) {
  if (theta_0.size() != theta_eps.size())
    throw PreconditionError("parameter vectors differ in length: " + std::to_string(theta_0.size()) + " vs " +
                            std::to_string(theta_eps.size()));
  const double distance = (theta_eps - theta_0).squaredNorm();
  const double base = theta_0.squaredNorm();
  if (base == 0.0 && distance != 0.0) throw PreconditionError("ratio undefined for an all-zero reference");
  return {distance, base == 0.0 ? 0.0 : distance / base};
}

ParameterDistance parameter_distance(const DecoderParams& theta_0, const DecoderParams& theta_eps) {
  if (!theta_0.patient_decoder.same_shape(theta_eps.patient_decoder) ||
      !theta_0.visit_decoder.same_shape(theta_eps.visit_decoder))
    throw PreconditionError("decoders have different shapes");
  return parameter_distance(theta_0.flatten(), theta_eps.flatten());
}

nn::Vector marginal_frequencies(std::span<const PatientRecord> records, std::size_t d) {
  nn::Vector counts = nn::Vector::Zero(static_cast<Eigen::Index>(d));
  std::size_t visits = 0;
  for (const auto& r : records)
    for (const auto& v : r.visits) {
      ++visits;
      for (CodeIndex c : v.active_codes) {
        if (c >= d) throw PreconditionError("code index outside vocabulary");
        counts[c] += 1.0;
      }
    }
  if (visits == 0) throw PreconditionError("no visits to count");
  return counts / static_cast<double>(visits);
}

PrecisionRecall base_rate_recovery(std::span<const PatientRecord> fit, std::span<const PatientRecord> eval,
                                   std::size_t d, const nn::LossWeights& weights, double threshold) {
  const nn::Vector f = marginal_frequencies(fit, d);
  nn::Vector prob(f.size());
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    const double pos = weights.positive * f[j];
    prob[j] = pos / (pos + weights.negative * (1.0 - f[j]));
  }
  const VisitVector predicted = binarize(prob, threshold);
  Confusion c;
  for (const auto& r : eval)
    for (const auto& v : r.visits) c.add(predicted, v);
  return score(c);
}

std::vector<AttackReport> noise_sweep(const Corpus& corpus, const embed::VisitEncoderModel& visit_model,
                                      const embed::PatientEncoderModel& model, std::span<const double> sigmas,
                                      const AttackConfig& config, std::uint64_t seed) {
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0)) throw PreconditionError("noise levels must be non-negative");
    if (i && sigmas[i] < sigmas[i - 1]) throw PreconditionError("noise levels must be sorted ascending");
  }
  const auto encoder = embed::public_encoder(visit_model, model);
  const auto [bought_idx, heldout_idx] = split_indices(corpus.records.size(), config.purchased_fraction, seed);
  const auto bought = select(corpus.records, bought_idx);
  const auto heldout = select(corpus.records, heldout_idx);
  if (bought.empty() || heldout.empty()) throw PreconditionError("purchased fraction leaves an empty split");

  const std::uint64_t train_seed = seed ^ 0x51ed270b27f1e5a9ULL;
  std::mt19937_64 unused(0);
  const DecoderParams theta_0 =
      retrain_decoder(PurchasedCorpus{publish(bought, encoder, 0.0, unused)}, encoder, config, train_seed);

  std::vector<AttackReport> reports;
  reports.reserve(sigmas.size());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double sigma = sigmas[i];
    std::mt19937_64 noise(seed + 0x9e3779b97f4a7c15ULL * (i + 1));
    PurchasedCorpus purchased{publish(bought, encoder, sigma, noise)};
    const auto targets = publish(heldout, encoder, sigma, noise);
    const DecoderParams dec = sigma == 0.0 ? theta_0 : retrain_decoder(purchased, encoder, config, train_seed);
    const auto pr = evaluate_attack(dec, targets);
    const auto dist = parameter_distance(theta_0, dec);
    reports.push_back({sigma, pr.precision, pr.recall, pr.precision_defined, dist.distance, dist.ratio});
  }
  return reports;
}

void write_report_table(std::ostream& out, std::span<const AttackReport> reports) {
  out << "epsilon\tprecision\trecall\tparam_distance\tratio\n";
  char line[160];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%.2f\t%.4f\t%.4f\t%.6g\t%.6g\n", r.epsilon, r.precision, r.recall,
                  r.param_distance, r.param_distance_ratio);
    out << line;
  }
}

}  // namespace ddv::attack
