#include "ddv/embed.hpp"
#include "ddv/error.hpp"

namespace ddv::embed {

PublicEncoder public_encoder(const VisitEncoderModel& visit_model, const PatientEncoderModel& model) {
  if (model.q != visit_model.q) throw PreconditionError("visit and patient models disagree on q");
  PublicEncoder out;
  out.d = visit_model.d;
  out.hidden = visit_model.hidden;
  out.q = visit_model.q;
  out.p = model.p;
  out.visit_encoder = visit_model.encoder;
  out.patient_encoder = model.encoder;
  out.model_version = model.model_version;
  return out;
}

Vector encode_patient(const PublicEncoder& encoder, const PatientRecord& record) {
  if (record.visits.empty()) throw PreconditionError("record " + record.patient_id + " has no visits");
  std::vector<Vector> g;
  g.reserve(record.visits.size());
  for (const auto& v : record.visits) {
    for (CodeIndex c : v.active_codes)
      if (c >= encoder.d)
        throw PreconditionError("record " + record.patient_id + " references code " + std::to_string(c) +
                                " outside vocabulary of size " + std::to_string(encoder.d));
    g.push_back(nn::visit_encoder_forward(encoder.visit_encoder, v));
  }
  return nn::patient_encode(encoder.patient_encoder, g);
}

namespace {

Signature noisy(Vector clean, double sigma, int version, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw PreconditionError("noise sigma must be non-negative");
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < clean.size(); ++i) clean[i] += noise(rng);
  }
  return Signature{std::move(clean), sigma, version};
}

}  // namespace

Signature make_signature(const PublicEncoder& encoder, const PatientRecord& record, double sigma,
                         std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw PreconditionError("noise sigma must be non-negative");
  return noisy(encode_patient(encoder, record), sigma, encoder.model_version, rng);
}

Signature make_signature(const PatientEncoderModel& model, const VisitEncoderModel& visit_model,
                         const PatientRecord& record, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw PreconditionError("noise sigma must be non-negative");
  return noisy(encode_patient(model, visit_model, record), sigma, model.model_version, rng);
}

}  // namespace ddv::embed
