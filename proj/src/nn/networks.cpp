#include "ddv/networks.hpp"

namespace ddv::nn {

namespace {

constexpr std::size_t W1 = 0, B1 = 1, W2 = 2, B2 = 3;
constexpr std::size_t W3 = 0, B3 = 1, W4 = 2, B4 = 3;

Vector logistic(const Vector& a) { return a.unaryExpr([](double v) { return sigmoid(v); }); }

}  // namespace

ParamBlock make_visit_encoder(std::size_t d, std::size_t hidden, std::size_t q) {
  const auto D = static_cast<Eigen::Index>(d), H = static_cast<Eigen::Index>(hidden),
             Q = static_cast<Eigen::Index>(q);
  ParamBlock b;
  b.add("enc.W1", H, D, D);
  b.add("enc.b1", H, 1, D);
  b.add("enc.W2", Q, H, H);
  b.add("enc.b2", Q, 1, H);
  return b;
}

Vector visit_encoder_forward(const ParamBlock& enc, const VisitVector& x, VisitEncoderCache* cache) {
  Vector a1 = enc[B1].col(0);
  for (CodeIndex j : x.active_codes) a1 += enc[W1].col(static_cast<Eigen::Index>(j));
  Vector h1 = a1.array().tanh();
  Vector e = (enc[W2] * h1 + enc[B2].col(0)).array().tanh();
  if (cache) {
    cache->active = x.active_codes;
    cache->h1 = h1;
    cache->e = e;
  }
  return e;
}

void visit_encoder_backward(const ParamBlock& enc, const VisitEncoderCache& cache, const Vector& de,
                            ParamBlock& grad) {
  const Vector da2 = de.array() * (1.0 - cache.e.array().square());
  grad[W2] += da2 * cache.h1.transpose();
  grad[B2].col(0) += da2;
  const Vector da1 = (enc[W2].transpose() * da2).array() * (1.0 - cache.h1.array().square());
  for (CodeIndex j : cache.active) grad[W1].col(static_cast<Eigen::Index>(j)) += da1;
  grad[B1].col(0) += da1;
}

ParamBlock make_visit_decoder(std::size_t d, std::size_t hidden, std::size_t q) {
  const auto D = static_cast<Eigen::Index>(d), H = static_cast<Eigen::Index>(hidden),
             Q = static_cast<Eigen::Index>(q);
  ParamBlock b;
  b.add("dec.W3", H, Q, Q);
  b.add("dec.b3", H, 1, Q);
  b.add("dec.W4", D, H, H);
  b.add("dec.b4", D, 1, H);
  return b;
}

Vector visit_decoder_logits(const ParamBlock& dec, const Vector& e, VisitDecoderCache* cache) {
  Vector h3 = (dec[W3] * e + dec[B3].col(0)).array().tanh();
  Vector logits = dec[W4] * h3 + dec[B4].col(0);
  if (cache) {
    cache->e = e;
    cache->h3 = std::move(h3);
  }
  return logits;
}

Vector visit_decoder_backward(const ParamBlock& dec, const VisitDecoderCache& cache, const Vector& dlogits,
                              ParamBlock& grad) {
  grad[W4] += dlogits * cache.h3.transpose();
  grad[B4].col(0) += dlogits;
  const Vector da3 = (dec[W4].transpose() * dlogits).array() * (1.0 - cache.h3.array().square());
  grad[W3] += da3 * cache.e.transpose();
  grad[B3].col(0) += da3;
  return dec[W3].transpose() * da3;
}

double weighted_bce(const Vector& logits, const VisitVector& target, const LossWeights& weights, Vector* dlogits) {
  // Negative codes contribute softplus(a); positives softplus(-a).
  double loss = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) loss += weights.negative * softplus(logits[j]);
  for (CodeIndex j : target.active_codes) {
    const double a = logits[static_cast<Eigen::Index>(j)];
    loss += weights.positive * softplus(-a) - weights.negative * softplus(a);
  }
  if (dlogits) {
    *dlogits = weights.negative * logistic(logits);
    for (CodeIndex j : target.active_codes) {
      const auto k = static_cast<Eigen::Index>(j);
      (*dlogits)[k] = weights.positive * (sigmoid(logits[k]) - 1.0);
    }
  }
  return loss;
}

GruLayout add_gru(ParamBlock& block, const std::string& prefix, std::size_t input, std::size_t hidden) {
  const auto I = static_cast<Eigen::Index>(input), H = static_cast<Eigen::Index>(hidden);
  GruLayout g{block.size(), input > 0};
  const Eigen::Index fan_in = I + H;
  if (g.has_input) {
    block.add(prefix + ".Wr", H, I, fan_in);
    block.add(prefix + ".Wu", H, I, fan_in);
    block.add(prefix + ".Wc", H, I, fan_in);
  }
  block.add(prefix + ".Ur", H, H, fan_in);
  block.add(prefix + ".Uu", H, H, fan_in);
  block.add(prefix + ".Uc", H, H, fan_in);
  block.add(prefix + ".br", H, 1, fan_in);
  block.add(prefix + ".bu", H, 1, fan_in);
  block.add(prefix + ".bc", H, 1, fan_in);
  return g;
}

Vector gru_step(const ParamBlock& p, const GruLayout& g, const Vector* x, const Vector& h_prev, GruCache* cache) {
  Vector ar = p[g.Ur()] * h_prev + p[g.br()].col(0);
  Vector au = p[g.Uu()] * h_prev + p[g.bu()].col(0);
  Vector ac = p[g.bc()].col(0);
  if (g.has_input) {
    ar.noalias() += p[g.Wr()] * *x;
    au.noalias() += p[g.Wu()] * *x;
    ac.noalias() += p[g.Wc()] * *x;
  }
  Vector r = logistic(ar);
  Vector u = logistic(au);
  Vector rh = r.cwiseProduct(h_prev);
  ac.noalias() += p[g.Uc()] * rh;
  Vector c = ac.array().tanh();
  Vector h = h_prev + u.cwiseProduct(c - h_prev);
  if (cache) {
    if (g.has_input) cache->x = *x;
    cache->h_prev = h_prev;
    cache->r = std::move(r);
    cache->u = std::move(u);
    cache->c = std::move(c);
    cache->rh = std::move(rh);
  }
  return h;
}

void gru_step_backward(const ParamBlock& p, const GruLayout& g, const GruCache& cache, const Vector& dh,
                       ParamBlock& grad, Vector& dh_prev, Vector* dx) {
  const Vector& h = cache.h_prev;
  const Vector du = dh.cwiseProduct(cache.c - h);
  const Vector dc = dh.cwiseProduct(cache.u);
  dh_prev = dh.cwiseProduct(Vector::Ones(h.size()) - cache.u);

  const Vector dac = dc.array() * (1.0 - cache.c.array().square());
  grad[g.Uc()] += dac * cache.rh.transpose();
  grad[g.bc()].col(0) += dac;
  const Vector drh = p[g.Uc()].transpose() * dac;
  const Vector dr = drh.cwiseProduct(h);
  dh_prev += drh.cwiseProduct(cache.r);

  const Vector dau = du.array() * cache.u.array() * (1.0 - cache.u.array());
  grad[g.Uu()] += dau * h.transpose();
  grad[g.bu()].col(0) += dau;
  dh_prev.noalias() += p[g.Uu()].transpose() * dau;

  const Vector dar = dr.array() * cache.r.array() * (1.0 - cache.r.array());
  grad[g.Ur()] += dar * h.transpose();
  grad[g.br()].col(0) += dar;
  dh_prev.noalias() += p[g.Ur()].transpose() * dar;

  if (g.has_input) {
    grad[g.Wr()] += dar * cache.x.transpose();
    grad[g.Wu()] += dau * cache.x.transpose();
    grad[g.Wc()] += dac * cache.x.transpose();
    if (dx) *dx = p[g.Wr()].transpose() * dar + p[g.Wu()].transpose() * dau + p[g.Wc()].transpose() * dac;
  }
}

ParamBlock make_patient_encoder(std::size_t q, std::size_t p) {
  ParamBlock b;
  add_gru(b, "penc", q, p);
  return b;
}

ParamBlock make_patient_decoder(std::size_t q, std::size_t p) {
  ParamBlock b;
  add_gru(b, "pdec", 0, p);
  const auto Q = static_cast<Eigen::Index>(q), P = static_cast<Eigen::Index>(p);
  b.add("pdec.V", Q, P, P);
  b.add("pdec.bo", Q, 1, P);
  return b;
}

namespace {
const GruLayout kEncoderGru{0, true};
const GruLayout kDecoderGru{0, false};
}  // namespace

Vector patient_encode(const ParamBlock& enc, const std::vector<Vector>& embeddings, SequenceTrace* trace) {
  const Eigen::Index p = enc[kEncoderGru.Ur()].rows();
  Vector h = Vector::Zero(p);
  if (trace) trace->steps.assign(embeddings.size(), GruCache{});
  for (std::size_t t = 0; t < embeddings.size(); ++t)
    h = gru_step(enc, kEncoderGru, &embeddings[t], h, trace ? &trace->steps[t] : nullptr);
  return h;
}

void patient_encode_backward(const ParamBlock& enc, const SequenceTrace& trace, const Vector& dz, ParamBlock& grad) {
  Vector dh = dz;
  Vector dh_prev;
  for (std::size_t t = trace.steps.size(); t-- > 0;) {
    gru_step_backward(enc, kEncoderGru, trace.steps[t], dh, grad, dh_prev);
    dh.swap(dh_prev);
  }
}

std::vector<Vector> patient_decode(const ParamBlock& dec, const Vector& z, std::size_t n_visits,
                                   SequenceTrace* trace) {
  std::vector<Vector> outputs(n_visits);
  if (trace) trace->steps.assign(n_visits, GruCache{});
  Vector s = z;
  for (std::size_t k = 0; k < n_visits; ++k) {
    s = gru_step(dec, kDecoderGru, nullptr, s, trace ? &trace->steps[k] : nullptr);
    outputs[n_visits - 1 - k] = dec[kReadoutWeight] * s + dec[kReadoutBias].col(0);
  }
  // The readout backward pass needs the final state of each step, which is
  // the h_prev of the following step; keep the last one separately.
  if (trace) trace->steps.push_back(GruCache{Vector(), s, Vector(), Vector(), Vector(), Vector()});
  return outputs;
}

Vector patient_decode_backward(const ParamBlock& dec, const SequenceTrace& trace,
                               const std::vector<Vector>& d_outputs, ParamBlock& grad) {
  const std::size_t n = d_outputs.size();
  const Eigen::Index p = dec[kDecoderGru.Ur()].rows();
  Vector ds = Vector::Zero(p);
  Vector ds_prev;
  for (std::size_t k = n; k-- > 0;) {
    const Vector& state = trace.steps[k + 1].h_prev;
    const Vector& dy = d_outputs[n - 1 - k];
    grad[kReadoutWeight] += dy * state.transpose();
    grad[kReadoutBias].col(0) += dy;
    ds.noalias() += dec[kReadoutWeight].transpose() * dy;
    gru_step_backward(dec, kDecoderGru, trace.steps[k], ds, grad, ds_prev);
    ds.swap(ds_prev);
  }
  return ds;
}

}  // namespace ddv::nn
