#pragma once

// Forward/backward kernels for the visit-level perceptrons and the gated
// recurrent cells of the patient-level sequence autoencoder. Each backward
// function accumulates into a gradient block with the layout of the
// parameter block it mirrors.

#include <cstddef>
#include <vector>

#include "ddv/corpus.hpp"
#include "ddv/nn.hpp"

namespace ddv::nn {

struct LossWeights {
  double positive = 3.0;
  double negative = 1.0;

  bool operator==(const LossWeights&) const = default;
};

// ---- visit encoder: e = tanh(W2 tanh(W1 x + b1) + b2) --------------------

ParamBlock make_visit_encoder(std::size_t d, std::size_t hidden, std::size_t q);

struct VisitEncoderCache {
  std::vector<CodeIndex> active;
  Vector h1;
  Vector e;
};

Vector visit_encoder_forward(const ParamBlock& enc, const VisitVector& x, VisitEncoderCache* cache = nullptr);
void visit_encoder_backward(const ParamBlock& enc, const VisitEncoderCache& cache, const Vector& de,
                            ParamBlock& grad);

// ---- visit decoder: logits = W4 tanh(W3 e + b3) + b4 ----------------------

ParamBlock make_visit_decoder(std::size_t d, std::size_t hidden, std::size_t q);

struct VisitDecoderCache {
  Vector e;
  Vector h3;
};

Vector visit_decoder_logits(const ParamBlock& dec, const Vector& e, VisitDecoderCache* cache = nullptr);
// Returns the gradient with respect to the decoder input e.
Vector visit_decoder_backward(const ParamBlock& dec, const VisitDecoderCache& cache, const Vector& dlogits,
                              ParamBlock& grad);

// Class-weighted binary cross-entropy (negative log-likelihood) of sigmoid
// outputs, summed over codes. Writes dLoss/dlogits when requested.
double weighted_bce(const Vector& logits, const VisitVector& target, const LossWeights& weights,
                    Vector* dlogits = nullptr);

// ---- gated recurrent cell -------------------------------------------------
//   r  = sigmoid(Wr x + Ur h + br)
//   u  = sigmoid(Wu x + Uu h + bu)
//   c  = tanh(Wc x + Uc (r * h) + bc)
//   h' = (1 - u) * h + u * c
// A cell without input (autonomous decoder) omits the W matrices.

struct GruLayout {
  std::size_t base = 0;
  bool has_input = true;

  std::size_t Wr() const { return base; }
  std::size_t Wu() const { return base + 1; }
  std::size_t Wc() const { return base + 2; }
  std::size_t Ur() const { return base + (has_input ? 3 : 0); }
  std::size_t Uu() const { return Ur() + 1; }
  std::size_t Uc() const { return Ur() + 2; }
  std::size_t br() const { return Ur() + 3; }
  std::size_t bu() const { return Ur() + 4; }
  std::size_t bc() const { return Ur() + 5; }
  std::size_t end() const { return Ur() + 6; }
};

GruLayout add_gru(ParamBlock& block, const std::string& prefix, std::size_t input, std::size_t hidden);

struct GruCache {
  Vector x;
  Vector h_prev;
  Vector r;
  Vector u;
  Vector c;
  Vector rh;
};

Vector gru_step(const ParamBlock& p, const GruLayout& g, const Vector* x, const Vector& h_prev,
                GruCache* cache = nullptr);
// Given dL/dh', accumulates parameter gradients, writes dL/dh_prev and,
// for cells with input, dL/dx.
void gru_step_backward(const ParamBlock& p, const GruLayout& g, const GruCache& cache, const Vector& dh,
                       ParamBlock& grad, Vector& dh_prev, Vector* dx = nullptr);

// ---- patient sequence autoencoder ------------------------------------------
// Encoder: GRU over the visit embeddings; the signature is the final state.
// Decoder: autonomous GRU started from the signature, followed by a linear
// read-out; it emits visits newest-first and the outputs are returned in
// chronological order.

ParamBlock make_patient_encoder(std::size_t q, std::size_t p);
ParamBlock make_patient_decoder(std::size_t q, std::size_t p);

inline constexpr std::size_t kReadoutWeight = 6;
inline constexpr std::size_t kReadoutBias = 7;

struct SequenceTrace {
  std::vector<GruCache> steps;
};

Vector patient_encode(const ParamBlock& enc, const std::vector<Vector>& embeddings, SequenceTrace* trace = nullptr);
void patient_encode_backward(const ParamBlock& enc, const SequenceTrace& trace, const Vector& dz, ParamBlock& grad);

std::vector<Vector> patient_decode(const ParamBlock& dec, const Vector& z, std::size_t n_visits,
                                   SequenceTrace* trace = nullptr);
// d_outputs in chronological order; returns dL/dz.
Vector patient_decode_backward(const ParamBlock& dec, const SequenceTrace& trace,
                               const std::vector<Vector>& d_outputs, ParamBlock& grad);

}  // namespace ddv::nn
