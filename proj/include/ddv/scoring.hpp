#pragma once

#include <cstddef>

#include "ddv/corpus.hpp"
#include "ddv/nn.hpp"

namespace ddv {

// Micro-averaged confusion counts over code predictions.
struct Confusion {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;

  void add(const VisitVector& predicted, const VisitVector& truth);
  Confusion& operator+=(const Confusion& other);
};

// Precision with no positive predictions (or recall with no positive
// truths) is reported as 0 and flagged as undefined.
struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
};

PrecisionRecall score(const Confusion& confusion);

VisitVector binarize(const nn::Vector& probabilities, double threshold = 0.5);

}  // namespace ddv
