#include "ddv/scoring.hpp"

#include <algorithm>
#include <iterator>

namespace ddv {

void Confusion::add(const VisitVector& predicted, const VisitVector& truth) {
  std::vector<CodeIndex> common;
  std::set_intersection(predicted.active_codes.begin(), predicted.active_codes.end(), truth.active_codes.begin(),
                        truth.active_codes.end(), std::back_inserter(common));
  true_positives += common.size();
  false_positives += predicted.active_codes.size() - common.size();
  false_negatives += truth.active_codes.size() - common.size();
}

Confusion& Confusion::operator+=(const Confusion& other) {
  true_positives += other.true_positives;
  false_positives += other.false_positives;
  false_negatives += other.false_negatives;
  return *this;
}

PrecisionRecall score(const Confusion& c) {
  PrecisionRecall out;
  const std::size_t predicted = c.true_positives + c.false_positives;
  const std::size_t actual = c.true_positives + c.false_negatives;
  if (predicted == 0)
    out.precision_defined = false;
  else
    out.precision = static_cast<double>(c.true_positives) / static_cast<double>(predicted);
  if (actual == 0)
    out.recall_defined = false;
  else
    out.recall = static_cast<double>(c.true_positives) / static_cast<double>(actual);
  return out;
}

VisitVector binarize(const nn::Vector& probabilities, double threshold) {
  std::vector<CodeIndex> codes;
  for (Eigen::Index j = 0; j < probabilities.size(); ++j)
    if (probabilities[j] >= threshold) codes.push_back(static_cast<CodeIndex>(j));
  return VisitVector(std::move(codes));
}

}  // namespace ddv
