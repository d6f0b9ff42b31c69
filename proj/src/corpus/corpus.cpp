#include "ddv/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "ddv/error.hpp"

namespace ddv {

VisitVector::VisitVector(std::vector<CodeIndex> codes) : active_codes(std::move(codes)) {
  std::sort(active_codes.begin(), active_codes.end());
  active_codes.erase(std::unique(active_codes.begin(), active_codes.end()), active_codes.end());
}

bool VisitVector::contains(CodeIndex code) const {
  return std::binary_search(active_codes.begin(), active_codes.end(), code);
}

std::size_t Corpus::visit_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.visits.size();
  return n;
}

CorpusConfig standard_corpus_config() {
  CorpusConfig c;
  c.patients_per_cohort = 500;
  return c;
}

CorpusConfig overlap_corpus_config() {
  CorpusConfig c;
  // Compact cohort code sets without background codes so cohort identity
  // survives moderate signature noise; half of each set is shared.
  c.patients_per_cohort = 300;
  c.cohort_code_set = 6;
  c.overlap = 0.5;
  c.common_code_rate = 0.0;
  c.noise_code_rate = 0.0;
  return c;
}

namespace {

std::size_t shared_pool_size(const CorpusConfig& c) {
  return static_cast<std::size_t>(std::lround(c.overlap * static_cast<double>(c.cohort_code_set)));
}

// Visit-weighted mean of the 0-based visit position under the clamped
// geometric length law; used to budget for codes added by progression.
double mean_visit_position(const CorpusConfig& c) {
  const double p = 1.0 / c.mean_visits;
  double weighted = 0.0;
  double visits = 0.0;
  double tail = 1.0;
  for (std::size_t n = 1; n <= c.max_visits; ++n) {
    const double pn = (n == c.max_visits) ? tail : p * std::pow(1.0 - p, static_cast<double>(n - 1));
    tail -= pn;
    weighted += pn * static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    visits += pn * static_cast<double>(n);
  }
  return weighted / visits;
}

double initial_profile_mean(const CorpusConfig& c) {
  const double common = c.persistence * static_cast<double>(c.common_codes) * c.common_code_rate;
  const double per_visit_profile = (c.mean_codes_per_visit - c.noise_code_rate - common) / c.persistence;
  return std::max(1.0, per_visit_profile - c.progression_rate * mean_visit_position(c));
}

}  // namespace

void validate(const CorpusConfig& c) {
  if (c.vocabulary_size < 2) throw ConfigError("vocabulary size must be at least 2");
  if (c.cohorts == 0 || c.patients_per_cohort == 0) throw ConfigError("corpus would contain no patients");
  if (c.max_visits == 0 || c.mean_visits < 1.0) throw ConfigError("visit length distribution is invalid");
  if (c.mean_codes_per_visit < 1.0) throw ConfigError("mean codes per visit must be at least 1");
  if (c.cohort_code_set == 0) throw ConfigError("cohort code-set must be non-empty");
  if (c.overlap < 0.0 || c.overlap > 1.0) throw ConfigError("overlap must lie in [0, 1]");
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(c.common_code_rate) || !in_unit(c.persistence) || !in_unit(c.progression_rate) ||
      !in_unit(c.noise_code_rate))
    throw ConfigError("rates must lie in [0, 1]");
  if (c.persistence == 0.0) throw ConfigError("persistence must be positive");
  const std::size_t shared = shared_pool_size(c);
  const std::size_t needed = c.common_codes + shared + c.cohorts * (c.cohort_code_set - shared);
  if (needed > c.vocabulary_size)
    throw ConfigError("cohort code-sets need " + std::to_string(needed) + " codes but d = " +
                      std::to_string(c.vocabulary_size));
}

void validate(const Corpus& corpus) {
  const std::size_t d = corpus.dimension();
  if (d < 2) throw ValidationError("vocabulary must hold at least 2 codes");
  std::set<std::string> unique(corpus.vocabulary.codes.begin(), corpus.vocabulary.codes.end());
  if (unique.size() != d) throw ValidationError("vocabulary codes are not unique");
  for (std::size_t k = 0; k < corpus.cohorts.size(); ++k) {
    if (corpus.cohorts[k].label != k) throw ValidationError("cohort labels must be 0..K-1 in order");
    for (CodeIndex c : corpus.cohorts[k].code_set)
      if (c >= d) throw ValidationError("cohort code-set index out of range");
  }
  for (const auto& r : corpus.records) {
    if (r.visits.empty()) throw ValidationError("record " + r.patient_id + " has no visits");
    if (r.cohort_label && *r.cohort_label >= corpus.cohorts.size())
      throw ValidationError("record " + r.patient_id + " has an unknown cohort label");
    for (const auto& v : r.visits) {
      if (v.active_codes.empty()) throw ValidationError("record " + r.patient_id + " has an empty visit");
      for (CodeIndex c : v.active_codes)
        if (c >= d)
          throw ValidationError("record " + r.patient_id + " references code " + std::to_string(c) +
                                " >= d = " + std::to_string(d));
    }
  }
}

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  const std::size_t d = config.vocabulary_size;

  Corpus corpus;
  corpus.vocabulary.codes.reserve(d);
  for (std::size_t j = 0; j < d; ++j) {
    char name[32];
    std::snprintf(name, sizeof(name), "G%03zu", j);
    corpus.vocabulary.codes.emplace_back(name);
  }

  std::vector<CodeIndex> order(d);
  std::iota(order.begin(), order.end(), CodeIndex{0});
  std::shuffle(order.begin(), order.end(), rng);
  auto next = order.begin();

  const std::vector<CodeIndex> common(next, next + static_cast<std::ptrdiff_t>(config.common_codes));
  next += static_cast<std::ptrdiff_t>(config.common_codes);
  const std::size_t shared = shared_pool_size(config);
  const std::vector<CodeIndex> pool(next, next + static_cast<std::ptrdiff_t>(shared));
  next += static_cast<std::ptrdiff_t>(shared);
  for (std::size_t k = 0; k < config.cohorts; ++k) {
    CohortDescriptor cohort;
    cohort.label = k;
    cohort.name = "cohort-" + std::to_string(k);
    cohort.code_set = pool;
    const auto unique = static_cast<std::ptrdiff_t>(config.cohort_code_set - shared);
    cohort.code_set.insert(cohort.code_set.end(), next, next + unique);
    next += unique;
    std::sort(cohort.code_set.begin(), cohort.code_set.end());
    corpus.cohorts.push_back(std::move(cohort));
  }

  const double profile_mean = initial_profile_mean(config);
  std::geometric_distribution<int> extra_visits(1.0 / config.mean_visits);
  std::poisson_distribution<int> extra_profile(std::max(profile_mean - 1.0, 1e-12));
  std::bernoulli_distribution has_common(config.common_code_rate);
  std::bernoulli_distribution recorded(config.persistence);
  std::bernoulli_distribution progresses(config.progression_rate);
  std::bernoulli_distribution noisy(config.noise_code_rate);
  std::uniform_int_distribution<CodeIndex> any_code(0, static_cast<CodeIndex>(d - 1));

  std::size_t serial = 0;
  for (std::size_t k = 0; k < config.cohorts; ++k) {
    const auto& code_set = corpus.cohorts[k].code_set;
    for (std::size_t i = 0; i < config.patients_per_cohort; ++i) {
      PatientRecord record;
      char id[24];
      std::snprintf(id, sizeof(id), "p%06zu", serial++);
      record.patient_id = id;
      record.cohort_label = k;

      const std::size_t n_visits =
          std::min<std::size_t>(config.max_visits, 1 + static_cast<std::size_t>(extra_visits(rng)));

      std::vector<CodeIndex> chronic;
      for (CodeIndex c : common)
        if (has_common(rng)) chronic.push_back(c);

      std::vector<CodeIndex> remaining = code_set;
      std::shuffle(remaining.begin(), remaining.end(), rng);
      std::size_t profile_size = std::min<std::size_t>(code_set.size(), 1 + extra_profile(rng));
      std::vector<CodeIndex> profile(remaining.begin(), remaining.begin() + static_cast<std::ptrdiff_t>(profile_size));
      remaining.erase(remaining.begin(), remaining.begin() + static_cast<std::ptrdiff_t>(profile_size));

      for (std::size_t t = 0; t < n_visits; ++t) {
        if (t > 0 && !remaining.empty() && progresses(rng)) {
          profile.push_back(remaining.back());
          remaining.pop_back();
        }
        std::vector<CodeIndex> codes;
        for (CodeIndex c : chronic)
          if (recorded(rng)) codes.push_back(c);
        for (CodeIndex c : profile)
          if (recorded(rng)) codes.push_back(c);
        if (noisy(rng)) codes.push_back(any_code(rng));
        if (codes.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, profile.size() - 1);
          codes.push_back(profile[pick(rng)]);
        }
        record.visits.emplace_back(std::move(codes));
      }
      corpus.records.push_back(std::move(record));
    }
  }
  return corpus;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw PreconditionError("split fraction must lie in [0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto cut = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> first(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> second(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

std::vector<PatientRecord> select(const std::vector<PatientRecord>& records, const std::vector<std::size_t>& indices) {
  std::vector<PatientRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records.at(i));
  return out;
}

}  // namespace ddv
