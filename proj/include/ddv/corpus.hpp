#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ddv {

using CodeIndex = std::uint32_t;

struct CodeVocabulary {
  std::vector<std::string> codes;

  std::size_t size() const noexcept { return codes.size(); }
  bool operator==(const CodeVocabulary&) const = default;
};

// Multi-hot visit: the sorted, de-duplicated indices of the codes present.
struct VisitVector {
  std::vector<CodeIndex> active_codes;

  VisitVector() = default;
  explicit VisitVector(std::vector<CodeIndex> codes);

  bool contains(CodeIndex code) const;
  bool operator==(const VisitVector&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<VisitVector> visits;
  std::optional<std::size_t> cohort_label;

  bool operator==(const PatientRecord&) const = default;
};

struct CohortDescriptor {
  std::size_t label = 0;
  std::string name;
  std::vector<CodeIndex> code_set;

  bool operator==(const CohortDescriptor&) const = default;
};

struct Corpus {
  CodeVocabulary vocabulary;
  std::vector<PatientRecord> records;
  std::vector<CohortDescriptor> cohorts;

  std::size_t dimension() const noexcept { return vocabulary.size(); }
  std::size_t visit_count() const;
  bool operator==(const Corpus&) const = default;
};

struct CorpusConfig {
  std::size_t vocabulary_size = 64;
  std::size_t cohorts = 3;
  std::size_t patients_per_cohort = 100;
  double mean_visits = 6.65;
  std::size_t max_visits = 32;
  double mean_codes_per_visit = 3.69;
  // Size of each cohort's generating code-set.
  std::size_t cohort_code_set = 16;
  // Fraction of every cohort code-set taken from a pool shared by all
  // cohorts. 0 gives disjoint (easy) cohorts, values near 1 hard ones.
  double overlap = 0.0;
  // Cohort-independent chronic codes (comorbidity background).
  std::size_t common_codes = 6;
  double common_code_rate = 0.45;
  // Per-visit probability that a chronic code of the patient is recorded.
  double persistence = 0.95;
  // Per-visit probability that a new cohort code joins the patient's profile.
  double progression_rate = 0.05;
  // Probability of one uniformly drawn background code per visit.
  double noise_code_rate = 0.05;
};

// Named configurations used by the experiments and the acceptance suite.
CorpusConfig standard_corpus_config();
CorpusConfig overlap_corpus_config();

void validate(const CorpusConfig& config);
void validate(const Corpus& corpus);

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed);

void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

// Deterministic split of record indices into (first, second) with
// round(fraction * n) records in the first part.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

std::vector<PatientRecord> select(const std::vector<PatientRecord>& records,
                                  const std::vector<std::size_t>& indices);

}  // namespace ddv
