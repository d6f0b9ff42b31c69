// Line-delimited corpus format:
//
//   ddv-corpus v1 d=<d> K=<K>
//   @codes\t<code>,<code>,...
//   @cohort\t<label>\t<name>\t<code-set indices comma-separated>     (K lines)
//   <patient_id>\t<cohort or ->\t<visit1 codes comma-separated>|<visit2>|...
//   ...
//   @end\t<record count>
//
// The trailer lets a reader tell a complete file from one cut at a line
// boundary.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

#include "ddv/corpus.hpp"
#include "ddv/error.hpp"

namespace ddv {

namespace {

void write_indices(std::ostream& out, const std::vector<CodeIndex>& codes) {
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i) out << ',';
    out << codes[i];
  }
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

class LineParser {
 public:
  explicit LineParser(std::istream& in) : in_(in) {}

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    return true;
  }

  std::size_t line_no() const { return line_no_; }

  [[noreturn]] void fail(const std::string& what, std::size_t column = 1) const {
    throw ParseError(what, line_no_, column);
  }

  std::size_t number(std::string_view field, std::size_t column) const {
    std::size_t value = 0;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (field.empty() || ec != std::errc() || ptr != end)
      fail("expected a non-negative integer, got '" + std::string(field) + "'", column);
    return value;
  }

  std::vector<CodeIndex> indices(std::string_view field, std::size_t column) const {
    std::vector<CodeIndex> out;
    if (field.empty()) return out;
    std::size_t col = column;
    for (auto part : split(field, ',')) {
      out.push_back(static_cast<CodeIndex>(number(part, col)));
      col += part.size() + 1;
    }
    return out;
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

std::size_t parse_keyed(LineParser& p, std::string_view token, std::string_view key, std::size_t column) {
  if (token.substr(0, key.size()) != key) p.fail("expected '" + std::string(key) + "'", column);
  return p.number(token.substr(key.size()), column + key.size());
}

}  // namespace

void write_corpus(const Corpus& corpus, std::ostream& out) {
  out << "ddv-corpus v1 d=" << corpus.dimension() << " K=" << corpus.cohorts.size() << '\n';
  out << "@codes\t";
  for (std::size_t j = 0; j < corpus.vocabulary.codes.size(); ++j) {
    if (j) out << ',';
    out << corpus.vocabulary.codes[j];
  }
  out << '\n';
  for (const auto& c : corpus.cohorts) {
    out << "@cohort\t" << c.label << '\t' << c.name << '\t';
    write_indices(out, c.code_set);
    out << '\n';
  }
  for (const auto& r : corpus.records) {
    out << r.patient_id << '\t';
    if (r.cohort_label)
      out << *r.cohort_label;
    else
      out << '-';
    out << '\t';
    for (std::size_t t = 0; t < r.visits.size(); ++t) {
      if (t) out << '|';
      write_indices(out, r.visits[t].active_codes);
    }
    out << '\n';
  }
  out << "@end\t" << corpus.records.size() << '\n';
}

Corpus read_corpus(std::istream& in) {
  LineParser p(in);
  std::string line;
  if (!p.next(line)) throw ParseError("empty file", 1, 1);

  const auto header = split(line, ' ');
  if (header.size() != 4 || header[0] != "ddv-corpus" || header[1] != "v1")
    p.fail("expected header 'ddv-corpus v1 d=<d> K=<K>'");
  const std::size_t d = parse_keyed(p, header[2], "d=", 15);
  const std::size_t k = parse_keyed(p, header[3], "K=", 16 + header[2].size());

  Corpus corpus;
  if (!p.next(line)) p.fail("truncated: missing @codes line");
  {
    const auto fields = split(line, '\t');
    if (fields.size() != 2 || fields[0] != "@codes") p.fail("expected @codes line");
    for (auto code : split(fields[1], ',')) corpus.vocabulary.codes.emplace_back(code);
    if (corpus.vocabulary.size() != d) p.fail("@codes lists " + std::to_string(corpus.vocabulary.size()) +
                                              " codes but header declares d=" + std::to_string(d));
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!p.next(line)) p.fail("truncated: missing @cohort line");
    const auto fields = split(line, '\t');
    if (fields.size() != 4 || fields[0] != "@cohort") p.fail("expected @cohort line");
    CohortDescriptor cohort;
    cohort.label = p.number(fields[1], 9);
    cohort.name = std::string(fields[2]);
    cohort.code_set = p.indices(fields[3], 11 + fields[1].size() + fields[2].size());
    corpus.cohorts.push_back(std::move(cohort));
  }

  bool ended = false;
  while (p.next(line)) {
    const auto fields = split(line, '\t');
    if (fields[0] == "@end") {
      if (fields.size() != 2) p.fail("malformed @end line");
      const std::size_t count = p.number(fields[1], 6);
      if (count != corpus.records.size())
        p.fail("@end declares " + std::to_string(count) + " records but " + std::to_string(corpus.records.size()) +
               " were read");
      ended = true;
      break;
    }
    if (fields.size() != 3) p.fail("expected 3 tab-separated fields");
    PatientRecord record;
    record.patient_id = std::string(fields[0]);
    if (record.patient_id.empty()) p.fail("empty patient id");
    if (fields[1] != "-") record.cohort_label = p.number(fields[1], fields[0].size() + 2);
    std::size_t column = fields[0].size() + fields[1].size() + 3;
    for (auto visit : split(fields[2], '|')) {
      auto codes = p.indices(visit, column);
      if (codes.empty()) p.fail("empty visit", column);
      record.visits.emplace_back(std::move(codes));
      column += visit.size() + 1;
    }
    corpus.records.push_back(std::move(record));
  }
  if (!ended) p.fail("truncated: missing @end trailer");
  if (p.next(line)) p.fail("unexpected content after @end");

  validate(corpus);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_corpus(corpus, out);
  if (!out) throw IoError("write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_corpus(in);
}

}  // namespace ddv
