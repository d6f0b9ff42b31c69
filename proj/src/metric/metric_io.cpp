#include <charconv>
#include <fstream>
#include <sstream>

#include "ddv/metric.hpp"

namespace ddv::metric {

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void write_retrieval_table(std::ostream& out, std::span<const RetrievalCell> cells) {
  out << "sigma\ttask\tn\tprecision\n";
  for (const auto& c : cells) out << fmt(c.sigma) << '\t' << c.task << '\t' << c.n << '\t' << fmt(c.precision) << '\n';
}

void write_metric_library(std::ostream& out, std::span<const TaskMetric> metrics) {
  const Eigen::Index p = metrics.empty() ? 0 : metrics.front().M.rows();
  out << "ddv-metric-library v1 p=" << p << " T=" << metrics.size() << '\n';
  for (const auto& m : metrics) {
    if (m.M.rows() != p || m.M.cols() != p) throw PreconditionError("metric " + m.task_id + " is not " + std::to_string(p) + "x" + std::to_string(p));
    if (m.task_id.find_first_of("\t\n") != std::string::npos || m.description.find_first_of("\t\n") != std::string::npos)
      throw PreconditionError("task ids and descriptions may not contain tabs or newlines");
    out << "task\t" << m.task_id << '\t' << m.description << '\n';
    out << "meta\t" << m.iterations << '\t' << fmt(m.final_objective) << '\n';
    for (Eigen::Index r = 0; r < p; ++r) {
      for (Eigen::Index c = 0; c < p; ++c) out << (c ? " " : "") << fmt(m.M(r, c));
      out << '\n';
    }
  }
  out << "end\n";
}

std::vector<TaskMetric> read_metric_library(std::istream& in) {
  std::size_t line_no = 0;
  std::string text;
  auto next = [&](const char* what) -> std::string& {
    if (!std::getline(in, text)) throw ParseError(std::string("unexpected end of metric library, expected ") + what, line_no + 1, 1);
    ++line_no;
    return text;
  };

  std::size_t p = 0, T = 0;
  {
    std::istringstream ss(next("header"));
    std::string magic, version, pf, tf;
    ss >> magic >> version >> pf >> tf;
    if (magic != "ddv-metric-library" || version != "v1") throw ParseError("not a metric library", 1, 1);
    if (pf.rfind("p=", 0) != 0 || tf.rfind("T=", 0) != 0) throw ParseError("malformed header", 1, 1);
    try {
      p = std::stoul(pf.substr(2));
      T = std::stoul(tf.substr(2));
    } catch (const std::exception&) {
      throw ParseError("malformed header", 1, 1);
    }
  }

  std::vector<TaskMetric> out;
  for (std::size_t t = 0; t < T; ++t) {
    TaskMetric m;
    {
      const std::string& l = next("task line");
      if (l.rfind("task\t", 0) != 0) throw ParseError("expected task line", line_no, 1);
      const auto tab = l.find('\t', 5);
      if (tab == std::string::npos) throw ParseError("task line needs an id and a description", line_no, 1);
      m.task_id = l.substr(5, tab - 5);
      m.description = l.substr(tab + 1);
    }
    {
      std::istringstream ss(next("meta line"));
      std::string key;
      if (!(ss >> key >> m.iterations >> m.final_objective) || key != "meta") throw ParseError("malformed meta line", line_no, 1);
    }
    m.M.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t r = 0; r < p; ++r) {
      std::istringstream ss(next("matrix row"));
      for (std::size_t c = 0; c < p; ++c) {
        double v;
        if (!(ss >> v)) throw ParseError("matrix row " + std::to_string(r) + " has fewer than " + std::to_string(p) + " values", line_no, 1);
        m.M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
      std::string extra;
      if (ss >> extra) throw ParseError("matrix row has more than " + std::to_string(p) + " values", line_no, 1);
    }
    if (min_eigenvalue(m.M) < -1e-8) throw PsdViolation("metric " + m.task_id + " in library is not positive semi-definite");
    out.push_back(std::move(m));
  }
  if (next("end") != "end") throw ParseError("expected 'end'", line_no, 1);
  return out;
}

void save_metric_library(std::span<const TaskMetric> metrics, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metric library " + path.string());
  write_metric_library(out, metrics);
  out.flush();
  if (!out) throw IoError("failed writing metric library " + path.string());
}

std::vector<TaskMetric> load_metric_library(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read metric library " + path.string());
  return read_metric_library(in);
}

}  // namespace ddv::metric
