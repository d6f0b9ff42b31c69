// Structured-text model files:
//
//   ddv-model v1
//   kind <visit_autoencoder|patient_autoencoder|public_encoder>
//   secret <0|1>
//   version <model_version>
//   seed <u64>
//   dims <d> <hidden> <q> <p>
//   weights <positive> <negative>
//   block <name> <tensor count>
//   tensor <name> <rows> <cols> <values, column-major, space separated>
//   ...
//   history <n> <values>
//   end
//
// Values are written with 17 significant digits so a save/load round trip
// is exact. Any file that contains a decoder block is marked secret.

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ddv/embed.hpp"
#include "ddv/error.hpp"

namespace ddv::embed {

namespace {

constexpr const char* kMagic = "ddv-model v1";

const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::visit_autoencoder: return "visit_autoencoder";
    case ModelKind::patient_autoencoder: return "patient_autoencoder";
    case ModelKind::public_encoder: return "public_encoder";
  }
  return "?";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Header {
  ModelKind kind = ModelKind::public_encoder;
  bool secret = false;
  int version = 1;
  std::uint64_t seed = 0;
  std::size_t d = 0, hidden = 0, q = 0, p = 0;
  LossWeights weights;
};

void write_header(std::ostream& out, const Header& h) {
  out << kMagic << '\n'
      << "kind " << kind_name(h.kind) << '\n'
      << "secret " << (h.secret ? 1 : 0) << '\n'
      << "version " << h.version << '\n'
      << "seed " << h.seed << '\n'
      << "dims " << h.d << ' ' << h.hidden << ' ' << h.q << ' ' << h.p << '\n'
      << "weights " << fmt(h.weights.positive) << ' ' << fmt(h.weights.negative) << '\n';
}

void write_block(std::ostream& out, const std::string& name, const nn::ParamBlock& block) {
  out << "block " << name << ' ' << block.size() << '\n';
  for (std::size_t i = 0; i < block.size(); ++i) {
    const auto& m = block[i];
    out << "tensor " << block.name(i) << ' ' << m.rows() << ' ' << m.cols();
    for (Eigen::Index j = 0; j < m.size(); ++j) out << ' ' << fmt(m.data()[j]);
    out << '\n';
  }
}

void write_history(std::ostream& out, const std::vector<double>& h) {
  out << "history " << h.size();
  for (double v : h) out << ' ' << fmt(v);
  out << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::istringstream line(const std::string& expected_key) {
    std::string text;
    if (!std::getline(in_, text)) throw ParseError("unexpected end of model file, expected '" + expected_key + "'", line_ + 1, 1);
    ++line_;
    std::istringstream ss(text);
    std::string key;
    ss >> key;
    if (key != expected_key) throw ParseError("expected '" + expected_key + "', got '" + key + "'", line_, 1);
    return ss;
  }

  template <typename T>
  T field(std::istringstream& ss, const char* what) {
    T v{};
    if (!(ss >> v)) throw ParseError(std::string("malformed ") + what, line_, 1);
    return v;
  }

  void magic() {
    std::string text;
    ++line_;
    if (!std::getline(in_, text) || text != kMagic) throw ParseError("not a ddv model file", 1, 1);
  }

  Header header() {
    magic();
    Header h;
    auto k = line("kind");
    const auto kind = field<std::string>(k, "kind");
    if (kind == "visit_autoencoder") h.kind = ModelKind::visit_autoencoder;
    else if (kind == "patient_autoencoder") h.kind = ModelKind::patient_autoencoder;
    else if (kind == "public_encoder") h.kind = ModelKind::public_encoder;
    else throw ParseError("unknown model kind '" + kind + "'", line_, 6);
    auto s = line("secret");
    h.secret = field<int>(s, "secret flag") != 0;
    auto v = line("version");
    h.version = field<int>(v, "version");
    auto sd = line("seed");
    h.seed = field<std::uint64_t>(sd, "seed");
    auto dm = line("dims");
    h.d = field<std::size_t>(dm, "d");
    h.hidden = field<std::size_t>(dm, "hidden");
    h.q = field<std::size_t>(dm, "q");
    h.p = field<std::size_t>(dm, "p");
    auto w = line("weights");
    h.weights.positive = field<double>(w, "positive weight");
    h.weights.negative = field<double>(w, "negative weight");
    return h;
  }

  // Fills a block whose layout is already known; names and shapes must match.
  void block(const std::string& name, nn::ParamBlock& into) {
    auto b = line("block");
    if (field<std::string>(b, "block name") != name) throw ParseError("expected block '" + name + "'", line_, 7);
    if (field<std::size_t>(b, "tensor count") != into.size()) throw ParseError("tensor count mismatch", line_, 1);
    for (std::size_t i = 0; i < into.size(); ++i) {
      auto t = line("tensor");
      const auto tname = field<std::string>(t, "tensor name");
      const auto rows = field<Eigen::Index>(t, "rows");
      const auto cols = field<Eigen::Index>(t, "cols");
      auto& m = into[i];
      if (tname != into.name(i) || rows != m.rows() || cols != m.cols())
        throw ParseError("tensor '" + tname + "' does not match the expected layout", line_, 8);
      for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = field<double>(t, "tensor value");
    }
  }

  std::vector<double> history() {
    auto h = line("history");
    const auto n = field<std::size_t>(h, "history length");
    std::vector<double> out(n);
    for (auto& v : out) v = field<double>(h, "history value");
    return out;
  }

  void end() { line("end"); }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read model file " + path.string());
  return in;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out << "end\n";
  out.flush();
  if (!out) throw IoError("failed writing model file " + path.string());
}

Header expect(Reader& r, ModelKind kind) {
  Header h = r.header();
  if (h.kind != kind)
    throw ValidationError(std::string("model file holds a ") + kind_name(h.kind) + ", expected " + kind_name(kind));
  return h;
}

}  // namespace

void save_model(const VisitEncoderModel& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, {ModelKind::visit_autoencoder, true, m.model_version, m.seed, m.d, m.hidden, m.q, 0, m.weights});
  write_block(out, "encoder", m.encoder);
  write_block(out, "decoder", m.decoder);
  write_history(out, m.loss_history);
  finish(out, path);
}

void save_model(const PatientEncoderModel& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, {ModelKind::patient_autoencoder, true, m.model_version, m.seed, 0, 0, m.q, m.p, {}});
  write_block(out, "encoder", m.encoder);
  write_block(out, "decoder", m.decoder);
  write_history(out, m.loss_history);
  finish(out, path);
}

void save_model(const PublicEncoder& e, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, {ModelKind::public_encoder, false, e.model_version, 0, e.d, e.hidden, e.q, e.p, {}});
  write_block(out, "visit_encoder", e.visit_encoder);
  write_block(out, "patient_encoder", e.patient_encoder);
  finish(out, path);
}

VisitEncoderModel load_visit_model(const std::filesystem::path& path) {
  auto in = open_in(path);
  Reader r(in);
  const Header h = expect(r, ModelKind::visit_autoencoder);
  VisitEncoderModel m;
  m.d = h.d;
  m.hidden = h.hidden;
  m.q = h.q;
  m.weights = h.weights;
  m.seed = h.seed;
  m.model_version = h.version;
  m.encoder = nn::make_visit_encoder(h.d, h.hidden, h.q);
  m.decoder = nn::make_visit_decoder(h.d, h.hidden, h.q);
  r.block("encoder", m.encoder);
  r.block("decoder", m.decoder);
  m.loss_history = r.history();
  r.end();
  return m;
}

PatientEncoderModel load_patient_model(const std::filesystem::path& path) {
  auto in = open_in(path);
  Reader r(in);
  const Header h = expect(r, ModelKind::patient_autoencoder);
  PatientEncoderModel m;
  m.q = h.q;
  m.p = h.p;
  m.seed = h.seed;
  m.model_version = h.version;
  m.encoder = nn::make_patient_encoder(h.q, h.p);
  m.decoder = nn::make_patient_decoder(h.q, h.p);
  r.block("encoder", m.encoder);
  r.block("decoder", m.decoder);
  m.loss_history = r.history();
  r.end();
  return m;
}

PublicEncoder load_public_encoder(const std::filesystem::path& path) {
  auto in = open_in(path);
  Reader r(in);
  const Header h = expect(r, ModelKind::public_encoder);
  PublicEncoder e;
  e.d = h.d;
  e.hidden = h.hidden;
  e.q = h.q;
  e.p = h.p;
  e.model_version = h.version;
  e.visit_encoder = nn::make_visit_encoder(h.d, h.hidden, h.q);
  e.patient_encoder = nn::make_patient_encoder(h.q, h.p);
  r.block("visit_encoder", e.visit_encoder);
  r.block("patient_encoder", e.patient_encoder);
  r.end();
  return e;
}

bool model_file_is_secret(const std::filesystem::path& path) {
  auto in = open_in(path);
  Reader r(in);
  return r.header().secret;
}

}  // namespace ddv::embed
