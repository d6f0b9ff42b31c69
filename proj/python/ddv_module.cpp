#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "ddv/attack.hpp"
#include "ddv/corpus.hpp"
#include "ddv/embed.hpp"
#include "ddv/error.hpp"
#include "ddv/metric.hpp"
#include "ddv/vend.hpp"

namespace py = pybind11;
using namespace ddv;

namespace {

std::vector<std::vector<CodeIndex>> visits_of(const PatientRecord& r) {
  std::vector<std::vector<CodeIndex>> out;
  for (const auto& v : r.visits) out.push_back(v.active_codes);
  return out;
}

PatientRecord make_record(std::string id, const std::vector<std::vector<CodeIndex>>& visits,
                          std::optional<std::size_t> label) {
  PatientRecord r{std::move(id), {}, label};
  for (const auto& v : visits) r.visits.emplace_back(v);
  return r;
}

py::bytes as_bytes(std::span<const std::uint8_t> b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

crypto::Hash as_hash(const py::bytes& b) {
  const std::string s = b;
  if (s.size() != 32) throw PreconditionError("contract id must be 32 bytes");
  crypto::Hash h{};
  std::copy(s.begin(), s.end(), h.begin());
  return h;
}

}  // namespace

PYBIND11_MODULE(_ddv, m) {
  m.doc() = "Signature embedding, decoder attack, metric retrieval and data vending simulation";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<PreconditionError>(m, "PreconditionError", error);
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", error);
  py::register_exception<metric::PsdViolation>(m, "PsdViolation", validation);
  py::register_exception<IoError>(m, "IoError", error);
  py::register_exception<ParseError>(m, "ParseError", error);
  py::register_exception<TrainingError>(m, "TrainingError", error);
  py::register_exception<AuthenticationError>(m, "AuthenticationError", error);
  py::register_exception<ProtocolError>(m, "ProtocolError", error);

  // ---- corpus
  py::class_<CorpusConfig>(m, "CorpusConfig")
      .def(py::init<>())
      .def_readwrite("vocabulary_size", &CorpusConfig::vocabulary_size)
      .def_readwrite("cohorts", &CorpusConfig::cohorts)
      .def_readwrite("patients_per_cohort", &CorpusConfig::patients_per_cohort)
      .def_readwrite("mean_visits", &CorpusConfig::mean_visits)
      .def_readwrite("max_visits", &CorpusConfig::max_visits)
      .def_readwrite("mean_codes_per_visit", &CorpusConfig::mean_codes_per_visit)
      .def_readwrite("cohort_code_set", &CorpusConfig::cohort_code_set)
      .def_readwrite("overlap", &CorpusConfig::overlap)
      .def_readwrite("common_codes", &CorpusConfig::common_codes)
      .def_readwrite("common_code_rate", &CorpusConfig::common_code_rate)
      .def_readwrite("persistence", &CorpusConfig::persistence)
      .def_readwrite("progression_rate", &CorpusConfig::progression_rate)
      .def_readwrite("noise_code_rate", &CorpusConfig::noise_code_rate);
  m.def("standard_corpus_config", &standard_corpus_config);
  m.def("overlap_corpus_config", &overlap_corpus_config);

  py::class_<PatientRecord>(m, "PatientRecord")
      .def(py::init(&make_record), py::arg("patient_id"), py::arg("visits"), py::arg("cohort_label") = std::nullopt)
      .def_readonly("patient_id", &PatientRecord::patient_id)
      .def_readonly("cohort_label", &PatientRecord::cohort_label)
      .def_property_readonly("visits", &visits_of)
      .def("__eq__", [](const PatientRecord& a, const PatientRecord& b) { return a == b; })
      .def("__repr__", [](const PatientRecord& r) {
        return "<PatientRecord " + r.patient_id + " visits=" + std::to_string(r.visits.size()) + ">";
      });

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("records", &Corpus::records)
      .def_property_readonly("dimension", &Corpus::dimension)
      .def_property_readonly("visit_count", &Corpus::visit_count)
      .def_property_readonly("codes", [](const Corpus& c) { return c.vocabulary.codes; })
      .def("__len__", [](const Corpus& c) { return c.records.size(); })
      .def("__eq__", [](const Corpus& a, const Corpus& b) { return a == b; });
  m.def("generate_corpus", &generate_corpus, py::arg("config"), py::arg("seed"));
  m.def("save_corpus", &save_corpus);
  m.def("load_corpus", &load_corpus);

  // ---- embed
  py::class_<embed::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def(py::init([](std::size_t epochs, std::size_t batch_size, double lr, double momentum, std::size_t hidden,
                       double clip) { return embed::TrainConfig{epochs, batch_size, lr, momentum, hidden, clip}; }),
           py::arg("epochs") = 50, py::arg("batch_size") = 32, py::arg("learning_rate") = 0.05,
           py::arg("momentum") = 0.9, py::arg("hidden") = 32, py::arg("clip_norm") = 5.0)
      .def_readwrite("epochs", &embed::TrainConfig::epochs)
      .def_readwrite("batch_size", &embed::TrainConfig::batch_size)
      .def_readwrite("learning_rate", &embed::TrainConfig::learning_rate)
      .def_readwrite("momentum", &embed::TrainConfig::momentum)
      .def_readwrite("hidden", &embed::TrainConfig::hidden)
      .def_readwrite("clip_norm", &embed::TrainConfig::clip_norm);

  py::class_<embed::VisitEncoderModel>(m, "VisitEncoderModel")
      .def_readonly("d", &embed::VisitEncoderModel::d)
      .def_readonly("q", &embed::VisitEncoderModel::q)
      .def_readonly("loss_history", &embed::VisitEncoderModel::loss_history);
  py::class_<embed::PatientEncoderModel>(m, "PatientEncoderModel")
      .def_readonly("q", &embed::PatientEncoderModel::q)
      .def_readonly("p", &embed::PatientEncoderModel::p)
      .def_readonly("loss_history", &embed::PatientEncoderModel::loss_history);
  py::class_<embed::PublicEncoder>(m, "PublicEncoder")
      .def_readonly("d", &embed::PublicEncoder::d)
      .def_readonly("q", &embed::PublicEncoder::q)
      .def_readonly("p", &embed::PublicEncoder::p)
      .def("encode", [](const embed::PublicEncoder& e, const PatientRecord& r) { return embed::encode_patient(e, r); });

  m.def("train_visit_autoencoder",
        [](const Corpus& c, std::size_t q, const embed::TrainConfig& tc, std::uint64_t seed) {
          return embed::train_visit_autoencoder(c, q, tc, seed);
        },
        py::arg("corpus"), py::arg("q"), py::arg("config"), py::arg("seed"));
  m.def("train_patient_autoencoder",
        [](const Corpus& c, const embed::VisitEncoderModel& vm, std::size_t p, const embed::TrainConfig& tc,
           std::uint64_t seed) { return embed::train_patient_autoencoder(c, vm, p, tc, seed); },
        py::arg("corpus"), py::arg("visit_model"), py::arg("p"), py::arg("config"), py::arg("seed"));
  m.def("encode_patient",
        [](const embed::PatientEncoderModel& pm, const embed::VisitEncoderModel& vm, const PatientRecord& r) {
          return embed::encode_patient(pm, vm, r);
        });
  m.def("public_encoder", &embed::public_encoder);
  m.def("visit_recovery", [](const embed::VisitEncoderModel& vm, const Corpus& c) {
    const auto pr = embed::visit_recovery(vm, embed::all_visits(c.records));
    return std::pair{pr.precision, pr.recall};
  });
  m.def("patient_recovery",
        [](const embed::PatientEncoderModel& pm, const embed::VisitEncoderModel& vm, const Corpus& c) {
          const auto pr = embed::patient_recovery(pm, vm, c.records);
          return std::pair{pr.precision, pr.recall};
        });
  m.def(
      "make_signature",
      [](const embed::PublicEncoder& e, const PatientRecord& r, double sigma, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return embed::make_signature(e, r, sigma, rng).vector;
      },
      py::arg("encoder"), py::arg("record"), py::arg("sigma"), py::arg("seed"),
      "Signature vector f(X) + N(0, sigma^2) with noise drawn from a generator seeded by `seed`.");
  m.def("save_model", py::overload_cast<const embed::VisitEncoderModel&, const std::filesystem::path&>(&embed::save_model));
  m.def("save_model", py::overload_cast<const embed::PatientEncoderModel&, const std::filesystem::path&>(&embed::save_model));
  m.def("save_model", py::overload_cast<const embed::PublicEncoder&, const std::filesystem::path&>(&embed::save_model));
  m.def("load_visit_model", &embed::load_visit_model);
  m.def("load_patient_model", &embed::load_patient_model);
  m.def("load_public_encoder", &embed::load_public_encoder);
  m.def("model_file_is_secret", &embed::model_file_is_secret);

  // ---- attack
  py::class_<attack::AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_readwrite("purchased_fraction", &attack::AttackConfig::purchased_fraction)
      .def_readwrite("validation_fraction", &attack::AttackConfig::validation_fraction)
      .def_readwrite("visit_stage", &attack::AttackConfig::visit_stage)
      .def_readwrite("patient_stage", &attack::AttackConfig::patient_stage)
      .def_readwrite("joint_stage", &attack::AttackConfig::joint_stage);
  py::class_<attack::AttackReport>(m, "AttackReport")
      .def_readonly("epsilon", &attack::AttackReport::epsilon)
      .def_readonly("precision", &attack::AttackReport::precision)
      .def_readonly("recall", &attack::AttackReport::recall)
      .def_readonly("precision_defined", &attack::AttackReport::precision_defined)
      .def_readonly("param_distance", &attack::AttackReport::param_distance)
      .def_readonly("param_distance_ratio", &attack::AttackReport::param_distance_ratio);
  m.def("noise_sweep",
        [](const Corpus& c, const embed::VisitEncoderModel& vm, const embed::PatientEncoderModel& pm,
           const std::vector<double>& sigmas, const attack::AttackConfig& cfg, std::uint64_t seed) {
          return attack::noise_sweep(c, vm, pm, sigmas, cfg, seed);
        },
        py::arg("corpus"), py::arg("visit_model"), py::arg("patient_model"), py::arg("sigmas"), py::arg("config"),
        py::arg("seed"));
  m.def("parameter_distance", [](const nn::Vector& a, const nn::Vector& b) {
    const auto d = attack::parameter_distance(a, b);
    return std::pair{d.distance, d.ratio};
  });

  // ---- metric
  py::class_<metric::TaskMetric>(m, "TaskMetric")
      .def(py::init([](std::string id, const nn::Matrix& M) {
        auto t = metric::identity_metric(std::move(id), static_cast<std::size_t>(M.rows()));
        t.M = M;
        return t;
      }))
      .def_readonly("task_id", &metric::TaskMetric::task_id)
      .def_readonly("M", &metric::TaskMetric::M)
      .def_readonly("iterations", &metric::TaskMetric::iterations)
      .def_readonly("final_objective", &metric::TaskMetric::final_objective);
  m.def("identity_metric", &metric::identity_metric);
  m.def("mahalanobis_distance", &metric::mahalanobis_distance);
  m.def("make_query", [](const std::vector<nn::Vector>& vs) { return metric::make_query("query", vs).vector; });
  m.def(
      "retrieve_top_n",
      [](const metric::TaskMetric& t, const nn::Vector& q, const std::vector<std::pair<std::uint64_t, nn::Vector>>& cs,
         std::size_t n) {
        std::vector<metric::Candidate> cands;
        for (const auto& [id, v] : cs) cands.push_back({id, v});
        return metric::retrieve_top_n(t, {t.task_id, q}, cands, n);
      },
      py::arg("metric"), py::arg("query"), py::arg("candidates"), py::arg("n"));
  m.def(
      "train_metrics",
      [](const std::vector<nn::Vector>& xs, const std::vector<std::vector<int>>& task_labels, double margin,
         double shared_weight, std::size_t iterations, std::uint64_t seed) {
        std::vector<metric::MetricTrainingSet> sets;
        for (std::size_t t = 0; t < task_labels.size(); ++t)
          sets.push_back(metric::build_training_set("task" + std::to_string(t), xs, task_labels[t], 3, 10, seed + t));
        metric::MetricHyper h;
        h.iterations = iterations;
        const auto coupling = shared_weight > 0 ? metric::MultiTaskCoupling::shared(shared_weight)
                                                : metric::MultiTaskCoupling::independent();
        return metric::train_metric(sets, margin, coupling, h);
      },
      py::arg("signatures"), py::arg("task_labels"), py::arg("margin") = 1.0, py::arg("shared_weight") = 0.0,
      py::arg("iterations") = 100, py::arg("seed") = 0,
      "One metric per label vector; 3 targets and 10 triplets per anchor.");
  m.def("precision_at_n", [](const std::vector<std::uint64_t>& ranked, const std::set<std::uint64_t>& relevant,
                             std::size_t n) { return metric::precision_at_n(ranked, relevant, n); });

  // ---- vend
  py::enum_<vend::SessionState>(m, "SessionState")
      .value("init", vend::SessionState::init)
      .value("paid", vend::SessionState::paid)
      .value("authorized", vend::SessionState::authorized)
      .value("key_received", vend::SessionState::key_received)
      .value("delivered", vend::SessionState::delivered)
      .value("rekeyed", vend::SessionState::rekeyed);
  py::class_<vend::World>(m, "World")
      .def(py::init([](std::uint64_t seed, double drop, double duplicate, bool reorder) {
             return std::make_unique<vend::World>(seed, vend::FaultConfig{drop, duplicate, reorder});
           }),
           py::arg("seed"), py::arg("drop_rate") = 0.0, py::arg("duplicate_rate") = 0.0, py::arg("reorder") = false)
      .def("add_provider", [](vend::World& w, const std::string& n, const embed::PublicEncoder& e) { w.add_provider(n, e); })
      .def("add_consumer", [](vend::World& w, const std::string& n, std::uint64_t budget) { w.add_consumer(n, budget); })
      .def("list",
           [](vend::World& w, const std::string& provider, const PatientRecord& r, double sigma, std::uint64_t price) {
             return as_bytes(w.list(provider, r, sigma, price).contract_id);
           })
      .def("start_purchase",
           [](vend::World& w, const std::string& c, const py::bytes& id) { return w.start_purchase(c, as_hash(id)); })
      .def("run", &vend::World::run, py::arg("max_steps") = 1'000'000, py::arg("scan") = false)
      .def_property_readonly("violations", &vend::World::violations)
      .def("session_state", [](const vend::World& w, std::uint64_t id) { return w.session(id).state; })
      .def("consumer_records", [](const vend::World& w, const std::string& c) { return w.consumer(c).records(); })
      .def("consumer_budget", [](const vend::World& w, const std::string& c) { return w.consumer(c).budget(); })
      .def("ledger_size", [](const vend::World& w) { return w.ledger().size(); })
      .def("ledger_verifies", [](const vend::World& w) { return !vend::verify_ledger(w.ledger()).has_value(); })
      .def("snapshot", [](const vend::World& w) { return as_bytes(w.snapshot()); });
}
