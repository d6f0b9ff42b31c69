#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "ddv/crypto.hpp"
#include "ddv/error.hpp"
#include "ddv/vend.hpp"
#include "trend.hpp"

#ifndef DDV_VERSION
#define DDV_VERSION "0.0.0"
#endif

namespace ddv::cli {

namespace fs = std::filesystem;

namespace {

// Reads the keys of one JSON object, rejecting any key nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key " + where_ + "." + k);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_train(const json& j, const std::string& where, embed::TrainConfig& t) {
  Fields f(j, where);
  f.get("epochs", t.epochs);
  f.get("batch_size", t.batch_size);
  f.get("learning_rate", t.learning_rate);
  f.get("momentum", t.momentum);
  f.get("hidden", t.hidden);
  f.get("clip_norm", t.clip_norm);
  f.finish();
  if (t.batch_size == 0 || t.hidden == 0) throw ConfigError(where + ": batch_size and hidden must be positive");
  if (!(t.learning_rate > 0.0) || t.momentum < 0.0 || t.momentum >= 1.0 || !(t.clip_norm > 0.0))
    throw ConfigError(where + ": learning_rate, momentum or clip_norm out of range");
}

json train_json(const embed::TrainConfig& t) {
  return {{"epochs", t.epochs},         {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},     {"hidden", t.hidden},         {"clip_norm", t.clip_norm}};
}

CorpusConfig read_corpus_config(const json& j, const std::string& where, std::string* preset_out,
                                CorpusConfig base) {
  Fields f(j, where);
  std::string preset;
  f.get("preset", preset);
  if (preset == "standard") base = standard_corpus_config();
  else if (preset == "overlap") base = overlap_corpus_config();
  else if (preset == "default") base = CorpusConfig{};
  else if (!preset.empty()) throw ConfigError(where + ".preset must be standard, overlap or default");
  if (preset_out && !preset.empty()) *preset_out = preset;
  CorpusConfig& c = base;
  f.get("vocabulary_size", c.vocabulary_size);
  f.get("cohorts", c.cohorts);
  f.get("patients_per_cohort", c.patients_per_cohort);
  f.get("mean_visits", c.mean_visits);
  f.get("max_visits", c.max_visits);
  f.get("mean_codes_per_visit", c.mean_codes_per_visit);
  f.get("cohort_code_set", c.cohort_code_set);
  f.get("overlap", c.overlap);
  f.get("common_codes", c.common_codes);
  f.get("common_code_rate", c.common_code_rate);
  f.get("persistence", c.persistence);
  f.get("progression_rate", c.progression_rate);
  f.get("noise_code_rate", c.noise_code_rate);
  f.finish();
  validate(c);
  return c;
}

json corpus_json(const CorpusConfig& c) {
  return {{"vocabulary_size", c.vocabulary_size},
          {"cohorts", c.cohorts},
          {"patients_per_cohort", c.patients_per_cohort},
          {"mean_visits", c.mean_visits},
          {"max_visits", c.max_visits},
          {"mean_codes_per_visit", c.mean_codes_per_visit},
          {"cohort_code_set", c.cohort_code_set},
          {"overlap", c.overlap},
          {"common_codes", c.common_codes},
          {"common_code_rate", c.common_code_rate},
          {"persistence", c.persistence},
          {"progression_rate", c.progression_rate},
          {"noise_code_rate", c.noise_code_rate}};
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_sha256(const fs::path& path) {
  const std::string text = read_text(path);
  return crypto::hex(crypto::sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

void prepare(const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
}

void finish_bundle(CommandResult& result, const std::string& command, const json& config,
                   const std::vector<std::string>& files) {
  std::ostringstream report;
  report << "check\tresult\tdetail\n";
  for (const auto& c : result.checks) report << c.name << '\t' << (c.passed ? "PASS" : "FAIL") << '\t' << c.detail << '\n';
  write_text(result.out_dir / "checks.tsv", report.str());
  auto all = files;
  all.push_back("checks.tsv");
  write_manifest(result.out_dir, command, config, all);
}

struct Models {
  Corpus corpus;
  embed::VisitEncoderModel visit;
  embed::PatientEncoderModel patient;
};

// Seeds are derived from the experiment seed with fixed offsets: corpus +0,
// visit model +1, patient model +2, splits +3, attack +4, noise +5, metric +6.
Models train_models(const ExperimentConfig& c) {
  Models m;
  m.corpus = generate_corpus(c.corpus, c.seed);
  m.visit = embed::train_visit_autoencoder(m.corpus, c.q, c.visit_training, c.seed + 1);
  m.patient = embed::train_patient_autoencoder(m.corpus, m.visit, c.p, c.patient_training, c.seed + 2);
  return m;
}

std::vector<std::size_t> cohort_labels(const Corpus& corpus) {
  std::vector<std::size_t> labels;
  for (const auto& r : corpus.records) {
    if (!r.cohort_label) throw PreconditionError("record " + r.patient_id + " has no cohort label");
    labels.push_back(*r.cohort_label);
  }
  return labels;
}

}  // namespace

CorpusConfig parse_corpus_config(const json& j, CorpusConfig base) {
  return read_corpus_config(j, "corpus", nullptr, std::move(base));
}

bool CommandResult::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Fields f(j, "config");
  f.get("experiment", c.experiment);
  f.get("seed", c.seed);
  if (const json* corpus = f.sub("corpus")) c.corpus = read_corpus_config(*corpus, "config.corpus", &c.corpus_preset, c.corpus);
  if (const json* t = f.sub("visit_training")) read_train(*t, "config.visit_training", c.visit_training);
  if (const json* t = f.sub("patient_training")) read_train(*t, "config.patient_training", c.patient_training);
  f.get("q", c.q);
  f.get("p", c.p);
  f.get("p_sweep", c.p_sweep);
  f.get("train_fraction", c.train_fraction);
  f.get("sigmas", c.sigmas);
  f.get("tasks", c.tasks);
  f.get("ns", c.ns);
  if (const json* a = f.sub("attack")) {
    Fields af(*a, "config.attack");
    af.get("purchased_fraction", c.attack.purchased_fraction);
    af.get("validation_fraction", c.attack.validation_fraction);
    af.get("positive_weight", c.attack.weights.positive);
    af.get("negative_weight", c.attack.weights.negative);
    if (const json* t = af.sub("visit_stage")) read_train(*t, "config.attack.visit_stage", c.attack.visit_stage);
    if (const json* t = af.sub("patient_stage")) read_train(*t, "config.attack.patient_stage", c.attack.patient_stage);
    if (const json* t = af.sub("joint_stage")) read_train(*t, "config.attack.joint_stage", c.attack.joint_stage);
    af.finish();
  }
  if (const json* r = f.sub("metric")) {
    Fields rf(*r, "config.metric");
    double shared_weight = 0.0;
    rf.get("per_class_targets", c.retrieval.per_class_targets);
    rf.get("triplets_per_anchor", c.retrieval.triplets_per_anchor);
    rf.get("margin", c.retrieval.margin);
    rf.get("shared_weight", shared_weight);
    rf.get("iterations", c.retrieval.hyper.iterations);
    rf.get("initial_step", c.retrieval.hyper.initial_step);
    rf.get("max_halvings", c.retrieval.hyper.max_halvings);
    rf.get("step_growth", c.retrieval.hyper.step_growth);
    rf.finish();
    if (shared_weight < 0.0) throw ConfigError("config.metric.shared_weight must be >= 0");
    c.retrieval.coupling = shared_weight > 0.0 ? metric::MultiTaskCoupling::shared(shared_weight)
                                               : metric::MultiTaskCoupling::independent();
  }
  f.finish();

  if (c.q == 0 || c.q > c.corpus.vocabulary_size) throw ConfigError("q must lie in [1, vocabulary_size]");
  if (c.p == 0) throw ConfigError("p must be positive");
  if (c.p_sweep.empty() || std::count(c.p_sweep.begin(), c.p_sweep.end(), 0u))
    throw ConfigError("p_sweep must list positive dimensions");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (c.sigmas.empty()) throw ConfigError("sigmas must not be empty");
  for (std::size_t i = 0; i < c.sigmas.size(); ++i)
    if (!(c.sigmas[i] >= 0.0) || (i && c.sigmas[i] <= c.sigmas[i - 1]))
      throw ConfigError("sigmas must be non-negative and strictly ascending");
  if (c.tasks.empty()) throw ConfigError("tasks must not be empty");
  for (auto t : c.tasks)
    if (t >= c.corpus.cohorts) throw ConfigError("task " + std::to_string(t) + " is not a cohort");
  if (c.ns.empty() || std::count(c.ns.begin(), c.ns.end(), 0u)) throw ConfigError("ns must list positive counts");
  if (!(c.attack.purchased_fraction > 0.0 && c.attack.purchased_fraction < 1.0) ||
      !(c.attack.validation_fraction >= 0.0 && c.attack.validation_fraction < 1.0))
    throw ConfigError("attack fractions out of range");
  if (!(c.retrieval.margin > 0.0)) throw ConfigError("metric margin must be positive");
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json corpus = corpus_json(c.corpus);
  return {{"experiment", c.experiment},
          {"seed", c.seed},
          {"corpus", corpus},
          {"visit_training", train_json(c.visit_training)},
          {"patient_training", train_json(c.patient_training)},
          {"q", c.q},
          {"p", c.p},
          {"p_sweep", c.p_sweep},
          {"train_fraction", c.train_fraction},
          {"sigmas", c.sigmas},
          {"tasks", c.tasks},
          {"ns", c.ns},
          {"attack",
           {{"purchased_fraction", c.attack.purchased_fraction},
            {"validation_fraction", c.attack.validation_fraction},
            {"positive_weight", c.attack.weights.positive},
            {"negative_weight", c.attack.weights.negative},
            {"visit_stage", train_json(c.attack.visit_stage)},
            {"patient_stage", train_json(c.attack.patient_stage)},
            {"joint_stage", train_json(c.attack.joint_stage)}}},
          {"metric",
           {{"per_class_targets", c.retrieval.per_class_targets},
            {"triplets_per_anchor", c.retrieval.triplets_per_anchor},
            {"margin", c.retrieval.margin},
            {"shared_weight", c.retrieval.coupling.shared_weight},
            {"iterations", c.retrieval.hyper.iterations},
            {"initial_step", c.retrieval.hyper.initial_step},
            {"max_halvings", c.retrieval.hyper.max_halvings},
            {"step_growth", c.retrieval.hyper.step_growth}}}};
}

std::string config_hash(const json& config) {
  const std::string canon = config.dump();
  return crypto::hex(crypto::sha256(std::span(reinterpret_cast<const std::uint8_t*>(canon.data()), canon.size())));
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    const std::vector<std::string>& files) {
  json list = json::array();
  for (const auto& name : files) {
    const fs::path path = out_dir / name;
    list.push_back({{"name", name}, {"bytes", fs::file_size(path)}, {"sha256", file_sha256(path)}});
  }
  json manifest = {{"toolkit", "ddv"},
                   {"version", DDV_VERSION},
                   {"command", command},
                   {"config_sha256", config_hash(config)},
                   {"config", config},
                   {"files", list}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

CommandResult cmd_corpus_gen(const ExperimentConfig& config, const fs::path& out_dir) {
  prepare(out_dir);
  CommandResult result{{}, out_dir};
  const Corpus corpus = generate_corpus(config.corpus, config.seed);
  save_corpus(corpus, out_dir / "corpus.txt");
  const Corpus back = load_corpus(out_dir / "corpus.txt");
  result.checks.push_back({"round-trip", back == corpus, std::to_string(corpus.records.size()) + " records"});

  std::size_t codes = 0;
  for (const auto& r : corpus.records)
    for (const auto& v : r.visits) codes += v.active_codes.size();
  const double mean_codes = static_cast<double>(codes) / static_cast<double>(corpus.visit_count());
  const double mean_visits = static_cast<double>(corpus.visit_count()) / static_cast<double>(corpus.records.size());
  std::ostringstream stats;
  stats << "records\tvisits\tmean_visits\tmean_codes_per_visit\n"
        << corpus.records.size() << '\t' << corpus.visit_count() << '\t' << fmt(mean_visits) << '\t'
        << fmt(mean_codes) << '\n';
  write_text(out_dir / "corpus_stats.tsv", stats.str());
  finish_bundle(result, "corpus gen", to_json(config), {"corpus.txt", "corpus_stats.tsv"});
  return result;
}

CommandResult cmd_train(const ExperimentConfig& config, const fs::path& out_dir) {
  prepare(out_dir);
  CommandResult result{{}, out_dir};
  const Models m = train_models(config);
  embed::save_model(m.visit, out_dir / "visit.model");
  embed::save_model(m.patient, out_dir / "patient.model");
  embed::save_model(embed::public_encoder(m.visit, m.patient), out_dir / "public.model");

  std::ostringstream losses;
  losses << "model\tepoch\tloss\n";
  for (std::size_t e = 0; e < m.visit.loss_history.size(); ++e)
    losses << "visit\t" << e << '\t' << fmt(m.visit.loss_history[e], "%.6g") << '\n';
  for (std::size_t e = 0; e < m.patient.loss_history.size(); ++e)
    losses << "patient\t" << e << '\t' << fmt(m.patient.loss_history[e], "%.6g") << '\n';
  write_text(out_dir / "loss_history.tsv", losses.str());

  result.checks.push_back({"visit loss non-increasing", non_decreasing_within(negated(m.visit.loss_history), 1e-6),
                           fmt(m.visit.loss_history.back(), "%.6g")});
  result.checks.push_back({"patient loss non-increasing",
                           non_decreasing_within(negated(m.patient.loss_history), 1e-6),
                           fmt(m.patient.loss_history.back(), "%.6g")});
  result.checks.push_back({"decoder files marked secret",
                           embed::model_file_is_secret(out_dir / "visit.model") &&
                               embed::model_file_is_secret(out_dir / "patient.model") &&
                               !embed::model_file_is_secret(out_dir / "public.model"),
                           ""});
  finish_bundle(result, "train", to_json(config), {"visit.model", "patient.model", "public.model", "loss_history.tsv"});
  return result;
}

CommandResult cmd_recovery_sweep(const ExperimentConfig& config, const fs::path& out_dir) {
  prepare(out_dir);
  CommandResult result{{}, out_dir};
  const Corpus corpus = generate_corpus(config.corpus, config.seed);
  const auto [train_idx, test_idx] = split_indices(corpus.records.size(), config.train_fraction, config.seed + 3);
  const auto train = select(corpus.records, train_idx);
  const auto test = select(corpus.records, test_idx);
  const auto train_visits = embed::all_visits(train);
  const auto vm = embed::train_visit_autoencoder(train_visits, corpus.dimension(), config.q, config.visit_training,
                                                 config.seed + 1);

  auto ps = config.p_sweep;
  std::sort(ps.begin(), ps.end());
  std::vector<double> precision, recall;
  std::ostringstream table;
  table << "p\tprecision\trecall\theldout_mse\tzero_mse\n";
  const double zero = embed::zero_predictor_mse(vm, test);
  for (auto p : ps) {
    const auto pm = embed::train_patient_autoencoder(train, vm, p, config.patient_training, config.seed + 2);
    const auto pr = embed::patient_recovery(pm, vm, test);
    precision.push_back(pr.precision);
    recall.push_back(pr.recall);
    table << p << '\t' << fmt(pr.precision) << '\t' << fmt(pr.recall) << '\t'
          << fmt(embed::mean_step_mse(pm, vm, test), "%.6g") << '\t' << fmt(zero, "%.6g") << '\n';
  }
  write_text(out_dir / "fig4_recovery.tsv", table.str());
  const auto visit_pr = embed::visit_recovery(vm, embed::all_visits(test));
  std::ostringstream visit;
  visit << "q\tprecision\trecall\n" << config.q << '\t' << fmt(visit_pr.precision) << '\t' << fmt(visit_pr.recall) << '\n';
  write_text(out_dir / "visit_recovery.tsv", visit.str());

  result.checks.push_back({"precision non-decreasing in p (0.02)", non_decreasing_within(precision, 0.02),
                           join(precision)});
  result.checks.push_back({"recall non-decreasing in p (0.02)", non_decreasing_within(recall, 0.02), join(recall)});
  finish_bundle(result, "sweep recovery", to_json(config), {"fig4_recovery.tsv", "visit_recovery.tsv"});
  return result;
}

CommandResult cmd_attack_sweep(const ExperimentConfig& config, const fs::path& out_dir) {
  prepare(out_dir);
  CommandResult result{{}, out_dir};
  const Models m = train_models(config);
  const auto reports = attack::noise_sweep(m.corpus, m.visit, m.patient, config.sigmas, config.attack, config.seed + 4);

  std::ostringstream all, table1, table3;
  attack::write_report_table(all, reports);
  table1 << "epsilon\tprecision\trecall\tprecision_defined\n";
  table3 << "epsilon\tparam_distance\tratio\n";
  std::vector<double> precision, gap;
  for (const auto& r : reports) {
    table1 << fmt(r.epsilon, "%.2f") << '\t' << fmt(r.precision) << '\t' << fmt(r.recall) << '\t'
           << (r.precision_defined ? 1 : 0) << '\n';
    table3 << fmt(r.epsilon, "%.2f") << '\t' << fmt(r.param_distance, "%.6g") << '\t'
           << fmt(r.param_distance_ratio, "%.6g") << '\n';
    precision.push_back(r.precision);
    gap.push_back(r.recall - r.precision);
  }
  write_text(out_dir / "attack_reports.tsv", all.str());
  write_text(out_dir / "table1_recovery_vs_noise.tsv", table1.str());
  write_text(out_dir / "table3_decoder_drift.tsv", table3.str());

  // Reference rows on the same held-out split the sweep uses.
  const auto [bought_idx, heldout_idx] =
      split_indices(m.corpus.records.size(), config.attack.purchased_fraction, config.seed + 4);
  const auto bought = select(m.corpus.records, bought_idx);
  const auto heldout = select(m.corpus.records, heldout_idx);
  const auto orig = embed::patient_recovery(m.patient, m.visit, heldout);
  const auto base = attack::base_rate_recovery(bought, heldout, m.corpus.dimension(), config.attack.weights);
  std::ostringstream ref;
  ref << "reference\tprecision\trecall\n"
      << "original_decoder\t" << fmt(orig.precision) << '\t' << fmt(orig.recall) << '\n'
      << "base_rate\t" << fmt(base.precision) << '\t' << fmt(base.recall) << '\n';
  write_text(out_dir / "attack_reference.tsv", ref.str());

  result.checks.push_back({"precision non-increasing in sigma (one inversion <= 0.03)",
                           non_increasing_with_one_inversion(precision, 0.03), join(precision)});
  result.checks.push_back({"recall - precision non-decreasing (0.05)", non_decreasing_within(gap, 0.05), join(gap)});
  finish_bundle(result, "sweep attack", to_json(config),
                {"attack_reports.tsv", "table1_recovery_vs_noise.tsv", "table3_decoder_drift.tsv",
                 "attack_reference.tsv"});
  return result;
}

CommandResult cmd_retrieval_eval(const ExperimentConfig& config, const fs::path& out_dir) {
  prepare(out_dir);
  CommandResult result{{}, out_dir};
  const Models m = train_models(config);
  const auto labels = cohort_labels(m.corpus);
  const auto encoder = embed::public_encoder(m.visit, m.patient);

  std::vector<std::vector<metric::Vector>> by_sigma;
  for (std::size_t s = 0; s < config.sigmas.size(); ++s) {
    std::mt19937_64 noise(config.seed + 5 + 0x9e3779b97f4a7c15ULL * s);
    auto& sigs = by_sigma.emplace_back();
    for (const auto& r : m.corpus.records) sigs.push_back(embed::make_signature(encoder, r, config.sigmas[s], noise).vector);
  }
  auto rc = config.retrieval;
  rc.seed = config.seed + 6;
  const auto cells = metric::retrieval_noise_sweep(by_sigma, config.sigmas, labels, config.tasks, config.ns, rc);

  std::ostringstream table6;
  metric::write_retrieval_table(table6, cells);
  write_text(out_dir / "table6_precision.tsv", table6.str());

  // Heatmap grid: one row per (task, N), one column per sigma.
  std::ostringstream heat;
  heat << "task\tn";
  for (double s : config.sigmas) heat << "\tsigma=" << fmt(s, "%.2f");
  heat << '\n';
  for (auto t : config.tasks)
    for (auto n : config.ns) {
      heat << t << '\t' << n;
      for (double s : config.sigmas)
        for (const auto& c : cells)
          if (c.task == t && c.n == n && c.sigma == s) heat << '\t' << fmt(c.precision);
      heat << '\n';
    }
  write_text(out_dir / "fig6_heatmap.tsv", heat.str());

  // The lowest noise level again through the single-level path, which also
  // yields the metric library and the k-NN table.
  std::vector<metric::TaskMetric> metrics;
  const auto first = metric::retrieval_eval(by_sigma.front(), labels, config.tasks, config.ns, rc,
                                            config.sigmas.front(), &metrics);
  bool consistent = true;
  for (const auto& c : first) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const metric::RetrievalCell& x) {
      return x.sigma == c.sigma && x.task == c.task && x.n == c.n;
    });
    consistent = consistent && it != cells.end() && it->precision == c.precision;
  }
  result.checks.push_back({"lowest-sigma column equals single-level evaluation", consistent,
                           "sigma " + fmt(config.sigmas.front(), "%.2f")});
  metric::save_metric_library(metrics, out_dir / "metric_library.txt");

  const auto split = metric::split_60_20_20(m.corpus.records.size(), config.seed + 3);
  std::vector<metric::Vector> train_sigs;
  std::vector<std::size_t> train_labels;
  for (auto i : split.train) {
    train_sigs.push_back(by_sigma.front()[i]);
    train_labels.push_back(labels[i]);
  }
  std::vector<metric::MetricTrainingSet> sets;
  std::vector<std::vector<int>> task_labels;
  for (auto t : config.tasks) {
    sets.push_back(metric::build_training_set("task" + std::to_string(t), train_sigs,
                                              metric::one_vs_rest(train_labels, t), rc.per_class_targets,
                                              rc.triplets_per_anchor, rc.seed + t));
    task_labels.push_back(metric::one_vs_rest(labels, t));
  }
  const auto split_metrics = metric::train_metric(sets, rc.margin, rc.coupling, rc.hyper);
  const auto errors = metric::pairwise_classification_error(split_metrics, by_sigma.front(), task_labels, split);
  std::ostringstream table5;
  table5 << "task\tvalidation\ttest\n";
  for (const auto& e : errors) table5 << e.task_id << '\t' << fmt(e.validation) << '\t' << fmt(e.test) << '\n';
  write_text(out_dir / "table5_knn_error.tsv", table5.str());

  if (config.sigmas.size() > 1)
    for (auto n : config.ns) {
      const double lo = metric::mean_precision(cells, config.sigmas.front(), n);
      const double hi = metric::mean_precision(cells, config.sigmas.back(), n);
      result.checks.push_back({"mean precision@" + std::to_string(n) + " at lowest sigma >= at highest", lo >= hi,
                               fmt(lo) + " vs " + fmt(hi)});
    }
  finish_bundle(result, "sweep retrieval", to_json(config),
                {"table6_precision.tsv", "fig6_heatmap.tsv", "metric_library.txt", "table5_knn_error.tsv"});
  return result;
}

CommandResult cmd_verify(const fs::path& bundle_dir) {
  CommandResult result{{}, bundle_dir};
  json manifest;
  try {
    manifest = json::parse(read_text(bundle_dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest.json: ") + e.what(), 1, 1);
  }
  if (!manifest.contains("config") || !manifest.contains("files") || !manifest.contains("config_sha256"))
    throw ValidationError("manifest.json lacks config, config_sha256 or files");
  const std::string recorded = manifest["config_sha256"].get<std::string>();
  const std::string actual = config_hash(manifest["config"]);
  result.checks.push_back({"config hash", recorded == actual, actual});
  for (const auto& f : manifest["files"]) {
    const std::string name = f.at("name").get<std::string>();
    const fs::path path = bundle_dir / name;
    if (!fs::exists(path)) {
      result.checks.push_back({"file " + name, false, "missing"});
      continue;
    }
    const std::string sha = file_sha256(path);
    result.checks.push_back({"file " + name, sha == f.at("sha256").get<std::string>(), sha});
  }
  for (const auto& f : manifest["files"])
    if (f.at("name") == "checks.tsv") {
      const std::string text = read_text(bundle_dir / "checks.tsv");
      result.checks.push_back({"recorded checks all passed", text.find("\tFAIL\t") == std::string::npos, ""});
    }
  return result;
}

}  // namespace ddv::cli
