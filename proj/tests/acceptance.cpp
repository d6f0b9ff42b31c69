// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Experiment bundles are left in ./acceptance_out for inspection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "ddv/attack.hpp"
#include "ddv/embed.hpp"
#include "ddv/error.hpp"
#include "ddv/metric.hpp"
#include "ddv/vend.hpp"
#include "support.hpp"
#include "trend.hpp"

namespace fs = std::filesystem;
using namespace ddv;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kSource = DDV_SOURCE_DIR;
const fs::path kOut = "acceptance_out";

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) passed = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

// Tab-separated table with a header row, columns by name.
class Table {
 public:
  explicit Table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    header_ = split(line);
    while (std::getline(in, line))
      if (!line.empty()) rows_.push_back(split(line));
  }

  std::size_t size() const { return rows_.size(); }
  std::string text(std::size_t row, const std::string& col) const { return rows_.at(row).at(index(col)); }
  double num(std::size_t row, const std::string& col) const { return std::stod(text(row, col)); }
  std::vector<double> column(const std::string& col) const {
    std::vector<double> out;
    for (std::size_t r = 0; r < rows_.size(); ++r) out.push_back(num(r, col));
    return out;
  }

 private:
  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) out.push_back(cell);
    return out;
  }
  std::size_t index(const std::string& col) const {
    const auto it = std::find(header_.begin(), header_.end(), col);
    if (it == header_.end()) throw ParseError("no column " + col, 1, 1);
    return static_cast<std::size_t>(it - header_.begin());
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

bool all_checks_passed(const cli::CommandResult& r, Outcome& o) {
  bool ok = true;
  for (const auto& c : r.checks)
    if (!c.passed) {
      o.require(false, "bundle check '" + c.name + "'");
      ok = false;
    }
  return ok;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto cfg = cli::load_config(kSource / "tools/configs/recovery.json");
  const Corpus corpus = generate_corpus(cfg.corpus, cfg.seed);
  const std::vector<PatientRecord> batch(corpus.records.begin(), corpus.records.begin() + 5);
  auto vm = embed::train_visit_autoencoder(corpus, cfg.q, {1, 32, 0.02, 0.9, 32, 5.0}, 1);
  auto pm = embed::train_patient_autoencoder(batch, vm, cfg.p, {1, 16, 0.05, 0.9, 32, 5.0}, 2);
  const auto visits = embed::all_visits(batch);
  const std::vector<VisitVector> five(visits.begin(), visits.begin() + 5);

  double worst = 0.0;
  std::string worst_name;
  auto record = [&](const std::vector<testing::TensorCheck>& checks, const char* model) {
    for (const auto& c : checks)
      if (c.relative_error >= worst) {
        worst = c.relative_error;
        worst_name = std::string(model) + "." + c.name;
      }
  };
  {
    auto eg = vm.encoder.zeros_like(), dg = vm.decoder.zeros_like();
    embed::visit_batch_loss(vm, five, &eg, &dg);
    auto loss = [&] { return embed::visit_batch_loss(vm, five); };
    record(testing::check_gradient(vm.encoder, eg, loss), "visit");
    record(testing::check_gradient(vm.decoder, dg, loss), "visit");
  }
  {
    auto eg = pm.encoder.zeros_like(), dg = pm.decoder.zeros_like();
    embed::patient_batch_loss(pm, vm, batch, &eg, &dg);
    auto loss = [&] { return embed::patient_batch_loss(pm, vm, batch); };
    record(testing::check_gradient(pm.encoder, eg, loss), "patient");
    record(testing::check_gradient(pm.decoder, dg, loss), "patient");
  }
  const double t = seconds_since(t0);
  o.require(worst < 1e-4, format("worst relative error %.2e (%s) < 1e-4", worst, worst_name.c_str()));
  o.require(t < 30.0, format("%.1fs < 30s", t));
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome recovery_trend() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto r = cli::cmd_recovery_sweep(cli::load_config(kSource / "tools/configs/recovery.json"), kOut / "recovery");
  const double t = seconds_since(t0);
  all_checks_passed(r, o);
  const Table fig(kOut / "recovery" / "fig4_recovery.tsv");
  const auto ps = fig.column("p"), prec = fig.column("precision"), rec = fig.column("recall");
  o.require(ps == std::vector<double>{8, 16, 32, 64}, "p grid 8 16 32 64");
  o.require(cli::non_decreasing_within(prec, 0.02), "precision non-decreasing (0.02) [" + cli::join(prec) + "]");
  o.require(cli::non_decreasing_within(rec, 0.02), "recall non-decreasing (0.02) [" + cli::join(rec) + "]");
  o.require(prec.back() >= 0.85 && rec.back() >= 0.85,
            format("at p=64 precision %.4f, recall %.4f >= 0.85", prec.back(), rec.back()));
  o.require(t < 180.0, format("%.1fs < 180s", t));
  return o;
}

// ---- 3 and 4 ------------------------------------------------------------------

struct AttackRun {
  double seconds = 0.0;
  cli::CommandResult result;
};

const AttackRun& attack_run() {
  static const AttackRun run = [] {
    AttackRun a;
    const auto t0 = Clock::now();
    a.result = cli::cmd_attack_sweep(cli::load_config(kSource / "tools/configs/attack.json"), kOut / "attack");
    a.seconds = seconds_since(t0);
    return a;
  }();
  return run;
}

Outcome attack_sanity() {
  Outcome o;
  const auto& run = attack_run();
  const Table table(kOut / "attack" / "table1_recovery_vs_noise.tsv");
  const Table ref(kOut / "attack" / "attack_reference.tsv");
  const std::size_t last = table.size() - 1;
  o.require(table.num(0, "epsilon") == 0.0 && table.num(last, "epsilon") == 2.0, "grid runs from 0 to 2");
  const double p0 = table.num(0, "precision"), r0 = table.num(0, "recall");
  const double op = ref.num(0, "precision"), orec = ref.num(0, "recall");
  o.require(std::abs(p0 - op) <= 0.05 && std::abs(r0 - orec) <= 0.05,
            format("sigma 0: retrained %.4f/%.4f vs original %.4f/%.4f (P/R, 0.05)", p0, r0, op, orec));
  const double p2 = table.num(last, "precision"), bp = ref.num(1, "precision");
  o.require(std::abs(p2 - bp) <= 0.03, format("sigma 2: precision %.4f vs base rate %.4f (0.03)", p2, bp));
  o.require(run.seconds < 180.0, format("%.1fs < 180s", run.seconds));
  return o;
}

Outcome noise_monotonicity() {
  Outcome o;
  const auto& run = attack_run();
  all_checks_passed(run.result, o);
  const Table table(kOut / "attack" / "table1_recovery_vs_noise.tsv");
  o.require(table.column("epsilon") == std::vector<double>{0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0},
            "sigma grid 0 0.1 0.2 0.4 0.6 0.8 1 2");
  const auto prec = table.column("precision"), rec = table.column("recall");
  std::vector<double> gap;
  for (std::size_t i = 0; i < prec.size(); ++i) gap.push_back(rec[i] - prec[i]);
  o.require(cli::non_increasing_with_one_inversion(prec, 0.03), "precision [" + cli::join(prec) + "]");
  o.require(cli::non_decreasing_within(gap, 0.05), "recall - precision [" + cli::join(gap) + "]");
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome metric_learning() {
  Outcome o;
  // Three cohorts placed 120 degrees apart on a circle of radius 3 in two
  // informative coordinates (sd 0.3), plus 30 wide nuisance coordinates.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const std::size_t p = 32, per = 100;
  std::vector<metric::Vector> xs;
  std::vector<std::size_t> cohort;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < per; ++i) {
      metric::Vector x(p);
      for (auto& e : x) e = 2.5 * g(rng);
      const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / 3.0;
      x(0) = 3.0 * std::cos(a) + 0.3 * g(rng);
      x(1) = 3.0 * std::sin(a) + 0.3 * g(rng);
      xs.push_back(x);
      cohort.push_back(c);
    }
  const auto split = metric::split_60_20_20(xs.size(), 9);
  std::vector<metric::Vector> train;
  std::vector<std::size_t> train_cohort;
  for (auto i : split.train) {
    train.push_back(xs[i]);
    train_cohort.push_back(cohort[i]);
  }
  std::vector<metric::MetricTrainingSet> sets;
  for (std::size_t t = 0; t < 3; ++t)
    sets.push_back(metric::build_training_set("cohort" + std::to_string(t), train,
                                              metric::one_vs_rest(train_cohort, t), 3, 10, 100 + t));
  metric::TrainingTrace trace;
  const auto ms = metric::train_metric(sets, 1.0, metric::MultiTaskCoupling::independent(), {}, &trace);

  const double min_eig = *std::min_element(trace.min_eigenvalues.begin(), trace.min_eigenvalues.end());
  o.require(min_eig >= -1e-8, format("min eigenvalue %.2e over %zu projections", min_eig, trace.min_eigenvalues.size()));
  double worst_rise = 0.0;
  for (std::size_t i = 1; i < trace.objectives.size(); ++i)
    worst_rise = std::max(worst_rise, trace.objectives[i] - trace.objectives[i - 1]);
  o.require(worst_rise <= 1e-8, format("largest objective rise %.2e", worst_rise));

  std::vector<metric::Candidate> cands;
  for (std::size_t i = 0; i < xs.size(); ++i) cands.push_back({i, xs[i]});
  std::string p10, viol, knn;
  bool p_ok = true, v_ok = true, k_ok = true;
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<metric::Vector> members;
    std::set<std::uint64_t> relevant;
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (cohort[i] == t) {
        members.push_back(xs[i]);
        relevant.insert(i);
      }
    const auto q = metric::make_query(ms[t].task_id, members);
    const double prec = metric::precision_at_n(metric::retrieve_top_n(ms[t], q, cands, 10), relevant, 10);
    const std::size_t v = metric::count_triplet_violations(ms[t], sets[t]);
    const auto labels = metric::one_vs_rest(cohort, t);
    const double ev = metric::knn_error(ms[t], xs, labels, split.train, split.validation);
    const double et = metric::knn_error(ms[t], xs, labels, split.train, split.test);
    p_ok = p_ok && prec == 1.0;
    v_ok = v_ok && v == 0;
    k_ok = k_ok && ev < 0.07 && et < 0.07;
    p10 += format(" %.2f", prec);
    viol += format(" %zu", v);
    knn += format(" %.3f/%.3f", ev, et);
  }
  o.require(p_ok, "P@10 per task" + p10);
  o.require(v_ok, "training triplet violations" + viol);
  o.require(k_ok, "k-NN error val/test < 0.07" + knn);
  return o;
}

// ---- 6 ----------------------------------------------------------------------

Outcome retrieval_oracle() {
  Outcome o;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<std::size_t> count(1, 1000), dim(1, 16);
  std::size_t mismatches = 0, ties = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t p = dim(rng), m = count(rng);
    metric::Matrix A(p, p);
    for (auto& x : A.reshaped()) x = g(rng);
    auto tm = metric::identity_metric("t", p);
    tm.M = A * A.transpose();
    // Coarse integer grid so equal distances occur.
    auto point = [&] {
      metric::Vector v(static_cast<Eigen::Index>(p));
      for (auto& x : v) x = std::round(2.0 * g(rng));
      return v;
    };
    const metric::QueryVector q{"t", point()};
    std::vector<metric::Candidate> cs;
    std::vector<std::uint64_t> ids(m);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < m; ++i) cs.push_back({ids[i], point()});
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, m)(rng);

    std::vector<std::pair<double, std::uint64_t>> all;
    for (const auto& c : cs) all.emplace_back(metric::squared_distance(tm.M, q.vector, c.signature), c.id);
    std::sort(all.begin(), all.end());
    std::vector<std::uint64_t> oracle;
    for (std::size_t i = 0; i < n; ++i) oracle.push_back(all[i].second);
    for (std::size_t i = 1; i < all.size(); ++i) ties += all[i].first == all[i - 1].first;
    if (metric::retrieve_top_n(tm, q, cs, n) != oracle) ++mismatches;
  }
  o.require(mismatches == 0, format("%zu of 200 instances differ from the sorted prefix", mismatches));
  o.require(ties > 0, format("%zu tied distances exercised", ties));
  return o;
}

// ---- 7 ----------------------------------------------------------------------

Outcome retrieval_noise() {
  Outcome o;
  const auto r = cli::cmd_retrieval_eval(cli::load_config(kSource / "tools/configs/retrieval.json"), kOut / "retrieval");
  all_checks_passed(r, o);
  const Table t6(kOut / "retrieval" / "table6_precision.tsv");
  std::map<double, std::pair<double, int>> at50;
  for (std::size_t i = 0; i < t6.size(); ++i)
    if (t6.num(i, "n") == 50) {
      auto& [sum, k] = at50[t6.num(i, "sigma")];
      sum += t6.num(i, "precision");
      ++k;
    }
  auto mean = [&](double s) {
    const auto it = at50.find(s);
    return it == at50.end() ? std::nan("") : it->second.first / it->second.second;
  };
  const double a = mean(0.2), b = mean(0.6), c = mean(1.0);
  o.require(a - b >= 0.02 && b - c >= 0.02, format("mean P@50 %.4f (0.2) %.4f (0.6) %.4f (1.0), gaps >= 0.02", a, b, c));
  return o;
}

// ---- 8 ----------------------------------------------------------------------

std::map<std::string, std::string> read_bundle(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[e.path().filename().string()] = s.str();
  }
  return files;
}

Outcome protocol_suite() {
  Outcome o;
  // Scripted scenarios, each run twice for determinism.
  for (const char* name : {"happy_path", "unauthorized", "tamper", "replay", "concurrent", "consumer_flow"}) {
    const fs::path script = kSource / "tools/scenarios" / (std::string(name) + ".json");
    const auto a = cli::cmd_vend_scenario(script, kOut / "vend" / name);
    const auto b = cli::cmd_vend_scenario(script, kOut / "vend" / (std::string(name) + "_again"));
    std::size_t failed = 0;
    for (const auto& c : a.checks) failed += !c.passed;
    o.require(failed == 0, format("%s: %zu/%zu checks", name, a.checks.size() - failed, a.checks.size()));
    o.require(read_bundle(kOut / "vend" / name) == read_bundle(kOut / "vend" / (std::string(name) + "_again")),
              std::string(name) + " deterministic");
  }

  // One-time key and byte-level tamper detection, outside any script.
  const auto m = testing::tiny_models(41, 8, 8, 3);
  vend::Ledger ledger;
  vend::DataServer server;
  vend::ProviderDevice device("alice", 1, embed::public_encoder(m.visit, m.patient));
  crypto::Drbg drbg(2, "acceptance");
  const auto bob = crypto::generate_signing_keypair(drbg);
  const auto c = device.list_data(m.corpus.records[0], 0.0, 5, ledger, server);
  vend::purchase(bob, c.contract_id, 5, ledger);
  const auto blob = vend::download(server, c.contract_id, bob, ledger, drbg);
  auto ch = vend::establish_secure_channel(device, bob, c.contract_id, blob.key_generation, ledger, drbg);
  const auto d = vend::deliver_key(device, ch.device, c.contract_id, blob.key_generation, ledger, server);
  const auto key = vend::open_key_delivery(ch.consumer, d.sealed, c.contract_id);
  o.require(vend::decrypt_record(blob, key) == m.corpus.records[0], "delivered record bit-exact");
  bool refused = false;
  try {
    vend::decrypt_record(*server.find(c.contract_id), key);
  } catch (const AuthenticationError&) {
    refused = true;
  }
  o.require(refused && server.find(c.contract_id)->key_generation == key.generation + 1,
            "key of generation g fails on blob g+1");

  std::size_t bytes = 0, missed = 0;
  for (std::size_t b = 0; b < ledger.size(); ++b) {
    auto& block = ledger.blocks_for_fault_injection()[b];
    auto flip_each = [&](std::span<std::uint8_t> field) {
      for (auto& byte : field) {
        byte ^= 0x01;
        const auto bad = vend::verify_ledger(ledger);
        missed += !(bad && *bad == b);
        ++bytes;
        byte ^= 0x01;
      }
    };
    flip_each(block.payload);
    flip_each(block.prev_hash);
    flip_each(block.block_hash);
  }
  o.require(missed == 0, format("%zu single-byte ledger tampers, %zu undetected", bytes, missed));
  return o;
}

// ---- 9 ----------------------------------------------------------------------

Outcome total_runtime(double acceptance_seconds) {
  Outcome o;
  double unit_seconds = 0.0;
  int failures = 0;
  for (const char* exe : {DDV_UNIT_TESTS}) {
    const auto t0 = Clock::now();
    const std::string cmd = std::string("\"") + exe + "\" > /dev/null 2>&1";
    failures += std::system(cmd.c_str()) != 0;
    unit_seconds += seconds_since(t0);
  }
  const double total = acceptance_seconds + unit_seconds;
  o.require(failures == 0, format("%d unit suites failed", failures));
  o.require(total < 600.0, format("unit suites %.1fs + experiments %.1fs = %.1fs < 600s", unit_seconds,
                                  acceptance_seconds, total));
  return o;
}

}  // namespace

int main() {
  fs::create_directories(kOut);
  const auto t0 = Clock::now();
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"recovery capacity trend", recovery_trend},
      {"attack sanity", attack_sanity},
      {"noise monotonicity", noise_monotonicity},
      {"metric learning", metric_learning},
      {"retrieval oracle equivalence", retrieval_oracle},
      {"retrieval vs noise", retrieval_noise},
      {"protocol suite", protocol_suite},
  };
  int failed = 0, number = 0;
  auto report = [&](const char* name, const Outcome& o, double t) {
    ++number;
    failed += !o.passed;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", number, name, o.detail.c_str(), t);
    std::fflush(stdout);
  };
  for (const auto& [name, run] : criteria) {
    const auto tc = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.require(false, std::string("error: ") + e.what());
    }
    report(name, o, seconds_since(tc));
  }
  const auto tc = Clock::now();
  report("total runtime", total_runtime(seconds_since(t0)), seconds_since(tc));
  return failed ? 1 : 0;
}
