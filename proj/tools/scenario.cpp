#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "ddv/error.hpp"
#include "ddv/vend.hpp"

namespace ddv::cli {

namespace fs = std::filesystem;

namespace {

template <class T>
T field(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("scenario field '") + key + "' has the wrong type");
  }
}

template <class T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("scenario action lacks '") + key + "'");
  return field<T>(j, key, T{});
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

struct Runner {
  vend::World& world;
  const Corpus& corpus;
  crypto::Drbg drbg;
  std::vector<vend::SmartContract> listed;
  std::vector<std::size_t> listed_record;
  std::vector<Check> checks;
  std::ostringstream log;
  bool tampered = false;

  const vend::SmartContract& listing(const json& a) {
    const auto i = required<std::size_t>(a, "listing");
    if (i >= listed.size()) throw ConfigError("listing " + std::to_string(i) + " does not exist yet");
    return listed[i];
  }

  void act(const json& a, double t) {
    const std::string what = required<std::string>(a, "do");
    log << t << '\t' << what << '\t';
    if (what == "list") {
      const auto r = required<std::size_t>(a, "record");
      if (r >= corpus.records.size()) throw ConfigError("record index out of range");
      listed.push_back(world.list(required<std::string>(a, "provider"), corpus.records[r],
                                  field<double>(a, "sigma", 0.0), field<std::uint64_t>(a, "price", 1)));
      listed_record.push_back(r);
      log << "contract " << crypto::short_hex(listed.back().contract_id) << '\n';
    } else if (what == "purchase") {
      const auto id = world.start_purchase(required<std::string>(a, "consumer"), listing(a).contract_id);
      log << "session " << id << '\n';
    } else if (what == "run") {
      const auto n = world.run(field<std::size_t>(a, "max_steps", 1'000'000), true);
      log << n << " steps\n";
    } else if (what == "download") {
      const auto& c = world.consumer(required<std::string>(a, "consumer"));
      std::string outcome = "ok";
      try {
        vend::download(world.server(), listing(a).contract_id, c.keys(), world.ledger(), drbg);
      } catch (const AuthenticationError&) {
        outcome = "refused";
      }
      const auto expect = field<std::string>(a, "expect", "ok");
      checks.push_back({"download by " + c.name() + " " + expect, outcome == expect, outcome});
      log << outcome << '\n';
    } else if (what == "tamper") {
      auto& blocks = world.ledger().blocks_for_fault_injection();
      const auto b = required<std::size_t>(a, "block");
      if (b >= blocks.size() || blocks[b].payload.empty()) throw ConfigError("tamper block out of range");
      auto& payload = blocks[b].payload;
      payload[field<std::size_t>(a, "offset", 0) % payload.size()] ^= 0x01;
      tampered = true;
      log << "flipped a byte of block " << b << '\n';
    } else if (what == "verify") {
      const auto bad = vend::verify_ledger(world.ledger());
      const auto expect = field<std::string>(a, "expect", "ok");
      bool pass = expect == "ok" ? !bad.has_value() : bad.has_value();
      if (bad && a.contains("index")) pass = pass && *bad == a["index"].get<std::size_t>();
      const std::string detail = bad ? "fails at block " + std::to_string(*bad) : "chain verifies";
      checks.push_back({"verify ledger expect " + expect, pass, detail});
      log << detail << '\n';
    } else if (what == "replay_handshake") {
      const auto& wire = world.wire_log();
      auto it = std::find_if(wire.rbegin(), wire.rend(),
                             [](const vend::Envelope& e) { return e.type == vend::MsgType::hello; });
      if (it == wire.rend()) throw ConfigError("no handshake on the wire to replay");
      const vend::Envelope copy = *it;
      auto& device = world.provider(copy.to);
      const auto before = device.rejected_handshakes();
      world.inject(copy);
      world.run(1'000'000, true);
      const bool rejected = device.rejected_handshakes() == before + 1;
      checks.push_back({"replayed handshake rejected", rejected, "session " + std::to_string(copy.session)});
      log << (rejected ? "rejected" : "accepted") << '\n';
    } else if (what == "flow") {
      const auto consumer = required<std::string>(a, "consumer");
      const auto cohort = required<std::size_t>(a, "cohort");
      std::vector<metric::Vector> members;
      for (std::size_t i = 0; i < listed.size(); ++i)
        if (corpus.records[listed_record[i]].cohort_label == cohort) members.push_back(listed[i].signature.vector);
      if (members.empty()) throw ConfigError("no listed record of cohort " + std::to_string(cohort));
      const auto query = metric::make_query("cohort" + std::to_string(cohort), members);
      const auto m = metric::identity_metric(query.task_id, static_cast<std::size_t>(query.vector.size()));
      const auto records = vend::consumer_flow(world, consumer, query, m, required<std::uint64_t>(a, "budget"),
                                               required<std::size_t>(a, "n"), true);
      const auto from_cohort = std::count_if(records.begin(), records.end(),
                                             [&](const PatientRecord& r) { return r.cohort_label == cohort; });
      if (a.contains("expect_count"))
        checks.push_back({"flow by " + consumer + " returns expected count",
                          records.size() == a["expect_count"].get<std::size_t>(), std::to_string(records.size())});
      if (a.contains("min_from_cohort"))
        checks.push_back({"flow by " + consumer + " mostly from cohort",
                          static_cast<std::size_t>(from_cohort) >= a["min_from_cohort"].get<std::size_t>(),
                          std::to_string(from_cohort) + " of " + std::to_string(records.size())});
      log << records.size() << " records, " << from_cohort << " from cohort " << cohort << '\n';
    } else if (what == "expect_sessions") {
      const auto state = required<std::string>(a, "state");
      std::size_t n = 0;
      for (const auto& [id, s] : world.sessions())
        if (state == vend::state_name(s.state)) ++n;
      const auto want = required<std::size_t>(a, "count");
      checks.push_back({"sessions in " + state, n == want, std::to_string(n)});
      log << n << '\n';
    } else {
      throw ConfigError("unknown scenario action '" + what + "'");
    }
  }

  void final_checks() {
    checks.push_back({"plaintext confinement at every step", world.violations().empty(),
                      world.violations().empty() ? "" : world.violations().front()});
    std::size_t delivered = 0, exact = 0;
    for (const auto& [id, s] : world.sessions()) {
      if (static_cast<int>(s.state) < static_cast<int>(vend::SessionState::delivered)) continue;
      ++delivered;
      const auto& c = world.consumer(s.consumer);
      for (const auto& [idx, owner] : c.record_sessions())
        if (owner == id && world.provider(s.provider).listings().at(s.contract_id).record == c.records()[idx]) ++exact;
    }
    checks.push_back({"delivered records equal the originals", exact == delivered,
                      std::to_string(exact) + " of " + std::to_string(delivered)});
    if (!tampered)
      checks.push_back({"ledger verifies", !vend::verify_ledger(world.ledger()).has_value(),
                        std::to_string(world.ledger().size()) + " blocks"});
  }
};

}  // namespace

CommandResult cmd_vend_scenario(const fs::path& script, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  std::ifstream in(script);
  if (!in) throw IoError("cannot read " + script.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(script.string() + ": " + e.what());
  }
  return run_scenario(j, out_dir, seed);
}

CommandResult run_scenario(const json& script_in, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  json script = script_in;
  if (!script.is_object()) throw ConfigError("scenario must be a JSON object");
  if (seed) script["seed"] = *seed;
  const auto s = field<std::uint64_t>(script, "seed", 1);
  for (const auto& [k, v] : script.items())
    if (k != "seed" && k != "faults" && k != "corpus" && k != "encoder" && k != "providers" && k != "consumers" &&
        k != "actions" && k != "name")
      throw ConfigError("unknown scenario key '" + k + "'");

  vend::FaultConfig faults;
  if (script.contains("faults")) {
    const auto& f = script["faults"];
    faults.drop_rate = field<double>(f, "drop_rate", 0.0);
    faults.duplicate_rate = field<double>(f, "duplicate_rate", 0.0);
    faults.reorder = field<bool>(f, "reorder", false);
  }
  CorpusConfig cc;
  cc.patients_per_cohort = 10;
  if (script.contains("corpus")) cc = parse_corpus_config(script["corpus"], cc);
  const Corpus corpus = generate_corpus(cc, s);

  const json enc = script.value("encoder", json::object());
  embed::TrainConfig tc{field<std::size_t>(enc, "epochs", 10), 16, 0.05, 0.9, 16, 5.0};
  const auto vm = embed::train_visit_autoencoder(corpus, field<std::size_t>(enc, "q", 8), tc, s + 1);
  const auto pm = embed::train_patient_autoencoder(corpus, vm, field<std::size_t>(enc, "p", 8), tc, s + 2);
  const auto encoder = embed::public_encoder(vm, pm);

  vend::World world(s, faults);
  for (const auto& p : script.value("providers", json::array())) world.add_provider(p.get<std::string>(), encoder);
  for (const auto& c : script.value("consumers", json::array()))
    world.add_consumer(required<std::string>(c, "name"), field<std::uint64_t>(c, "budget", 0));

  // Stable order by time; an action without t inherits the previous one.
  std::vector<std::pair<double, json>> actions;
  double t = 0.0;
  for (const auto& a : script.value("actions", json::array())) {
    t = field<double>(a, "t", t);
    actions.emplace_back(t, a);
  }
  std::stable_sort(actions.begin(), actions.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  Runner run{world, corpus, crypto::Drbg(s, "script"), {}, {}, {}, {}, false};
  run.log << "t\taction\toutcome\n";
  for (const auto& [time, a] : actions) run.act(a, time);
  world.run(1'000'000, true);
  run.final_checks();

  std::ostringstream transcript;
  transcript << "step\tfrom\tto\ttype\tsession\tnote\n";
  for (const auto& st : world.steps())
    transcript << st.step << '\t' << st.from << '\t' << st.to << '\t' << st.type << '\t' << st.session << '\t'
               << st.note << '\n';
  std::ostringstream sessions;
  for (const auto& [id, ps] : world.sessions()) {
    sessions << "session " << id << " " << ps.consumer << " -> " << ps.provider << " contract "
             << crypto::short_hex(ps.contract_id) << " state " << vend::state_name(ps.state) << '\n';
    for (const auto& line : ps.transcript) sessions << "  " << line << '\n';
  }
  std::ostringstream audit;
  audit << "event\tdetail\n";
  for (const auto& e : world.server().audit()) audit << e.event << '\t' << e.detail << '\n';
  const auto snap = world.snapshot();

  write_file(out_dir / "transcript.tsv", transcript.str());
  write_file(out_dir / "sessions.txt", sessions.str());
  write_file(out_dir / "actions.tsv", run.log.str());
  write_file(out_dir / "server_audit.tsv", audit.str());
  write_file(out_dir / "snapshot.bin", std::string(snap.begin(), snap.end()));

  CommandResult result{std::move(run.checks), out_dir};
  std::ostringstream report;
  report << "check\tresult\tdetail\n";
  for (const auto& c : result.checks) report << c.name << '\t' << (c.passed ? "PASS" : "FAIL") << '\t' << c.detail << '\n';
  write_file(out_dir / "checks.tsv", report.str());
  write_manifest(out_dir, "vend run", script,
                 {"transcript.tsv", "sessions.txt", "actions.tsv", "server_audit.tsv", "snapshot.bin", "checks.tsv"});
  return result;
}

}  // namespace ddv::cli
