#include <algorithm>

#include "ddv/error.hpp"
#include "ddv/vend.hpp"

namespace ddv::vend {

namespace {

constexpr const char* kLedger = "ledger";
constexpr int kMaxAttempts = 8;

Bytes purchase_request_message(const Hash& contract_id, std::uint64_t payment) {
  ByteWriter w;
  w.str("ddv-purchase").hash(contract_id).u64(payment);
  return w.take();
}

}  // namespace

const char* msg_name(MsgType t) {
  switch (t) {
    case MsgType::purchase_request: return "purchase_request";
    case MsgType::purchase_receipt: return "purchase_receipt";
    case MsgType::download_request: return "download_request";
    case MsgType::download_reply: return "download_reply";
    case MsgType::hello: return "hello";
    case MsgType::hello_reply: return "hello_reply";
    case MsgType::finish: return "finish";
    case MsgType::key_delivery: return "key_delivery";
    case MsgType::upload: return "upload";
    case MsgType::upload_ack: return "upload_ack";
    case MsgType::rekeyed: return "rekeyed";
  }
  return "?";
}

const char* state_name(SessionState s) {
  switch (s) {
    case SessionState::init: return "INIT";
    case SessionState::paid: return "PAID";
    case SessionState::authorized: return "AUTHORIZED";
    case SessionState::key_received: return "KEY_RECEIVED";
    case SessionState::delivered: return "DELIVERED";
    case SessionState::rekeyed: return "REKEYED";
  }
  return "?";
}

Bytes encode_envelope(const Envelope& e) {
  ByteWriter body;
  body.u8(static_cast<std::uint8_t>(e.type)).u64(e.session).str(e.from).str(e.to).u64(e.msg_id).bytes(e.payload);
  ByteWriter w;
  w.bytes(body.data());
  return w.take();
}

Envelope decode_envelope(std::span<const std::uint8_t> wire) {
  ByteReader outer(wire);
  const Bytes body = outer.bytes();
  outer.expect_end();
  ByteReader r(body);
  Envelope e;
  const auto t = r.u8();
  if (t < 1 || t > static_cast<std::uint8_t>(MsgType::rekeyed)) throw ParseError("unknown message type", 0, 5);
  e.type = static_cast<MsgType>(t);
  e.session = r.u64();
  e.from = r.str();
  e.to = r.str();
  e.msg_id = r.u64();
  e.payload = r.bytes();
  r.expect_end();
  return e;
}

Consumer::Consumer(std::string name, std::uint64_t seed, std::uint64_t budget)
    : name_(std::move(name)), drbg_(seed, "consumer:" + name_), budget_(budget) {
  keys_ = crypto::generate_signing_keypair(drbg_);
}

World::World(std::uint64_t seed, FaultConfig faults)
    : drbg_(seed, "world"), fault_rng_(seed, "faults"), faults_(faults) {
  if (faults.drop_rate < 0.0 || faults.drop_rate > 1.0 || faults.duplicate_rate < 0.0 || faults.duplicate_rate > 1.0)
    throw ConfigError("fault rates must lie in [0, 1]");
}

ProviderDevice& World::add_provider(const std::string& name, embed::PublicEncoder encoder) {
  if (name == kLedger || name == server_.name() || providers_.count(name) || consumers_.count(name))
    throw PreconditionError("actor name '" + name + "' already taken");
  return providers_.emplace(name, ProviderDevice(name, drbg_.next_u64(), std::move(encoder))).first->second;
}

Consumer& World::add_consumer(const std::string& name, std::uint64_t budget) {
  if (name == kLedger || name == server_.name() || providers_.count(name) || consumers_.count(name))
    throw PreconditionError("actor name '" + name + "' already taken");
  return consumers_.emplace(name, Consumer(name, drbg_.next_u64(), budget)).first->second;
}

ProviderDevice& World::provider(const std::string& name) {
  auto it = providers_.find(name);
  if (it == providers_.end()) throw PreconditionError("no provider named '" + name + "'");
  return it->second;
}

Consumer& World::consumer(const std::string& name) {
  auto it = consumers_.find(name);
  if (it == consumers_.end()) throw PreconditionError("no consumer named '" + name + "'");
  return it->second;
}

const Consumer& World::consumer(const std::string& name) const {
  auto it = consumers_.find(name);
  if (it == consumers_.end()) throw PreconditionError("no consumer named '" + name + "'");
  return it->second;
}

SmartContract World::list(const std::string& provider_name, const PatientRecord& record, double sigma,
                          std::uint64_t price) {
  auto& d = provider(provider_name);
  auto c = d.list_data(record, sigma, price, ledger_, server_);
  issued_keys_.push_back(d.listings().at(c.contract_id).key.bytes);
  return c;
}

std::uint64_t World::start_purchase(const std::string& consumer_name, const Hash& contract_id) {
  auto& c = consumer(consumer_name);
  const auto contract = ledger_.find_contract(contract_id);
  if (!contract) throw PreconditionError("unknown contract " + crypto::short_hex(contract_id));
  if (c.budget_ < contract->price)
    throw PreconditionError("consumer " + consumer_name + " cannot afford price " + std::to_string(contract->price));
  std::string provider_name;
  for (const auto& [name, d] : providers_)
    if (d.public_key() == contract->provider_pub) provider_name = name;
  if (provider_name.empty()) throw PreconditionError("no provider device holds this contract");

  PurchaseSession s;
  s.id = next_session_++;
  s.contract_id = contract_id;
  s.consumer = consumer_name;
  s.provider = provider_name;
  s.price = contract->price;
  s.transcript.push_back("INIT");
  sessions_[s.id] = s;

  ByteWriter w;
  w.hash(contract_id).bytes(c.keys_.public_key).u64(s.price).bytes(
      crypto::sign(c.keys_, purchase_request_message(contract_id, s.price)));
  send({MsgType::purchase_request, s.id, consumer_name, kLedger, 0, w.take()});
  return s.id;
}

const PurchaseSession& World::session(std::uint64_t id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw PreconditionError("no session " + std::to_string(id));
  return it->second;
}

std::vector<std::uint64_t> World::stalled_sessions() const {
  std::vector<std::uint64_t> out;
  for (const auto& [id, s] : sessions_)
    if (s.state != SessionState::rekeyed) out.push_back(id);
  return out;
}

std::size_t World::in_flight() const { return queue_.size(); }

void World::inject(Envelope e) { send(std::move(e)); }

void World::send(Envelope e) {
  e.msg_id = next_msg_++;
  wire_log_.push_back(e);
  queue_.push_back(e);
  if (faults_.duplicate_rate > 0.0 && std::uniform_real_distribution<double>(0, 1)(fault_rng_) < faults_.duplicate_rate)
    queue_.push_back(e);
}

std::optional<Envelope> World::next_message() {
  if (queue_.empty()) return std::nullopt;
  std::size_t pick = 0;
  if (faults_.reorder) {
    std::vector<std::uint64_t> heads;
    for (const auto& e : queue_)
      if (std::find(heads.begin(), heads.end(), e.session) == heads.end()) heads.push_back(e.session);
    const auto chosen = heads[std::uniform_int_distribution<std::size_t>(0, heads.size() - 1)(fault_rng_)];
    while (queue_[pick].session != chosen) ++pick;
  }
  Envelope e = std::move(queue_[pick]);
  queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(pick));
  return e;
}

bool World::step() {
  auto e = next_message();
  if (!e) return false;
  ++step_count_;
  StepRecord rec{step_count_, e->from, e->to, msg_name(e->type), e->session, {}};
  if (faults_.drop_rate > 0.0 && std::uniform_real_distribution<double>(0, 1)(fault_rng_) < faults_.drop_rate) {
    rec.note = "dropped";
    steps_.push_back(rec);
    return true;
  }
  if (!delivered_ids_.insert(e->msg_id).second) {
    rec.note = "duplicate ignored";
    steps_.push_back(rec);
    return true;
  }
  steps_.push_back(rec);
  deliver(*e);
  return true;
}

std::size_t World::run(std::size_t max_steps, bool do_scan) {
  std::size_t n = 0;
  if (do_scan)
    for (auto& v : scan()) violations_.push_back("before step 0: " + v);
  while (n < max_steps && step()) {
    ++n;
    if (do_scan)
      for (auto& v : scan()) violations_.push_back("step " + std::to_string(step_count_) + ": " + v);
  }
  return n;
}

void World::advance(PurchaseSession& s, SessionState next, const std::string& note) {
  if (static_cast<int>(next) != static_cast<int>(s.state) + 1)
    throw ProtocolError(std::string("session would skip from ") + state_name(s.state) + " to " + state_name(next));
  s.state = next;
  s.transcript.push_back(std::string(state_name(next)) + (note.empty() ? "" : ": " + note));
}

void World::fail(PurchaseSession& s, const std::string& why) {
  s.failure = why;
  s.transcript.push_back(std::string("stalled in ") + state_name(s.state) + ": " + why);
}

void World::deliver(const Envelope& e) {
  try {
    if (e.to == kLedger) return on_ledger(e);
    if (e.to == server_.name()) return on_server(e);
    if (auto it = providers_.find(e.to); it != providers_.end()) return on_device(it->second, e);
    if (auto it = consumers_.find(e.to); it != consumers_.end()) return on_consumer(it->second, e);
    steps_.back().note = "no such actor";
  } catch (const Error& ex) {
    steps_.back().note = std::string("error: ") + ex.what();
    if (auto it = sessions_.find(e.session); it != sessions_.end() && e.to == it->second.consumer)
      fail(it->second, ex.what());
  }
}

void World::on_ledger(const Envelope& e) {
  if (e.type != MsgType::purchase_request) throw ProtocolError("ledger only accepts purchase requests");
  ByteReader r(e.payload);
  const Hash contract_id = r.hash();
  const Bytes pub = r.bytes();
  const auto payment = r.u64();
  const Bytes sig = r.bytes();
  r.expect_end();
  ByteWriter reply;
  if (!crypto::verify(pub, purchase_request_message(contract_id, payment), sig)) {
    reply.u8(0).u64(0).u64(0).str("purchase request signature does not verify");
  } else {
    try {
      const auto res = ledger_.purchase(pub, contract_id, payment);
      reply.u8(1).u64(res.tx_block).u64(res.auth_block).str("");
    } catch (const Error& ex) {
      reply.u8(0).u64(0).u64(0).str(ex.what());
    }
  }
  send({MsgType::purchase_receipt, e.session, kLedger, e.from, 0, reply.take()});
}

void World::on_server(const Envelope& e) {
  if (e.type == MsgType::download_request) {
    ByteReader r(e.payload);
    const Hash contract_id = r.hash();
    const Bytes pub = r.bytes();
    const Bytes nonce = r.bytes();
    const Bytes sig = r.bytes();
    r.expect_end();
    ByteWriter reply;
    try {
      const auto blob = server_.download(contract_id, pub, nonce, sig, ledger_);
      reply.u8(1).bytes(serialize_blob(blob)).str("");
    } catch (const Error& ex) {
      reply.u8(0).bytes(Bytes{}).str(ex.what());
    }
    send({MsgType::download_reply, e.session, server_.name(), e.from, 0, reply.take()});
    return;
  }
  if (e.type == MsgType::upload) {
    ByteReader r(e.payload);
    const EncryptedBlob blob = parse_blob(r.bytes());
    const Bytes sig = r.bytes();
    r.expect_end();
    const auto contract = ledger_.find_contract(blob.contract_id);
    if (!contract || !crypto::verify(contract->provider_pub, upload_message(blob), sig))
      throw AuthenticationError("upload not signed by the contract's provider");
    const bool stored = server_.store(blob);
    ByteWriter ack;
    ack.hash(blob.contract_id).u64(blob.key_generation).u8(stored ? 1 : 0);
    send({MsgType::upload_ack, e.session, server_.name(), e.from, 0, ack.take()});
    return;
  }
  throw ProtocolError(std::string("server cannot handle ") + msg_name(e.type));
}

void World::on_device(ProviderDevice& d, const Envelope& e) {
  if (e.type == MsgType::hello) {
    const Hello hello = decode_hello(e.payload);
    const HelloReply reply = d.accept_hello(hello, ledger_);
    send({MsgType::hello_reply, e.session, d.name(), e.from, 0, encode(reply)});
    return;
  }
  if (e.type == MsgType::finish) {
    const Finish f = decode_finish(e.payload);
    // The hello that opened this handshake names the contract and generation.
    const Envelope* opening = nullptr;
    for (auto it = wire_log_.rbegin(); it != wire_log_.rend(); ++it)
      if (it->type == MsgType::hello && it->session == f.session && it->to == d.name()) {
        opening = &*it;
        break;
      }
    if (!opening) throw ProtocolError("finish without a hello");
    const Hello hello = decode_hello(opening->payload);
    Channel ch = d.accept_finish(f);
    auto delivery = d.deliver_key(ch, hello.contract_id, hello.blob_generation, ledger_);
    send({MsgType::key_delivery, e.session, d.name(), e.from, 0, delivery.sealed});
    if (delivery.delivered && delivery.next) {
      issued_keys_.push_back(d.listings().at(hello.contract_id).key.bytes);
      ByteWriter w;
      w.bytes(serialize_blob(*delivery.next)).bytes(d.sign_upload(*delivery.next));
      send({MsgType::upload, e.session, d.name(), server_.name(), 0, w.take()});
      awaiting_ack_[hello.contract_id].push_back(e.session);
      device_channels_[e.session] = std::move(ch);
    }
    return;
  }
  if (e.type == MsgType::upload_ack) {
    ByteReader r(e.payload);
    const Hash contract_id = r.hash();
    const auto generation = r.u64();
    r.u8();
    r.expect_end();
    auto& waiting = awaiting_ack_[contract_id];
    for (auto sid : waiting) {
      auto ch = device_channels_.find(sid);
      if (ch == device_channels_.end()) continue;
      ByteWriter w;
      w.hash(contract_id).u64(generation);
      const auto& s = sessions_.at(sid);
      send({MsgType::rekeyed, sid, d.name(), s.consumer, 0, ch->second.seal(w.data())});
      device_channels_.erase(ch);
    }
    waiting.clear();
    return;
  }
  throw ProtocolError(std::string("device cannot handle ") + msg_name(e.type));
}

void World::request_download(Consumer& c, PurchaseSession& s) {
  if (++s.attempts > kMaxAttempts) {
    fail(s, "gave up after " + std::to_string(kMaxAttempts) + " download attempts");
    return;
  }
  s.blob.reset();
  s.handshake.reset();
  s.channel.reset();
  const Bytes nonce = c.drbg_.bytes(16);
  ByteWriter w;
  w.hash(s.contract_id).bytes(c.keys_.public_key).bytes(nonce).bytes(
      crypto::sign(c.keys_, download_request_message(s.contract_id, nonce)));
  send({MsgType::download_request, s.id, c.name(), server_.name(), 0, w.take()});
}

void World::on_consumer(Consumer& c, const Envelope& e) {
  auto it = sessions_.find(e.session);
  if (it == sessions_.end() || it->second.consumer != c.name()) throw ProtocolError("message for an unknown session");
  PurchaseSession& s = it->second;
  if (!s.failure.empty()) return;

  switch (e.type) {
    case MsgType::purchase_receipt: {
      if (s.state != SessionState::init) throw ProtocolError("receipt outside INIT");
      ByteReader r(e.payload);
      const bool ok = r.u8() != 0;
      const auto tx = r.u64();
      const auto auth = r.u64();
      const std::string why = r.str();
      if (!ok) return fail(s, "purchase rejected: " + why);
      c.budget_ -= s.price;
      advance(s, SessionState::paid, "tx block " + std::to_string(tx));
      if (!ledger_.is_authorized(s.contract_id, c.keys_.public_key))
        return fail(s, "authorization not visible on the verified ledger");
      advance(s, SessionState::authorized, "auth block " + std::to_string(auth));
      return request_download(c, s);
    }
    case MsgType::download_reply: {
      if (s.state != SessionState::authorized) throw ProtocolError("download reply outside AUTHORIZED");
      ByteReader r(e.payload);
      const bool ok = r.u8() != 0;
      const Bytes blob = r.bytes();
      const std::string why = r.str();
      if (!ok) return fail(s, "download refused: " + why);
      s.blob = parse_blob(blob);
      s.handshake = start_handshake(c.keys_, s.id, s.contract_id, s.blob->key_generation, c.drbg_);
      s.transcript.push_back("downloaded blob g" + std::to_string(s.blob->key_generation));
      send({MsgType::hello, s.id, c.name(), s.provider, 0, encode(s.handshake->hello)});
      return;
    }
    case MsgType::hello_reply: {
      if (!s.handshake) throw ProtocolError("unexpected handshake reply");
      const auto contract = ledger_.find_contract(s.contract_id);
      if (!contract) return fail(s, "contract vanished from the verified ledger");
      auto [finish, channel] = finish_handshake(c.keys_, *s.handshake, decode_hello_reply(e.payload),
                                                contract->provider_pub);
      s.channel = std::move(channel);
      s.handshake.reset();
      send({MsgType::finish, s.id, c.name(), s.provider, 0, encode(finish)});
      return;
    }
    case MsgType::key_delivery: {
      if (!s.channel || !s.blob) throw ProtocolError("key delivery without a channel");
      SymmetricKey key;
      try {
        key = open_key_delivery(*s.channel, e.payload, s.contract_id);
      } catch (const ProtocolError& ex) {
        if (std::string(ex.what()).find("stale generation") != std::string::npos) {
          s.transcript.push_back("stale blob, downloading again");
          return request_download(c, s);
        }
        throw;
      }
      advance(s, SessionState::key_received, "generation " + std::to_string(key.generation));
      PatientRecord record = decrypt_record(*s.blob, key);
      s.key = key;
      c.record_session_[c.records_.size()] = s.id;
      c.records_.push_back(std::move(record));
      advance(s, SessionState::delivered, "");
      return;
    }
    case MsgType::rekeyed: {
      if (!s.channel || s.state != SessionState::delivered) throw ProtocolError("rekey notice outside DELIVERED");
      ByteReader r(s.channel->open(e.payload));
      r.hash();
      const auto g = r.u64();
      advance(s, SessionState::rekeyed, "server copy now generation " + std::to_string(g));
      return;
    }
    default:
      throw ProtocolError(std::string("consumer cannot handle ") + msg_name(e.type));
  }
}

std::vector<std::string> World::scan() const {
  std::vector<std::string> out;
  const Bytes ledger_bytes = ledger_.serialize();
  const Bytes server_bytes = server_.serialize();
  std::vector<Bytes> wire;
  for (const auto& e : queue_) wire.push_back(encode_envelope(e));

  auto exposed = [&](const Bytes& needle) -> std::string {
    if (crypto::contains(ledger_bytes, needle)) return "ledger";
    if (crypto::contains(server_bytes, needle)) return "server";
    for (const auto& w : wire)
      if (crypto::contains(w, needle)) return "wire";
    return {};
  };

  for (const auto& [name, d] : providers_)
    for (const auto& [id, l] : d.listings()) {
      if (auto where = exposed(serialize_record(l.record)); !where.empty())
        out.push_back("plaintext of " + l.record.patient_id + " visible in " + where);
      if (auto where = exposed(l.key.bytes); !where.empty())
        out.push_back("current key of " + crypto::short_hex(id) + " visible in " + where);
    }
  for (const auto& k : issued_keys_)
    if (auto where = exposed(k); !where.empty()) out.push_back("symmetric key visible in " + where);
  for (const auto& s : secrets_)
    if (auto where = exposed(s); !where.empty()) out.push_back("watched secret visible in " + where);

  for (const auto& [name, c] : consumers_)
    for (std::size_t i = 0; i < c.records_.size(); ++i) {
      auto it = c.record_session_.find(i);
      if (it == c.record_session_.end()) {
        out.push_back("consumer " + name + " holds a record outside any session");
        continue;
      }
      const auto& s = sessions_.at(it->second);
      if (static_cast<int>(s.state) < static_cast<int>(SessionState::delivered))
        out.push_back("consumer " + name + " holds plaintext in state " + state_name(s.state));
    }
  return out;
}

Bytes World::snapshot() const {
  ByteWriter w;
  w.str("ddv-world").bytes(ledger_.serialize()).bytes(server_.serialize());
  return w.take();
}

std::vector<PatientRecord> consumer_flow(World& world, const std::string& consumer_name,
                                         const metric::QueryVector& query, const metric::TaskMetric& metric,
                                         std::uint64_t budget, std::size_t n, bool scan) {
  auto& c = world.consumer(consumer_name);
  if (budget > c.budget()) throw PreconditionError("budget exceeds the consumer's funds");
  const auto contracts = world.ledger().contracts();
  if (budget == 0 || n == 0 || contracts.empty()) return {};

  std::vector<metric::Candidate> candidates;
  for (std::size_t i = 0; i < contracts.size(); ++i) candidates.push_back({i, contracts[i].signature.vector});
  const auto ranked = metric::retrieve_top_n(metric, query, candidates, candidates.size());

  std::uint64_t spent = 0;
  std::vector<std::uint64_t> started;
  for (auto id : ranked) {
    if (started.size() == n) break;
    const auto& contract = contracts[id];
    if (contract.is_authorized(c.keys().public_key)) continue;
    if (contract.price > budget - spent) continue;
    started.push_back(world.start_purchase(consumer_name, contract.contract_id));
    spent += contract.price;
  }
  world.run(1'000'000, scan);

  std::vector<PatientRecord> out;
  const auto& buyer = world.consumer(consumer_name);
  for (auto sid : started)
    for (const auto& [idx, owner] : buyer.record_sessions())
      if (owner == sid) out.push_back(buyer.records()[idx]);
  return out;
}

}  // namespace ddv::vend
