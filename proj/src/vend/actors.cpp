#include <random>

#include "ddv/error.hpp"
#include "ddv/vend.hpp"

namespace ddv::vend {

namespace {

std::array<std::uint8_t, crypto::kNonceBytes> to_nonce(const Bytes& b) {
  std::array<std::uint8_t, crypto::kNonceBytes> n{};
  std::copy(b.begin(), b.begin() + crypto::kNonceBytes, n.begin());
  return n;
}

Bytes blob_aad(const Hash& contract_id, std::uint64_t generation) {
  ByteWriter w;
  w.str("ddv-blob").hash(contract_id).u64(generation);
  return w.take();
}

}  // namespace

// ---- blobs ---------------------------------------------------------------------

EncryptedBlob encrypt_record(const PatientRecord& record, const SymmetricKey& key, const Hash& contract_id,
                             crypto::Drbg& drbg) {
  EncryptedBlob b;
  b.contract_id = contract_id;
  b.key_generation = key.generation;
  b.sealed = crypto::seal(key.bytes, to_nonce(drbg.bytes(crypto::kNonceBytes)), blob_aad(contract_id, key.generation),
                          serialize_record(record));
  return b;
}

PatientRecord decrypt_record(const EncryptedBlob& blob, const SymmetricKey& key) {
  // The generation is bound through the associated data, so a key of the
  // wrong generation fails authentication even if the bytes matched.
  const Bytes plain = crypto::open(key.bytes, blob.sealed, blob_aad(blob.contract_id, key.generation));
  return parse_record(plain);
}

Bytes serialize_blob(const EncryptedBlob& blob) {
  ByteWriter w;
  w.str("ddv-blob").hash(blob.contract_id).u64(blob.key_generation);
  w.raw(blob.sealed.nonce).raw(blob.sealed.tag).bytes(blob.sealed.ciphertext);
  return w.take();
}

EncryptedBlob parse_blob(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str() != "ddv-blob") throw ParseError("not a serialised blob", 0, 1);
  EncryptedBlob b;
  b.contract_id = r.hash();
  b.key_generation = r.u64();
  for (auto& x : b.sealed.nonce) x = r.u8();
  for (auto& x : b.sealed.tag) x = r.u8();
  b.sealed.ciphertext = r.bytes();
  r.expect_end();
  return b;
}

// ---- handshake messages -----------------------------------------------------------

namespace {

Bytes hello_body(const Hello& m) {
  ByteWriter w;
  w.str("ddv-hello").u64(m.session).hash(m.contract_id).bytes(m.consumer_pub).bytes(m.ephemeral_pub).bytes(m.nonce).u64(
      m.blob_generation);
  return w.take();
}

Hash transcript_hash(const Hello& hello, const Bytes& device_ephemeral, const Bytes& device_nonce,
                     std::span<const std::uint8_t> device_pub) {
  ByteWriter w;
  w.bytes(hello_body(hello)).bytes(device_ephemeral).bytes(device_nonce).bytes(device_pub);
  return crypto::sha256(w.data());
}

Bytes finish_message(const Hash& transcript) {
  ByteWriter w;
  w.str("ddv-finish").hash(transcript);
  return w.take();
}

struct ChannelKeys {
  Bytes consumer_to_device;
  Bytes device_to_consumer;
};

ChannelKeys derive_keys(const KeyPair& own_ephemeral, std::span<const std::uint8_t> peer_ephemeral,
                        const Bytes& consumer_nonce, const Bytes& device_nonce) {
  const Bytes shared = crypto::x25519(own_ephemeral, peer_ephemeral);
  Bytes salt = consumer_nonce;
  salt.insert(salt.end(), device_nonce.begin(), device_nonce.end());
  const Bytes okm = crypto::hkdf_sha256(shared, salt, "ddv-channel v1", 64);
  return {Bytes(okm.begin(), okm.begin() + 32), Bytes(okm.begin() + 32, okm.end())};
}

}  // namespace

Bytes encode(const Hello& m) {
  ByteWriter w;
  w.bytes(hello_body(m)).bytes(m.signature);
  return w.take();
}

Bytes encode(const HelloReply& m) {
  ByteWriter w;
  w.str("ddv-hello-reply").u64(m.session).bytes(m.ephemeral_pub).bytes(m.nonce).bytes(m.signature);
  return w.take();
}

Bytes encode(const Finish& m) {
  ByteWriter w;
  w.str("ddv-finish-msg").u64(m.session).bytes(m.signature);
  return w.take();
}

Hello decode_hello(std::span<const std::uint8_t> bytes) {
  ByteReader outer(bytes);
  const Bytes body = outer.bytes();
  Hello m;
  m.signature = outer.bytes();
  outer.expect_end();
  ByteReader r(body);
  if (r.str() != "ddv-hello") throw ParseError("not a hello message", 0, 1);
  m.session = r.u64();
  m.contract_id = r.hash();
  m.consumer_pub = r.bytes();
  m.ephemeral_pub = r.bytes();
  m.nonce = r.bytes();
  m.blob_generation = r.u64();
  r.expect_end();
  return m;
}

HelloReply decode_hello_reply(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str() != "ddv-hello-reply") throw ParseError("not a hello reply", 0, 1);
  HelloReply m;
  m.session = r.u64();
  m.ephemeral_pub = r.bytes();
  m.nonce = r.bytes();
  m.signature = r.bytes();
  r.expect_end();
  return m;
}

Finish decode_finish(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str() != "ddv-finish-msg") throw ParseError("not a finish message", 0, 1);
  Finish m;
  m.session = r.u64();
  m.signature = r.bytes();
  r.expect_end();
  return m;
}

// ---- channel ------------------------------------------------------------------------

Channel::Channel(Bytes send_key, Bytes recv_key, Hash transcript, Bytes peer_pub)
    : send_key_(std::move(send_key)),
      recv_key_(std::move(recv_key)),
      transcript_(transcript),
      peer_pub_(std::move(peer_pub)) {}

namespace {

std::array<std::uint8_t, crypto::kNonceBytes> seq_nonce(std::uint64_t seq) {
  std::array<std::uint8_t, crypto::kNonceBytes> n{};
  for (int i = 0; i < 8; ++i) n[4 + i] = static_cast<std::uint8_t>(seq >> (56 - 8 * i));
  return n;
}

Bytes seq_aad(const Hash& transcript, std::uint64_t seq) {
  ByteWriter w;
  w.hash(transcript).u64(seq);
  return w.take();
}

}  // namespace

Bytes Channel::seal(std::span<const std::uint8_t> plaintext) {
  if (send_key_.empty()) throw ProtocolError("channel not established");
  const auto seq = send_seq_++;
  const auto s = crypto::seal(send_key_, seq_nonce(seq), seq_aad(transcript_, seq), plaintext);
  ByteWriter w;
  w.u64(seq).raw(s.tag).bytes(s.ciphertext);
  return w.take();
}

Bytes Channel::open(std::span<const std::uint8_t> wire) {
  if (recv_key_.empty()) throw ProtocolError("channel not established");
  ByteReader r(wire);
  const auto seq = r.u64();
  crypto::Sealed s;
  s.nonce = seq_nonce(seq);
  for (auto& x : s.tag) x = r.u8();
  s.ciphertext = r.bytes();
  r.expect_end();
  if (seq != recv_seq_)
    throw ProtocolError("channel message " + std::to_string(seq) + " out of order (expected " +
                        std::to_string(recv_seq_) + ")");
  Bytes plain = crypto::open(recv_key_, s, seq_aad(transcript_, seq));
  ++recv_seq_;
  return plain;
}

ClientHandshake start_handshake(const KeyPair& consumer, std::uint64_t session, const Hash& contract_id,
                                std::uint64_t blob_generation, crypto::Drbg& drbg) {
  ClientHandshake st;
  st.contract_id = contract_id;
  st.ephemeral = crypto::generate_agreement_keypair(drbg);
  st.hello.session = session;
  st.hello.contract_id = contract_id;
  st.hello.consumer_pub = consumer.public_key;
  st.hello.ephemeral_pub = st.ephemeral.public_key;
  st.hello.nonce = drbg.bytes(16);
  st.hello.blob_generation = blob_generation;
  st.hello.signature = crypto::sign(consumer, hello_body(st.hello));
  return st;
}

std::pair<Finish, Channel> finish_handshake(const KeyPair& consumer, const ClientHandshake& state,
                                            const HelloReply& reply, std::span<const std::uint8_t> provider_pub) {
  if (reply.session != state.hello.session) throw ProtocolError("handshake reply for another session");
  const Hash th = transcript_hash(state.hello, reply.ephemeral_pub, reply.nonce, provider_pub);
  if (!crypto::verify(provider_pub, th, reply.signature))
    throw AuthenticationError("provider signature on the handshake does not verify");
  const auto keys = derive_keys(state.ephemeral, reply.ephemeral_pub, state.hello.nonce, reply.nonce);
  Finish f{state.hello.session, crypto::sign(consumer, finish_message(th))};
  return {f, Channel(keys.consumer_to_device, keys.device_to_consumer, th,
                     Bytes(provider_pub.begin(), provider_pub.end()))};
}

// ---- data server ------------------------------------------------------------------------

Bytes download_request_message(const Hash& contract_id, std::span<const std::uint8_t> nonce) {
  ByteWriter w;
  w.str("ddv-download").hash(contract_id).bytes(nonce);
  return w.take();
}

bool DataServer::store(const EncryptedBlob& blob) {
  if (!available) throw IoError("data server " + name_ + " unavailable");
  auto it = blobs_.find(blob.contract_id);
  if (it != blobs_.end() && it->second.key_generation >= blob.key_generation) {
    audit_.push_back({"stale-upload", crypto::short_hex(blob.contract_id) + " g" + std::to_string(blob.key_generation)});
    return false;
  }
  blobs_[blob.contract_id] = blob;
  audit_.push_back({"store", crypto::short_hex(blob.contract_id) + " g" + std::to_string(blob.key_generation)});
  return true;
}

const EncryptedBlob* DataServer::find(const Hash& contract_id) const {
  auto it = blobs_.find(contract_id);
  return it == blobs_.end() ? nullptr : &it->second;
}

EncryptedBlob DataServer::download(const Hash& contract_id, std::span<const std::uint8_t> consumer_pub,
                                   std::span<const std::uint8_t> nonce, std::span<const std::uint8_t> signature,
                                   const Ledger& ledger) {
  if (!available) throw IoError("data server " + name_ + " unavailable");
  const std::string who = crypto::short_hex(consumer_pub) + " for " + crypto::short_hex(contract_id);
  if (!crypto::verify(consumer_pub, download_request_message(contract_id, nonce), signature)) {
    audit_.push_back({"refused", who + ": bad request signature"});
    throw AuthenticationError("download refused: request signature does not verify");
  }
  if (const auto bad = verify_ledger(ledger))
    audit_.push_back({"ledger-invalid", "chain fails at block " + std::to_string(*bad)});
  if (!ledger.is_authorized(contract_id, consumer_pub)) {
    audit_.push_back({"refused", who + ": not authorized on the verified ledger"});
    throw AuthenticationError("download refused: key not authorized for this contract");
  }
  const auto* blob = find(contract_id);
  if (!blob) {
    audit_.push_back({"refused", who + ": no blob"});
    throw ProtocolError("no blob stored for contract " + crypto::short_hex(contract_id));
  }
  audit_.push_back({"download", who + " g" + std::to_string(blob->key_generation)});
  return *blob;
}

Bytes DataServer::serialize() const {
  ByteWriter w;
  w.str("ddv-server").str(name_).u64(blobs_.size());
  for (const auto& [id, blob] : blobs_) w.bytes(serialize_blob(blob));
  w.u64(audit_.size());
  for (const auto& a : audit_) w.str(a.event).str(a.detail);
  return w.take();
}

// ---- provider device ------------------------------------------------------------------

Bytes upload_message(const EncryptedBlob& blob) {
  ByteWriter w;
  w.str("ddv-upload").bytes(serialize_blob(blob));
  return w.take();
}

ProviderDevice::ProviderDevice(std::string name, std::uint64_t seed, embed::PublicEncoder encoder)
    : name_(std::move(name)), drbg_(seed, "device:" + name_), encoder_(std::move(encoder)) {
  keys_ = crypto::generate_signing_keypair(drbg_);
}

SmartContract ProviderDevice::list_data(const PatientRecord& record, double sigma, std::uint64_t price,
                                        Ledger& ledger, DataServer& server) {
  if (price == 0) throw PreconditionError("price must be positive");
  if (record.visits.empty()) throw PreconditionError("record " + record.patient_id + " has no visits");
  std::mt19937_64 noise(drbg_.next_u64());
  SmartContract c;
  c.provider_pub = keys_.public_key;
  c.signature = embed::make_signature(encoder_, record, sigma, noise);
  c.price = price;
  c.listing_nonce = drbg_.next_u64();
  c.access_url = "ddv://" + server.name() + "/" + name_ + "/" + std::to_string(c.listing_nonce);
  c.contract_id = compute_contract_id(c);

  const SymmetricKey key{drbg_.bytes(crypto::kKeyBytes), 1};
  const EncryptedBlob blob = encrypt_record(record, key, c.contract_id, drbg_);
  // Upload first: an unavailable server aborts before anything is on chain.
  server.store(blob);
  ledger.add_contract(c);
  listings_[c.contract_id] = Listing{record, key, c.contract_id};
  return c;
}

HelloReply ProviderDevice::accept_hello(const Hello& hello, const Ledger& ledger) {
  if (!crypto::verify(hello.consumer_pub, hello_body(hello), hello.signature)) {
    ++rejected_;
    throw AuthenticationError("handshake rejected: consumer signature does not verify");
  }
  if (!listings_.count(hello.contract_id) || !ledger.find_contract(hello.contract_id)) {
    ++rejected_;
    throw ProtocolError("handshake rejected: contract not held by this device");
  }
  if (!seen_nonces_.insert(hello.nonce).second) {
    ++rejected_;
    throw ProtocolError("handshake rejected: replayed nonce");
  }
  Pending p;
  p.hello = hello;
  p.ephemeral = crypto::generate_agreement_keypair(drbg_);
  p.nonce = drbg_.bytes(16);
  p.transcript = transcript_hash(hello, p.ephemeral.public_key, p.nonce, keys_.public_key);
  HelloReply reply{hello.session, p.ephemeral.public_key, p.nonce, crypto::sign(keys_, p.transcript)};
  pending_[hello.session] = std::move(p);
  return reply;
}

Channel ProviderDevice::accept_finish(const Finish& finish) {
  auto it = pending_.find(finish.session);
  if (it == pending_.end()) {
    ++rejected_;
    throw ProtocolError("finish without a pending handshake");
  }
  const Pending p = it->second;
  if (!crypto::verify(p.hello.consumer_pub, finish_message(p.transcript), finish.signature)) {
    ++rejected_;
    throw AuthenticationError("handshake rejected: finish signature does not verify");
  }
  pending_.erase(it);
  const auto keys = derive_keys(p.ephemeral, p.hello.ephemeral_pub, p.hello.nonce, p.nonce);
  return Channel(keys.device_to_consumer, keys.consumer_to_device, p.transcript, p.hello.consumer_pub);
}

ProviderDevice::Delivery ProviderDevice::deliver_key(Channel& channel, const Hash& contract_id,
                                                     std::uint64_t requested_generation, const Ledger& ledger) {
  Delivery d;
  auto it = listings_.find(contract_id);
  auto refuse = [&](std::string why) {
    d.reason = std::move(why);
    ByteWriter w;
    w.u8(0).str(d.reason);
    d.sealed = channel.seal(w.data());
    return d;
  };
  if (it == listings_.end()) return refuse("unknown contract");
  if (!ledger.is_authorized(contract_id, channel.peer_pub())) return refuse("unauthorized");
  Listing& l = it->second;
  if (requested_generation != l.key.generation) return refuse("stale generation");

  ByteWriter w;
  w.u8(1).hash(contract_id).u64(l.key.generation).bytes(l.key.bytes);
  d.sealed = channel.seal(w.data());
  d.delivered = true;
  // One-time copy: fresh key, fresh ciphertext for the server.
  l.key = SymmetricKey{drbg_.bytes(crypto::kKeyBytes), l.key.generation + 1};
  d.next = encrypt_record(l.record, l.key, contract_id, drbg_);
  return d;
}

Bytes ProviderDevice::sign_upload(const EncryptedBlob& blob) const { return crypto::sign(keys_, upload_message(blob)); }

// ---- direct protocol steps ----------------------------------------------------------

std::uint64_t price_of(const Ledger& ledger, const Hash& contract_id) {
  const auto c = ledger.find_contract(contract_id);
  if (!c) throw PreconditionError("unknown contract " + crypto::short_hex(contract_id));
  return c->price;
}

Ledger::PurchaseResult purchase(const KeyPair& consumer, const Hash& contract_id, std::uint64_t payment,
                                Ledger& ledger) {
  return ledger.purchase(consumer.public_key, contract_id, payment);
}

ChannelPair establish_secure_channel(ProviderDevice& device, const KeyPair& consumer, const Hash& contract_id,
                                     std::uint64_t blob_generation, const Ledger& ledger, crypto::Drbg& drbg) {
  const auto c = ledger.find_contract(contract_id);
  if (!c) throw PreconditionError("unknown contract " + crypto::short_hex(contract_id));
  const auto st = start_handshake(consumer, drbg.next_u64(), contract_id, blob_generation, drbg);
  const auto reply = device.accept_hello(st.hello, ledger);
  auto [finish, consumer_side] = finish_handshake(consumer, st, reply, c->provider_pub);
  Channel device_side = device.accept_finish(finish);
  return {std::move(consumer_side), std::move(device_side)};
}

ProviderDevice::Delivery deliver_key(ProviderDevice& device, Channel& channel, const Hash& contract_id,
                                     std::uint64_t requested_generation, const Ledger& ledger, DataServer& server) {
  auto d = device.deliver_key(channel, contract_id, requested_generation, ledger);
  if (d.delivered && d.next) server.store(*d.next);
  return d;
}

SymmetricKey open_key_delivery(Channel& consumer_channel, std::span<const std::uint8_t> sealed,
                               const Hash& contract_id) {
  const Bytes plain = consumer_channel.open(sealed);
  ByteReader r(plain);
  if (r.u8() == 0) throw ProtocolError("key delivery refused: " + r.str());
  if (r.hash() != contract_id) throw ProtocolError("key delivered for another contract");
  SymmetricKey k;
  k.generation = r.u64();
  k.bytes = r.bytes();
  r.expect_end();
  return k;
}

EncryptedBlob download(DataServer& server, const Hash& contract_id, const KeyPair& consumer, const Ledger& ledger,
                       crypto::Drbg& drbg) {
  const Bytes nonce = drbg.bytes(16);
  return server.download(contract_id, consumer.public_key, nonce,
                         crypto::sign(consumer, download_request_message(contract_id, nonce)), ledger);
}

}  // namespace ddv::vend
