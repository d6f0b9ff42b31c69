#pragma once

// Data vending simulation: a hash-chained mock ledger carrying smart
// contracts, provider devices that hold plaintext and rotate the symmetric
// key after every delivery, a data server that only ever sees ciphertext,
// consumers that buy, download and decrypt, and a message bus that drives
// them as sequential actors with injectable faults.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ddv/corpus.hpp"
#include "ddv/crypto.hpp"
#include "ddv/embed.hpp"
#include "ddv/metric.hpp"

namespace ddv::vend {

using crypto::Bytes;
using crypto::Hash;
using crypto::KeyPair;

// ---- canonical byte codec -----------------------------------------------
// Integers big-endian, doubles as their IEEE-754 bit pattern, byte strings
// and text as u32 length + bytes.

class ByteWriter {
 public:
  ByteWriter& u8(std::uint8_t v);
  ByteWriter& u32(std::uint32_t v);
  ByteWriter& u64(std::uint64_t v);
  ByteWriter& f64(double v);
  ByteWriter& bytes(std::span<const std::uint8_t> v);
  ByteWriter& str(std::string_view v);
  ByteWriter& hash(const Hash& h);
  ByteWriter& raw(std::span<const std::uint8_t> v);

  const Bytes& data() const { return out_; }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

// Throws ParseError (line 0, column = byte offset + 1) on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  Bytes bytes();
  std::string str();
  Hash hash();

  bool done() const { return pos_ == in_.size(); }
  void expect_end() const;

 private:
  std::span<const std::uint8_t> take(std::size_t n);
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

Bytes serialize_record(const PatientRecord& record);
PatientRecord parse_record(std::span<const std::uint8_t> bytes);

// ---- contracts and ledger ---------------------------------------------------

enum class ContractStatus : std::uint8_t { listed = 0, sold_open = 1 };

struct SmartContract {
  Hash contract_id{};
  Bytes provider_pub;
  embed::Signature signature;
  std::string access_url;
  std::uint64_t price = 0;
  // Fresh per listing so relisting identical content gives a new id.
  std::uint64_t listing_nonce = 0;
  std::vector<Bytes> authorized_pubs;
  ContractStatus status = ContractStatus::listed;

  bool is_authorized(std::span<const std::uint8_t> pub) const;
};

// SHA-256 over the canonical creation fields (everything except the id,
// authorized list and status, which are empty/LISTED at creation).
Hash compute_contract_id(const SmartContract& contract);

struct PurchaseTx {
  Hash contract_id{};
  Bytes consumer_pub;
  std::uint64_t payment = 0;
};

struct AuthorizationUpdate {
  Hash contract_id{};
  Bytes consumer_pub;
  std::uint64_t purchase_block = 0;
};

using LedgerEntry = std::variant<SmartContract, PurchaseTx, AuthorizationUpdate>;

Bytes encode_entry(const LedgerEntry& entry);
LedgerEntry decode_entry(std::span<const std::uint8_t> payload);

struct Block {
  Hash prev_hash{};
  Bytes payload;
  Hash block_hash{};
};

// SHA-256(prev_hash || payload).
Hash compute_block_hash(const Hash& prev_hash, std::span<const std::uint8_t> payload);

class Ledger;
// nullopt when the whole chain verifies, else the first bad block index.
std::optional<std::size_t> verify_ledger(const Ledger& ledger);

class Ledger {
 public:
  struct PurchaseResult {
    std::size_t tx_block = 0;
    std::size_t auth_block = 0;
  };

  std::size_t size() const { return blocks_.size(); }
  const std::vector<Block>& blocks() const { return blocks_; }
  // Direct block access for tamper-injection tests.
  std::vector<Block>& blocks_for_fault_injection() { return blocks_; }

  // Appends a contract-creation block; the contract id must match its
  // fields and be new. Returns the block index.
  std::size_t add_contract(const SmartContract& contract);

  // Appends a purchase block and an authorization-update block. Throws
  // PreconditionError for an unknown contract, ValidationError when the
  // payment is below the price or the chain does not verify; the ledger is
  // unchanged on any error.
  PurchaseResult purchase(std::span<const std::uint8_t> consumer_pub, const Hash& contract_id,
                          std::uint64_t payment);

  // Contract state replayed over the verified prefix only.
  std::vector<SmartContract> contracts() const;
  std::optional<SmartContract> find_contract(const Hash& contract_id) const;
  bool is_authorized(const Hash& contract_id, std::span<const std::uint8_t> pub) const;
  // Block index at which the contract was created (verified prefix).
  std::optional<std::size_t> contract_block(const Hash& contract_id) const;

  Bytes serialize() const;
  static Ledger parse(std::span<const std::uint8_t> bytes);

 private:
  std::size_t append(Bytes payload);
  std::size_t verified_prefix() const;

  std::vector<Block> blocks_;
};

// ---- encrypted data -----------------------------------------------------------

struct SymmetricKey {
  Bytes bytes;
  std::uint64_t generation = 0;
};

struct EncryptedBlob {
  Hash contract_id{};
  std::uint64_t key_generation = 0;
  crypto::Sealed sealed;
};

// AAD = contract_id || be64(generation), so a blob only opens under the
// key generation it was written for.
EncryptedBlob encrypt_record(const PatientRecord& record, const SymmetricKey& key, const Hash& contract_id,
                             crypto::Drbg& drbg);
// Throws AuthenticationError on any key, generation or ciphertext mismatch.
PatientRecord decrypt_record(const EncryptedBlob& blob, const SymmetricKey& key);

Bytes serialize_blob(const EncryptedBlob& blob);
EncryptedBlob parse_blob(std::span<const std::uint8_t> bytes);

// ---- secure channel -------------------------------------------------------------

struct Hello {
  std::uint64_t session = 0;
  Hash contract_id{};
  Bytes consumer_pub;
  Bytes ephemeral_pub;
  Bytes nonce;
  // Generation of the blob the consumer holds.
  std::uint64_t blob_generation = 0;
  Bytes signature;
};

struct HelloReply {
  std::uint64_t session = 0;
  Bytes ephemeral_pub;
  Bytes nonce;
  Bytes signature;
};

struct Finish {
  std::uint64_t session = 0;
  Bytes signature;
};

Bytes encode(const Hello& m);
Bytes encode(const HelloReply& m);
Bytes encode(const Finish& m);
Hello decode_hello(std::span<const std::uint8_t> bytes);
HelloReply decode_hello_reply(std::span<const std::uint8_t> bytes);
Finish decode_finish(std::span<const std::uint8_t> bytes);

// One direction-keyed AEAD pipe. Every message carries a sequence number;
// anything out of order, replayed or forged is rejected.
class Channel {
 public:
  Channel() = default;
  Channel(Bytes send_key, Bytes recv_key, Hash transcript, Bytes peer_pub);

  Bytes seal(std::span<const std::uint8_t> plaintext);
  Bytes open(std::span<const std::uint8_t> wire);

  const Bytes& peer_pub() const { return peer_pub_; }
  const Hash& transcript() const { return transcript_; }

 private:
  Bytes send_key_, recv_key_;
  Hash transcript_{};
  Bytes peer_pub_;
  std::uint64_t send_seq_ = 0;
  std::uint64_t recv_seq_ = 0;
};

struct ClientHandshake {
  KeyPair ephemeral;
  Hello hello;
  Hash contract_id{};
};

ClientHandshake start_handshake(const KeyPair& consumer, std::uint64_t session, const Hash& contract_id,
                                std::uint64_t blob_generation, crypto::Drbg& drbg);
// Verifies the provider's signature. Throws AuthenticationError.
std::pair<Finish, Channel> finish_handshake(const KeyPair& consumer, const ClientHandshake& state,
                                            const HelloReply& reply, std::span<const std::uint8_t> provider_pub);

// ---- actors -----------------------------------------------------------------------

struct AuditEntry {
  std::string event;
  std::string detail;
};

class DataServer {
 public:
  explicit DataServer(std::string name = "server") : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  bool available = true;

  // Stores a blob uploaded by the contract's provider; newer generations
  // replace older ones, stale uploads are ignored. Returns true if stored.
  bool store(const EncryptedBlob& blob);
  const EncryptedBlob* find(const Hash& contract_id) const;

  // Signed request: signature over "download" || contract_id || nonce.
  // Refuses (AuthenticationError, with an audit entry) unless the signature
  // verifies and the key is authorized on the verified ledger prefix.
  EncryptedBlob download(const Hash& contract_id, std::span<const std::uint8_t> consumer_pub,
                         std::span<const std::uint8_t> nonce, std::span<const std::uint8_t> signature,
                         const Ledger& ledger);

  const std::vector<AuditEntry>& audit() const { return audit_; }
  const std::map<Hash, EncryptedBlob>& blobs() const { return blobs_; }
  Bytes serialize() const;

 private:
  std::string name_;
  std::map<Hash, EncryptedBlob> blobs_;
  std::vector<AuditEntry> audit_;
};

Bytes download_request_message(const Hash& contract_id, std::span<const std::uint8_t> nonce);

struct Listing {
  PatientRecord record;
  SymmetricKey key;
  Hash contract_id{};
};

class ProviderDevice {
 public:
  ProviderDevice(std::string name, std::uint64_t seed, embed::PublicEncoder encoder);

  const std::string& name() const { return name_; }
  const Bytes& public_key() const { return keys_.public_key; }

  // Encrypts under a fresh generation-1 key, uploads, then appends the
  // contract. Server unavailable → IoError and nothing on the ledger.
  SmartContract list_data(const PatientRecord& record, double sigma, std::uint64_t price, Ledger& ledger,
                          DataServer& server);

  // Handshake responder. Rejects bad signatures, unknown contracts and
  // replayed nonces (ProtocolError / AuthenticationError).
  HelloReply accept_hello(const Hello& hello, const Ledger& ledger);
  Channel accept_finish(const Finish& finish);

  struct Delivery {
    bool delivered = false;
    std::string reason;
    Bytes sealed;                       // on the channel
    std::optional<EncryptedBlob> next;  // re-encrypted copy for the server
  };
  // Sends the current key if the channel peer is authorized on the ledger
  // and holds the current generation, then rotates. Refusals change nothing.
  Delivery deliver_key(Channel& channel, const Hash& contract_id, std::uint64_t requested_generation,
                       const Ledger& ledger);

  const std::map<Hash, Listing>& listings() const { return listings_; }
  std::size_t rejected_handshakes() const { return rejected_; }
  // Signed upload of a re-encrypted blob.
  Bytes sign_upload(const EncryptedBlob& blob) const;

 private:
  struct Pending {
    Hello hello;
    KeyPair ephemeral;
    Bytes nonce;
    Hash transcript{};
  };

  std::string name_;
  crypto::Drbg drbg_;
  KeyPair keys_;
  embed::PublicEncoder encoder_;
  std::map<Hash, Listing> listings_;
  std::set<Bytes> seen_nonces_;
  std::map<std::uint64_t, Pending> pending_;
  std::size_t rejected_ = 0;
};

Bytes upload_message(const EncryptedBlob& blob);

// Direct (bus-less) forms of the protocol steps.
std::uint64_t price_of(const Ledger& ledger, const Hash& contract_id);
Ledger::PurchaseResult purchase(const KeyPair& consumer, const Hash& contract_id, std::uint64_t payment,
                                Ledger& ledger);
struct ChannelPair {
  Channel consumer;
  Channel device;
};
ChannelPair establish_secure_channel(ProviderDevice& device, const KeyPair& consumer, const Hash& contract_id,
                                     std::uint64_t blob_generation, const Ledger& ledger, crypto::Drbg& drbg);
// Device side of delivery; on success the server copy is replaced.
ProviderDevice::Delivery deliver_key(ProviderDevice& device, Channel& channel, const Hash& contract_id,
                                     std::uint64_t requested_generation, const Ledger& ledger, DataServer& server);
SymmetricKey open_key_delivery(Channel& consumer_channel, std::span<const std::uint8_t> sealed,
                               const Hash& contract_id);
EncryptedBlob download(DataServer& server, const Hash& contract_id, const KeyPair& consumer, const Ledger& ledger,
                       crypto::Drbg& drbg);

// ---- message bus and world ------------------------------------------------------

enum class MsgType : std::uint8_t {
  purchase_request = 1,
  purchase_receipt,
  download_request,
  download_reply,
  hello,
  hello_reply,
  finish,
  key_delivery,
  upload,
  upload_ack,
  rekeyed,
};

const char* msg_name(MsgType t);

// Wire: u32 frame length, then type byte, session, from, to, message id,
// payload (length-prefixed fields as in ByteWriter).
struct Envelope {
  MsgType type = MsgType::purchase_request;
  std::uint64_t session = 0;
  std::string from;
  std::string to;
  std::uint64_t msg_id = 0;
  Bytes payload;
};

Bytes encode_envelope(const Envelope& e);
Envelope decode_envelope(std::span<const std::uint8_t> wire);

struct FaultConfig {
  double drop_rate = 0.0;
  double duplicate_rate = 0.0;
  // Deliver the head of a randomly chosen session queue instead of global
  // FIFO; order inside a session is kept.
  bool reorder = false;
};

enum class SessionState : std::uint8_t { init, paid, authorized, key_received, delivered, rekeyed };
const char* state_name(SessionState s);

struct PurchaseSession {
  std::uint64_t id = 0;
  Hash contract_id{};
  std::string consumer;
  std::string provider;
  std::uint64_t price = 0;
  SessionState state = SessionState::init;
  std::vector<std::string> transcript;
  std::string failure;
  int attempts = 0;

  // Consumer-side working state.
  std::optional<EncryptedBlob> blob;
  std::optional<ClientHandshake> handshake;
  std::optional<Channel> channel;
  std::optional<SymmetricKey> key;
};

class Consumer {
 public:
  Consumer(std::string name, std::uint64_t seed, std::uint64_t budget);

  const std::string& name() const { return name_; }
  const KeyPair& keys() const { return keys_; }
  std::uint64_t budget() const { return budget_; }
  const std::vector<PatientRecord>& records() const { return records_; }
  const std::map<std::size_t, std::uint64_t>& record_sessions() const { return record_session_; }

 private:
  friend class World;
  std::string name_;
  crypto::Drbg drbg_;
  KeyPair keys_;
  std::uint64_t budget_ = 0;
  std::vector<PatientRecord> records_;
  std::map<std::size_t, std::uint64_t> record_session_;  // record index -> session id
};

struct StepRecord {
  std::size_t step = 0;
  std::string from, to, type;
  std::uint64_t session = 0;
  std::string note;
};

class World {
 public:
  explicit World(std::uint64_t seed, FaultConfig faults = {});

  ProviderDevice& add_provider(const std::string& name, embed::PublicEncoder encoder);
  Consumer& add_consumer(const std::string& name, std::uint64_t budget);
  ProviderDevice& provider(const std::string& name);
  Consumer& consumer(const std::string& name);
  const Consumer& consumer(const std::string& name) const;
  DataServer& server() { return server_; }
  Ledger& ledger() { return ledger_; }
  const Ledger& ledger() const { return ledger_; }

  SmartContract list(const std::string& provider, const PatientRecord& record, double sigma, std::uint64_t price);

  // Starts a purchase session (enqueues the payment). Throws
  // PreconditionError if the consumer cannot afford the price.
  std::uint64_t start_purchase(const std::string& consumer, const Hash& contract_id);

  // Delivers one message. False when nothing is in flight.
  bool step();
  // Runs to quiescence (or max_steps). With `scan` the confinement and key
  // isolation checker runs after every step; violations are collected.
  std::size_t run(std::size_t max_steps = 1'000'000, bool scan = false);

  // Plaintext confinement and key isolation over the current state.
  std::vector<std::string> scan() const;
  const std::vector<std::string>& violations() const { return violations_; }

  // Secret byte strings (e.g. serialised decoder weights) that must never
  // show up in ledger, server or wire bytes.
  void watch_secret(Bytes secret) { secrets_.push_back(std::move(secret)); }

  const PurchaseSession& session(std::uint64_t id) const;
  const std::map<std::uint64_t, PurchaseSession>& sessions() const { return sessions_; }
  std::vector<std::uint64_t> stalled_sessions() const;

  // Every envelope that was put on the wire, for replay-attack tests.
  const std::vector<Envelope>& wire_log() const { return wire_log_; }
  // Puts an arbitrary envelope on the wire (attacker model).
  void inject(Envelope e);

  const std::vector<StepRecord>& steps() const { return steps_; }
  std::size_t in_flight() const;

  // Ledger and server blobs only; no keys.
  Bytes snapshot() const;

 private:
  void send(Envelope e);
  void deliver(const Envelope& e);
  void on_ledger(const Envelope& e);
  void on_server(const Envelope& e);
  void on_device(ProviderDevice& d, const Envelope& e);
  void on_consumer(Consumer& c, const Envelope& e);
  void advance(PurchaseSession& s, SessionState next, const std::string& note);
  void fail(PurchaseSession& s, const std::string& why);
  void request_download(Consumer& c, PurchaseSession& s);
  std::optional<Envelope> next_message();

  crypto::Drbg drbg_;
  crypto::Drbg fault_rng_;
  FaultConfig faults_;
  Ledger ledger_;
  DataServer server_;
  std::map<std::string, ProviderDevice> providers_;
  std::map<std::string, Consumer> consumers_;
  std::map<std::uint64_t, PurchaseSession> sessions_;
  // Device-side channels and the sessions waiting for an upload ack.
  std::map<std::uint64_t, Channel> device_channels_;
  std::map<Hash, std::vector<std::uint64_t>> awaiting_ack_;
  std::deque<Envelope> queue_;
  std::set<std::uint64_t> delivered_ids_;
  std::vector<Envelope> wire_log_;
  std::vector<StepRecord> steps_;
  std::vector<std::string> violations_;
  std::vector<Bytes> secrets_;
  std::vector<Bytes> issued_keys_;
  std::uint64_t next_session_ = 1;
  std::uint64_t next_msg_ = 1;
  std::size_t step_count_ = 0;
};

// Consumer workflow: scan the verified ledger, rank contract signatures
// with the metric, buy the top affordable ones (at most n, within budget),
// run the protocol and return the decrypted records.
std::vector<PatientRecord> consumer_flow(World& world, const std::string& consumer, const metric::QueryVector& query,
                                         const metric::TaskMetric& metric, std::uint64_t budget, std::size_t n,
                                         bool scan = false);

}  // namespace ddv::vend
