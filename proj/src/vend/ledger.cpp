#include <bit>
#include <cstring>

#include "ddv/error.hpp"
#include "ddv/vend.hpp"

namespace ddv::vend {

// ---- codec ------------------------------------------------------------------

ByteWriter& ByteWriter::u8(std::uint8_t v) {
  out_.push_back(v);
  return *this;
}

ByteWriter& ByteWriter::u32(std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  return *this;
}

ByteWriter& ByteWriter::u64(std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  return *this;
}

ByteWriter& ByteWriter::f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

ByteWriter& ByteWriter::bytes(std::span<const std::uint8_t> v) {
  if (v.size() > 0xffffffffu) throw PreconditionError("field too long for the wire format");
  u32(static_cast<std::uint32_t>(v.size()));
  return raw(v);
}

ByteWriter& ByteWriter::str(std::string_view v) {
  return bytes({reinterpret_cast<const std::uint8_t*>(v.data()), v.size()});
}

ByteWriter& ByteWriter::hash(const Hash& h) { return raw(h); }

ByteWriter& ByteWriter::raw(std::span<const std::uint8_t> v) {
  out_.insert(out_.end(), v.begin(), v.end());
  return *this;
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > in_.size() - pos_)
    throw ParseError("truncated input: need " + std::to_string(n) + " bytes, " + std::to_string(in_.size() - pos_) +
                         " left",
                     0, pos_ + 1);
  auto s = in_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint32_t ByteReader::u32() {
  std::uint32_t v = 0;
  for (auto b : take(4)) v = (v << 8) | b;
  return v;
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v = 0;
  for (auto b : take(8)) v = (v << 8) | b;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

Bytes ByteReader::bytes() {
  const auto n = u32();
  auto s = take(n);
  return Bytes(s.begin(), s.end());
}

std::string ByteReader::str() {
  const auto b = bytes();
  return std::string(b.begin(), b.end());
}

Hash ByteReader::hash() {
  Hash h{};
  auto s = take(h.size());
  std::copy(s.begin(), s.end(), h.begin());
  return h;
}

void ByteReader::expect_end() const {
  if (!done()) throw ParseError(std::to_string(in_.size() - pos_) + " trailing bytes", 0, pos_ + 1);
}

Bytes serialize_record(const PatientRecord& record) {
  ByteWriter w;
  w.str("ddv-record").str(record.patient_id);
  w.u8(record.cohort_label ? 1 : 0).u64(record.cohort_label.value_or(0));
  w.u32(static_cast<std::uint32_t>(record.visits.size()));
  for (const auto& v : record.visits) {
    w.u32(static_cast<std::uint32_t>(v.active_codes.size()));
    for (auto c : v.active_codes) w.u32(c);
  }
  return w.take();
}

PatientRecord parse_record(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str() != "ddv-record") throw ParseError("not a serialised record", 0, 1);
  PatientRecord rec;
  rec.patient_id = r.str();
  const bool labelled = r.u8() != 0;
  const auto label = r.u64();
  if (labelled) rec.cohort_label = static_cast<std::size_t>(label);
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto k = r.u32();
    std::vector<CodeIndex> codes(k);
    for (auto& c : codes) c = r.u32();
    rec.visits.emplace_back(std::move(codes));
  }
  r.expect_end();
  return rec;
}

// ---- contracts ------------------------------------------------------------------

bool SmartContract::is_authorized(std::span<const std::uint8_t> pub) const {
  for (const auto& a : authorized_pubs)
    if (std::equal(a.begin(), a.end(), pub.begin(), pub.end())) return true;
  return false;
}

namespace {

void write_creation_fields(ByteWriter& w, const SmartContract& c) {
  w.bytes(c.provider_pub);
  w.u32(static_cast<std::uint32_t>(c.signature.vector.size()));
  for (Eigen::Index i = 0; i < c.signature.vector.size(); ++i) w.f64(c.signature.vector[i]);
  w.f64(c.signature.noise_sigma);
  w.u64(static_cast<std::uint64_t>(c.signature.model_version));
  w.str(c.access_url);
  w.u64(c.price);
  w.u64(c.listing_nonce);
}

constexpr std::uint8_t kContract = 1;
constexpr std::uint8_t kPurchase = 2;
constexpr std::uint8_t kAuthorization = 3;

}  // namespace

Hash compute_contract_id(const SmartContract& contract) {
  ByteWriter w;
  w.str("ddv-contract");
  write_creation_fields(w, contract);
  return crypto::sha256(w.data());
}

Bytes encode_entry(const LedgerEntry& entry) {
  ByteWriter w;
  if (const auto* c = std::get_if<SmartContract>(&entry)) {
    w.u8(kContract).hash(c->contract_id);
    write_creation_fields(w, *c);
  } else if (const auto* p = std::get_if<PurchaseTx>(&entry)) {
    w.u8(kPurchase).hash(p->contract_id).bytes(p->consumer_pub).u64(p->payment);
  } else {
    const auto& a = std::get<AuthorizationUpdate>(entry);
    w.u8(kAuthorization).hash(a.contract_id).bytes(a.consumer_pub).u64(a.purchase_block);
  }
  return w.take();
}

LedgerEntry decode_entry(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  const auto type = r.u8();
  if (type == kContract) {
    SmartContract c;
    c.contract_id = r.hash();
    c.provider_pub = r.bytes();
    const auto n = r.u32();
    if (n > 4096) throw ParseError("implausible signature length", 0, 1);
    c.signature.vector.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) c.signature.vector[i] = r.f64();
    c.signature.noise_sigma = r.f64();
    c.signature.model_version = static_cast<int>(r.u64());
    c.access_url = r.str();
    c.price = r.u64();
    c.listing_nonce = r.u64();
    r.expect_end();
    return c;
  }
  if (type == kPurchase) {
    PurchaseTx p;
    p.contract_id = r.hash();
    p.consumer_pub = r.bytes();
    p.payment = r.u64();
    r.expect_end();
    return p;
  }
  if (type == kAuthorization) {
    AuthorizationUpdate a;
    a.contract_id = r.hash();
    a.consumer_pub = r.bytes();
    a.purchase_block = r.u64();
    r.expect_end();
    return a;
  }
  throw ParseError("unknown ledger entry type " + std::to_string(type), 0, 1);
}

// ---- ledger -------------------------------------------------------------------------

Hash compute_block_hash(const Hash& prev_hash, std::span<const std::uint8_t> payload) {
  return crypto::sha256(prev_hash, payload);
}

namespace {

// Replays blocks [0, limit) into contract state. Returns false (and stops)
// at the first semantically invalid entry.
struct Replay {
  std::vector<SmartContract> contracts;
  std::map<Hash, std::size_t> index;  // contract id -> position in `contracts`
  std::map<Hash, std::size_t> block_of;
  std::map<std::size_t, PurchaseTx> purchases;

  bool apply(std::size_t block, const LedgerEntry& e) {
    if (const auto* c = std::get_if<SmartContract>(&e)) {
      if (compute_contract_id(*c) != c->contract_id || index.count(c->contract_id) || c->price == 0) return false;
      index[c->contract_id] = contracts.size();
      block_of[c->contract_id] = block;
      contracts.push_back(*c);
      return true;
    }
    if (const auto* p = std::get_if<PurchaseTx>(&e)) {
      auto it = index.find(p->contract_id);
      if (it == index.end() || p->payment < contracts[it->second].price) return false;
      purchases[block] = *p;
      return true;
    }
    const auto& a = std::get<AuthorizationUpdate>(e);
    auto pit = purchases.find(a.purchase_block);
    if (pit == purchases.end() || pit->second.contract_id != a.contract_id || pit->second.consumer_pub != a.consumer_pub)
      return false;
    auto& c = contracts[index.at(a.contract_id)];
    if (!c.is_authorized(a.consumer_pub)) c.authorized_pubs.push_back(a.consumer_pub);
    c.status = ContractStatus::sold_open;
    return true;
  }
};

Replay replay(const std::vector<Block>& blocks, std::size_t limit) {
  Replay r;
  for (std::size_t i = 0; i < limit; ++i) r.apply(i, decode_entry(blocks[i].payload));
  return r;
}

}  // namespace

std::optional<std::size_t> verify_ledger(const Ledger& ledger) {
  const auto& blocks = ledger.blocks();
  Hash prev{};
  Replay state;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.prev_hash != prev || compute_block_hash(b.prev_hash, b.payload) != b.block_hash) return i;
    try {
      if (!state.apply(i, decode_entry(b.payload))) return i;
    } catch (const ParseError&) {
      return i;
    }
    prev = b.block_hash;
  }
  return std::nullopt;
}

std::size_t Ledger::verified_prefix() const { return verify_ledger(*this).value_or(blocks_.size()); }

std::size_t Ledger::append(Bytes payload) {
  Block b;
  b.prev_hash = blocks_.empty() ? Hash{} : blocks_.back().block_hash;
  b.payload = std::move(payload);
  b.block_hash = compute_block_hash(b.prev_hash, b.payload);
  blocks_.push_back(std::move(b));
  return blocks_.size() - 1;
}

std::size_t Ledger::add_contract(const SmartContract& contract) {
  if (verify_ledger(*this)) throw ValidationError("ledger does not verify; refusing to append");
  if (contract.price == 0) throw PreconditionError("contract price must be positive");
  if (compute_contract_id(contract) != contract.contract_id)
    throw ValidationError("contract id does not match the contract fields");
  if (find_contract(contract.contract_id)) throw PreconditionError("contract already on the ledger");
  SmartContract fresh = contract;
  fresh.authorized_pubs.clear();
  fresh.status = ContractStatus::listed;
  return append(encode_entry(fresh));
}

Ledger::PurchaseResult Ledger::purchase(std::span<const std::uint8_t> consumer_pub, const Hash& contract_id,
                                        std::uint64_t payment) {
  if (const auto bad = verify_ledger(*this))
    throw ValidationError("ledger fails verification at block " + std::to_string(*bad));
  const auto c = find_contract(contract_id);
  if (!c) throw PreconditionError("unknown contract " + crypto::short_hex(contract_id));
  if (payment < c->price)
    throw ValidationError("payment " + std::to_string(payment) + " below price " + std::to_string(c->price));
  const Bytes pub(consumer_pub.begin(), consumer_pub.end());
  PurchaseResult out;
  out.tx_block = append(encode_entry(PurchaseTx{contract_id, pub, payment}));
  out.auth_block = append(encode_entry(AuthorizationUpdate{contract_id, pub, out.tx_block}));
  return out;
}

std::vector<SmartContract> Ledger::contracts() const { return replay(blocks_, verified_prefix()).contracts; }

std::optional<SmartContract> Ledger::find_contract(const Hash& contract_id) const {
  auto r = replay(blocks_, verified_prefix());
  auto it = r.index.find(contract_id);
  if (it == r.index.end()) return std::nullopt;
  return r.contracts[it->second];
}

bool Ledger::is_authorized(const Hash& contract_id, std::span<const std::uint8_t> pub) const {
  const auto c = find_contract(contract_id);
  return c && c->is_authorized(pub);
}

std::optional<std::size_t> Ledger::contract_block(const Hash& contract_id) const {
  auto r = replay(blocks_, verified_prefix());
  auto it = r.block_of.find(contract_id);
  if (it == r.block_of.end()) return std::nullopt;
  return it->second;
}

Bytes Ledger::serialize() const {
  ByteWriter w;
  w.str("ddv-ledger").u64(blocks_.size());
  for (const auto& b : blocks_) w.hash(b.prev_hash).bytes(b.payload).hash(b.block_hash);
  return w.take();
}

Ledger Ledger::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str() != "ddv-ledger") throw ParseError("not a serialised ledger", 0, 1);
  Ledger l;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Block b;
    b.prev_hash = r.hash();
    b.payload = r.bytes();
    b.block_hash = r.hash();
    l.blocks_.push_back(std::move(b));
  }
  r.expect_end();
  return l;
}

}  // namespace ddv::vend
