#include "ddv/crypto.hpp"

#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/kdf.h>

#include <algorithm>
#include <cstring>
#include <memory>

#include "ddv/error.hpp"

namespace ddv::crypto {

namespace {

struct PkeyFree {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct PkeyCtxFree {
  void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
struct MdCtxFree {
  void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
struct CipherCtxFree {
  void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
struct KdfFree {
  void operator()(EVP_KDF* p) const { EVP_KDF_free(p); }
};
struct KdfCtxFree {
  void operator()(EVP_KDF_CTX* p) const { EVP_KDF_CTX_free(p); }
};

using Pkey = std::unique_ptr<EVP_PKEY, PkeyFree>;

[[noreturn]] void fail(const char* what) { throw Error(std::string("openssl: ") + what + " failed"); }

void require(bool ok, const char* what) {
  if (!ok) fail(what);
}

void put_be64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) {
    out[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
}

Pkey private_key(int type, std::span<const std::uint8_t> raw) {
  if (raw.size() != 32) throw PreconditionError("private key must be 32 bytes");
  Pkey k(EVP_PKEY_new_raw_private_key(type, nullptr, raw.data(), raw.size()));
  require(k != nullptr, "EVP_PKEY_new_raw_private_key");
  return k;
}

Pkey public_key(int type, std::span<const std::uint8_t> raw) {
  if (raw.size() != 32) return nullptr;
  return Pkey(EVP_PKEY_new_raw_public_key(type, nullptr, raw.data(), raw.size()));
}

KeyPair keypair(int type, Drbg& drbg) {
  KeyPair kp;
  kp.private_key = drbg.bytes(32);
  const auto k = private_key(type, kp.private_key);
  std::size_t len = 32;
  kp.public_key.resize(32);
  require(EVP_PKEY_get_raw_public_key(k.get(), kp.public_key.data(), &len) == 1 && len == 32,
          "EVP_PKEY_get_raw_public_key");
  return kp;
}

}  // namespace

Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::string hex(std::span<const std::uint8_t> data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

std::string short_hex(std::span<const std::uint8_t> data, std::size_t n) {
  return hex(data.first(std::min(n, data.size())));
}

Hash sha256(std::span<const std::uint8_t> data) { return sha256(data, {}); }

Hash sha256(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::unique_ptr<EVP_MD_CTX, MdCtxFree> ctx(EVP_MD_CTX_new());
  require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1, "sha256 init");
  require(EVP_DigestUpdate(ctx.get(), a.data(), a.size()) == 1, "sha256 update");
  require(EVP_DigestUpdate(ctx.get(), b.data(), b.size()) == 1, "sha256 update");
  Hash out{};
  unsigned len = 0;
  require(EVP_DigestFinal_ex(ctx.get(), out.data(), &len) == 1 && len == 32, "sha256 final");
  return out;
}

bool contains(std::span<const std::uint8_t> haystack, std::span<const std::uint8_t> needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

// ---- DRBG ----------------------------------------------------------------

Drbg::Drbg(std::uint64_t seed, std::string_view label) {
  Bytes material = to_bytes("ddv-drbg");
  std::uint8_t be[8];
  put_be64(be, seed);
  material.insert(material.end(), be, be + 8);
  material.insert(material.end(), label.begin(), label.end());
  key_ = sha256(material);
}

Bytes Drbg::bytes(std::size_t n) {
  Bytes out;
  out.reserve(n);
  while (out.size() < n) {
    if (used_ == block_.size()) {
      std::uint8_t be[8];
      put_be64(be, counter_++);
      block_ = sha256(key_, be);
      used_ = 0;
    }
    const std::size_t take = std::min(n - out.size(), block_.size() - used_);
    out.insert(out.end(), block_.begin() + static_cast<std::ptrdiff_t>(used_),
               block_.begin() + static_cast<std::ptrdiff_t>(used_ + take));
    used_ += take;
  }
  return out;
}

std::uint64_t Drbg::next_u64() {
  const Bytes b = bytes(8);
  std::uint64_t v = 0;
  for (auto x : b) v = (v << 8) | x;
  return v;
}

Drbg Drbg::fork(std::string_view label) {
  Drbg child(next_u64(), label);
  return child;
}

// ---- signatures / agreement -------------------------------------------------

KeyPair generate_signing_keypair(Drbg& drbg) { return keypair(EVP_PKEY_ED25519, drbg); }
KeyPair generate_agreement_keypair(Drbg& drbg) { return keypair(EVP_PKEY_X25519, drbg); }

Bytes sign(const KeyPair& signer, std::span<const std::uint8_t> message) {
  const auto k = private_key(EVP_PKEY_ED25519, signer.private_key);
  std::unique_ptr<EVP_MD_CTX, MdCtxFree> ctx(EVP_MD_CTX_new());
  require(ctx && EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, k.get()) == 1, "sign init");
  Bytes sig(64);
  std::size_t len = sig.size();
  require(EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) == 1 && len == 64, "sign");
  return sig;
}

bool verify(std::span<const std::uint8_t> public_key_bytes, std::span<const std::uint8_t> message,
            std::span<const std::uint8_t> signature) {
  if (signature.size() != 64) return false;
  const auto k = public_key(EVP_PKEY_ED25519, public_key_bytes);
  if (!k) return false;
  std::unique_ptr<EVP_MD_CTX, MdCtxFree> ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, k.get()) != 1) return false;
  return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(), message.size()) == 1;
}

Bytes x25519(const KeyPair& own, std::span<const std::uint8_t> peer_public) {
  const auto mine = private_key(EVP_PKEY_X25519, own.private_key);
  const auto peer = public_key(EVP_PKEY_X25519, peer_public);
  if (!peer) throw ProtocolError("malformed agreement public key");
  std::unique_ptr<EVP_PKEY_CTX, PkeyCtxFree> ctx(EVP_PKEY_CTX_new(mine.get(), nullptr));
  require(ctx && EVP_PKEY_derive_init(ctx.get()) == 1, "derive init");
  require(EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) == 1, "derive peer");
  Bytes out(32);
  std::size_t len = out.size();
  if (EVP_PKEY_derive(ctx.get(), out.data(), &len) != 1 || len != 32) throw ProtocolError("key agreement failed");
  return out;
}

Bytes hkdf_sha256(std::span<const std::uint8_t> ikm, std::span<const std::uint8_t> salt, std::string_view info,
                  std::size_t length) {
  std::unique_ptr<EVP_KDF, KdfFree> kdf(EVP_KDF_fetch(nullptr, "HKDF", nullptr));
  require(kdf != nullptr, "HKDF fetch");
  std::unique_ptr<EVP_KDF_CTX, KdfCtxFree> ctx(EVP_KDF_CTX_new(kdf.get()));
  require(ctx != nullptr, "HKDF ctx");
  char digest[] = "SHA256";
  Bytes ikm_copy(ikm.begin(), ikm.end()), salt_copy(salt.begin(), salt.end());
  std::string info_copy(info);
  OSSL_PARAM params[] = {
      OSSL_PARAM_construct_utf8_string(OSSL_KDF_PARAM_DIGEST, digest, 0),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_KEY, ikm_copy.data(), ikm_copy.size()),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_SALT, salt_copy.data(), salt_copy.size()),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_INFO, info_copy.data(), info_copy.size()),
      OSSL_PARAM_construct_end()};
  Bytes out(length);
  require(EVP_KDF_derive(ctx.get(), out.data(), out.size(), params) == 1, "HKDF derive");
  return out;
}

// ---- AES-256-GCM -------------------------------------------------------------

Sealed seal(std::span<const std::uint8_t> key, const std::array<std::uint8_t, kNonceBytes>& nonce,
            std::span<const std::uint8_t> aad, std::span<const std::uint8_t> plaintext) {
  if (key.size() != kKeyBytes) throw PreconditionError("AES-256 key must be 32 bytes");
  std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree> ctx(EVP_CIPHER_CTX_new());
  require(ctx && EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1, "gcm init");
  require(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1, "gcm ivlen");
  require(EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) == 1, "gcm key");
  int len = 0;
  if (!aad.empty())
    require(EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1, "gcm aad");
  Sealed out;
  out.nonce = nonce;
  out.ciphertext.resize(plaintext.size());
  if (!plaintext.empty())
    require(EVP_EncryptUpdate(ctx.get(), out.ciphertext.data(), &len, plaintext.data(),
                              static_cast<int>(plaintext.size())) == 1,
            "gcm encrypt");
  require(EVP_EncryptFinal_ex(ctx.get(), out.ciphertext.data() + len, &len) == 1, "gcm final");
  require(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes, out.tag.data()) == 1, "gcm tag");
  return out;
}

Bytes open(std::span<const std::uint8_t> key, const Sealed& sealed, std::span<const std::uint8_t> aad) {
  if (key.size() != kKeyBytes) throw PreconditionError("AES-256 key must be 32 bytes");
  std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree> ctx(EVP_CIPHER_CTX_new());
  require(ctx && EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1, "gcm init");
  require(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1, "gcm ivlen");
  require(EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), sealed.nonce.data()) == 1, "gcm key");
  int len = 0;
  if (!aad.empty())
    require(EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1, "gcm aad");
  Bytes out(sealed.ciphertext.size());
  if (!out.empty())
    require(EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.ciphertext.data(),
                              static_cast<int>(sealed.ciphertext.size())) == 1,
            "gcm decrypt");
  auto tag = sealed.tag;
  require(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) == 1, "gcm set tag");
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &len) != 1)
    throw AuthenticationError("authenticated decryption failed");
  return out;
}

}  // namespace ddv::crypto
