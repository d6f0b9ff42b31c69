#pragma once

// Thin value-type wrappers over OpenSSL: SHA-256, Ed25519 signatures,
// X25519 agreement + HKDF, AES-256-GCM, and a seeded SHA-256 counter DRBG
// so every simulated key, nonce and noise draw is reproducible.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ddv::crypto {

using Bytes = std::vector<std::uint8_t>;
using Hash = std::array<std::uint8_t, 32>;

Bytes to_bytes(std::string_view s);
std::string hex(std::span<const std::uint8_t> data);
std::string short_hex(std::span<const std::uint8_t> data, std::size_t n = 8);

Hash sha256(std::span<const std::uint8_t> data);
// Hash of the concatenation.
Hash sha256(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// True if `needle` occurs in `haystack` as a contiguous byte run.
bool contains(std::span<const std::uint8_t> haystack, std::span<const std::uint8_t> needle);

// Block i = SHA-256(key || be64(i)), key = SHA-256("ddv-drbg" || be64(seed) || label).
class Drbg {
 public:
  using result_type = std::uint64_t;

  explicit Drbg(std::uint64_t seed, std::string_view label = {});

  Bytes bytes(std::size_t n);
  std::uint64_t next_u64();
  // Independent stream for a named sub-actor.
  Drbg fork(std::string_view label);

  result_type operator()() { return next_u64(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

 private:
  Hash key_{};
  std::uint64_t counter_ = 0;
  Hash block_{};
  std::size_t used_ = 32;
};

struct KeyPair {
  Bytes public_key;   // 32 bytes
  Bytes private_key;  // 32 bytes; never serialised outside the owning actor
};

KeyPair generate_signing_keypair(Drbg& drbg);    // Ed25519
KeyPair generate_agreement_keypair(Drbg& drbg);  // X25519

Bytes sign(const KeyPair& signer, std::span<const std::uint8_t> message);
bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> message,
            std::span<const std::uint8_t> signature);

Bytes x25519(const KeyPair& own, std::span<const std::uint8_t> peer_public);
Bytes hkdf_sha256(std::span<const std::uint8_t> ikm, std::span<const std::uint8_t> salt, std::string_view info,
                  std::size_t length);

constexpr std::size_t kKeyBytes = 32;
constexpr std::size_t kNonceBytes = 12;
constexpr std::size_t kTagBytes = 16;

struct Sealed {
  Bytes ciphertext;
  std::array<std::uint8_t, kNonceBytes> nonce{};
  std::array<std::uint8_t, kTagBytes> tag{};
};

// AES-256-GCM. open() throws AuthenticationError on any mismatch of key,
// nonce, associated data, ciphertext or tag.
Sealed seal(std::span<const std::uint8_t> key, const std::array<std::uint8_t, kNonceBytes>& nonce,
            std::span<const std::uint8_t> aad, std::span<const std::uint8_t> plaintext);
Bytes open(std::span<const std::uint8_t> key, const Sealed& sealed, std::span<const std::uint8_t> aad);

}  // namespace ddv::crypto
