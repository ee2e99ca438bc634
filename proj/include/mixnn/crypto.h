// Copyright 2026 The MixNN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Hybrid public-key sealing. A fresh XChaCha20-Poly1305 key encrypts the
// body; that key is wrapped to the recipient's X25519 public key with a
// sealed box. Ciphertext layout:
//
//   [wrapped key length: u16 BE][wrapped key][nonce][body][tag]
//
// and the wrapped key is bound to the body as associated data, so flipping
// any bit anywhere makes open() fail.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "mixnn/bytes.h"

namespace mixnn {

inline constexpr size_t kPublicKeyBytes = 32;
inline constexpr size_t kSecretKeyBytes = 32;

struct PublicKey {
  std::array<uint8_t, kPublicKeyBytes> bytes{};

  std::string to_base64() const;
  static PublicKey from_base64(const std::string& text);
  static PublicKey from_bytes(ByteSpan raw);

  bool operator==(const PublicKey&) const = default;
  auto operator<=>(const PublicKey&) const = default;
};

// Wiped on destruction.
class SecretKey {
 public:
  SecretKey() = default;
  explicit SecretKey(const std::array<uint8_t, kSecretKeyBytes>& bytes) : bytes_(bytes) {}
  SecretKey(const SecretKey&) = default;
  SecretKey& operator=(const SecretKey&) = default;
  ~SecretKey();

  const std::array<uint8_t, kSecretKeyBytes>& bytes() const { return bytes_; }

  std::string to_base64() const;
  static SecretKey from_base64(const std::string& text);

 private:
  std::array<uint8_t, kSecretKeyBytes> bytes_{};
};

struct KeyPair {
  PublicKey pk;
  SecretKey sk;
};

// Seeded generation is deterministic; intended for tests and reproducible
// fixtures only.
KeyPair gen_keypair(std::optional<ByteSpan> seed = std::nullopt);
KeyPair gen_keypair_from_seed(uint64_t seed);

// Recomputes the public half of a secret key.
PublicKey public_key_of(const SecretKey& sk);

// Fixed size difference between ciphertext and plaintext.
size_t seal_overhead();

Bytes seal(const PublicKey& pk, ByteSpan plaintext);
// Throws AuthError for a wrong key or any modification of the ciphertext.
Bytes open(const SecretKey& sk, ByteSpan ciphertext);

Bytes random_bytes(size_t n);
void fill_random(std::span<uint8_t> out);

std::string base64_encode(ByteSpan bytes);
Bytes base64_decode(const std::string& text);

struct Address {
  std::string host;
  uint16_t port = 0;

  // "host:port"; IPv6 hosts are bracketed.
  std::string to_string() const;
  // Port 0 is only accepted for listen addresses (`allow_ephemeral`).
  static Address parse(const std::string& text, bool allow_ephemeral = false);

  bool operator==(const Address&) const = default;
  auto operator<=>(const Address&) const = default;
};

// What a server publishes to the directory. Never holds secret material.
struct KeyRecord {
  std::string node_id;
  Address address;
  PublicKey pk;
  std::map<std::string, std::string> metadata;

  bool operator==(const KeyRecord&) const = default;
};

}  // namespace mixnn
