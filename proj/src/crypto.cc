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

#include "mixnn/crypto.h"

#include <sodium.h>

#include <charconv>
#include <cstring>
#include <mutex>

#include "mixnn/errors.h"

namespace mixnn {

namespace {

constexpr size_t kSymKeyBytes = crypto_aead_xchacha20poly1305_ietf_KEYBYTES;
constexpr size_t kNonceBytes = crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
constexpr size_t kTagBytes = crypto_aead_xchacha20poly1305_ietf_ABYTES;
constexpr size_t kWrappedKeyBytes = crypto_box_SEALBYTES + kSymKeyBytes;

static_assert(crypto_box_PUBLICKEYBYTES == kPublicKeyBytes);
static_assert(crypto_box_SECRETKEYBYTES == kSecretKeyBytes);

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw Error("libsodium initialization failed");
  });
}

}  // namespace

std::string PublicKey::to_base64() const { return base64_encode(bytes); }

PublicKey PublicKey::from_base64(const std::string& text) {
  return from_bytes(base64_decode(text));
}

PublicKey PublicKey::from_bytes(ByteSpan raw) {
  if (raw.size() != kPublicKeyBytes) {
    throw DecodeError("public key must be " + std::to_string(kPublicKeyBytes) + " bytes, got " +
                      std::to_string(raw.size()));
  }
  PublicKey pk;
  std::memcpy(pk.bytes.data(), raw.data(), kPublicKeyBytes);
  return pk;
}

SecretKey::~SecretKey() { sodium_memzero(bytes_.data(), bytes_.size()); }

std::string SecretKey::to_base64() const { return base64_encode(bytes_); }

SecretKey SecretKey::from_base64(const std::string& text) {
  Bytes raw = base64_decode(text);
  if (raw.size() != kSecretKeyBytes) {
    sodium_memzero(raw.data(), raw.size());
    throw DecodeError("secret key must be " + std::to_string(kSecretKeyBytes) + " bytes");
  }
  std::array<uint8_t, kSecretKeyBytes> a{};
  std::memcpy(a.data(), raw.data(), a.size());
  sodium_memzero(raw.data(), raw.size());
  SecretKey sk(a);
  sodium_memzero(a.data(), a.size());
  return sk;
}

KeyPair gen_keypair(std::optional<ByteSpan> seed) {
  ensure_sodium();
  std::array<uint8_t, kSecretKeyBytes> sk{};
  KeyPair kp;
  if (seed) {
    std::array<uint8_t, crypto_box_SEEDBYTES> digest{};
    crypto_generichash(digest.data(), digest.size(), seed->data(), seed->size(), nullptr, 0);
    crypto_box_seed_keypair(kp.pk.bytes.data(), sk.data(), digest.data());
    sodium_memzero(digest.data(), digest.size());
  } else {
    crypto_box_keypair(kp.pk.bytes.data(), sk.data());
  }
  kp.sk = SecretKey(sk);
  sodium_memzero(sk.data(), sk.size());
  return kp;
}

KeyPair gen_keypair_from_seed(uint64_t seed) {
  ByteWriter w;
  w.raw(std::string_view("mixnn-key-seed"));
  w.u64(seed);
  return gen_keypair(ByteSpan(w.bytes()));
}

PublicKey public_key_of(const SecretKey& sk) {
  ensure_sodium();
  PublicKey pk;
  crypto_scalarmult_base(pk.bytes.data(), sk.bytes().data());
  return pk;
}

size_t seal_overhead() { return 2 + kWrappedKeyBytes + kNonceBytes + kTagBytes; }

Bytes seal(const PublicKey& pk, ByteSpan plaintext) {
  ensure_sodium();
  std::array<uint8_t, kSymKeyBytes> key{};
  crypto_aead_xchacha20poly1305_ietf_keygen(key.data());

  Bytes out(seal_overhead() + plaintext.size());
  uint8_t* p = out.data();
  p[0] = static_cast<uint8_t>(kWrappedKeyBytes >> 8);
  p[1] = static_cast<uint8_t>(kWrappedKeyBytes & 0xff);
  uint8_t* wrapped = p + 2;
  if (crypto_box_seal(wrapped, key.data(), key.size(), pk.bytes.data()) != 0) {
    sodium_memzero(key.data(), key.size());
    throw Error("key wrapping failed");
  }
  uint8_t* nonce = wrapped + kWrappedKeyBytes;
  randombytes_buf(nonce, kNonceBytes);
  uint8_t* body = nonce + kNonceBytes;
  uint8_t* tag = body + plaintext.size();
  unsigned long long tag_len = 0;
  // The header (length prefix and wrapped key) is authenticated data.
  crypto_aead_xchacha20poly1305_ietf_encrypt_detached(
      body, tag, &tag_len, plaintext.data(), plaintext.size(), p, 2 + kWrappedKeyBytes, nullptr,
      nonce, key.data());
  sodium_memzero(key.data(), key.size());
  return out;
}

Bytes open(const SecretKey& sk, ByteSpan ciphertext) {
  ensure_sodium();
  if (ciphertext.size() < seal_overhead()) throw AuthError("ciphertext too short");
  const size_t wrapped_len = (static_cast<size_t>(ciphertext[0]) << 8) | ciphertext[1];
  if (wrapped_len != kWrappedKeyBytes) throw AuthError("unexpected wrapped-key length");

  const PublicKey pk = public_key_of(sk);
  std::array<uint8_t, kSymKeyBytes> key{};
  const uint8_t* wrapped = ciphertext.data() + 2;
  if (crypto_box_seal_open(key.data(), wrapped, kWrappedKeyBytes, pk.bytes.data(),
                           sk.bytes().data()) != 0) {
    throw AuthError("authenticated decryption failed");
  }
  const uint8_t* nonce = wrapped + kWrappedKeyBytes;
  const uint8_t* body = nonce + kNonceBytes;
  const size_t body_len = ciphertext.size() - seal_overhead();
  const uint8_t* tag = body + body_len;
  Bytes plain(body_len);
  const int rc = crypto_aead_xchacha20poly1305_ietf_decrypt_detached(
      plain.data(), nullptr, body, body_len, tag, ciphertext.data(), 2 + kWrappedKeyBytes, nonce,
      key.data());
  sodium_memzero(key.data(), key.size());
  if (rc != 0) throw AuthError("authenticated decryption failed");
  return plain;
}

Bytes random_bytes(size_t n) {
  Bytes out(n);
  fill_random(out);
  return out;
}

void fill_random(std::span<uint8_t> out) {
  ensure_sodium();
  randombytes_buf(out.data(), out.size());
}

std::string base64_encode(ByteSpan bytes) {
  ensure_sodium();
  const int variant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_encoded_len(bytes.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
  out.resize(std::strlen(out.c_str()));
  return out;
}

Bytes base64_decode(const std::string& text) {
  ensure_sodium();
  Bytes out(text.size());
  size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len,
                        nullptr, sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw DecodeError("invalid base64");
  }
  out.resize(len);
  return out;
}

std::string Address::to_string() const {
  if (host.find(':') != std::string::npos) return "[" + host + "]:" + std::to_string(port);
  return host + ":" + std::to_string(port);
}

Address Address::parse(const std::string& text, bool allow_ephemeral) {
  const size_t colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError("address '" + text + "' is not host:port");
  }
  std::string host = text.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') {
    host = host.substr(1, host.size() - 2);
  }
  const std::string port_text = text.substr(colon + 1);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || (port == 0 && !allow_ephemeral) ||
      port > 65535) {
    throw ConfigError("address '" + text + "' has an invalid port");
  }
  return Address{host, static_cast<uint16_t>(port)};
}

}  // namespace mixnn
