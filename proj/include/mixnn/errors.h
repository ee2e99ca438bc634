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

#pragma once

#include <stdexcept>
#include <string>

namespace mixnn {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation arrived in a state that cannot accept it (backward without a
// cached forward, forward on an uninitialized node, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Authenticated decryption failed: wrong key, tampered or misrouted bytes.
class AuthError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes: truncated matrices, bad TLV records, unknown tags.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// A packet does not fit, or does not have, the cascade-wide length.
class FramingError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class PoolExhausted : public Error {
 public:
  using Error::Error;
};

// The designer's time bound expired. Deliberately carries no node identity:
// the designer cannot tell which server failed.
class CrashDetected : public Error {
 public:
  using Error::Error;
};

}  // namespace mixnn
