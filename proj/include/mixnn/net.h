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

// Thin POSIX TCP helpers. All failures raise IoError.

#pragma once

#include <chrono>

#include "mixnn/bytes.h"
#include "mixnn/crypto.h"

namespace mixnn {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release();
  void close();
  // Unblocks a thread waiting in accept/read on this socket.
  void shutdown();

 private:
  int fd_ = -1;
};

// Binds and listens; port 0 picks an ephemeral port.
Socket listen_on(const Address& bind);
Address local_address(const Socket& listener);

Socket connect_to(const Address& to, std::chrono::milliseconds timeout);

// Waits up to `timeout` for a pending connection; invalid socket on timeout.
Socket accept_within(const Socket& listener, std::chrono::milliseconds timeout);

void write_all(const Socket& s, ByteSpan bytes);
// Returns false on a clean EOF before the first byte; throws on a short read.
bool read_exact(const Socket& s, std::span<uint8_t> out);
void set_io_timeout(const Socket& s, std::chrono::milliseconds timeout);

}  // namespace mixnn
