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

// Public registry of layer servers: node id, address, public key and free
// form metadata. Holds no secrets and no traffic.
//
// Wire protocol: each request and response is a u32 BE length followed by
// a JSON object.
//   {"verb":"REGISTER","record":{...}}  -> {"ok":true}
//   {"verb":"LIST","filter":{k:v,...}}  -> {"ok":true,"records":[...]}
// Failures answer {"ok":false,"code":"conflict"|"bad_request","error":"..."}.

#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mixnn/crypto.h"
#include "mixnn/net.h"

namespace mixnn {

// Conjunctive equality over metadata keys.
using MetadataFilter = std::map<std::string, std::string>;

bool matches(const KeyRecord& record, const MetadataFilter& filter);

nlohmann::json to_json(const KeyRecord& record);
KeyRecord key_record_from_json(const nlohmann::json& j);

class DirectoryApi {
 public:
  virtual ~DirectoryApi() = default;
  // Throws ConflictError if the node id is known under a different key.
  virtual void register_record(const KeyRecord& record) = 0;
  // Sorted by node id.
  virtual std::vector<KeyRecord> list(const MetadataFilter& filter = {}) = 0;
};

class Directory : public DirectoryApi {
 public:
  // With a store path, accepted registrations are appended as JSON lines
  // and replayed on construction.
  explicit Directory(std::optional<std::filesystem::path> store = std::nullopt);

  void register_record(const KeyRecord& record) override;
  std::vector<KeyRecord> list(const MetadataFilter& filter = {}) override;
  size_t size() const;

 private:
  void apply(const KeyRecord& record);

  mutable std::mutex mu_;
  std::map<std::string, KeyRecord> records_;
  std::optional<std::filesystem::path> store_;
};

// Serves a Directory over TCP, one request at a time.
class DirectoryServer {
 public:
  DirectoryServer(Directory& directory, const Address& bind);
  ~DirectoryServer();
  DirectoryServer(const DirectoryServer&) = delete;
  DirectoryServer& operator=(const DirectoryServer&) = delete;

  const Address& address() const { return address_; }
  void stop();

  // Called with every request frame body as received.
  void set_tap(std::function<void(const std::string&)> tap) { tap_ = std::move(tap); }

 private:
  void serve();
  std::string handle(const std::string& request);

  Directory& directory_;
  Socket listener_;
  Address address_;
  std::atomic<bool> stop_{false};
  std::function<void(const std::string&)> tap_;
  std::thread thread_;
};

class DirectoryClient : public DirectoryApi {
 public:
  explicit DirectoryClient(Address server) : server_(std::move(server)) {}

  void register_record(const KeyRecord& record) override;
  std::vector<KeyRecord> list(const MetadataFilter& filter = {}) override;

 private:
  nlohmann::json call(const nlohmann::json& request);

  Address server_;
};

void write_frame(const Socket& s, const std::string& body);
std::optional<std::string> read_frame(const Socket& s);

}  // namespace mixnn
