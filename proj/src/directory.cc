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

#include "mixnn/directory.h"

#include <fstream>

#include "mixnn/errors.h"

namespace mixnn {

using nlohmann::json;

namespace {

constexpr uint32_t kMaxFrame = 16u << 20;

}  // namespace

bool matches(const KeyRecord& record, const MetadataFilter& filter) {
  for (const auto& [k, v] : filter) {
    auto it = record.metadata.find(k);
    if (it == record.metadata.end() || it->second != v) return false;
  }
  return true;
}

json to_json(const KeyRecord& record) {
  return json{{"node_id", record.node_id},
              {"address", record.address.to_string()},
              {"pk", record.pk.to_base64()},
              {"metadata", record.metadata}};
}

KeyRecord key_record_from_json(const json& j) {
  try {
    KeyRecord r;
    r.node_id = j.at("node_id").get<std::string>();
    if (r.node_id.empty()) throw DecodeError("empty node_id");
    r.address = Address::parse(j.at("address").get<std::string>());
    r.pk = PublicKey::from_base64(j.at("pk").get<std::string>());
    if (j.contains("metadata")) {
      r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    }
    return r;
  } catch (const json::exception& e) {
    throw DecodeError(std::string("bad key record: ") + e.what());
  } catch (const ConfigError& e) {
    throw DecodeError(std::string("bad key record: ") + e.what());
  }
}

Directory::Directory(std::optional<std::filesystem::path> store) : store_(std::move(store)) {
  if (!store_ || !std::filesystem::exists(*store_)) return;
  std::ifstream in(*store_);
  if (!in) throw IoError("cannot read directory store " + store_->string());
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      apply(key_record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(store_->string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Directory::apply(const KeyRecord& record) {
  auto it = records_.find(record.node_id);
  if (it != records_.end() && it->second.pk != record.pk) {
    throw ConflictError("node " + record.node_id + " is already registered with another key");
  }
  records_[record.node_id] = record;
}

void Directory::register_record(const KeyRecord& record) {
  if (record.node_id.empty()) throw ConfigError("node id must not be empty");
  std::lock_guard<std::mutex> lock(mu_);
  apply(record);
  if (store_) {
    std::ofstream out(*store_, std::ios::app);
    out << to_json(record).dump() << '\n';
    if (!out) throw IoError("cannot append to directory store " + store_->string());
  }
}

std::vector<KeyRecord> Directory::list(const MetadataFilter& filter) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<KeyRecord> out;
  for (const auto& [id, r] : records_) {
    if (matches(r, filter)) out.push_back(r);
  }
  return out;
}

size_t Directory::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return records_.size();
}

void write_frame(const Socket& s, const std::string& body) {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(body.size()));
  w.raw(std::string_view(body));
  write_all(s, w.bytes());
}

std::optional<std::string> read_frame(const Socket& s) {
  uint8_t len_bytes[4];
  if (!read_exact(s, len_bytes)) return std::nullopt;
  ByteReader r(len_bytes);
  const uint32_t len = r.u32();
  if (len > kMaxFrame) throw FramingError("directory frame too large");
  std::string body(len, '\0');
  if (len > 0 &&
      !read_exact(s, std::span<uint8_t>(reinterpret_cast<uint8_t*>(body.data()), len))) {
    throw IoError("connection closed inside a frame");
  }
  return body;
}

DirectoryServer::DirectoryServer(Directory& directory, const Address& bind)
    : directory_(directory), listener_(listen_on(bind)), address_(local_address(listener_)) {
  if (!bind.host.empty() && bind.host != "0.0.0.0" && bind.host != "::") address_.host = bind.host;
  thread_ = std::thread([this] { serve(); });
}

DirectoryServer::~DirectoryServer() { stop(); }

void DirectoryServer::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
  listener_.close();
}

void DirectoryServer::serve() {
  while (!stop_) {
    Socket conn;
    try {
      conn = accept_within(listener_, std::chrono::milliseconds(100));
      if (!conn.valid()) continue;
      set_io_timeout(conn, std::chrono::seconds(5));
      while (auto request = read_frame(conn)) {
        if (tap_) tap_(*request);
        write_frame(conn, handle(*request));
      }
    } catch (const Error&) {
      // A broken client only loses its own connection.
    }
  }
}

std::string DirectoryServer::handle(const std::string& request) {
  try {
    const json req = json::parse(request);
    const std::string verb = req.at("verb").get<std::string>();
    if (verb == "REGISTER") {
      directory_.register_record(key_record_from_json(req.at("record")));
      return json{{"ok", true}}.dump();
    }
    if (verb == "LIST") {
      MetadataFilter filter;
      if (req.contains("filter")) filter = req.at("filter").get<MetadataFilter>();
      json records = json::array();
      for (const auto& r : directory_.list(filter)) records.push_back(to_json(r));
      return json{{"ok", true}, {"records", records}}.dump();
    }
    return json{{"ok", false}, {"code", "bad_request"}, {"error", "unknown verb " + verb}}.dump();
  } catch (const ConflictError& e) {
    return json{{"ok", false}, {"code", "conflict"}, {"error", e.what()}}.dump();
  } catch (const std::exception& e) {
    return json{{"ok", false}, {"code", "bad_request"}, {"error", e.what()}}.dump();
  }
}

json DirectoryClient::call(const json& request) {
  Socket s = connect_to(server_, std::chrono::seconds(5));
  set_io_timeout(s, std::chrono::seconds(10));
  write_frame(s, request.dump());
  auto body = read_frame(s);
  if (!body) throw IoError("directory closed the connection");
  json resp;
  try {
    resp = json::parse(*body);
  } catch (const json::exception& e) {
    throw DecodeError(std::string("bad directory response: ") + e.what());
  }
  if (!resp.value("ok", false)) {
    const std::string code = resp.value("code", "");
    const std::string error = resp.value("error", "directory request failed");
    if (code == "conflict") throw ConflictError(error);
    throw ProtocolError(error);
  }
  return resp;
}

void DirectoryClient::register_record(const KeyRecord& record) {
  call(json{{"verb", "REGISTER"}, {"record", to_json(record)}});
}

std::vector<KeyRecord> DirectoryClient::list(const MetadataFilter& filter) {
  json resp = call(json{{"verb", "LIST"}, {"filter", filter}});
  std::vector<KeyRecord> out;
  for (const auto& j : resp.at("records")) out.push_back(key_record_from_json(j));
  return out;
}

}  // namespace mixnn
