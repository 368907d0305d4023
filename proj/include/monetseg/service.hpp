// Copyright 2026 The monetseg Authors
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

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "monetseg/session.hpp"

namespace httplib {
class Server;
}

namespace monetseg {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::chrono::seconds session_ttl{3600};
  RefineSettings defaults;
  /// Called inside POST /refine after the session has been claimed and
  /// before the pipeline runs. Tests use it to hold a refine in flight.
  std::function<void(const std::string& id)> on_refine_start;

  /// Overrides host/port from MONETSEG_BIND ("host:port") and the TTL from
  /// MONETSEG_SESSION_TTL (seconds) when those are set.
  static ServiceOptions from_environment(ServiceOptions base);
};

/// In-memory session registry. Each entry carries its own lock; refine
/// first claims the `refining` flag so a second concurrent refine is
/// rejected instead of queued.
class SessionStore {
 public:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    std::mutex mu;
    std::atomic<bool> refining{false};
    Session session;
    std::optional<LabelMap> truth;
    std::chrono::steady_clock::time_point last_used = std::chrono::steady_clock::now();
  };

  explicit SessionStore(std::chrono::seconds ttl = std::chrono::seconds(3600)) : ttl_(ttl) {}

  std::string add(Session s, std::optional<LabelMap> truth = std::nullopt);
  std::shared_ptr<Entry> find(const std::string& id);
  bool erase(const std::string& id);
  /// Drops sessions idle for longer than the TTL that are not refining.
  std::size_t expire();
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::chrono::seconds ttl_;
  std::uint64_t next_ = 0;
};

/// Registers the REST routes on `server`:
///   POST   /sessions                      multipart: volume, init_seg, init_prob
///                                         [, checkpoint, truth, seed, config]
///   GET    /sessions/:id/slice            ?axis=x|y|z&index=k&layer=image|labels|result|weights
///   POST   /sessions/:id/scribbles        SCRB body or JSON {"voxels":[...]}
///   POST   /sessions/:id/refine           JSON overrides
///   GET    /sessions/:id/result           NRRD label map
///   DELETE /sessions/:id
void register_routes(httplib::Server& server, SessionStore& store, const ServiceOptions& opts);

/// Blocking server loop.
int run_service(const ServiceOptions& opts);

}  // namespace monetseg
