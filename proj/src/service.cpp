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

#include "monetseg/service.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <sstream>

#include "monetseg/error.hpp"
#include "monetseg/io.hpp"
#include "monetseg/rng.hpp"

namespace monetseg {

namespace {

using nlohmann::json;

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse:
    case ErrorKind::kTruncation:
      return 400;
    case ErrorKind::kDivergence:
    case ErrorKind::kIo:
      return 500;
    default:
      return 422;
  }
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::string& kind = {}, const std::string& stage = {}) {
  json j{{"error", message}};
  if (!kind.empty()) j["kind"] = kind;
  if (!stage.empty()) j["stage"] = stage;
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

std::string part(const httplib::Request& req, const char* name) {
  return req.get_file_value(name).content;
}

// Plane extraction: axis z gives width nx, height ny; y gives nx, nz; x
// gives ny, nz. Rows are stored first-axis fastest.
struct Plane {
  int width = 0, height = 0;
  std::vector<std::size_t> voxels;
};

Plane plane_of(const Dims& d, char axis, int index) {
  Plane p;
  auto push = [&](int x, int y, int z) { p.voxels.push_back(linear_index_unchecked(x, y, z, d)); };
  if (axis == 'z') {
    p.width = d.nx;
    p.height = d.ny;
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) push(x, y, index);
  } else if (axis == 'y') {
    p.width = d.nx;
    p.height = d.nz;
    for (int z = 0; z < d.nz; ++z)
      for (int x = 0; x < d.nx; ++x) push(x, index, z);
  } else {
    p.width = d.ny;
    p.height = d.nz;
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y) push(index, y, z);
  }
  return p;
}

template <class T>
void append_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

json counts_json(const ScribbleSet& s) {
  return json{{"foreground", s.foreground().size()},
              {"background", s.background().size()},
              {"total", s.size()}};
}

// {"voxels": [{"x":..,"y":..,"z":.., "label":"fg"|"bg"|"erase"} | {"index":.., "label":..}]}
void apply_json_scribbles(const std::string& body, ScribbleSet& s) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("voxels") || !j["voxels"].is_array()) {
    throw Error(ErrorKind::kParse, "expected an object with a 'voxels' array");
  }
  ScribbleSet staged = s;
  for (const auto& v : j["voxels"]) {
    if (!v.is_object() || !v.contains("label") || !v["label"].is_string()) {
      throw Error(ErrorKind::kParse, "each voxel needs a string 'label'");
    }
    std::size_t index = 0;
    try {
      if (v.contains("index")) {
        const auto i = v["index"].get<std::int64_t>();
        if (i < 0 || static_cast<std::size_t>(i) >= s.dims().size()) {
          throw Error(ErrorKind::kBounds, "voxel index out of range");
        }
        index = static_cast<std::size_t>(i);
      } else {
        index = linear_index(Coord{v.at("x").get<int>(), v.at("y").get<int>(), v.at("z").get<int>()},
                             s.dims());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, std::string("bad voxel entry: ") + e.what());
    }
    const auto label = v["label"].get<std::string>();
    if (label == "fg") staged.add(index, Label::kForeground);
    else if (label == "bg") staged.add(index, Label::kBackground);
    else if (label == "erase") staged.remove(index);
    else throw Error(ErrorKind::kParse, "label must be fg, bg or erase");
  }
  s = std::move(staged);
}

RefineOverrides parse_overrides(const std::string& body) {
  RefineOverrides o;
  if (body.empty()) return o;
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kParse, "refine body must be a JSON object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "tau") o.tau = val.get<double>();
      else if (key == "epochs") o.epochs = val.get<int>();
      else if (key == "lambda") o.lambda = val.get<double>();
      else if (key == "sigma") o.sigma = val.get<double>();
      else if (key == "zeta") o.zeta = val.get<double>();
      else if (key == "eta") o.eta = val.get<double>();
      else throw Error(ErrorKind::kParse, "unknown refine field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("bad refine field: ") + e.what());
  }
  if (o.epochs && *o.epochs < 1) throw Error(ErrorKind::kConfig, "epochs must be >= 1");
  return o;
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const StageError& e) {
    send_error(res, status_for(e.kind()), e.what(), to_string(e.kind()), e.stage());
  } catch (const Error& e) {
    send_error(res, status_for(e.kind()), e.what(), to_string(e.kind()));
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace

ServiceOptions ServiceOptions::from_environment(ServiceOptions o) {
  if (const char* bind = std::getenv("MONETSEG_BIND"); bind && *bind) {
    const std::string b = bind;
    const auto colon = b.rfind(':');
    if (colon == std::string::npos) {
      o.host = b;
    } else {
      o.host = b.substr(0, colon);
      try {
        o.port = std::stoi(b.substr(colon + 1));
      } catch (const std::logic_error&) {
        throw Error(ErrorKind::kConfig, "MONETSEG_BIND port is not a number");
      }
    }
  }
  if (const char* ttl = std::getenv("MONETSEG_SESSION_TTL"); ttl && *ttl) {
    try {
      o.session_ttl = std::chrono::seconds(std::stol(ttl));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kConfig, "MONETSEG_SESSION_TTL is not a number");
    }
  }
  return o;
}

std::string SessionStore::add(Session s, std::optional<LabelMap> truth) {
  auto entry = std::make_shared<Entry>(std::move(s));
  entry->truth = std::move(truth);
  std::lock_guard lock(mu_);
  const auto salt = static_cast<std::uint64_t>(
      std::chrono::steady_clock::now().time_since_epoch().count());
  std::ostringstream id;
  id << std::hex << splitmix64(salt ^ (++next_ << 32));
  sessions_.emplace(id.str(), entry);
  return id.str();
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  return it->second;
}

bool SessionStore::erase(const std::string& id) {
  std::lock_guard lock(mu_);
  return sessions_.erase(id) > 0;
}

std::size_t SessionStore::expire() {
  const auto now = std::chrono::steady_clock::now();
  std::lock_guard lock(mu_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    auto& e = *it->second;
    std::unique_lock entry_lock(e.mu, std::try_to_lock);
    if (entry_lock.owns_lock() && !e.refining && now - e.last_used > ttl_) {
      entry_lock.unlock();
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

void register_routes(httplib::Server& server, SessionStore& store, const ServiceOptions& opts) {
  auto lookup = [&store](const httplib::Request& req, httplib::Response& res) {
    store.expire();
    auto e = store.find(req.path_params.at("id"));
    if (!e) send_error(res, 404, "unknown session");
    return e;
  };

  server.Post("/sessions", [&store, &opts](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      for (const char* name : {"volume", "init_seg", "init_prob"}) {
        if (!req.has_file(name)) {
          send_error(res, 400, std::string("missing multipart field '") + name + "'");
          return;
        }
      }
      RefineSettings settings = opts.defaults;
      if (req.has_file("config")) settings.monet = parse_monet_config(part(req, "config"), settings.monet);
      if (req.has_file("seed")) {
        try {
          settings.seed = std::stoull(part(req, "seed"));
        } catch (const std::logic_error&) {
          throw Error(ErrorKind::kParse, "seed is not an unsigned integer");
        }
      }
      Volume v = to_volume(parse_nrrd(part(req, "volume")));
      LabelMap c = to_label_map(parse_nrrd(part(req, "init_seg")));
      ProbMap p = to_prob_map(parse_nrrd(part(req, "init_prob")));
      std::optional<MonetNet<float>> model;
      if (req.has_file("checkpoint")) model = decode_checkpoint(part(req, "checkpoint"), settings.monet);
      std::optional<LabelMap> truth;
      if (req.has_file("truth")) {
        truth = to_label_map(parse_nrrd(part(req, "truth")));
        require_same_dims(v.dims(), truth->dims, "truth");
      }
      const Dims d = v.dims();
      const std::string id =
          store.add(Session(std::move(v), std::move(c), std::move(p), settings, std::move(model)),
                    std::move(truth));
      send_json(res, json{{"id", id}, {"dims", {d.nx, d.ny, d.nz}}}, 201);
    });
  });

  server.Get("/sessions/:id/slice", [lookup](const httplib::Request& req, httplib::Response& res) {
    auto e = lookup(req, res);
    if (!e) return;
    guarded(res, [&] {
      const std::string axis = req.has_param("axis") ? req.get_param_value("axis") : "z";
      const std::string layer = req.has_param("layer") ? req.get_param_value("layer") : "image";
      if (axis != "x" && axis != "y" && axis != "z") {
        send_error(res, 400, "axis must be x, y or z");
        return;
      }
      if (!req.has_param("index")) {
        send_error(res, 400, "missing index");
        return;
      }
      int index = 0;
      try {
        std::size_t used = 0;
        const std::string raw = req.get_param_value("index");
        index = std::stoi(raw, &used);
        if (used != raw.size()) throw std::invalid_argument("trailing");
      } catch (const std::logic_error&) {
        send_error(res, 400, "index is not an integer");
        return;
      }
      std::lock_guard lock(e->mu);
      e->last_used = std::chrono::steady_clock::now();
      const Session& s = e->session;
      const Dims& d = s.volume().dims();
      const int extent = axis == "x" ? d.nx : axis == "y" ? d.ny : d.nz;
      if (index < 0 || index >= extent) {
        send_error(res, 400, "slice index out of range");
        return;
      }
      const Plane p = plane_of(d, axis[0], index);
      std::string body;
      std::string dtype;
      if (layer == "image" || layer == "weights") {
        dtype = "f32";
        body.reserve(p.voxels.size() * 4);
        for (auto i : p.voxels) {
          const float v = layer == "image" ? s.volume()[i] : static_cast<float>(s.weights().w[i]);
          append_le(body, v);
        }
      } else if (layer == "labels" || layer == "result") {
        dtype = "u8";
        for (auto i : p.voxels) {
          std::uint8_t code = s.result().labels[i];
          if (layer == "labels") {
            if (auto l = s.scribbles().label_at(i)) code = *l == Label::kForeground ? 2 : 3;
          }
          body.push_back(static_cast<char>(code));
        }
      } else {
        send_error(res, 400, "layer must be image, labels, result or weights");
        return;
      }
      const json dims{{"width", p.width}, {"height", p.height}, {"axis", axis},
                      {"index", index},   {"layer", layer},     {"dtype", dtype},
                      {"round", s.round()}};
      res.set_header("X-Dims", dims.dump());
      res.set_content(body, "application/octet-stream");
    });
  });

  server.Post("/sessions/:id/scribbles", [lookup](const httplib::Request& req, httplib::Response& res) {
    auto e = lookup(req, res);
    if (!e) return;
    guarded(res, [&] {
      std::lock_guard lock(e->mu);
      e->last_used = std::chrono::steady_clock::now();
      ScribbleSet& s = e->session.scribbles();
      const std::string type = req.get_header_value("Content-Type");
      if (type.rfind("application/json", 0) == 0) {
        apply_json_scribbles(req.body, s);
      } else {
        const ScribbleSet incoming = decode_scribbles(req.body);
        require_same_dims(incoming.dims(), s.dims(), "scribbles");
        s.merge(incoming);
      }
      send_json(res, counts_json(s));
    });
  });

  server.Post("/sessions/:id/refine", [lookup, &opts](const httplib::Request& req, httplib::Response& res) {
    auto e = lookup(req, res);
    if (!e) return;
    bool expected = false;
    if (!e->refining.compare_exchange_strong(expected, true)) {
      send_error(res, 409, "a refine is already running for this session");
      return;
    }
    struct Release {
      std::atomic<bool>& flag;
      ~Release() { flag = false; }
    } release{e->refining};
    guarded(res, [&] {
      const RefineOverrides o = parse_overrides(req.body);
      if (opts.on_refine_start) opts.on_refine_start(req.path_params.at("id"));
      std::lock_guard lock(e->mu);
      e->last_used = std::chrono::steady_clock::now();
      const RoundResult r = e->session.refine_round(o);
      json out{{"round", r.round},
               {"timings",
                {{"weights", r.times.weights},
                 {"train", r.times.train},
                 {"infer", r.times.infer},
                 {"graphcut", r.times.graphcut}}},
               {"changed_voxels", r.changed_voxels},
               {"training_samples", r.training_samples},
               {"scribble_voxels", r.scribble_voxels}};
      if (e->truth) {
        const EvalReport m = evaluate(e->session.result(), *e->truth, e->session.volume().spacing(),
                                      r.round, r.scribble_voxels);
        out["metrics"] = {{"dice", *m.dice}, {"assd", m.assd ? json(*m.assd) : json(nullptr)}};
      }
      send_json(res, out);
    });
  });

  server.Get("/sessions/:id/result", [lookup](const httplib::Request& req, httplib::Response& res) {
    auto e = lookup(req, res);
    if (!e) return;
    guarded(res, [&] {
      std::lock_guard lock(e->mu);
      e->last_used = std::chrono::steady_clock::now();
      res.set_content(encode_nrrd(e->session.result(), e->session.volume().spacing()),
                      "application/octet-stream");
    });
  });

  server.Delete("/sessions/:id", [&store](const httplib::Request& req, httplib::Response& res) {
    if (!store.erase(req.path_params.at("id"))) {
      send_error(res, 404, "unknown session");
      return;
    }
    res.status = 204;
  });
}

int run_service(const ServiceOptions& opts) {
  SessionStore store(opts.session_ttl);
  httplib::Server server;
  register_routes(server, store, opts);
  if (!server.bind_to_port(opts.host, opts.port)) {
    throw Error(ErrorKind::kIo, "cannot bind " + opts.host + ":" + std::to_string(opts.port));
  }
  return server.listen_after_bind() ? 0 : 1;
}

}  // namespace monetseg
