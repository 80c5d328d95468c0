#include "spacealign/service.hpp"

#include "spacealign/caption.hpp"
#include "spacealign/generator.hpp"
#include "spacealign/hashing.hpp"
#include "spacealign/image_io.hpp"
#include "spacealign/rng.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>

namespace spacealign {

namespace {

using json = nlohmann::json;

// Carries an HTTP status out of a handler.
struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void fail(int status, std::string code, std::string message) {
  throw HttpError{status, std::move(code), std::move(message)};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, json{{"error", {{"code", code}, {"message", message}}}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) fail(400, "bad_json", "request body is not valid JSON");
  if (!j.is_object()) fail(400, "bad_json", "request body must be a JSON object");
  return j;
}

std::string new_session_id() {
  static std::mutex m;
  static std::random_device rd;
  static std::mt19937_64 gen(rd());
  std::lock_guard lock(m);
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(gen()),
                static_cast<unsigned long long>(gen()));
  return buf;
}

json oracle_json(const AttributeEstimate& est) {
  json j = json::object();
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    const std::string name(attribute_name(i));
    if (est.detected[i]) {
      j[name] = est.attrs[i];
    } else {
      j[name] = nullptr;
    }
  }
  return j;
}

struct HistoryEntry {
  std::string shift;
  std::string neutral;
  std::string attr;
  double alpha = 0.0;
  std::string backend;
  std::string image_hash;
  std::string code_hash;
};

struct Session {
  std::mutex mutex;
  std::string id;
  Image image;
  std::string image_hash;
  std::optional<LatentCode> code;
  std::string backend;
  std::vector<HistoryEntry> history;
  std::chrono::steady_clock::time_point last_used;
};

}  // namespace

struct Service::Impl {
  CliConfig cfg;
  std::string config_hash;
  World world;
  MiniEmbedder embedder;
  AlignmentCheckpoint alignment;
  std::string checkpoint_hash;
  PromptBank bank;
  ToyGenerator generator;
  CanonicalInversion canonical;
  NoisyInversion noisy;

  mutable std::shared_mutex library_mutex;
  ShiftLibrary library;

  mutable std::mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  Clock clock = [] { return std::chrono::steady_clock::now(); };

  httplib::Server server;

  Impl(CliConfig c, MiniEmbedder e, AlignmentCheckpoint a, ShiftLibrary lib)
      : cfg(std::move(c)),
        config_hash(cfg.hash()),
        world(cfg.world),
        embedder(std::move(e)),
        alignment(std::move(a)),
        checkpoint_hash(alignment.content_hash()),
        bank(cfg.editing.bank()),
        generator(world),
        canonical(world),
        noisy(world, cfg.editing.noisy_seed),
        library(std::move(lib)) {
    if (embedder.dim() != alignment.network.embed_dim() || world.layers() != alignment.network.layers() ||
        world.layer_dim() != alignment.network.layer_dim()) {
      throw ConfigError("service: embedder, alignment checkpoint and world dimensions disagree");
    }
    routes();
  }

  const InversionBackend& inversion(const std::string& name) const {
    if (name == "canonical") return canonical;
    if (name == "noisy") return noisy;
    fail(400, "bad_backend", "backend must be \"canonical\" or \"noisy\", got \"" + name + "\"");
  }

  void purge_expired_locked() {
    const auto now = clock();
    const auto ttl = std::chrono::seconds(cfg.service.session_ttl_seconds);
    for (auto it = sessions.begin(); it != sessions.end();) {
      if (now - it->second->last_used > ttl) {
        it = sessions.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::shared_ptr<Session> find_session(const std::string& id) {
    std::lock_guard lock(sessions_mutex);
    purge_expired_locked();
    const auto it = sessions.find(id);
    if (it == sessions.end()) fail(404, "unknown_session", "no session '" + id + "'");
    it->second->last_used = clock();
    return it->second;
  }

  // Caller holds the session mutex.
  void ensure_inverted(Session& s, const std::string& backend) {
    if (s.code && s.backend == backend) return;
    const InversionBackend& inv = inversion(backend);
    try {
      s.code = inv.invert(s.image);
    } catch (const UndetectedError& e) {
      fail(422, "undetected", e.what());
    }
    s.backend = backend;
  }

  SemanticShift resolve_shift(const json& spec, std::string* label) {
    if (spec.is_string()) {
      const std::string name = spec.get<std::string>();
      std::shared_lock lock(library_mutex);
      if (!library.contains(name)) fail(422, "unknown_shift", "no shift named '" + name + "'");
      *label = name;
      return library.get(name);
    }
    if (spec.is_object()) {
      if (!spec.contains("neutral") || !spec.contains("attr") || !spec["neutral"].is_string() ||
          !spec["attr"].is_string()) {
        fail(400, "bad_request", "inline shift needs string fields \"neutral\" and \"attr\"");
      }
      const std::string neutral = spec["neutral"], attr = spec["attr"];
      *label = neutral + " -> " + attr;
      return extract(neutral, attr);
    }
    fail(400, "bad_request", "\"shift\" must be a shift name or {\"neutral\", \"attr\"}");
  }

  // Parse errors surface as 422 through wrap().
  SemanticShift extract(const std::string& neutral, const std::string& attr) {
    SemanticShift s = extract_shift(alignment.network, embedder, bank, neutral, attr, checkpoint_hash);
    s.config_hash = alignment.config_hash;
    return s;
  }

  // --- handlers -----------------------------------------------------------

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    Image img;
    if (body.contains("image")) {
      if (!body["image"].is_string()) fail(400, "bad_image", "\"image\" must be a base64 PNG string");
      std::string bytes;
      try {
        bytes = base64_decode(body["image"].get<std::string>());
        img = decode_png(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
      } catch (const DataError& e) {
        fail(400, "bad_image", e.what());
      }
      const int n = world.image_size();
      if (img.height != n || img.width != n) {
        fail(400, "bad_image", "expected a " + std::to_string(n) + "x" + std::to_string(n) + " RGB PNG, got " +
                                   std::to_string(img.width) + "x" + std::to_string(img.height));
      }
    } else if (body.contains("sample_seed")) {
      if (!body["sample_seed"].is_number_integer()) fail(400, "bad_request", "\"sample_seed\" must be an integer");
      const auto seed = body["sample_seed"].get<std::uint64_t>();
      // Stored as the 8-bit image a client would download.
      img = decode_png(encode_png(world.render(sample_attrs(AttrDistribution::real, 1, seed)[0])));
    } else {
      fail(400, "bad_request", "provide \"image\" (base64 PNG) or \"sample_seed\"");
    }

    auto s = std::make_shared<Session>();
    s->id = new_session_id();
    s->image = std::move(img);
    s->image_hash = image_hash(s->image);
    {
      std::lock_guard lock(sessions_mutex);
      s->last_used = clock();
      purge_expired_locked();
      if (static_cast<int>(sessions.size()) >= cfg.service.max_sessions) {
        fail(429, "too_many_sessions", "session limit of " + std::to_string(cfg.service.max_sessions) + " reached");
      }
      sessions[s->id] = s;
    }
    const auto png = encode_png(s->image);
    send_json(res, 201,
              json{{"session_id", s->id}, {"image", base64_encode(png)}, {"image_hash", s->image_hash},
                   {"width", s->image.width}, {"height", s->image.height}});
  }

  void invert(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    std::string backend = cfg.editing.inversion;
    if (body.contains("backend")) {
      if (!body["backend"].is_string()) fail(400, "bad_backend", "\"backend\" must be a string");
      backend = body["backend"];
    }
    inversion(backend);
    auto s = find_session(req.matches[1]);
    std::lock_guard lock(s->mutex);
    ensure_inverted(*s, backend);
    std::vector<double> norms;
    for (int l = 0; l < s->code->layers(); ++l) norms.push_back(s->code->row(l).norm());
    send_json(res, 200,
              json{{"session_id", s->id},
                   {"backend", backend},
                   {"latent_stats", {{"layer_norms", norms}, {"code_hash", latent_hash(*s->code)}}}});
  }

  void edit(const httplib::Request& req, httplib::Response& res) {
    const auto start = std::chrono::steady_clock::now();
    const json body = parse_body(req);
    if (!body.contains("shift")) fail(400, "bad_request", "missing \"shift\"");
    std::string label;
    auto s = find_session(req.matches[1]);
    const SemanticShift shift = resolve_shift(body["shift"], &label);
    double alpha = shift.default_alpha;
    if (body.contains("alpha")) {
      if (!body["alpha"].is_number()) fail(400, "bad_alpha", "\"alpha\" must be a number");
      alpha = body["alpha"];
    }
    if (!(std::abs(alpha) <= kMaxAlpha)) fail(400, "bad_alpha", "alpha must lie in [-3, 3]");

    std::lock_guard lock(s->mutex);
    if (!s->code) ensure_inverted(*s, "canonical");
    // Always from the stored inverted code: the slider is a pure function of alpha.
    const LatentCode code = apply_edit(*s->code, shift, alpha);
    const Image out = generator.generate(code);
    const std::string hash = image_hash(out);
    const AttributeEstimate est = world.estimate_attrs(out);
    HistoryEntry entry{label,
                       shift.neutral_texts.empty() ? "" : shift.neutral_texts.front(),
                       shift.attr_texts.empty() ? "" : shift.attr_texts.front(),
                       alpha,
                       s->backend,
                       hash,
                       latent_hash(code)};
    s->history.push_back(entry);
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    send_json(res, 200,
              json{{"image", base64_encode(encode_png(out))},
                   {"image_hash", hash},
                   {"code_hash", entry.code_hash},
                   {"oracle_attrs", oracle_json(est)},
                   {"alpha", alpha},
                   {"shift", label},
                   {"backend", s->backend},
                   {"history_index", s->history.size() - 1},
                   {"latency_ms", latency}});
  }

  void history(const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req.matches[1]);
    std::lock_guard lock(s->mutex);
    json entries = json::array();
    for (std::size_t i = 0; i < s->history.size(); ++i) {
      const auto& h = s->history[i];
      entries.push_back({{"index", i},
                         {"shift", h.shift},
                         {"neutral", h.neutral},
                         {"attr", h.attr},
                         {"alpha", h.alpha},
                         {"backend", h.backend},
                         {"image_hash", h.image_hash},
                         {"code_hash", h.code_hash}});
    }
    send_json(res, 200, json{{"session_id", s->id}, {"history", entries}});
  }

  json shift_listing(const std::string& name, const SemanticShift& s) const {
    return json{{"name", name},
                {"neutral_texts", s.neutral_texts},
                {"attr_texts", s.attr_texts},
                {"bank_id", s.prompt_bank_id},
                {"default_alpha", s.default_alpha},
                {"checkpoint_hash", s.checkpoint_hash},
                {"config_hash", s.config_hash},
                {"created_at", s.created_at}};
  }

  void list_shifts(httplib::Response& res) {
    std::shared_lock lock(library_mutex);
    json list = json::array();
    for (const auto& [name, s] : library.shifts()) list.push_back(shift_listing(name, s));
    send_json(res, 200, json{{"shifts", list}, {"checkpoint_hash", checkpoint_hash}, {"bank_id", bank.id}});
  }

  void create_shift(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    for (const char* key : {"name", "neutral", "attr"}) {
      if (!body.contains(key) || !body[key].is_string()) {
        fail(400, "bad_request", std::string("missing string field \"") + key + "\"");
      }
    }
    const std::string name = body["name"];
    if (name.empty()) fail(400, "bad_request", "shift name must not be empty");
    SemanticShift shift = extract(body["neutral"], body["attr"]);
    if (body.contains("default_alpha")) {
      if (!body["default_alpha"].is_number() || !(std::abs(body["default_alpha"].get<double>()) <= kMaxAlpha)) {
        fail(400, "bad_alpha", "default_alpha must be a number in [-3, 3]");
      }
      shift.default_alpha = body["default_alpha"];
    }
    std::unique_lock lock(library_mutex);
    if (library.contains(name)) fail(409, "duplicate_shift", "shift '" + name + "' already exists");
    library.add(name, shift);
    if (!library.path().empty()) library.save();
    send_json(res, 201, shift_listing(name, shift));
  }

  void delete_shift(const httplib::Request& req, httplib::Response& res) {
    const std::string name = req.matches[1];
    std::unique_lock lock(library_mutex);
    if (!library.remove(name)) fail(404, "unknown_shift", "no shift named '" + name + "'");
    if (!library.path().empty()) library.save();
    res.status = 204;
  }

  void vocab(httplib::Response& res) const {
    json slots = json::object();
    for (std::size_t i = 0; i < kNumSlots; ++i) {
      const Slot slot = static_cast<Slot>(i);
      slots[std::string(slot_name(slot))] = slot_words(slot);
    }
    send_json(res, 200, json{{"slots", slots}, {"words", grammar_vocabulary()}, {"templates", bank.templates}});
  }

  // Wraps a handler so HttpError and library errors become JSON bodies.
  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.code, e.message);
      } catch (const ParseError& e) {
        send_error(res, 422, "parse_error", std::string(e.what()) + " (token \"" + e.token() + "\")");
      } catch (const ContractError& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const DataError& e) {
        send_error(res, 422, "data_error", e.what());
      }
    };
  }

  void routes() {
    server.Get("/v1/healthz", wrap([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, json{{"status", "ok"}, {"checkpoint_hash", checkpoint_hash},
                                          {"config_hash", alignment.config_hash}});
               }));
    server.Get("/v1/vocab", wrap([this](const httplib::Request&, httplib::Response& res) { vocab(res); }));
    server.Post("/v1/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
                  create_session(req, res);
                }));
    server.Post(R"(/v1/sessions/([^/]+)/invert)",
                wrap([this](const httplib::Request& req, httplib::Response& res) { invert(req, res); }));
    server.Post(R"(/v1/sessions/([^/]+)/edit)",
                wrap([this](const httplib::Request& req, httplib::Response& res) { edit(req, res); }));
    server.Get(R"(/v1/sessions/([^/]+)/history)",
               wrap([this](const httplib::Request& req, httplib::Response& res) { history(req, res); }));
    server.Get("/v1/shifts", wrap([this](const httplib::Request&, httplib::Response& res) { list_shifts(res); }));
    server.Post("/v1/shifts", wrap([this](const httplib::Request& req, httplib::Response& res) {
                  create_shift(req, res);
                }));
    server.Delete(R"(/v1/shifts/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
                    delete_shift(req, res);
                  }));

    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      const std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
      send_error(res, res.status, code, req.method + " " + req.path + ": " + httplib::status_message(res.status));
      return httplib::Server::HandlerResponse::Handled;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string message = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        message = e.what();
      } catch (...) {
      }
      spdlog::error("request failed: {}", message);
      send_error(res, 500, "internal", message);
    });
    server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
    const int threads = cfg.service.threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    if (!cfg.service.static_dir.empty() && !server.set_mount_point("/", cfg.service.static_dir)) {
      throw ConfigError("service.static_dir '" + cfg.service.static_dir + "' is not a directory");
    }
  }
};

Service::Service(CliConfig cfg, MiniEmbedder embedder, AlignmentCheckpoint alignment, ShiftLibrary library)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(embedder), std::move(alignment), std::move(library))) {}

Service::~Service() {
  if (impl_) impl_->server.stop();
}

std::unique_ptr<Service> Service::from_config(const CliConfig& cfg) {
  const ServiceConfig& sc = cfg.service;
  if (sc.embedder_checkpoint.empty() || sc.alignment_checkpoint.empty()) {
    throw ConfigError("service.embedder_checkpoint and service.alignment_checkpoint are required");
  }
  const Checkpoint emb_ckpt = load_checkpoint(sc.embedder_checkpoint);
  MiniEmbedder embedder = MiniEmbedder::from_checkpoint(emb_ckpt);
  AlignmentCheckpoint alignment = load_alignment(sc.alignment_checkpoint);
  if (!alignment.embedder_hash.empty() && alignment.embedder_hash != emb_ckpt.content_hash()) {
    throw DataError("alignment checkpoint was trained against a different embedder");
  }
  ShiftLibrary library = sc.shift_library.empty() ? ShiftLibrary() : ShiftLibrary::open(sc.shift_library);
  return std::make_unique<Service>(cfg, std::move(embedder), std::move(alignment), std::move(library));
}

int Service::bind(int port) {
  const std::string& host = impl_->cfg.service.host;
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw ConfigError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Service::run() { impl_->server.listen_after_bind(); }
void Service::stop() { impl_->server.stop(); }
bool Service::running() const { return impl_->server.is_running(); }

void Service::set_clock(Clock clock) {
  std::lock_guard lock(impl_->sessions_mutex);
  impl_->clock = std::move(clock);
}

const std::string& Service::checkpoint_hash() const { return impl_->checkpoint_hash; }

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->sessions_mutex);
  return impl_->sessions.size();
}

}  // namespace spacealign
