#pragma once

#include "spacealign/alignment.hpp"
#include "spacealign/config.hpp"
#include "spacealign/editing.hpp"
#include "spacealign/embedder.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <string>

namespace spacealign {

// HTTP front end for sessions, inversion, the shift library and edits.
// Routes live under /v1; every failure answers {"error": {code, message}}.
class Service {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  Service(CliConfig cfg, MiniEmbedder embedder, AlignmentCheckpoint alignment, ShiftLibrary library);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Loads the checkpoints and shift library named in cfg.service.
  static std::unique_ptr<Service> from_config(const CliConfig& cfg);

  // Binds to cfg.service.host; port 0 picks a free port. Returns the bound port.
  int bind(int port);
  // Blocks until stop().
  void run();
  void stop();
  bool running() const;

  // Session expiry is measured against this clock (tests swap it).
  void set_clock(Clock clock);

  const std::string& checkpoint_hash() const;
  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spacealign
