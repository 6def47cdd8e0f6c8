#pragma once

// The protocol across process boundaries. A coordinator listens on a TCP
// endpoint, waits for one agent per roster entry, then runs barrier-
// synchronized iterations: SIGNAL(k) goes out only after every UPDATE(k-1)
// has arrived. Agents compute their own updates with the same keyed RNG as
// the in-process engine, so trajectories match bit for bit.

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vfill/core.hpp"
#include "vfill/engine.hpp"

namespace vfill::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 lets the coordinator pick a free port

  static Endpoint parse(const std::string& host_port);
  std::string to_string() const;
};

struct RosterEntry {
  int id = 0;
  double c = 1.0;
  bool finite = false;
  std::uint64_t set_digest = 0;
};

std::vector<RosterEntry> make_roster(std::span<const LoadSpec> loads);

struct CoordinatorOptions {
  std::chrono::milliseconds timeout{30000};  // per wait for handshakes or updates
  /// Called once the listening socket is bound, with the actual port.
  std::function<void(std::uint16_t)> on_listening;
  /// Event log: "listening", "hello <id>", "signal <k>", "update <k> <id>", "stop <k> <reason>".
  std::function<void(const std::string&)> on_event;
};

/// Runs a full session and returns the trajectory. Throws SessionError
/// (after broadcasting STOP with the reason) when an agent times out or
/// disconnects, or on a duplicate load id.
Trajectory serve_coordinator(const Profile& b, const std::vector<RosterEntry>& roster, const EngineConfig& cfg,
                             const Endpoint& endpoint, const CoordinatorOptions& opts = {},
                             const Objective& obj = Objective::flatten());

struct AgentOptions {
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds connect_retry{5000};  // keep retrying connect for this long
  std::function<void(const std::string&)> on_event;  // "signal <k>", "stop <reason>"
};

struct AgentResult {
  int status = 0;          // 0 on a regular STOP
  std::string stop_reason;
  std::size_t updates_sent = 0;
  std::size_t stays_flagged = 0;
};

/// Connects, handshakes and answers every SIGNAL until STOP. Throws
/// ProtocolError on malformed traffic and SessionError on lost connection.
AgentResult run_agent(const LoadSpec& load, std::uint64_t master_seed, const Endpoint& endpoint,
                      const AgentOptions& opts = {}, const HullOptions& hull = {});

}  // namespace vfill::net
