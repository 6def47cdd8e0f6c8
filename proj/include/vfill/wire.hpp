#pragma once

// Line-delimited wire protocol between the coordinator and load agents.
//
// One message per line:   MESSAGE <KIND> <iteration> <payload...>\n
//
//   HELLO  0 <load_id> <grid_digest>                                  agent -> coordinator
//   ASSIGN 0 <load_id> <set_digest> <c>                               coordinator -> agent
//   SIGNAL k <grid_digest> <C> <S> g_0 .. g_{S-1}                     coordinator -> agents
//   UPDATE k <load_id> <grid_digest> <member|-1> <stay 0|1> <stay_probability>
//            <second_moment> <S> x_0 .. x_{S-1} <S> mean_0 .. mean_{S-1}    agent -> coordinator
//   STOP   k <reason>                                                 coordinator -> agents
//
// Digests are 16 hex digits. Reals are written with 17 significant digits so
// every double survives the round trip bit for bit.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vfill/core.hpp"
#include "vfill/engine.hpp"

namespace vfill::wire {

enum class Kind { Hello, Assign, Signal, ProfileUpdate, Stop };

struct Hello {
  int load_id = 0;
  std::uint64_t grid_digest = 0;
};

struct Assign {
  int load_id = 0;
  std::uint64_t set_digest = 0;
  double c = 0.0;
};

struct Signal {
  std::uint64_t grid_digest = 0;
  double C = 0.0;
  std::vector<double> g;
};

struct ProfileUpdate {
  int load_id = 0;
  std::uint64_t grid_digest = 0;
  std::optional<std::size_t> member;
  bool stay = false;
  double stay_probability = 0.0;
  double second_moment = 0.0;
  std::vector<double> x;
  std::vector<double> mean;
};

struct Stop {
  std::string reason;
};

struct Message {
  std::uint64_t iteration = 0;
  std::variant<Hello, Assign, Signal, ProfileUpdate, Stop> payload;

  Kind kind() const { return static_cast<Kind>(payload.index()); }
};

const char* to_string(Kind k);

/// Encoded line including the trailing newline.
std::string encode(const Message& m);

/// Parses one line (trailing newline optional). Throws ProtocolError quoting
/// the offending text on any malformed input.
Message decode(std::string_view line);

std::uint64_t grid_digest(const TimeGrid& grid);
/// Digest of the load's constraint set (members for finite loads, caps and
/// energy for convex ones).
std::uint64_t set_digest(const LoadSpec& load);

std::string format_real(double v);
std::string format_digest(std::uint64_t d);

/// Stop reasons used on the wire.
inline constexpr std::string_view kAgentLost = "agent-lost";
inline constexpr std::string_view kHandshakeRefused = "handshake-refused";
inline constexpr std::string_view kSessionError = "session-error";

}  // namespace vfill::wire
