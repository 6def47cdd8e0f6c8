#include "vfill/netsim.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <optional>
#include <thread>

#include "vfill/error.hpp"
#include "vfill/wire.hpp"

namespace vfill::net {

namespace {

using Clock = std::chrono::steady_clock;

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

/// Buffered line I/O over a connected stream socket.
class Channel {
 public:
  explicit Channel(Socket s) : sock_(std::move(s)) {
    int one = 1;
    ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  int fd() const noexcept { return sock_.fd(); }
  bool open() const noexcept { return sock_.valid() && !eof_; }

  /// Reads whatever is available; false once the peer has closed.
  bool fill() {
    char buf[65536];
    const ssize_t n = ::recv(sock_.fd(), buf, sizeof buf, 0);
    if (n > 0) {
      in_.append(buf, static_cast<std::size_t>(n));
      return true;
    }
    if (n < 0 && (errno == EINTR || errno == EAGAIN)) return true;
    eof_ = true;
    return false;
  }

  std::optional<std::string> pop_line() {
    const auto nl = in_.find('\n');
    if (nl == std::string::npos) return std::nullopt;
    std::string line = in_.substr(0, nl);
    in_.erase(0, nl + 1);
    return line;
  }

  /// Blocking read of one line; nullopt on timeout or EOF.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      if (auto line = pop_line()) return line;
      if (eof_) return std::nullopt;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) return std::nullopt;
      pollfd p{sock_.fd(), POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left));
      if (r < 0 && errno != EINTR) return std::nullopt;
      if (r > 0 && !fill()) {
        if (auto line = pop_line()) return line;
        return std::nullopt;
      }
    }
  }

  bool send(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(sock_.fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  bool send(const wire::Message& m) { return send(wire::encode(m)); }

  void close() { sock_.close(); }

 private:
  Socket sock_;
  std::string in_;
  bool eof_ = false;
};

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw ConfigError("cannot resolve host '" + ep.host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

wire::Message make(std::uint64_t k, auto payload) { return wire::Message{k, std::move(payload)}; }

}  // namespace

Endpoint Endpoint::parse(const std::string& host_port) {
  const auto colon = host_port.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint must be host:port, got '" + host_port + "'");
  Endpoint ep;
  ep.host = host_port.substr(0, colon);
  const std::string port = host_port.substr(colon + 1);
  unsigned long p = 0;
  try {
    std::size_t used = 0;
    p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw ConfigError("bad port in endpoint '" + host_port + "'");
  }
  ep.port = static_cast<std::uint16_t>(p);
  return ep;
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

std::vector<RosterEntry> make_roster(std::span<const LoadSpec> loads) {
  std::vector<RosterEntry> out;
  for (const LoadSpec& l : loads) out.push_back({l.id, l.c, l.is_finite(), wire::set_digest(l)});
  return out;
}

// ---- coordinator ---------------------------------------------------------------

Trajectory serve_coordinator(const Profile& b, const std::vector<RosterEntry>& roster, const EngineConfig& cfg,
                             const Endpoint& endpoint, const CoordinatorOptions& opts, const Objective& obj) {
  auto log = [&](const std::string& e) {
    if (opts.on_event) opts.on_event(e);
  };
  if (roster.empty()) throw ConfigError("coordinator: empty roster");
  std::map<int, std::size_t> slot_of;
  for (std::size_t i = 0; i < roster.size(); ++i)
    if (!slot_of.emplace(roster[i].id, i).second)
      throw ConfigError("coordinator: duplicate load id " + std::to_string(roster[i].id) + " in roster");

  std::vector<double> weights;
  std::vector<bool> kinds;
  double C = 0.0;
  for (const auto& r : roster) {
    weights.push_back(r.c);
    kinds.push_back(r.finite);
    C += r.c;
  }
  for (const auto& r : roster)
    if (!(r.c > 0.0) || (r.finite && !(C > r.c)))
      throw ConfigError("coordinator: invalid weight for load " + std::to_string(r.id));
  CoordinatorLoop loop(effective_base(b, obj), std::move(weights), std::move(kinds), cfg);
  const std::uint64_t gdig = wire::grid_digest(b.grid());
  const std::size_t S = b.grid().slots();

  Socket listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (!listener.valid()) throw SessionError(std::string(wire::kSessionError), "socket() failed");
  int one = 1;
  ::setsockopt(listener.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(endpoint);
  if (::bind(listener.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw SessionError(std::string(wire::kSessionError),
                       "cannot bind " + endpoint.to_string() + ": " + std::strerror(errno));
  if (::listen(listener.fd(), 128) != 0) throw SessionError(std::string(wire::kSessionError), "listen() failed");
  socklen_t len = sizeof addr;
  ::getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  log("listening");
  if (opts.on_listening) opts.on_listening(ntohs(addr.sin_port));

  std::vector<std::optional<Channel>> agents(roster.size());
  std::vector<Channel> pending;
  std::uint64_t k_sent = 0;

  auto abort_session = [&](std::string_view reason, const std::string& why) -> SessionError {
    const auto stop = make(k_sent, wire::Stop{std::string(reason)});
    for (auto& a : agents)
      if (a && a->open()) a->send(stop);
    for (auto& p : pending)
      if (p.open()) p.send(stop);
    log("stop " + std::to_string(k_sent) + " " + std::string(reason));
    return SessionError(std::string(reason), why);
  };

  // Handshake: one HELLO per roster entry.
  std::size_t joined = 0;
  auto deadline = Clock::now() + opts.timeout;
  while (joined < roster.size()) {
    std::vector<pollfd> fds{{listener.fd(), POLLIN, 0}};
    for (auto& p : pending) fds.push_back({p.fd(), POLLIN, 0});
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0)
      throw abort_session(wire::kAgentLost, "handshake timed out with " + std::to_string(joined) + " of " +
                                                std::to_string(roster.size()) + " agents");
    if (::poll(fds.data(), fds.size(), static_cast<int>(left)) <= 0) continue;
    if (fds[0].revents & POLLIN) {
      const int fd = ::accept(listener.fd(), nullptr, nullptr);
      if (fd >= 0) pending.emplace_back(Socket(fd));
    }
    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      Channel& ch = pending[i - 1];
      ch.fill();
      auto line = ch.pop_line();
      if (!line) {
        if (!ch.open()) ch.close();
        continue;
      }
      wire::Message msg;
      try {
        msg = wire::decode(*line);
      } catch (const ProtocolError&) {
        ch.send(make(0, wire::Stop{std::string(wire::kHandshakeRefused)}));
        ch.close();
        continue;
      }
      const auto* hello = std::get_if<wire::Hello>(&msg.payload);
      const auto it = hello ? slot_of.find(hello->load_id) : slot_of.end();
      if (!hello || hello->grid_digest != gdig || it == slot_of.end()) {
        ch.send(make(0, wire::Stop{std::string(wire::kHandshakeRefused)}));
        ch.close();
        continue;
      }
      if (agents[it->second]) {
        ch.send(make(0, wire::Stop{std::string(wire::kSessionError)}));
        ch.close();
        throw abort_session(wire::kSessionError, "duplicate load id " + std::to_string(hello->load_id));
      }
      log("hello " + std::to_string(hello->load_id));
      agents[it->second].emplace(std::move(ch));
      ch = Channel(Socket());
      ++joined;
      deadline = Clock::now() + opts.timeout;
    }
    std::erase_if(pending, [](const Channel& c) { return c.fd() < 0; });
  }
  pending.clear();

  for (std::size_t i = 0; i < roster.size(); ++i)
    agents[i]->send(make(0, wire::Assign{roster[i].id, roster[i].set_digest, roster[i].c}));

  for (;;) {
    const Profile& g = loop.next_signal();
    k_sent = loop.iteration();
    const auto sig = make(k_sent, wire::Signal{gdig, loop.total_weight(), std::vector<double>(g.values().begin(), g.values().end())});
    log("signal " + std::to_string(k_sent));
    const std::string encoded = wire::encode(sig);
    for (auto& a : agents) a->send(encoded);

    std::vector<std::optional<LoadStep>> steps(roster.size());
    std::size_t received = 0;
    deadline = Clock::now() + opts.timeout;
    while (received < roster.size()) {
      // Drain complete lines already buffered before polling again.
      bool progressed = false;
      for (std::size_t i = 0; i < roster.size(); ++i) {
        while (auto line = agents[i]->pop_line()) {
          wire::Message msg;
          try {
            msg = wire::decode(*line);
          } catch (const ProtocolError& e) {
            throw abort_session(wire::kSessionError, std::string("agent ") + std::to_string(roster[i].id) + ": " + e.what());
          }
          auto* up = std::get_if<wire::ProfileUpdate>(&msg.payload);
          if (!up || msg.iteration != k_sent || up->load_id != roster[i].id || up->grid_digest != gdig ||
              up->x.size() != S || up->mean.size() != S || steps[i])
            throw abort_session(wire::kSessionError,
                                "unexpected message from agent " + std::to_string(roster[i].id) + ": '" + *line + "'");
          steps[i] = LoadStep{Profile(b.grid(), std::move(up->x)), up->member, Distribution{}, up->stay_probability,
                              Profile(b.grid(), std::move(up->mean)), up->second_moment};
          log("update " + std::to_string(k_sent) + " " + std::to_string(roster[i].id));
          ++received;
          progressed = true;
        }
      }
      if (received == roster.size()) break;
      if (progressed) deadline = Clock::now() + opts.timeout;

      std::vector<pollfd> fds;
      for (auto& a : agents) fds.push_back({a->fd(), POLLIN, 0});
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) throw abort_session(wire::kAgentLost, "timed out waiting for updates at iteration " + std::to_string(k_sent));
      if (::poll(fds.data(), fds.size(), static_cast<int>(left)) <= 0) continue;
      for (std::size_t i = 0; i < fds.size(); ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        if (!agents[i]->fill() && !steps[i] && !agents[i]->pop_line())
          throw abort_session(wire::kAgentLost, "agent " + std::to_string(roster[i].id) + " disconnected at iteration " +
                                                    std::to_string(k_sent));
      }
    }

    std::vector<LoadStep> ordered;
    ordered.reserve(roster.size());
    for (auto& s : steps) ordered.push_back(std::move(*s));
    if (auto stop = loop.absorb(std::move(ordered))) {
      const std::string reason = to_string(*stop);
      for (auto& a : agents) a->send(make(k_sent, wire::Stop{reason}));
      log("stop " + std::to_string(k_sent) + " " + reason);
      return std::move(loop).finish(*stop);
    }
  }
}

// ---- agent ---------------------------------------------------------------------

AgentResult run_agent(const LoadSpec& load, std::uint64_t master_seed, const Endpoint& endpoint,
                      const AgentOptions& opts, const HullOptions& hull) {
  auto log = [&](const std::string& e) {
    if (opts.on_event) opts.on_event(e);
  };
  const TimeGrid& grid = load.grid();
  const std::uint64_t gdig = wire::grid_digest(grid);
  const sockaddr_in addr = resolve(endpoint);

  Socket sock;
  const auto connect_deadline = Clock::now() + opts.connect_retry;
  for (;;) {
    sock = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (::connect(sock.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) break;
    if (Clock::now() >= connect_deadline)
      throw SessionError(std::string(wire::kAgentLost), "cannot connect to " + endpoint.to_string());
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  Channel ch(std::move(sock));
  ch.send(make(0, wire::Hello{load.id, gdig}));

  AgentResult res;
  Profile x_prev(grid);
  std::optional<std::size_t> prev_member;
  if (load.is_finite()) prev_member = load.finite_set().find(x_prev);
  bool assigned = false;
  std::uint64_t last_k = 0;

  for (;;) {
    auto line = ch.read_line(opts.timeout);
    if (!line) throw SessionError(std::string(wire::kAgentLost), "agent " + std::to_string(load.id) + ": lost coordinator");
    const wire::Message msg = wire::decode(*line);
    if (const auto* stop = std::get_if<wire::Stop>(&msg.payload)) {
      res.stop_reason = stop->reason;
      res.status = (stop->reason == wire::kHandshakeRefused || stop->reason == wire::kAgentLost ||
                    stop->reason == wire::kSessionError)
                       ? 2
                       : 0;
      log("stop " + stop->reason);
      return res;
    }
    if (const auto* as = std::get_if<wire::Assign>(&msg.payload)) {
      if (as->load_id != load.id || as->set_digest != wire::set_digest(load) || as->c != load.c) {
        res.status = 3;
        res.stop_reason = "assignment-mismatch";
        return res;  // closing the connection tells the coordinator
      }
      assigned = true;
      continue;
    }
    const auto* sig = std::get_if<wire::Signal>(&msg.payload);
    if (!sig || !assigned) throw ProtocolError("agent " + std::to_string(load.id) + ": unexpected message '" + *line + "'");
    if (sig->grid_digest != gdig || sig->g.size() != grid.slots())
      throw ProtocolError("agent " + std::to_string(load.id) + ": signal grid does not match: '" + line->substr(0, 80) + "'");
    if (msg.iteration <= last_k) throw ProtocolError("agent: iteration did not increase: '" + line->substr(0, 80) + "'");
    last_k = msg.iteration;
    log("signal " + std::to_string(msg.iteration));

    const Profile g(grid, sig->g);
    LoadStep step = load_step(load, g, sig->C, x_prev, prev_member, master_seed, msg.iteration, hull);
    wire::ProfileUpdate up;
    up.load_id = load.id;
    up.grid_digest = gdig;
    up.member = step.member;
    up.stay = step.x == x_prev;
    up.stay_probability = step.stay_probability;
    up.second_moment = step.second_moment;
    up.x.assign(step.x.values().begin(), step.x.values().end());
    up.mean.assign(step.mean.values().begin(), step.mean.values().end());
    if (!ch.send(make(msg.iteration, std::move(up))))
      throw SessionError(std::string(wire::kAgentLost), "agent " + std::to_string(load.id) + ": send failed");
    ++res.updates_sent;
    if (step.x == x_prev) ++res.stays_flagged;
    x_prev = std::move(step.x);
    prev_member = step.member;
  }
}

}  // namespace vfill::net
