#include "vfill/wire.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "vfill/error.hpp"

namespace vfill::wire {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void mix(std::uint64_t& h, std::uint64_t word) {
  for (int b = 0; b < 8; ++b) {
    h ^= (word >> (8 * b)) & 0xffU;
    h *= kFnvPrime;
  }
}

std::string quote(std::string_view line) {
  std::string s(line.substr(0, 200));
  if (line.size() > 200) s += "...";
  return "'" + s + "'";
}

class Tokens {
 public:
  explicit Tokens(std::string_view line) : line_(line) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && line[i] == ' ') ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ') ++i;
      if (i > start) toks_.push_back(line.substr(start, i - start));
    }
  }

  bool done() const { return pos_ == toks_.size(); }

  std::string_view next(const char* what) {
    if (pos_ >= toks_.size()) fail(std::string("missing ") + what);
    return toks_[pos_++];
  }

  double real(const char* what) {
    const auto tok = next(what);
    auto v = parse_double(tok);
    if (!v) fail(std::string("bad ") + what + " '" + std::string(tok) + "'");
    return *v;
  }

  template <typename Int>
  Int integer(const char* what) {
    const auto tok = next(what);
    Int v{};
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      fail(std::string("bad ") + what + " '" + std::string(tok) + "'");
    return v;
  }

  std::uint64_t digest(const char* what) {
    const auto tok = next(what);
    std::uint64_t v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v, 16);
    if (tok.size() != 16 || res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      fail(std::string("bad ") + what + " '" + std::string(tok) + "'");
    return v;
  }

  std::vector<double> vec(const char* what) {
    const auto n = integer<std::size_t>("vector length");
    if (n > 1'000'000) fail("vector length too large");
    std::vector<double> out(n);
    for (double& v : out) v = real(what);
    return out;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ProtocolError("malformed message (" + why + "): " + quote(line_));
  }

 private:
  std::string_view line_;
  std::vector<std::string_view> toks_;
  std::size_t pos_ = 0;
};

void put_vec(std::string& out, const std::vector<double>& v) {
  out += ' ';
  out += std::to_string(v.size());
  for (double x : v) {
    out += ' ';
    out += format_real(x);
  }
}

}  // namespace

const char* to_string(Kind k) {
  switch (k) {
    case Kind::Hello: return "HELLO";
    case Kind::Assign: return "ASSIGN";
    case Kind::Signal: return "SIGNAL";
    case Kind::ProfileUpdate: return "UPDATE";
    case Kind::Stop: return "STOP";
  }
  return "?";
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_digest(std::uint64_t d) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

std::uint64_t grid_digest(const TimeGrid& grid) {
  std::uint64_t h = kFnvOffset;
  mix(h, std::bit_cast<std::uint64_t>(grid.horizon_hours()));
  mix(h, grid.slots());
  return h;
}

std::uint64_t set_digest(const LoadSpec& load) {
  if (load.is_finite()) return load.finite_set().digest();
  std::uint64_t h = kFnvOffset;
  mix(h, grid_digest(load.grid()));
  mix(h, std::bit_cast<std::uint64_t>(load.convex_set().energy()));
  for (double v : load.convex_set().caps().values()) mix(h, std::bit_cast<std::uint64_t>(v));
  return h;
}

std::string encode(const Message& m) {
  std::string out = "MESSAGE ";
  out += to_string(m.kind());
  out += ' ';
  out += std::to_string(m.iteration);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Hello>) {
          out += ' ' + std::to_string(p.load_id) + ' ' + format_digest(p.grid_digest);
        } else if constexpr (std::is_same_v<T, Assign>) {
          out += ' ' + std::to_string(p.load_id) + ' ' + format_digest(p.set_digest) + ' ' + format_real(p.c);
        } else if constexpr (std::is_same_v<T, Signal>) {
          out += ' ' + format_digest(p.grid_digest) + ' ' + format_real(p.C);
          put_vec(out, p.g);
        } else if constexpr (std::is_same_v<T, ProfileUpdate>) {
          out += ' ' + std::to_string(p.load_id) + ' ' + format_digest(p.grid_digest) + ' ' +
                 (p.member ? std::to_string(*p.member) : std::string("-1")) + ' ' + (p.stay ? "1" : "0") + ' ' +
                 format_real(p.stay_probability) + ' ' + format_real(p.second_moment);
          put_vec(out, p.x);
          put_vec(out, p.mean);
        } else {
          if (p.reason.empty() || p.reason.find_first_of(" \n") != std::string::npos)
            throw ProtocolError("stop reason must be a single non-empty token");
          out += ' ' + p.reason;
        }
      },
      m.payload);
  out += '\n';
  return out;
}

Message decode(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  Tokens tk(line);
  if (tk.next("MESSAGE tag") != "MESSAGE") tk.fail("expected MESSAGE tag");
  const auto kind = tk.next("kind");
  Message m;
  m.iteration = tk.integer<std::uint64_t>("iteration");
  if (kind == "HELLO") {
    Hello p;
    p.load_id = tk.integer<int>("load id");
    p.grid_digest = tk.digest("grid digest");
    m.payload = p;
  } else if (kind == "ASSIGN") {
    Assign p;
    p.load_id = tk.integer<int>("load id");
    p.set_digest = tk.digest("set digest");
    p.c = tk.real("weight");
    m.payload = p;
  } else if (kind == "SIGNAL") {
    Signal p;
    p.grid_digest = tk.digest("grid digest");
    p.C = tk.real("C");
    p.g = tk.vec("signal value");
    m.payload = std::move(p);
  } else if (kind == "UPDATE") {
    ProfileUpdate p;
    p.load_id = tk.integer<int>("load id");
    p.grid_digest = tk.digest("grid digest");
    const auto member = tk.integer<long long>("member index");
    if (member < -1) tk.fail("bad member index");
    if (member >= 0) p.member = static_cast<std::size_t>(member);
    const auto stay = tk.next("stay flag");
    if (stay != "0" && stay != "1") tk.fail("bad stay flag");
    p.stay = stay == "1";
    p.stay_probability = tk.real("stay probability");
    p.second_moment = tk.real("second moment");
    p.x = tk.vec("profile value");
    p.mean = tk.vec("mean value");
    m.payload = std::move(p);
  } else if (kind == "STOP") {
    m.payload = Stop{std::string(tk.next("reason"))};
  } else {
    tk.fail("unknown kind '" + std::string(kind) + "'");
  }
  if (!tk.done()) tk.fail("trailing tokens");
  return m;
}

}  // namespace vfill::wire
