#include "swd/schedule.hpp"

#include <cctype>
#include <cmath>

namespace swd {

std::vector<double> ScheduleSpec::taus() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < t.size(); ++i) out.push_back(tau(i));
  return out;
}

std::vector<Violation> validate(const ScheduleSpec& spec, std::size_t patch, const ScaleSpec* target) {
  std::vector<Violation> v;
  if (spec.t.empty()) v.push_back({0, "schedule is empty"});
  if (spec.t.size() != spec.scales.size()) {
    v.push_back({std::min(spec.t.size(), spec.scales.size()),
                 "timestep and scale lists differ in length (" + std::to_string(spec.t.size()) + " vs " +
                     std::to_string(spec.scales.size()) + ")"});
  }
  if (!spec.t.empty() && spec.t[0] != 1000) v.push_back({0, "first timestep must be 1000 (tau = 1)"});
  for (std::size_t i = 0; i < spec.t.size(); ++i) {
    if (spec.t[i] <= 0 || spec.t[i] > 1000) v.push_back({i, "timestep must lie in (0, 1000]"});
    if (i > 0 && spec.t[i] >= spec.t[i - 1]) v.push_back({i, "timesteps must strictly decrease"});
  }
  for (std::size_t i = 0; i < spec.scales.size(); ++i) {
    const auto& s = spec.scales[i];
    if (s.t == 0 || s.h == 0 || s.w == 0) v.push_back({i, "scale components must be >= 1"});
    if (patch > 0 && (s.h % patch != 0 || s.w % patch != 0)) {
      v.push_back({i, "scale " + s.str() + " not divisible by patch size " + std::to_string(patch)});
    }
    if (i > 0) {
      const auto& p = spec.scales[i - 1];
      if (s.t < p.t || s.h < p.h || s.w < p.w) {
        v.push_back({i, "scales must be non-decreasing (" + p.str() + " -> " + s.str() + ")"});
      }
    }
  }
  if (target && !spec.scales.empty() && !(spec.scales.back() == *target)) {
    v.push_back({spec.scales.size() - 1, "last scale " + spec.scales.back().str() + " differs from target " + target->str()});
  }
  return v;
}

std::string describe(const std::vector<Violation>& violations) {
  std::string out;
  for (const auto& v : violations) out += (out.empty() ? "" : "; ") + ("index " + std::to_string(v.index) + ": " + v.rule);
  return out;
}

namespace {

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(char c, const char* what) {
    if (!eat(c)) throw ScheduleParseError(std::string("expected ") + what, pos);
  }
  long long integer() {
    skip_ws();
    const std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (start == pos) throw ScheduleParseError("expected an integer", start);
    if (pos - start > 9) throw ScheduleParseError("integer too large", start);
    return std::stoll(s.substr(start, pos - start));
  }
};

}  // namespace

ScheduleSpec parse_schedule(const std::string& text) {
  Cursor c{text};
  ScheduleSpec spec;
  c.expect('t', "'t='");
  c.expect('=', "'=' after t");
  do {
    const std::size_t at = (c.skip_ws(), c.pos);
    const long long v = c.integer();
    if (v > 1000) throw ScheduleParseError("timestep " + std::to_string(v) + " exceeds 1000", at);
    spec.t.push_back(static_cast<int>(v));
  } while (c.eat(','));
  c.expect(';', "';' between the t and s lists");
  c.expect('s', "'s='");
  c.expect('=', "'=' after s");
  bool any_triple = false, any_plain = false;
  do {
    c.skip_ws();
    const std::size_t at = c.pos;
    const long long a = c.integer();
    if (c.eat('x')) {
      const long long b = c.integer();
      c.expect('x', "'x' in a TxHxW triple");
      const long long d = c.integer();
      spec.scales.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(d)});
      any_triple = true;
    } else {
      spec.scales.push_back(ScaleSpec::square(static_cast<std::size_t>(a)));
      any_plain = true;
    }
    if (any_triple && any_plain) throw ScheduleParseError("cannot mix plain sizes and TxHxW triples", at);
  } while (c.eat(','));
  c.skip_ws();
  if (c.pos != text.size()) throw ScheduleParseError("unexpected trailing text", c.pos);
  if (spec.t.size() != spec.scales.size()) {
    throw ScheduleParseError("t has " + std::to_string(spec.t.size()) + " entries but s has " +
                                 std::to_string(spec.scales.size()),
                             0);
  }
  spec.triples = any_triple;
  return spec;
}

std::string serialize(const ScheduleSpec& spec) {
  std::string out = "t=";
  for (std::size_t i = 0; i < spec.t.size(); ++i) out += (i ? "," : "") + std::to_string(spec.t[i]);
  out += "; s=";
  for (std::size_t i = 0; i < spec.scales.size(); ++i) {
    const auto& s = spec.scales[i];
    out += i ? "," : "";
    if (spec.triples || s.t != 1 || s.h != s.w) {
      out += std::to_string(s.t) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
    } else {
      out += std::to_string(s.h);
    }
  }
  return out;
}

ScheduleSpec full_resolution(const ScheduleSpec& spec) {
  ScheduleSpec out = spec;
  for (auto& s : out.scales) s = spec.target();
  return out;
}

std::vector<double> default_tau_grid(std::size_t n, double shift) {
  if (n == 0) throw std::invalid_argument("default_tau_grid: n must be positive");
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = 1.0 - static_cast<double>(i) / static_cast<double>(n);
    out.push_back(shift * u / (1.0 + (shift - 1.0) * u));
  }
  return out;
}

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (m > 0 && v % m != 0) ? (v / m + 1) * m : v; }

ScheduleSpec suggest_impl(const Spectrum& spatial, const Spectrum* temporal, std::size_t n, const ScaleSpec& target,
                          double rho, const std::vector<double>& tau_grid, std::size_t patch,
                          std::size_t temporal_patch, double shift) {
  if (n < 2) throw std::invalid_argument("suggest_schedule: need at least 2 steps");
  const std::vector<double> taus = tau_grid.empty() ? default_tau_grid(n, shift) : tau_grid;
  if (taus.size() != n) throw std::invalid_argument("suggest_schedule: tau grid has the wrong length");
  ScheduleSpec spec;
  spec.triples = temporal != nullptr;
  ScaleSpec prev{1, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    int t = i == 0 ? 1000 : static_cast<int>(std::lround(taus[i] * 1000.0));
    if (i > 0 && t >= spec.t.back()) t = spec.t.back() - 1;
    spec.t.push_back(std::max(t, 1));

    const std::size_t d = safe_scale(spatial, taus[i], target.h, rho);
    ScaleSpec s{1, std::min(round_up(target.h / d, patch), target.h), std::min(round_up(target.w / d, patch), target.w)};
    if (temporal) {
      const std::size_t dt = safe_scale(*temporal, taus[i], target.t, rho);
      s.t = std::min(round_up(target.t / dt, temporal_patch), target.t);
    }
    s = {std::max(s.t, prev.t), std::max(s.h, prev.h), std::max(s.w, prev.w)};
    prev = s;
    spec.scales.push_back(s);
  }
  spec.scales.back() = target;
  return spec;
}

}  // namespace

ScheduleSpec suggest_schedule(const Spectrum& signal, std::size_t n, std::size_t target_res, double rho,
                              const std::vector<double>& tau_grid, std::size_t patch, double shift) {
  return suggest_impl(signal, nullptr, n, ScaleSpec::square(target_res), rho, tau_grid, patch, 1, shift);
}

ScheduleSpec suggest_video_schedule(const Spectrum& spatial, const Spectrum& temporal, std::size_t n,
                                    const ScaleSpec& target, double rho, const std::vector<double>& tau_grid,
                                    std::size_t patch, std::size_t temporal_patch, double shift) {
  if (target.h != target.w) throw std::invalid_argument("suggest_video_schedule: spatial target must be square");
  return suggest_impl(spatial, &temporal, n, target, rho, tau_grid, patch, temporal_patch, shift);
}

}  // namespace swd
