#include "simt/policy.hpp"

#include <algorithm>
#include <charconv>

#include "simt/error.hpp"

namespace simt {

PolicySpec PolicySpec::wait_k(int k) {
  if (k < 1) throw ConfigError("wait-k lag must be >= 1, got " + std::to_string(k));
  return PolicySpec{k};
}

int PolicySpec::lag(int step, int src_len) const { return waitk_lag(step, k, src_len); }

int waitk_lag(int step, int k, int src_len) {
  if (step < 1 || k < 1 || src_len < 1) {
    throw ConfigError("waitk_lag requires step, k, src_len >= 1");
  }
  // k + step - 1 can overflow for "infinite" k; compare before adding.
  if (k >= src_len || step - 1 >= src_len - k) return src_len;
  return k + step - 1;
}

GTrace make_g_trace(const PolicySpec& policy, int src_len, int tgt_len) {
  if (src_len < 1 || tgt_len < 0) throw ConfigError("make_g_trace: bad lengths");
  GTrace g(static_cast<std::size_t>(tgt_len));
  for (int i = 0; i < tgt_len; ++i) g[static_cast<std::size_t>(i)] = policy.lag(i + 1, src_len);
  return g;
}

std::optional<std::string> validate_g_trace(std::span<const int> trace, int src_len) {
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto step = std::to_string(i + 1);
    if (trace[i] < 1) return "g(" + step + ") < 1";
    if (trace[i] > src_len) {
      return "g(" + step + ") = " + std::to_string(trace[i]) + " exceeds source length " +
             std::to_string(src_len);
    }
    if (i > 0 && trace[i] < trace[i - 1]) return "non-monotone at i=" + step;
  }
  return std::nullopt;
}

void require_valid_g_trace(std::span<const int> trace, int src_len) {
  if (auto v = validate_g_trace(trace, src_len)) throw ShapeError("invalid g-trace: " + *v);
}

std::string format_g_trace(std::span<const int> trace) {
  std::string out;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(trace[i]);
  }
  return out;
}

GTrace parse_g_trace(const std::string& text) {
  GTrace g;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    int v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{}) throw IngestError("malformed g-trace: '" + text + "'");
    g.push_back(v);
    p = next;
  }
  return g;
}

}  // namespace simt
