#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace simt {

/// Number of source tokens consumed before each target token, g(1..|u|).
using GTrace = std::vector<int>;

/// Fixed-lag read/write schedule: read k tokens, then alternate write/read.
struct PolicySpec {
  int k = 1;

  static PolicySpec wait_k(int k);

  /// g(i) for 1-based target step i.
  int lag(int step, int src_len) const;
};

/// min(k + i - 1, src_len).
int waitk_lag(int step, int k, int src_len);

GTrace make_g_trace(const PolicySpec& policy, int src_len, int tgt_len);

/// Returns a description of the first violation, or nullopt when the trace is
/// in bounds and non-decreasing.
std::optional<std::string> validate_g_trace(std::span<const int> trace, int src_len);

/// Throws ShapeError with the violation text.
void require_valid_g_trace(std::span<const int> trace, int src_len);

std::string format_g_trace(std::span<const int> trace);
GTrace parse_g_trace(const std::string& text);

}  // namespace simt
