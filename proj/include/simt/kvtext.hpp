#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace simt {

/// Ordered key=value block. Serialized one pair per line, keys sorted, which
/// makes the text canonical and hashable.
using KeyValues = std::map<std::string, std::string>;

std::string to_kv_text(const KeyValues& kv);
KeyValues parse_kv_text(std::string_view text);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

/// Shortest decimal form that round-trips a double.
std::string format_real(double v);

/// Fixed-point with the given number of decimals (used in CSV cells).
std::string format_fixed(double v, int decimals);

void write_text_file(const std::string& path, std::string_view text);
std::string read_text_file(const std::string& path);

}  // namespace simt
