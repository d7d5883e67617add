#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace grasp {

// Locale-free shortest round-trip formatting (std::to_chars). Infinities
// print as "inf"/"-inf".
std::string fmt_real(double v);
std::string fmt_int(long long v);

// Locale-free parse of a full token; throws ParseError on trailing garbage.
// Accepts "inf"/"-inf"/"nan".
double parse_real(const std::string& tok);
long long parse_int(const std::string& tok);

std::vector<std::string> split_ws(const std::string& line);

// Writes content to path via a sibling temp file plus rename, so readers
// never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// FNV-1a 64 over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t hash_file(const std::string& path);

}  // namespace grasp
