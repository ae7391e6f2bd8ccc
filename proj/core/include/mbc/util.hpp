#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mbc {

/// Canonical decimal form used for all numeric file output: 17 significant
/// digits, round-trips any IEEE-754 double losslessly.
std::string fmt_double(double v);

/// Fixed-point form for human-facing tables.
std::string fmt_fixed(double v, int decimals);

double parse_double(const std::string& s, const std::string& context);

std::vector<std::string> split_csv_line(const std::string& line);

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& content);

/// SHA-256 hex digest, used for input hashes in run manifests.
std::string sha256_hex(std::span<const unsigned char> data);
std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::filesystem::path& p);

/// SplitMix64; mixes a seed with salts so per-window fit randomness is
/// independent of event order.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t fnv1a64(const std::string& s);

double mean_of(std::span<const double> xs);
double stddev_of(std::span<const double> xs);  // population

}  // namespace mbc
