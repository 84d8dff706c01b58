#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

namespace levybt {

/// Formats a double with 17 significant digits so that every value written
/// to disk parses back to the identical bit pattern.
std::string format_g17(double x);

/// Writes content to a temp file in the target directory, then renames it
/// over path. Partial files are never visible under the final name.
void atomic_write_file(const std::string& path, const std::string& content);

std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for the RNG stream of one Monte Carlo path. Depends only on
/// (base_seed, stream_index), never on scheduling.
std::uint64_t derive_stream_seed(std::uint64_t base_seed, std::uint64_t stream_index);

/// Static-partition parallel loop over [0, count). Each index is processed
/// exactly once; bodies must write only to their own preallocated slots so
/// the thread count cannot change results.
void parallel_for(std::size_t count, int n_threads, const std::function<void(std::size_t)>& body);

}  // namespace levybt
