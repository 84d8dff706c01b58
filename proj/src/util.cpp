#include "levybt/util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>
#include <vector>

namespace levybt {

std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void atomic_write_file(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path());
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open for writing: " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw std::runtime_error("write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, target);
}

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_stream_seed(std::uint64_t base_seed, std::uint64_t stream_index) {
    std::uint64_t state = base_seed;
    std::uint64_t mixed = splitmix64(state);
    state = mixed ^ (stream_index * 0xda942042e4dd58b5ULL + 0x2545f4914f6cdd1dULL);
    return splitmix64(state);
}

void parallel_for(std::size_t count, int n_threads, const std::function<void(std::size_t)>& body) {
    if (count == 0) {
        return;
    }
    if (n_threads < 1) {
        n_threads = 1;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(n_threads), count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < count; i += workers) {
                body(i);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

}  // namespace levybt
