#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kforge {

std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`. Creates parent directories.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Seeded generator with platform-independent derived draws.
///
/// The standard distributions are implementation-defined, so uniform draws and
/// shuffles are computed here directly from the 64-bit engine output. Keyed
/// construction gives each (seed, key) its own independent stream, which keeps
/// per-item randomness stable regardless of processing order.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    static Rng keyed(std::uint64_t seed, std::string_view key);

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// thrown by any task is rethrown after all threads finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(jobs, n); ++t) {
            pool.emplace_back([&] {
                for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                        next = n;
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view data) noexcept;

}  // namespace kforge
