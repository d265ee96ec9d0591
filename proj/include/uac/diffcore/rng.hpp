#pragma once

#include <cstdint>
#include <string_view>

namespace uac::diffcore {

// Counter-based pseudo-random stream. Draw k of a stream is a pure function of
// (seed, stream id, k), so copying a stream replays the same draws. Only
// integer arithmetic and IEEE operations are used, which keeps draws identical
// across platforms.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0, std::uint64_t counter = 0)
        : seed_(seed), stream_(stream_id), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    // Standard normal via Box-Muller; consumes two counter values.
    double normal();
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    // Independent child stream; same parent identity and name give the same child.
    RngStream fork(std::string_view name) const;
    RngStream fork(std::uint64_t index) const;

    friend bool operator==(const RngStream&, const RngStream&) = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

}  // namespace uac::diffcore
