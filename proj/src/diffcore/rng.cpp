#include "uac/diffcore/rng.hpp"

#include <cmath>
#include <numbers>

namespace uac::diffcore {

std::uint64_t mix64(std::uint64_t x)
{
    // SplitMix64 finalizer.
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_name(std::string_view name)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t RngStream::next_u64()
{
    const std::uint64_t key = mix64(seed_) ^ mix64(stream_ * 0xd1b54a32d192ed03ULL + 1);
    return mix64(key + mix64(counter_++));
}

double RngStream::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal()
{
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n)
{
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

RngStream RngStream::fork(std::string_view name) const
{
    return RngStream(seed_, mix64(stream_ ^ hash_name(name)), 0);
}

RngStream RngStream::fork(std::uint64_t index) const
{
    return RngStream(seed_, mix64(stream_ + 0x632be59bd9b4e019ULL * (index + 1)), 0);
}

}  // namespace uac::diffcore
