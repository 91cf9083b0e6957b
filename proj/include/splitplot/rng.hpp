#ifndef SPLITPLOT_RNG_HPP
#define SPLITPLOT_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace splitplot {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Hash of a seed and a path of integers; used to key independent substreams.
inline std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
    for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

// Counter-based generator: output k is mix64(key + (k+1) * golden).
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        ++counter_;
        return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
    }

    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

inline CounterRng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    return CounterRng(derive_key(seed, path));
}

}  // namespace splitplot

#endif
