#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace sgflow {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// Chosen so that a draw is a pure function of (key, counter): parallel
// schedules and chunking cannot change the stream.
struct Philox4x32 {
    static constexpr uint32_t M0 = 0xD2511F53u;
    static constexpr uint32_t M1 = 0xCD9E8D57u;
    static constexpr uint32_t W0 = 0x9E3779B9u;
    static constexpr uint32_t W1 = 0xBB67AE85u;

    static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr,
                                         std::array<uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = uint64_t(M0) * ctr[0];
            const uint64_t p1 = uint64_t(M1) * ctr[2];
            const uint32_t hi0 = uint32_t(p0 >> 32), lo0 = uint32_t(p0);
            const uint32_t hi1 = uint32_t(p1 >> 32), lo1 = uint32_t(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }
};

// One logical stream = (seed, stream id); draws consume a 64-bit counter.
class Rng {
  public:
    Rng() : Rng(0, 0) {}
    Rng(uint64_t seed, uint64_t stream)
        : key_{uint32_t(seed), uint32_t(seed >> 32)},
          hi_{uint32_t(stream), uint32_t(stream >> 32)} {}

    uint32_t next_u32() {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }

    uint64_t next_u64() {
        const uint64_t lo = next_u32();
        const uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // uniform in [0,1) with 53 random bits
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    void refill() {
        buf_ = Philox4x32::block({uint32_t(ctr_), uint32_t(ctr_ >> 32), hi_[0], hi_[1]}, key_);
        ++ctr_;
        pos_ = 0;
    }

    std::array<uint32_t, 2> key_;
    std::array<uint32_t, 2> hi_;
    uint64_t ctr_ = 0;
    std::array<uint32_t, 4> buf_{};
    int pos_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stable stream ids for (trajectory, scale-knot, purpose) triples.
inline uint64_t stream_id(uint64_t trajectory, uint64_t knot, uint64_t purpose = 0) {
    return (purpose << 48) ^ (knot << 32) ^ trajectory;
}

} // namespace sgflow
