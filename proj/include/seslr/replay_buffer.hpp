#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "seslr/rng.hpp"
#include "seslr/tensor.hpp"

namespace seslr {

/// One replay entry: spike bits packed 8 per byte, LSB-first within each
/// byte, trailing pad bits zero.
struct BitPackedSample {
    std::vector<uint8_t> bits;
    size_t bit_count = 0;
    Shape shape;
    int label = 0;

    size_t payload_bytes() const { return bits.size(); }
    /// Bytes of bookkeeping carried next to the payload (shape, label,
    /// bit count) as laid out in the buffer file format.
    size_t header_bytes() const;
};

BitPackedSample pack_bits(const SpikeTensor& z, int label = 0);
SpikeTensor unpack_bits(const BitPackedSample& s);
Tensor unpack_to_tensor(const BitPackedSample& s);

/// Fixed-capacity reservoir of bit-packed latents with uniform-over-stream
/// retention (each offered item replaces a random slot with probability
/// capacity/seen once the buffer is full).
class ReplayBuffer {
public:
    ReplayBuffer(size_t capacity, uint64_t seed);

    /// Offers one latent to the reservoir; returns whether it was kept.
    bool offer(const SpikeTensor& z, int label);

    struct Batch {
        Tensor latents;  ///< (time, n, features), values 0.0/1.0
        std::vector<int> labels;
    };

    /// Draws n entries: without replacement when n <= size, else with
    /// replacement. Latents are unpacked to real values.
    Batch sample_batch(size_t n, Rng& rng) const;

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    size_t capacity() const { return capacity_; }
    uint64_t seen() const { return seen_; }
    const std::vector<BitPackedSample>& entries() const { return entries_; }

    /// Sum of packed payload bytes over all entries (headers excluded).
    size_t payload_bytes() const;
    size_t header_bytes() const;

    /// Flat binary file: header (magic "SLRB", version, K, seen, entry
    /// count) followed by length-prefixed entries. Layout documented in
    /// the README.
    void save(const std::filesystem::path& path) const;
    static ReplayBuffer load(const std::filesystem::path& path, uint64_t seed);

private:
    size_t capacity_;
    uint64_t seen_ = 0;
    std::vector<BitPackedSample> entries_;
    Rng rng_;
};

/// Payload compression ratio of 1-bit storage against the same elements at
/// reference_precision_bits (32-bit floats by default): exactly 32:1.
double compression_ratio(const ReplayBuffer& buf, unsigned reference_precision_bits = 32);

}  // namespace seslr
