#include "seslr/replay_buffer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace seslr {

namespace {

// little-endian scalar io for the buffer file format

template <typename T>
void write_le(std::ostream& os, T v) {
    uint8_t buf[sizeof(T)];
    auto u = static_cast<std::make_unsigned_t<T>>(v);
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<uint8_t>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    uint8_t buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("ReplayBuffer: truncated buffer file");
    std::make_unsigned_t<T> u = 0;
    for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
    return static_cast<T>(u);
}

constexpr char kMagic[4] = {'S', 'L', 'R', 'B'};
constexpr uint32_t kVersion = 1;

void validate_sample(const BitPackedSample& s) {
    if (s.bit_count != numel(s.shape))
        throw std::invalid_argument("BitPackedSample: bit_count " + std::to_string(s.bit_count) +
                                    " does not match shape " + shape_str(s.shape));
    size_t want = (s.bit_count + 7) / 8;
    if (s.bits.size() != want)
        throw std::invalid_argument("BitPackedSample: payload has " + std::to_string(s.bits.size()) +
                                    " bytes, expected " + std::to_string(want));
    if (s.bit_count % 8 != 0 && !s.bits.empty()) {
        uint8_t pad_mask = static_cast<uint8_t>(0xFFu << (s.bit_count % 8));
        if (s.bits.back() & pad_mask)
            throw std::invalid_argument("BitPackedSample: trailing pad bits are not zero");
    }
}

}  // namespace

size_t BitPackedSample::header_bytes() const {
    // length prefix + label + rank + extents + bit count, as serialized
    return 8 + 4 + 4 + 8 * shape.size() + 8;
}

BitPackedSample pack_bits(const SpikeTensor& z, int label) {
    BitPackedSample s;
    s.shape = z.shape();
    s.bit_count = z.size();
    s.label = label;
    s.bits.assign((s.bit_count + 7) / 8, 0);
    for (size_t i = 0; i < s.bit_count; ++i)
        if (z.bit(i)) s.bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    return s;
}

SpikeTensor unpack_bits(const BitPackedSample& s) {
    return SpikeTensor::from_binary_unchecked(unpack_to_tensor(s));
}

Tensor unpack_to_tensor(const BitPackedSample& s) {
    validate_sample(s);
    Tensor t(s.shape);
    for (size_t i = 0; i < s.bit_count; ++i)
        t[i] = (s.bits[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
    return t;
}

ReplayBuffer::ReplayBuffer(size_t capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    entries_.reserve(capacity_);
}

bool ReplayBuffer::offer(const SpikeTensor& z, int label) {
    ++seen_;
    if (entries_.size() < capacity_) {
        entries_.push_back(pack_bits(z, label));
        return true;
    }
    // replace a random slot with probability capacity/seen: a uniform draw
    // over [0, seen) both decides acceptance and picks the victim
    size_t j = rng_.index(static_cast<size_t>(seen_));
    if (j < capacity_) {
        entries_[j] = pack_bits(z, label);
        return true;
    }
    return false;
}

ReplayBuffer::Batch ReplayBuffer::sample_batch(size_t n, Rng& rng) const {
    if (entries_.empty()) throw std::invalid_argument("ReplayBuffer::sample_batch: buffer is empty");
    if (n == 0) throw std::invalid_argument("ReplayBuffer::sample_batch: n must be positive");

    const Shape& sample_shape = entries_.front().shape;
    for (const auto& e : entries_)
        if (e.shape != sample_shape)
            throw std::runtime_error("ReplayBuffer::sample_batch: entries disagree in shape");

    std::vector<size_t> picks;
    picks.reserve(n);
    if (n <= entries_.size()) {
        // partial fisher-yates: uniform without replacement
        std::vector<size_t> idx(entries_.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        for (size_t i = 0; i < n; ++i) {
            size_t j = i + rng.index(idx.size() - i);
            std::swap(idx[i], idx[j]);
            picks.push_back(idx[i]);
        }
    } else {
        for (size_t i = 0; i < n; ++i) picks.push_back(rng.index(entries_.size()));
    }

    size_t steps = sample_shape.size() >= 2 ? sample_shape[0] : 1;
    size_t features = numel(sample_shape) / steps;

    Batch out;
    out.latents = Tensor({steps, n, features});
    out.labels.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const BitPackedSample& e = entries_[picks[i]];
        out.labels.push_back(e.label);
        for (size_t t = 0; t < steps; ++t)
            for (size_t d = 0; d < features; ++d) {
                size_t bit = t * features + d;
                double v = (e.bits[bit / 8] >> (bit % 8)) & 1u ? 1.0 : 0.0;
                out.latents[(t * n + i) * features + d] = v;
            }
    }
    return out;
}

size_t ReplayBuffer::payload_bytes() const {
    size_t total = 0;
    for (const auto& e : entries_) total += e.payload_bytes();
    return total;
}

size_t ReplayBuffer::header_bytes() const {
    size_t total = 0;
    for (const auto& e : entries_) total += e.header_bytes();
    return total;
}

void ReplayBuffer::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("ReplayBuffer::save: cannot open " + path.string());
    os.write(kMagic, 4);
    write_le<uint32_t>(os, kVersion);
    write_le<uint64_t>(os, capacity_);
    write_le<uint64_t>(os, seen_);
    write_le<uint32_t>(os, static_cast<uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        uint64_t body = 4 + 4 + 8 * static_cast<uint64_t>(e.shape.size()) + 8 + e.bits.size();
        write_le<uint64_t>(os, body);
        write_le<int32_t>(os, e.label);
        write_le<uint32_t>(os, static_cast<uint32_t>(e.shape.size()));
        for (size_t ext : e.shape) write_le<uint64_t>(os, ext);
        write_le<uint64_t>(os, e.bit_count);
        os.write(reinterpret_cast<const char*>(e.bits.data()), static_cast<std::streamsize>(e.bits.size()));
    }
    if (!os) throw std::runtime_error("ReplayBuffer::save: write failed for " + path.string());
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path, uint64_t seed) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ReplayBuffer::load: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("ReplayBuffer::load: bad magic in " + path.string());
    uint32_t version = read_le<uint32_t>(is);
    if (version != kVersion)
        throw std::runtime_error("ReplayBuffer::load: unsupported version " + std::to_string(version));
    uint64_t capacity = read_le<uint64_t>(is);
    uint64_t seen = read_le<uint64_t>(is);
    uint32_t count = read_le<uint32_t>(is);

    ReplayBuffer buf(static_cast<size_t>(capacity), seed);
    buf.seen_ = seen;
    for (uint32_t i = 0; i < count; ++i) {
        uint64_t body = read_le<uint64_t>(is);
        BitPackedSample e;
        e.label = read_le<int32_t>(is);
        uint32_t rank = read_le<uint32_t>(is);
        e.shape.resize(rank);
        for (uint32_t r = 0; r < rank; ++r) e.shape[r] = static_cast<size_t>(read_le<uint64_t>(is));
        e.bit_count = static_cast<size_t>(read_le<uint64_t>(is));
        uint64_t payload = body - (4 + 4 + 8 * static_cast<uint64_t>(rank) + 8);
        e.bits.resize(static_cast<size_t>(payload));
        is.read(reinterpret_cast<char*>(e.bits.data()), static_cast<std::streamsize>(payload));
        if (!is) throw std::runtime_error("ReplayBuffer::load: truncated entry in " + path.string());
        validate_sample(e);
        buf.entries_.push_back(std::move(e));
    }
    if (buf.entries_.size() > buf.capacity_)
        throw std::runtime_error("ReplayBuffer::load: entry count exceeds capacity");
    return buf;
}

double compression_ratio(const ReplayBuffer& buf, unsigned reference_precision_bits) {
    uint64_t bits = 0;
    for (const auto& e : buf.entries()) bits += e.bit_count;
    if (bits == 0) return static_cast<double>(reference_precision_bits);
    return static_cast<double>(bits * reference_precision_bits) / static_cast<double>(bits);
}

}  // namespace seslr
