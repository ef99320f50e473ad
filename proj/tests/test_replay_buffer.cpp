#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "seslr/replay_buffer.hpp"
#include "seslr/rng.hpp"

using namespace seslr;

namespace {

SpikeTensor bits_tensor(std::vector<double> v) {
    Shape s{v.size()};
    return SpikeTensor::from_tensor(Tensor(s, std::move(v)));
}

SpikeTensor random_bits(Rng& rng, const Shape& shape) {
    Tensor t(shape);
    for (double& x : t.vec()) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
    return SpikeTensor::from_tensor(std::move(t));
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("packing is lsb-first within each byte") {
    auto s = pack_bits(bits_tensor({1, 0, 1, 1, 0, 0, 0, 1}), 7);
    REQUIRE(s.bits.size() == 1);
    CHECK(s.bits[0] == 0b10001101);
    CHECK(s.bit_count == 8);
    CHECK(s.label == 7);
}

TEST_CASE("pad bits in the final byte stay zero") {
    auto s = pack_bits(bits_tensor({0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
    REQUIRE(s.bits.size() == 2);
    CHECK(s.bits[0] == 0);
    CHECK(s.bits[1] == 0);

    auto t = pack_bits(bits_tensor({1, 1, 1}));
    CHECK(t.bits.size() == 1);
    CHECK(t.bits[0] == 0b00000111);
}

TEST_CASE("roundtrip is the identity on a large random tensor") {
    Rng rng(99);
    SpikeTensor z = random_bits(rng, {8192});
    auto packed = pack_bits(z, 3);
    CHECK(packed.payload_bytes() == 1024);
    SpikeTensor back = unpack_bits(packed);
    REQUIRE(back.size() == z.size());
    for (size_t i = 0; i < z.size(); ++i) CHECK(back.bit(i) == z.bit(i));
}

TEST_CASE("roundtrip holds for every length up to 128 and random shapes") {
    Rng rng(5);
    for (size_t len = 0; len <= 128; ++len) {
        Tensor t(Shape{len});
        for (double& x : t.vec()) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
        auto z = SpikeTensor::from_tensor(t);
        auto back = unpack_bits(pack_bits(z));
        REQUIRE(back.size() == len);
        for (size_t i = 0; i < len; ++i) CHECK(back.bit(i) == z.bit(i));
    }
    for (int trial = 0; trial < 50; ++trial) {
        Shape shape{1 + rng.index(6), 1 + rng.index(9), 1 + rng.index(7)};
        SpikeTensor z = random_bits(rng, shape);
        SpikeTensor back = unpack_bits(pack_bits(z));
        CHECK(back.shape() == shape);
        for (size_t i = 0; i < z.size(); ++i) CHECK(back.bit(i) == z.bit(i));
    }
}

TEST_CASE("corrupt samples are rejected with a diagnostic") {
    auto s = pack_bits(bits_tensor({1, 0, 1}));
    SUBCASE("bit count vs shape") {
        s.bit_count = 2;
        CHECK_THROWS_AS(unpack_bits(s), std::invalid_argument);
    }
    SUBCASE("payload size") {
        s.bits.push_back(0);
        CHECK_THROWS_AS(unpack_bits(s), std::invalid_argument);
    }
    SUBCASE("nonzero pad bits") {
        s.bits[0] |= 0b1000'0000;
        CHECK_THROWS_AS(unpack_bits(s), std::invalid_argument);
    }
}

TEST_CASE("the first capacity offers are always kept") {
    ReplayBuffer buf(10, 1);
    for (int i = 0; i < 10; ++i) CHECK(buf.offer(bits_tensor({1, 0}), i));
    CHECK(buf.size() == 10);
    CHECK(buf.seen() == 10);
}

TEST_CASE("a full buffer accepts the i-th offer with probability K/i") {
    // 20th offer into a K=10 reservoir: acceptance rate 0.5
    int accepted = 0;
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        ReplayBuffer buf(10, 1000 + static_cast<uint64_t>(t));
        for (int i = 0; i < 19; ++i) buf.offer(bits_tensor({0}), i);
        if (buf.offer(bits_tensor({1}), 19)) ++accepted;
    }
    double rate = static_cast<double>(accepted) / trials;
    CHECK(rate == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("capacity never overflows and retention is uniform over the stream") {
    const size_t K = 20, N = 200;
    const int trials = 4000;
    std::vector<int> inclusion(N, 0);
    for (int t = 0; t < trials; ++t) {
        ReplayBuffer buf(K, 555 + static_cast<uint64_t>(t));
        for (size_t i = 0; i < N; ++i) {
            buf.offer(bits_tensor({1}), static_cast<int>(i));
            CHECK(buf.size() <= K);
        }
        CHECK(buf.size() == K);
        for (const auto& e : buf.entries()) ++inclusion[static_cast<size_t>(e.label)];
    }
    // each stream item should be present with probability K/N = 0.1
    for (size_t i : {size_t{0}, N / 2, N - 1}) {
        double p = static_cast<double>(inclusion[i]) / trials;
        CHECK(p == doctest::Approx(0.1).epsilon(0.15));
    }
}

TEST_CASE("identical seeds and offer sequences give identical buffers") {
    auto fill = [](uint64_t seed) {
        ReplayBuffer buf(8, seed);
        Rng data(42);
        for (int i = 0; i < 100; ++i) buf.offer(random_bits(data, {16}), i);
        return buf;
    };
    ReplayBuffer a = fill(7), b = fill(7), c = fill(8);
    REQUIRE(a.size() == b.size());
    bool differs_from_c = false;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.entries()[i].bits == b.entries()[i].bits);
        CHECK(a.entries()[i].label == b.entries()[i].label);
        if (a.entries()[i].label != c.entries()[i].label) differs_from_c = true;
    }
    CHECK(differs_from_c);
}

TEST_CASE("sampling a single-entry buffer returns that entry") {
    ReplayBuffer buf(4, 3);
    buf.offer(bits_tensor({1, 0, 1, 0}), 9);
    Rng rng(1);
    auto batch = buf.sample_batch(1, rng);
    CHECK(batch.labels == std::vector<int>{9});
    CHECK(batch.latents.shape() == Shape{1, 1, 4});
    CHECK(batch.latents[0] == 1.0);
    CHECK(batch.latents[1] == 0.0);
}

TEST_CASE("sampling the whole buffer is a permutation") {
    ReplayBuffer buf(6, 3);
    for (int i = 0; i < 6; ++i) buf.offer(bits_tensor({1}), i);
    Rng rng(4);
    auto batch = buf.sample_batch(6, rng);
    std::vector<int> sorted = batch.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("sampling without replacement is uniform") {
    ReplayBuffer buf(4, 3);
    for (int i = 0; i < 4; ++i) buf.offer(bits_tensor({1}), i);
    Rng rng(12);
    std::map<int, int> freq;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) ++freq[buf.sample_batch(1, rng).labels[0]];
    for (auto [label, count] : freq)
        CHECK(static_cast<double>(count) / draws == doctest::Approx(0.25).epsilon(0.08));
}

TEST_CASE("oversampling draws with replacement") {
    ReplayBuffer buf(2, 3);
    buf.offer(bits_tensor({1}), 0);
    buf.offer(bits_tensor({0}), 1);
    Rng rng(5);
    auto batch = buf.sample_batch(7, rng);
    CHECK(batch.labels.size() == 7);
    CHECK_THROWS_AS(ReplayBuffer(2, 3).sample_batch(1, rng), std::invalid_argument);
}

TEST_CASE("payload accounting and compression ratio") {
    ReplayBuffer buf(1024, 3);
    CHECK(buf.payload_bytes() == 0);  // empty buffer
    Rng rng(6);
    for (int i = 0; i < 16; ++i) buf.offer(random_bits(rng, {4, 2048}), i);
    CHECK(buf.payload_bytes() == 16 * 1024);  // 8192 bits -> 1024 bytes each
    CHECK(compression_ratio(buf, 32) == 32.0);
    CHECK(compression_ratio(buf, 8) == 8.0);
}

TEST_CASE("buffer files roundtrip byte-exactly") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "seslr_buffer_test";
    fs::create_directories(dir);
    fs::path p1 = dir / "a.slrb", p2 = dir / "b.slrb";

    ReplayBuffer buf(8, 77);
    Rng rng(9);
    for (int i = 0; i < 30; ++i) buf.offer(random_bits(rng, {4, 10}), i % 5);
    buf.save(p1);

    ReplayBuffer loaded = ReplayBuffer::load(p1, 77);
    CHECK(loaded.capacity() == buf.capacity());
    CHECK(loaded.seen() == buf.seen());
    REQUIRE(loaded.size() == buf.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        CHECK(loaded.entries()[i].bits == buf.entries()[i].bits);
        CHECK(loaded.entries()[i].shape == buf.entries()[i].shape);
        CHECK(loaded.entries()[i].label == buf.entries()[i].label);
    }
    loaded.save(p2);
    CHECK(file_bytes(p1) == file_bytes(p2));

    SUBCASE("bad magic is rejected") {
        std::ofstream os(dir / "bad.slrb", std::ios::binary);
        os << "NOPE";
        os.close();
        CHECK_THROWS_AS(ReplayBuffer::load(dir / "bad.slrb", 1), std::runtime_error);
    }
    SUBCASE("truncation is rejected") {
        auto bytes = file_bytes(p1);
        bytes.resize(bytes.size() / 2);
        std::ofstream os(dir / "trunc.slrb", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        os.close();
        CHECK_THROWS_AS(ReplayBuffer::load(dir / "trunc.slrb", 1), std::runtime_error);
    }
    fs::remove_all(dir);
}
