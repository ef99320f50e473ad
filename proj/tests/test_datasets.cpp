#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "seslr/datasets.hpp"

using namespace seslr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "seslr_dataset_test";
    fs::create_directories(dir);
    return dir;
}

void write_be_u32(std::ofstream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<char*>(b), 4);
}

// two 2x3 images with known pixels plus matching labels
void write_idx_fixture(const fs::path& images, const fs::path& labels, bool truncate_images = false,
                       bool bad_magic = false, uint32_t label_count = 2) {
    std::ofstream img(images, std::ios::binary);
    write_be_u32(img, bad_magic ? 0x00000802u : 0x00000803u);
    write_be_u32(img, 2);
    write_be_u32(img, 2);
    write_be_u32(img, 3);
    unsigned char px[12] = {0, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60};
    img.write(reinterpret_cast<char*>(px), truncate_images ? 7 : 12);
    img.close();

    std::ofstream lbl(labels, std::ios::binary);
    write_be_u32(lbl, 0x00000801u);
    write_be_u32(lbl, label_count);
    unsigned char raw[2] = {1, 0};
    lbl.write(reinterpret_cast<char*>(raw), label_count);
}

}  // namespace

TEST_CASE("idx fixtures roundtrip exact pixel values") {
    auto dir = temp_dir();
    write_idx_fixture(dir / "imgs", dir / "lbls");
    LabeledDataset ds = load_idx(dir / "imgs", dir / "lbls");
    REQUIRE(ds.size() == 2);
    CHECK(ds.class_count == 2);
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.samples[0].shape() == Shape{1, 2, 3});
    CHECK(ds.samples[0][0] == 0.0);
    CHECK(ds.samples[0][1] == doctest::Approx(51.0 / 255.0));
    CHECK(ds.samples[0][5] == 1.0);
    CHECK(ds.samples[1][0] == doctest::Approx(10.0 / 255.0));
}

TEST_CASE("idx loader rejects damaged inputs with distinct diagnostics") {
    auto dir = temp_dir();
    SUBCASE("bad magic") {
        write_idx_fixture(dir / "i1", dir / "l1", false, true);
        CHECK_THROWS_WITH_AS(load_idx(dir / "i1", dir / "l1"),
                             doctest::Contains("bad image magic"), std::runtime_error);
    }
    SUBCASE("truncated image data") {
        write_idx_fixture(dir / "i2", dir / "l2", true);
        CHECK_THROWS_WITH_AS(load_idx(dir / "i2", dir / "l2"),
                             doctest::Contains("truncated image data"), std::runtime_error);
    }
    SUBCASE("count mismatch") {
        write_idx_fixture(dir / "i3", dir / "l3", false, false, 1);
        CHECK_THROWS_WITH_AS(load_idx(dir / "i3", dir / "l3"),
                             doctest::Contains("!= label count"), std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx(dir / "nope", dir / "l1"), std::runtime_error);
    }
}

TEST_CASE("full mnist loads when a data directory is provided") {
    const char* dir = std::getenv("SESLR_MNIST_DIR");
    if (!dir) return;  // optional: runs only against real idx files
    LabeledDataset train = load_idx(std::string(dir) + "/train-images-idx3-ubyte",
                                    std::string(dir) + "/train-labels-idx1-ubyte");
    CHECK(train.size() == 60000);
    CHECK(train.class_count == 10);
    LabeledDataset test = load_idx(std::string(dir) + "/t10k-images-idx3-ubyte",
                                   std::string(dir) + "/t10k-labels-idx1-ubyte");
    CHECK(test.size() == 10000);
}

TEST_CASE("synthetic datasets have the requested composition") {
    LabeledDataset ds = make_synthetic(2, 10, {1, 8, 8}, 7);
    CHECK(ds.size() == 20);
    CHECK(ds.class_count == 2);
    CHECK(ds.per_class[0].size() == 10);
    CHECK(ds.per_class[1].size() == 10);
    for (const auto& s : ds.samples) {
        CHECK(s.shape() == Shape{1, 8, 8});
        for (double v : s.vec()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("the same seed regenerates the same synthetic data") {
    LabeledDataset a = make_synthetic(3, 5, {1, 6, 6}, 99);
    LabeledDataset b = make_synthetic(3, 5, {1, 6, 6}, 99);
    LabeledDataset c = make_synthetic(3, 5, {1, 6, 6}, 100);
    REQUIRE(a.size() == b.size());
    bool any_diff_c = false;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].vec() == b.samples[i].vec());
        if (a.samples[i].vec() != c.samples[i].vec()) any_diff_c = true;
    }
    CHECK(any_diff_c);
}

TEST_CASE("per-class subsets and the pretraining fraction") {
    LabeledDataset ds = make_synthetic(4, 100, {1, 4, 4}, 3);
    LabeledDataset sub = subset_per_class(ds, 30, 1);
    CHECK(sub.size() == 120);
    for (const auto& c : sub.per_class) CHECK(c.size() == 30);

    LabeledDataset half = pretrain_subset(ds, 0.5, 2);
    CHECK(half.size() == 200);
    for (const auto& c : half.per_class) CHECK(c.size() == 50);  // 100 per class -> 50

    CHECK_THROWS_AS(pretrain_subset(ds, 0.0, 2), std::invalid_argument);
}

TEST_CASE("class-incremental splits order tasks and keep batches pure") {
    LabeledDataset ds = make_synthetic(10, 12, {1, 4, 4}, 5);
    TaskStream stream = split_class_incremental(ds, 2, 5, 17);
    CHECK(stream.task_classes.size() == 5);  // two new classes per task
    CHECK(stream.last_task_classes() == std::vector<int>{8, 9});
    CHECK(stream.total_samples == ds.size());

    size_t counted = 0;
    for (const auto& mb : stream.batches) {
        CHECK(mb.labels.size() >= 1);
        CHECK(mb.labels.size() <= 5);
        const auto& classes = stream.task_classes[mb.task_id];
        for (int y : mb.labels)
            CHECK(std::find(classes.begin(), classes.end(), y) != classes.end());
        counted += mb.labels.size();
    }
    CHECK(counted == ds.size());

    // tasks appear in order
    size_t last_task = 0;
    for (const auto& mb : stream.batches) {
        CHECK(mb.task_id >= last_task);
        last_task = mb.task_id;
    }
}

TEST_CASE("degenerate split and ceiling batch division") {
    LabeledDataset two = make_synthetic(2, 50, {1, 4, 4}, 9);
    TaskStream joint_order = split_class_incremental(two, 2, 16, 3);
    CHECK(joint_order.task_classes.size() == 1);  // one task = joint ordering
    CHECK(joint_order.batches.size() == 7);       // 100 samples / 16 -> 7 batches
    CHECK(joint_order.batches.back().labels.size() == 4);

    LabeledDataset odd = make_synthetic(3, 4, {1, 4, 4}, 9);
    CHECK_THROWS_AS(split_class_incremental(odd, 2, 4, 3), std::invalid_argument);
}

TEST_CASE("temporal replication repeats the frame") {
    Tensor img({1, 2, 2}, {1, 2, 3, 4});
    Tensor one = replicate_temporal(img, 1);
    CHECK(one.shape() == Shape{1, 1, 2, 2});
    CHECK(one.vec() == img.vec());

    Tensor four = replicate_temporal(img, 4);
    CHECK(four.shape() == Shape{4, 1, 2, 2});
    for (size_t t = 0; t < 4; ++t)
        for (size_t i = 0; i < 4; ++i) CHECK(four[t * 4 + i] == img[i]);

    MiniBatch mb;
    mb.inputs = Tensor({3, 1, 28, 28}, 0.5);
    Tensor enc = encode_batch(mb, 4, false);
    CHECK(enc.shape() == Shape{4, 3, 1, 28, 28});
}

TEST_CASE("pre-encoded batches transpose sample-major frames to time-major") {
    MiniBatch mb;
    mb.inputs = Tensor({2, 3, 1, 1, 1}, {0, 1, 2, 10, 11, 12});  // (N=2, T=3, ...)
    Tensor enc = encode_batch(mb, 3, true);
    CHECK(enc.shape() == Shape{3, 2, 1, 1, 1});
    CHECK(enc[0] == 0.0);
    CHECK(enc[1] == 10.0);
    CHECK(enc[2] == 1.0);
    CHECK(enc[5] == 12.0);
}

TEST_CASE("event integration balances segment counts and conserves events") {
    EventList ev;
    ev.width = 4;
    ev.height = 4;
    SUBCASE("one event per segment") {
        for (int i = 0; i < 16; ++i) ev.events.push_back({static_cast<double>(i), i % 4, i / 4, i % 2});
        Tensor frames = integrate_events(ev, 16, 4, 4);
        CHECK(frames.shape() == Shape{16, 2, 4, 4});
        for (size_t s = 0; s < 16; ++s) {
            double count = 0.0;
            for (size_t i = 0; i < 32; ++i) count += frames[s * 32 + i];
            CHECK(count == 1.0);
        }
    }
    SUBCASE("near-equal counts, difference at most one") {
        for (int i = 0; i < 17; ++i) ev.events.push_back({static_cast<double>(i), 0, 0, 0});
        Tensor frames = integrate_events(ev, 16, 4, 4);
        double mn = 1e9, mx = -1e9;
        for (size_t s = 0; s < 16; ++s) {
            double count = 0.0;
            for (size_t i = 0; i < 32; ++i) count += frames[s * 32 + i];
            mn = std::min(mn, count);
            mx = std::max(mx, count);
        }
        CHECK(mx - mn <= 1.0);
    }
    SUBCASE("random streams conserve the event count") {
        Rng rng(31);
        for (int i = 0; i < 1000; ++i)
            ev.events.push_back({rng.uniform(0.0, 50.0), static_cast<int>(rng.index(4)),
                                 static_cast<int>(rng.index(4)), static_cast<int>(rng.index(2))});
        Tensor frames = integrate_events(ev, 16, 4, 4);
        double total = 0.0;
        for (double v : frames.vec()) total += v;
        CHECK(total == 1000.0);
    }
    SUBCASE("bad inputs are rejected") {
        CHECK_THROWS_AS(integrate_events(ev, 4, 4, 4), std::invalid_argument);  // empty
        ev.events.push_back({0.0, 9, 0, 0});
        CHECK_THROWS_AS(integrate_events(ev, 4, 4, 4), std::invalid_argument);  // x out of range
        ev.events[0] = {0.0, 0, 0, 2};
        CHECK_THROWS_AS(integrate_events(ev, 4, 4, 4), std::invalid_argument);  // polarity
    }
}

TEST_CASE("equal timestamps keep input order when partitioning") {
    EventList ev;
    ev.width = 4;
    ev.height = 1;
    // same timestamp everywhere: segment membership must follow input order
    for (int i = 0; i < 4; ++i) ev.events.push_back({1.0, i, 0, 0});
    Tensor frames = integrate_events(ev, 2, 1, 4);
    // first two events land in segment 0
    CHECK(frames[0] == 1.0);  // (s0, p0, y0, x0)
    CHECK(frames[1] == 1.0);  // x1
    CHECK(frames[2] == 0.0);
    CHECK(frames[8 + 2] == 1.0);  // segment 1 holds x2
    CHECK(frames[8 + 3] == 1.0);
}

TEST_CASE("event csv fixtures load") {
    auto dir = temp_dir();
    {
        std::ofstream os(dir / "events.csv");
        os << "# t,x,y,p\n";
        os << "0.5,1,2,1\n";
        os << "1.5,0,3,0\n";
    }
    EventList ev = load_events_csv(dir / "events.csv", 4, 4);
    REQUIRE(ev.events.size() == 2);
    CHECK(ev.events[0].t == 0.5);
    CHECK(ev.events[0].x == 1);
    CHECK(ev.events[1].polarity == 0);

    {
        std::ofstream os(dir / "bad.csv");
        os << "0.5;1;2;1\n";
    }
    CHECK_THROWS_AS(load_events_csv(dir / "bad.csv", 4, 4), std::runtime_error);
}
