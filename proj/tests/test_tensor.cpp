#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "seslr/tensor.hpp"

using namespace seslr;

TEST_CASE("tensor shape and element count agree") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.extent(1) == 3);
    CHECK(numel(t.shape()) == t.size());
    CHECK(Tensor({2, 0, 4}).size() == 0);  // zero-extent tensors hold no data
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("tensor reshape keeps data and checks counts") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r[4] == 5.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("finiteness invariant is enforced") {
    Tensor t({3}, {1.0, 2.0, 3.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.check_finite("test"), std::runtime_error);
}

TEST_CASE("spike tensors hold exactly zeros and ones") {
    CHECK(is_binary(Tensor({4}, {0, 1, 1, 0})));
    CHECK_FALSE(is_binary(Tensor({2}, {0.0, 0.5})));
    CHECK_NOTHROW(SpikeTensor::from_tensor(Tensor({2}, {1, 0})));
    CHECK_THROWS_WITH_AS(SpikeTensor::from_tensor(Tensor({2}, {1.0, 0.25})),
                         "SpikeTensor: element is not exactly 0 or 1", std::invalid_argument);
    SpikeTensor z = SpikeTensor::zeros({3, 2});
    CHECK(z.size() == 6);
    CHECK_FALSE(z.bit(0));
}
