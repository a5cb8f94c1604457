#include <doctest.h>

#include "cfate/rle.hpp"
#include "cfate/rng.hpp"

using namespace cfate;

TEST_CASE("all-zero 2x3 mask encodes as [6]") {
    const Mask m(3, 2);  // W=3, H=2
    const RLEMask rle = rle_encode(m);
    CHECK(rle.h == 2);
    CHECK(rle.w == 3);
    CHECK(rle.counts == std::vector<int64_t>{6});
}

TEST_CASE("all-one 2x3 mask encodes as [0,6]") {
    const Mask m(3, 2, 1);
    const RLEMask rle = rle_encode(m);
    CHECK(rle.counts == std::vector<int64_t>{0, 6});
}

TEST_CASE("column-major order: single pixel at (x=1,y=0) of 2x2") {
    Mask m(2, 2);
    m.at(1, 0) = 1;
    // column-major index = x*H + y = 2; runs: 2 zeros, 1 one, 1 zero
    const RLEMask rle = rle_encode(m);
    CHECK(rle.counts == std::vector<int64_t>{2, 1, 1});
}

TEST_CASE("decode rejects counts that do not sum to H*W") {
    RLEMask rle;
    rle.h = 2;
    rle.w = 2;
    rle.counts = {3};
    CHECK_THROWS_AS(rle_decode(rle), format_error);
}

TEST_CASE("10k random masks round-trip exactly") {
    Rng rng(2718);
    for (int trial = 0; trial < 10000; ++trial) {
        const int w = 1 + static_cast<int>(rng.uniform_int(12));
        const int h = 1 + static_cast<int>(rng.uniform_int(12));
        Mask m(w, h);
        const double p = rng.uniform();
        for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
        const Mask back = rle_decode(rle_encode(m));
        REQUIRE(back.data == m.data);
    }
}

TEST_CASE("json serialization round-trips") {
    Mask m(4, 3);
    m.at(0, 1) = 1;
    m.at(2, 2) = 1;
    m.at(3, 0) = 1;
    const RLEMask rle = rle_encode(m);
    const RLEMask back = rle_from_json(rle_to_json(rle));
    CHECK(back.h == rle.h);
    CHECK(back.w == rle.w);
    CHECK(back.counts == rle.counts);
    CHECK(rle_decode(back).data == m.data);
}
