#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cfate/rng.hpp"
#include "cfate/vae.hpp"
#include "cfate/weights_io.hpp"

using namespace cfate;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / (std::string("cfate_test_") + name)).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("CFW1 save-load-save produces identical bytes") {
    Rng rng(21);
    std::vector<NamedTensor> tensors;
    for (int k = 0; k < 5; ++k) {
        Tensor t({2 + k, 3});
        for (auto& v : t.values) v = static_cast<float>(rng.normal());
        tensors.push_back({"tensor_" + std::to_string(k), std::move(t)});
    }
    const std::string p1 = temp_path("w1.cfw"), p2 = temp_path("w2.cfw");
    save_weights(p1, tensors);
    const auto loaded = load_weights(p1);
    REQUIRE(loaded.size() == tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) {
        CHECK(loaded[i].name == tensors[i].name);
        CHECK(loaded[i].tensor.shape == tensors[i].tensor.shape);
        CHECK(loaded[i].tensor.values == tensors[i].tensor.values);  // bit-exact
    }
    save_weights(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("truncated weight file raises a format error") {
    const std::string path = temp_path("trunc.cfw");
    {
        std::vector<NamedTensor> tensors = {{"w", Tensor({4, 4})}};
        save_weights(path, tensors);
    }
    const auto bytes = slurp(path);
    {
        std::ofstream os(path, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_weights(path), format_error);
    fs::remove(path);
}

TEST_CASE("bad magic and version are rejected") {
    const std::string path = temp_path("magic.cfw");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
        const uint16_t version = 1;
        os.write(reinterpret_cast<const char*>(&version), 2);
    }
    CHECK_THROWS_AS(load_weights(path), format_error);
    fs::remove(path);
}

TEST_CASE("vae params round-trip through named tensors") {
    Rng rng(33);
    const VaeSpec spec = make_vae_spec(8, 4, {4, 8}, {2, 1}, 4, true);
    const VaeParams params = init_vae<float>(spec, rng);
    const auto named = vae_to_named(spec, params);
    const VaeParams back = vae_from_named(spec, named);
    REQUIRE(back.enc.size() == params.enc.size());
    for (size_t i = 0; i < params.enc.size(); ++i) CHECK(back.enc[i].values == params.enc[i].values);
    for (size_t i = 0; i < params.dec_app.size(); ++i)
        CHECK(back.dec_app[i].values == params.dec_app[i].values);
    for (size_t i = 0; i < params.dec_mask.size(); ++i)
        CHECK(back.dec_mask[i].values == params.dec_mask[i].values);
}
