#include <cstdlib>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/checkpoint.hpp"
#include "reachguard/dataset.hpp"
#include "reachguard/digest.hpp"

using namespace reachguard;

namespace {

Dataset sample_dataset(bool labeled) {
    std::vector<LabeledObservation> r;
    for (int i = 0; i < 3; ++i) {
        Observation o;
        o.width = 4;
        o.height = 2;
        o.pixels = {0.f, 0.125f, 0.25f, 0.5f, 1.f, 0.75f, 0.f, static_cast<float>(i) / 4};
        o.state = State{1.5 * i, 100.0 + i, 0.25 * i};
        o.env = EnvParams{static_cast<TimeOfDay>(i), static_cast<Cloud>(i % 2), static_cast<std::uint8_t>(i)};
        r.push_back({o, static_cast<std::uint8_t>(i % 2)});
    }
    return make_dataset(std::move(r), labeled);
}

std::uint32_t u32_at(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) {
        v = (v << 8) | static_cast<unsigned char>(s[off + b]);
    }
    return v;
}

}  // namespace

TEST_CASE("VFMD round trip and layout") {
    for (bool labeled : {true, false}) {
        const Dataset d = sample_dataset(labeled);
        std::stringstream s;
        write_dataset(s, d);
        const std::string bytes = s.str();
        // Header 4 + 4 + 4 + 2 + 2 + 1 + 1, per record 8 f32 pixels, 3 f32, 3 u8 [+ label].
        CHECK(bytes.size() == 18 + 3 * (32 + 12 + 3 + (labeled ? 1 : 0)));
        CHECK(bytes.substr(0, 4) == "VFMD");
        CHECK(u32_at(bytes, 4) == 1);
        CHECK(u32_at(bytes, 8) == 3);
        const Dataset back = read_dataset(s);
        REQUIRE(back.records.size() == 3);
        CHECK(back.labeled == labeled);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(back.records[i].obs.pixels == d.records[i].obs.pixels);
            CHECK(back.records[i].obs.state->py == d.records[i].obs.state->py);
            CHECK(*back.records[i].obs.env == *d.records[i].obs.env);
            CHECK(back.records[i].label == (labeled ? d.records[i].label : 0));
        }
    }
    std::stringstream bad("VFMX");
    CHECK_THROWS_AS(read_dataset(bad), FormatError);
}

TEST_CASE("VFMW round trip and layout") {
    Mlp net({{3, 2}, {2, 1}}, Activation::tanh);
    Rng rng(1);
    net.init_glorot(rng);
    net.round_to_float();
    std::stringstream s;
    write_checkpoint(s, to_checkpoint(net));
    const std::string bytes = s.str();
    CHECK(bytes.substr(0, 4) == "VFMW");
    CHECK(bytes.size() == 12 + 2 * 8 + 4 * net.param_count());
    const Checkpoint c = read_checkpoint(s);
    CHECK_FALSE(c.nrt.has_value());
    const Mlp back = to_mlp(c, Activation::tanh);
    CHECK(back.params() == net.params());

    std::string truncated = bytes.substr(0, bytes.size() - 2);
    std::stringstream t(truncated);
    CHECK_THROWS_AS(read_checkpoint(t), FormatError);
}

TEST_CASE("sha256") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("timestamps honour SOURCE_DATE_EPOCH") {
    const char* old = std::getenv("SOURCE_DATE_EPOCH");
    const std::string saved = old ? old : "";
    setenv("SOURCE_DATE_EPOCH", "0", 1);
    CHECK(build_timestamp() == "1970-01-01T00:00:00Z");
    setenv("SOURCE_DATE_EPOCH", "86461", 1);
    CHECK(build_timestamp() == "1970-01-02T00:01:01Z");
    if (old) {
        setenv("SOURCE_DATE_EPOCH", saved.c_str(), 1);
    } else {
        unsetenv("SOURCE_DATE_EPOCH");
    }
}
