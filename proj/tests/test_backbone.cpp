#include "doctest.h"

#include <random>
#include <set>

#include "core/backbone.hpp"
#include "core/conv.hpp"

using namespace nforge;

TEST_CASE("config construction and validation") {
    auto cfg = make_config(Variant::hrnet, 4, 2);
    REQUIRE(cfg.stages.size() == 4);
    for (size_t s = 0; s < 4; ++s) REQUIRE(cfg.stages[s].streams.size() == s + 1);
    CHECK(cfg.stages[3].streams[3].width == 32);  // 4 << 3

    auto serial = make_config(Variant::serial, 8, 2);
    for (size_t s = 0; s < 4; ++s) {
        REQUIRE(serial.stages[s].streams.size() == 1);
        CHECK(serial.stages[s].streams[0].width == (8 << s));
    }

    auto bad = cfg;
    bad.stages[2].streams[1].width = 7;  // inconsistent with base << level
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    auto bad2 = cfg;
    bad2.stages[3].streams.pop_back();
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    CHECK_THROWS_AS(variant_from_string("resnet"), std::invalid_argument);
    CHECK(variant_from_string(variant_to_string(Variant::pro_hrnet)) == Variant::pro_hrnet);
}

TEST_CASE("make_pro dilation placement, idempotence and RF growth") {
    auto h = make_config(Variant::hrnet, 2, 1);
    auto p = make_pro(h);
    CHECK(p.variant == Variant::pro_hrnet);
    CHECK(p.stages[0].streams[0].dilation == 1);
    CHECK(p.stages[1].streams[0].dilation == 1);
    CHECK(p.stages[2].streams[0].dilation == 2);
    CHECK(p.stages[3].streams[0].dilation == 2);
    CHECK(p.stages[3].streams[1].dilation == 1);  // only the top stream

    auto pp = make_pro(p);
    CHECK(pp.stages[2].streams[0].dilation == 2);
    CHECK(pp.variant == Variant::pro_hrnet);
    CHECK_THROWS_AS(make_pro(make_config(Variant::serial)), std::invalid_argument);

    // top-stream RF across the four stages' blocks: plain 3^3 chains give
    // 2n+1; dilating the last two stages doubles their per-layer growth
    std::vector<ConvSpec> plain, dilated;
    for (size_t s = 0; s < 4; ++s) {
        plain.push_back(ConvSpec::same(3, 1));
        dilated.push_back(ConvSpec::same(3, s >= 2 ? 2 : 1));
    }
    CHECK(effective_receptive_field(plain)[0] == 9);
    CHECK(effective_receptive_field(dilated)[0] == 13);
}

TEST_CASE("parameter-count parity hrnet vs pro_hrnet") {
    for (int64_t base : {2, 3, 4}) {
        for (int blocks : {1, 2}) {
            auto h = make_config(Variant::hrnet, base, blocks);
            auto p = make_pro(h);
            auto bh = Backbone::build(h, 7);
            auto bp = Backbone::build(p, 7);
            CHECK(bh.param_count() == bp.param_count());  // zero tolerance
            // name-by-name shape parity too
            auto ph = bh.params(), pp = bp.params();
            REQUIRE(ph.size() == pp.size());
            for (size_t i = 0; i < ph.size(); ++i) {
                CHECK(ph[i].name == pp[i].name);
                CHECK(ph[i].tensor.shape() == pp[i].tensor.shape());
            }
        }
    }
}

TEST_CASE("build determinism") {
    auto cfg = make_config(Variant::hrnet, 2, 1);
    auto a = Backbone::build(cfg, 42);
    auto b = Backbone::build(cfg, 42);
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK(pa[i].tensor.values() == pb[i].tensor.values());
    auto c = Backbone::build(cfg, 43);
    CHECK(c.params()[0].tensor.values() != pa[0].tensor.values());
}

TEST_CASE("forward shapes and stride consistency") {
    std::mt19937_64 rng(3);
    Tensor x = Tensor::randn(Shape{1, 1, 16, 16, 16}, rng);
    for (Variant v : {Variant::serial, Variant::hrnet, Variant::pro_hrnet}) {
        auto cfg = v == Variant::pro_hrnet ? make_pro(make_config(Variant::hrnet, 2, 1))
                                           : make_config(v, 2, 1);
        auto net = Backbone::build(cfg, 11);
        auto pyr = net.forward(x, false);
        REQUIRE(pyr.levels.size() == 4);
        for (size_t r = 0; r < 4; ++r) {
            CHECK(pyr.strides[r] == (int64_t{1} << r));
            const auto& sh = pyr.levels[r].shape();
            CHECK(sh[1] == (2 << r));
            for (int axis = 2; axis < 5; ++axis) CHECK(sh[axis] * pyr.strides[r] == 16);
        }
    }
    // hrnet keeps the level-0 stream at input resolution (checked above via
    // stride 1); indivisible input rejected
    auto net = Backbone::build(make_config(Variant::hrnet, 2, 1), 11);
    CHECK_THROWS_AS(net.forward(Tensor(Shape{1, 1, 12, 12, 12}, 0.0), false),
                    std::invalid_argument);
    CHECK_THROWS_AS(net.forward(Tensor(Shape{1, 2, 16, 16, 16}, 0.0), false),
                    std::invalid_argument);
}

TEST_CASE("zero input with batchnorm disabled gives a zero pyramid") {
    auto cfg = make_config(Variant::hrnet, 2, 1);
    cfg.batchnorm = false;
    auto net = Backbone::build(cfg, 5);
    auto pyr = net.forward(Tensor(Shape{1, 1, 8, 8, 8}, 0.0), false);
    for (const auto& lv : pyr.levels)
        for (Scalar v : lv.values()) CHECK(v == 0.0);
}

TEST_CASE("forward determinism") {
    std::mt19937_64 rng(13);
    Tensor x = Tensor::randn(Shape{1, 1, 8, 8, 8}, rng);
    auto cfg = make_pro(make_config(Variant::hrnet, 2, 1));
    auto a = Backbone::build(cfg, 21);
    auto b = Backbone::build(cfg, 21);
    auto pa = a.forward(x, false), pb = b.forward(x, false);
    for (size_t r = 0; r < pa.levels.size(); ++r)
        CHECK(pa.levels[r].values() == pb.levels[r].values());
}

TEST_CASE("exchange_fuse matches a hand-composed oracle") {
    std::mt19937_64 rng(17);
    auto unit = ExchangeUnit::make({3, 5}, rng);
    Tensor x0 = Tensor::randn(Shape{1, 3, 8, 8, 8}, rng);
    Tensor x1 = Tensor::randn(Shape{1, 5, 4, 4, 4}, rng);
    auto fused = exchange_fuse(unit, {x0, x1});
    REQUIRE(fused.size() == 2);

    // compose the same primitives independently
    Tensor want0 = add(unit.paths[0][0].mix.forward(x0),
                       unit.paths[0][1].mix.forward(upsample_nearest(x1, 2)));
    Tensor down = x0;
    for (const auto& c : unit.paths[1][0].down) down = c.forward(down);
    Tensor want1 = add(down, unit.paths[1][1].mix.forward(x1));
    for (size_t i = 0; i < want0.values().size(); ++i)
        CHECK(std::abs(fused[0].values()[i] - want0.values()[i]) < 1e-10);
    for (size_t i = 0; i < want1.values().size(); ++i)
        CHECK(std::abs(fused[1].values()[i] - want1.values()[i]) < 1e-10);

    // zero low-res stream: high-res output depends only on the high-res input
    auto fused2 = exchange_fuse(unit, {x0, Tensor(Shape{1, 5, 4, 4, 4}, 0.0)});
    Tensor only_hi = unit.paths[0][0].mix.forward(x0);
    for (size_t i = 0; i < only_hi.values().size(); ++i)
        CHECK(std::abs(fused2[0].values()[i] - only_hi.values()[i]) < 1e-10);

    // single stream degenerates to its 1x1 conv
    auto solo = ExchangeUnit::make({3}, rng);
    auto f1 = exchange_fuse(solo, {x0});
    Tensor want = solo.paths[0][0].mix.forward(x0);
    CHECK(f1[0].values() == want.values());

    CHECK_THROWS_AS(unit.forward({x0}), std::invalid_argument);
    CHECK_THROWS_AS(unit.forward({x0, Tensor(Shape{2, 5, 4, 4, 4}, 0.0)}),
                    std::invalid_argument);
}

TEST_CASE("parameter naming follows the checkpoint convention") {
    auto net = Backbone::build(make_config(Variant::hrnet, 2, 1), 9);
    auto ps = net.params();
    bool saw_block = false, saw_exchange = false, saw_stem = false;
    for (const auto& p : ps) {
        if (p.name == "stage2.stream1.block0.conv.weight") saw_block = true;
        if (p.name.find("stage3.exchange.to0.from2") != std::string::npos) saw_exchange = true;
        if (p.name == "stem.conv.weight") saw_stem = true;
    }
    CHECK(saw_block);
    CHECK(saw_exchange);
    CHECK(saw_stem);
    // names are unique
    std::set<std::string> names;
    for (const auto& p : ps) names.insert(p.name);
    CHECK(names.size() == ps.size());
}
