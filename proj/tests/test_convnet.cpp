#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sdt/convnet.hpp"
#include "sdt/oracles.hpp"
#include "sdt/rng.hpp"

using namespace sdt;

namespace {

ChannelStack random_stack(int c, int w, int h, Rng& rng) {
    ChannelStack s(c, w, h);
    for (double& v : s.data) v = rng.normal();
    return s;
}

HeatMap random_map(int w, int h, Rng& rng) {
    HeatMap m(w, h);
    for (double& v : m.values) v = rng.normal();
    return m;
}

double head_loss(const HeadNet& net, const ChannelStack& in, const HeatMap& target) {
    HeatMap out = head_forward(net, in);
    HeatMap d;
    return masked_squared_loss(out, target, nullptr, nullptr, d);
}

}  // namespace

TEST_CASE("conv_forward matches the naive quadruple-loop oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 8; ++trial) {
        const int in_ch = 1 + trial % 3;
        const int out_ch = 1 + (trial / 2) % 3;
        const int k = (trial % 2) ? 3 : 5;
        ConvLayer layer(out_ch, in_ch, k,
                        (trial % 2) ? Activation::relu : Activation::identity);
        layer.init_gaussian(rng, 0.5);
        for (double& b : layer.bias) b = rng.normal(0.0, 0.2);
        const ChannelStack in = random_stack(in_ch, 7 + trial, 6, rng);
        const ChannelStack fast = conv_forward(layer, in);
        const ChannelStack slow = oracles::naive_conv(layer, in);
        REQUIRE(fast.data.size() == slow.data.size());
        for (size_t i = 0; i < fast.data.size(); ++i)
            CHECK(fast.data[i] == doctest::Approx(slow.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("center-tap kernel is an identity, offset taps shift the input") {
    Rng rng(7);
    const ChannelStack in = random_stack(1, 6, 5, rng);

    ConvLayer center(1, 1, 3, Activation::identity);
    center.kernel(0, 0)[4] = 1.0;  // (ky=1, kx=1)
    const ChannelStack same = conv_forward(center, in);
    for (size_t i = 0; i < in.data.size(); ++i)
        CHECK(same.data[i] == doctest::Approx(in.data[i]).epsilon(1e-12));

    ConvLayer shift(1, 1, 3, Activation::identity);
    shift.kernel(0, 0)[5] = 1.0;  // (ky=1, kx=2) -> samples in(x+1, y)
    const ChannelStack moved = conv_forward(shift, in);
    CHECK(moved.at(0, 2, 2) == doctest::Approx(in.at(0, 3, 2)).epsilon(1e-12));
    CHECK(moved.at(0, 5, 1) == doctest::Approx(0.0));  // zero padding past the edge
}

TEST_CASE("head gradients match finite differences") {
    Rng rng(2024);
    HeadNet net = HeadNet::create(2, 3, rng, 0.1);
    const ChannelStack in = random_stack(2, 6, 6, rng);
    const HeatMap target = random_map(6, 6, rng);

    HeadCache cache;
    HeatMap out = head_forward(net, in, &cache);
    HeatMap d_out;
    masked_squared_loss(out, target, nullptr, nullptr, d_out);
    HeadGrads grads;
    grads.match(net);
    ChannelStack d_in;
    head_backward(net, cache, d_out, grads, &d_in);

    const double eps = 1e-6;
    auto fd_check = [&](double* param, double analytic) {
        const double saved = *param;
        *param = saved + eps;
        const double lp = head_loss(net, in, target);
        *param = saved - eps;
        const double lm = head_loss(net, in, target);
        *param = saved;
        const double fd = (lp - lm) / (2.0 * eps);
        if (std::abs(fd) > 1e-7 || std::abs(analytic) > 1e-7)
            CHECK(analytic == doctest::Approx(fd).epsilon(1e-4));
    };

    for (size_t i = 0; i < net.l1.weights.size(); i += 13)
        fd_check(&net.l1.weights[i], grads.g1.w[i]);
    for (size_t i = 0; i < net.l1.bias.size(); ++i) fd_check(&net.l1.bias[i], grads.g1.b[i]);
    for (size_t i = 0; i < net.l2.weights.size(); i += 7)
        fd_check(&net.l2.weights[i], grads.g2.w[i]);
    for (size_t i = 0; i < net.l2.bias.size(); ++i) fd_check(&net.l2.bias[i], grads.g2.b[i]);

    ChannelStack in_mut = in;
    for (size_t i = 0; i < in_mut.data.size(); i += 11) {
        const double saved = in_mut.data[i];
        in_mut.data[i] = saved + eps;
        const double lp = head_loss(net, in_mut, target);
        in_mut.data[i] = saved - eps;
        const double lm = head_loss(net, in_mut, target);
        in_mut.data[i] = saved;
        const double fd = (lp - lm) / (2.0 * eps);
        if (std::abs(fd) > 1e-7 || std::abs(d_in.data[i]) > 1e-7)
            CHECK(d_in.data[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("relu gates gradients where the pre-activation is non-positive") {
    ConvLayer layer(1, 1, 3, Activation::relu);  // weights and bias all zero
    ChannelStack in = ChannelStack(1, 4, 4, 1.0);
    PaddedInput pin;
    pin.assign(in, layer.pad);
    ChannelStack pre;
    const ChannelStack out = conv_forward(layer, pin, &pre);
    for (double v : out.data) CHECK(v == 0.0);

    ChannelStack d_out(1, 4, 4, 1.0);
    ConvGrads grads;
    grads.match(layer);
    conv_backward(layer, pin, pre, d_out, grads, nullptr);
    for (double g : grads.w) CHECK(g == 0.0);
    for (double g : grads.b) CHECK(g == 0.0);
}

TEST_CASE("weight decay shrinks kernels but not biases") {
    ConvLayer layer(1, 1, 3, Activation::identity);
    std::fill(layer.weights.begin(), layer.weights.end(), 2.0);
    layer.bias[0] = 1.5;
    ConvGrads zero;
    zero.match(layer);
    const double lr = 0.1, beta = 0.01;
    conv_apply_step(layer, zero, lr, beta);
    for (double w : layer.weights)
        CHECK(w == doctest::Approx(2.0 * (1.0 - 2.0 * lr * beta)).epsilon(1e-12));
    CHECK(layer.bias[0] == 1.5);
}

TEST_CASE("training reduces the fit error") {
    Rng rng(55);
    HeadNet net = HeadNet::create(3, 4, rng, 0.05);
    const ChannelStack in = random_stack(3, 12, 12, rng);
    const HeatMap target = gaussian_map(BoundingBox{6, 6, 4, 4}, 12, 12);

    const auto losses = train(net, in, target, TrainSpec{80, 1e-3, 0.0});
    REQUIRE(losses.size() == 80);
    for (double l : losses) CHECK(std::isfinite(l));
    CHECK(losses.back() < 0.2 * losses.front());
    CHECK(head_loss(net, in, target) < losses.back());
}

TEST_CASE("zero training iterations leave the net untouched") {
    Rng rng(9);
    HeadNet net = HeadNet::create(2, 2, rng, 0.1);
    const std::string before = head_weight_digest(net);
    const ChannelStack in = random_stack(2, 5, 5, rng);
    const HeatMap target = random_map(5, 5, rng);
    const auto losses = train(net, in, target, TrainSpec{0, 1e-3, 0.0});
    CHECK(losses.empty());
    CHECK(head_weight_digest(net) == before);
}

TEST_CASE("same seed gives identical nets before and after training") {
    auto build = [] {
        Rng rng(77);
        HeadNet net = HeadNet::create(2, 3, rng, 0.1);
        const ChannelStack in = random_stack(2, 8, 8, rng);
        const HeatMap target = gaussian_map(BoundingBox{4, 4, 3, 3}, 8, 8);
        train(net, in, target, TrainSpec{20, 1e-3, 1e-3});
        return net;
    };
    const HeadNet a = build();
    const HeadNet b = build();
    CHECK(a.l1.weights == b.l1.weights);
    CHECK(a.l2.weights == b.l2.weights);
    CHECK(a.l1.bias == b.l1.bias);
    CHECK(head_weight_digest(a) == head_weight_digest(b));
}

TEST_CASE("head nets serialize bitwise") {
    Rng rng(31);
    HeadNet net = HeadNet::create(3, 2, rng, 0.2);
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    save_head(net, buf);
    const HeadNet back = load_head(buf);
    CHECK(back.l1.weights == net.l1.weights);
    CHECK(back.l1.bias == net.l1.bias);
    CHECK(back.l2.weights == net.l2.weights);
    CHECK(back.l2.bias == net.l2.bias);
    CHECK(back.l1.act == Activation::relu);
    CHECK(back.l2.act == Activation::identity);
    CHECK(head_weight_digest(back) == head_weight_digest(net));

    const ChannelStack in = random_stack(3, 6, 6, rng);
    backward_and_step(net, in, random_map(6, 6, rng), 1e-3, 0.0);
    CHECK(head_weight_digest(net) != head_weight_digest(back));

    std::stringstream bad(std::ios::in | std::ios::out | std::ios::binary);
    bad << "NOPE";
    CHECK_THROWS_AS(load_head(bad), std::runtime_error);
}

TEST_CASE("inverted dropout zeroes a fraction and rescales the rest") {
    Rng rng(13);
    ChannelStack in(4, 10, 10, 1.0);
    const ChannelStack out = apply_dropout(in, 0.3, rng);
    int zeros = 0;
    for (double v : out.data) {
        if (v == 0.0) {
            ++zeros;
        } else {
            CHECK(v == doctest::Approx(1.0 / 0.7).epsilon(1e-12));
        }
    }
    const double frac = static_cast<double>(zeros) / out.data.size();
    CHECK(frac == doctest::Approx(0.3).epsilon(0.25));

    Rng rng2(13);
    const ChannelStack keep = apply_dropout(in, 0.0, rng2);
    CHECK(keep.data == in.data);
}

TEST_CASE("selector training needs an rng in train mode and marks itself trained") {
    Rng rng(21);
    SelectorNet net = SelectorNet::create(3, 0.3, rng, 0.1);
    const ChannelStack in = random_stack(3, 8, 8, rng);
    const HeatMap target = gaussian_map(BoundingBox{4, 4, 3, 3}, 8, 8);

    net.train_mode = true;
    CHECK_THROWS_AS(selector_forward(net, in), std::invalid_argument);
    net.train_mode = false;

    CHECK_FALSE(net.trained);
    HeatMap before = selector_forward(net, in);
    HeatMap d;
    const double loss_before = masked_squared_loss(before, target, nullptr, nullptr, d);
    train_selector(net, in, target, TrainSpec{60, 1e-3, 0.0}, rng);
    CHECK(net.trained);
    CHECK_FALSE(net.train_mode);
    HeatMap after = selector_forward(net, in);
    const double loss_after = masked_squared_loss(after, target, nullptr, nullptr, d);
    CHECK(loss_after < loss_before);
}

TEST_CASE("masked loss skips masked-out and truncated pixels") {
    HeatMap out(2, 2), target(2, 2);
    out.at(0, 0) = 1.0;
    out.at(1, 0) = 0.5;
    out.at(0, 1) = -0.2;
    HeatMap d;

    SUBCASE("full mask") {
        const double loss = masked_squared_loss(out, target, nullptr, nullptr, d);
        CHECK(loss == doctest::Approx(1.0 + 0.25 + 0.04).epsilon(1e-12));
        CHECK(d.at(0, 0) == doctest::Approx(2.0));
        CHECK(d.at(0, 1) == doctest::Approx(-0.4));
    }

    SUBCASE("zero mask removes loss and gradient") {
        const std::vector<double> mask = {0.0, 1.0, 0.0, 1.0};
        const double loss = masked_squared_loss(out, target, &mask, nullptr, d);
        CHECK(loss == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(d.at(0, 0) == 0.0);
        CHECK(d.at(1, 0) == doctest::Approx(1.0));
    }

    SUBCASE("truncation drops small residuals entirely") {
        TruncationSpec trunc;
        trunc.eps = 12.0;
        trunc.k = 20.0;
        trunc.mu = 30.0;  // threshold = 12/20 = 0.6 with phi = 0
        const double loss = masked_squared_loss(out, target, nullptr, &trunc, d);
        CHECK(loss == doctest::Approx(1.0).epsilon(1e-12));  // only the 1.0 residual survives
        CHECK(d.at(0, 0) == doctest::Approx(2.0));
        CHECK(d.at(1, 0) == 0.0);
        CHECK(d.at(0, 1) == 0.0);
    }

    SUBCASE("shape mismatch throws") {
        HeatMap wrong(3, 2);
        CHECK_THROWS_AS(masked_squared_loss(out, wrong, nullptr, nullptr, d), std::invalid_argument);
    }
}

TEST_CASE("truncation threshold follows eps over k plus mu phi") {
    TruncationSpec t;
    t.eps = 6.0;
    t.k = 2.0;
    t.mu = 4.0;
    CHECK(truncation_threshold(t, 0.0) == doctest::Approx(3.0));
    CHECK(truncation_threshold(t, 1.0) == doctest::Approx(1.0));
    CHECK(truncation_threshold(t, 0.5) == doctest::Approx(1.5));
}

TEST_CASE("diverging training throws instead of silently producing nan") {
    Rng rng(99);
    HeadNet net = HeadNet::create(2, 2, rng, 0.1);
    const double huge = 1e200;
    std::fill(net.l2.weights.begin(), net.l2.weights.end(), huge);
    std::fill(net.l1.weights.begin(), net.l1.weights.end(), huge);
    ChannelStack in(2, 5, 5, 1e10);
    const HeatMap target(5, 5);
    CHECK_THROWS_AS(train(net, in, target, TrainSpec{5, 1e-2, 0.0}), std::runtime_error);
}
