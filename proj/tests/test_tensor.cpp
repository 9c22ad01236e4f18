#include "cpda/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

using namespace cpda;

namespace {

// Central-difference check of d(loss)/d(leaf) for every element of every leaf.
// make_loss must rebuild the graph from the leaves' current values.
void expect_grads_match_fd(const std::function<Tensor()>& make_loss, std::vector<Tensor> leaves,
                           double step = 1e-6, double tol = 1e-5) {
    for (Tensor& l : leaves) l.zero_grad();
    Tensor loss = make_loss();
    loss.backward();
    for (Tensor& leaf : leaves) {
        ASSERT_TRUE(leaf.has_grad());
        std::vector<double> analytic = leaf.grad();
        for (int64_t i = 0; i < leaf.numel(); ++i) {
            double saved = leaf.mutable_data()[static_cast<size_t>(i)];
            leaf.mutable_data()[static_cast<size_t>(i)] = saved + step;
            double up = make_loss().value();
            leaf.mutable_data()[static_cast<size_t>(i)] = saved - step;
            double dn = make_loss().value();
            leaf.mutable_data()[static_cast<size_t>(i)] = saved;
            double fd = (up - dn) / (2.0 * step);
            double a = analytic[static_cast<size_t>(i)];
            double denom = std::max({std::abs(a), std::abs(fd), 1.0});
            EXPECT_NEAR(a, fd, tol * denom) << "leaf element " << i;
        }
    }
}

Tensor rand_tensor(Shape shape, Rng& rng, bool rg = true) {
    Tensor t = Tensor::zeros(std::move(shape), rg);
    fill_uniform(t, rng, -1.0, 1.0);
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// forward values

TEST(Tensor, MatmulHandCase) {
    Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_vector({2, 1}, {0, 1});
    Tensor c = matmul(a, b);
    EXPECT_EQ(c.rows(), 2);
    EXPECT_EQ(c.cols(), 1);
    EXPECT_DOUBLE_EQ(c.at(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(c.at(1, 0), 4.0);
}

TEST(Tensor, SigmoidAtZeroIsHalf) {
    Tensor x = Tensor::from_vector({1}, {0.0});
    EXPECT_DOUBLE_EQ(sigmoid(x).at(0), 0.5);
}

TEST(Tensor, LogSigmoidStableInTails) {
    Tensor x = Tensor::from_vector({2}, {800.0, -800.0});
    Tensor y = log_sigmoid(x);
    EXPECT_NEAR(y.at(0), 0.0, 1e-12);
    EXPECT_NEAR(y.at(1), -800.0, 1e-9);
    EXPECT_TRUE(std::isfinite(y.at(0)));
    EXPECT_TRUE(std::isfinite(y.at(1)));
}

TEST(Tensor, MaxOverRowsTieBreaksToFirstRow) {
    Tensor x = Tensor::from_vector({3, 2}, {5.0, 1.0, 5.0, 3.0, 2.0, 3.0}, true);
    Tensor m = max_over_rows(x);
    EXPECT_DOUBLE_EQ(m.at(0), 5.0);
    EXPECT_DOUBLE_EQ(m.at(1), 3.0);
    sum(m).backward();
    // Column 0 ties rows 0/1 at 5, column 1 ties rows 1/2 at 3; first row wins.
    std::vector<double> expected = {1, 0, 0, 1, 0, 0};
    for (size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], expected[i]);
}

TEST(Tensor, ScatterGatherRoundTrip) {
    Tensor v = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor full = scatter_rows({3, 1}, v, -7.0, 4);
    EXPECT_DOUBLE_EQ(full.at(0, 0), -7.0);
    EXPECT_DOUBLE_EQ(full.at(1, 1), 5.0);
    EXPECT_DOUBLE_EQ(full.at(3, 2), 3.0);
    Tensor back = gather_rows(full, {3, 1});
    for (int64_t i = 0; i < v.numel(); ++i) EXPECT_DOUBLE_EQ(back.at(i), v.at(i));
}

TEST(Tensor, ScatterRejectsCollision) {
    Tensor v = Tensor::from_vector({2, 1}, {1, 2});
    EXPECT_THROW(scatter_rows({1, 1}, v, 0.0, 3), ContractError);
}

// ---------------------------------------------------------------------------
// masked softmax semantics

TEST(MaskedSoftmax, BlockedEntriesAreExactlyZero) {
    Tensor logits = Tensor::from_vector({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
    MaskMatrix mask(2, 3, true);
    mask.set(0, 1, false);
    mask.set(1, 0, false);
    mask.set(1, 2, false);
    Tensor y = masked_softmax(logits, mask);
    EXPECT_EQ(y.at(0, 1), 0.0);
    EXPECT_EQ(y.at(1, 0), 0.0);
    EXPECT_EQ(y.at(1, 2), 0.0);
    // Row 1 has a single allowed key, so it takes all the mass.
    EXPECT_DOUBLE_EQ(y.at(1, 1), 1.0);
    // Row 0 renormalizes over keys 0 and 2 only.
    double e0 = std::exp(1.0 - 3.0), e2 = std::exp(0.0);
    EXPECT_NEAR(y.at(0, 0), e0 / (e0 + e2), 1e-15);
    EXPECT_NEAR(y.at(0, 2), e2 / (e0 + e2), 1e-15);
    double row0 = y.at(0, 0) + y.at(0, 1) + y.at(0, 2);
    EXPECT_NEAR(row0, 1.0, 1e-15);
}

TEST(MaskedSoftmax, BlockedLogitValueIsIrrelevant) {
    MaskMatrix mask(1, 3, true);
    mask.set(0, 2, false);
    Tensor a = Tensor::from_vector({1, 3}, {0.3, -0.4, 1e300});
    Tensor b = Tensor::from_vector({1, 3}, {0.3, -0.4, -1e300});
    Tensor ya = masked_softmax(a, mask);
    Tensor yb = masked_softmax(b, mask);
    for (int j = 0; j < 3; ++j) EXPECT_EQ(ya.at(0, j), yb.at(0, j));
}

TEST(MaskedSoftmax, FullyMaskedRowThrows) {
    Tensor logits = Tensor::from_vector({2, 2}, {0, 0, 0, 0});
    MaskMatrix mask(2, 2, true);
    mask.set(1, 0, false);
    mask.set(1, 1, false);
    EXPECT_THROW(masked_softmax(logits, mask), ContractError);
}

TEST(MaskedSoftmax, BlockedEntriesGetZeroGradient) {
    Rng rng(7);
    Tensor logits = rand_tensor({3, 4}, rng);
    MaskMatrix mask(3, 4, true);
    mask.set(0, 3, false);
    mask.set(2, 0, false);
    mask.set(2, 1, false);
    Rng wrng(8);
    Tensor w = rand_tensor({3, 4}, wrng, false);
    sum(mul(masked_softmax(logits, mask), w)).backward();
    EXPECT_EQ(logits.grad()[0 * 4 + 3], 0.0);
    EXPECT_EQ(logits.grad()[2 * 4 + 0], 0.0);
    EXPECT_EQ(logits.grad()[2 * 4 + 1], 0.0);
}

// ---------------------------------------------------------------------------
// gradients vs finite differences

TEST(Grad, SumOfSquaresIsTwoW) {
    Tensor w = Tensor::from_vector({3}, {1.5, -2.0, 0.25}, true);
    sum(mul(w, w)).backward();
    EXPECT_DOUBLE_EQ(w.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(w.grad()[1], -4.0);
    EXPECT_DOUBLE_EQ(w.grad()[2], 0.5);
}

TEST(Grad, BackwardAccumulatesAcrossCalls) {
    Tensor w = Tensor::from_vector({2}, {1.0, 2.0}, true);
    sum(mul(w, w)).backward();
    sum(mul(w, w)).backward();
    EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(w.grad()[1], 8.0);
    w.zero_grad();
    sum(mul(w, w)).backward();
    EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
}

TEST(Grad, ElementwiseOpsMatchFiniteDifference) {
    Rng rng(11);
    Tensor a = rand_tensor({2, 3}, rng);
    Tensor b = rand_tensor({2, 3}, rng);
    // Keep b away from 0 so div stays well conditioned.
    for (double& x : b.mutable_data()) x += x >= 0.0 ? 1.5 : -1.5;
    expect_grads_match_fd(
        [&] {
            Tensor t = add(mul(a, b), sub(a, b));
            t = div(t, b);
            t = add(scale(t, 0.7), add_const(neg(a), 0.3));
            return sum(t);
        },
        {a, b});
}

TEST(Grad, NonlinearitiesMatchFiniteDifference) {
    Rng rng(12);
    Tensor a = rand_tensor({3, 3}, rng);
    expect_grads_match_fd([&] { return sum(sigmoid(a)); }, {a});
    expect_grads_match_fd([&] { return sum(log_sigmoid(a)); }, {a});
    expect_grads_match_fd([&] { return sum(gelu(a)); }, {a});
    expect_grads_match_fd([&] { return sum(cpda::exp(a)); }, {a});
    expect_grads_match_fd([&] { return sum(cpda::log(add_const(mul(a, a), 0.5))); }, {a});
    expect_grads_match_fd([&] { return sum(absval(add_const(a, 2.0))); }, {a});
}

TEST(Grad, MinMaxMatchFiniteDifference) {
    Rng rng(13);
    Tensor a = rand_tensor({4}, rng);
    Tensor b = rand_tensor({4}, rng);
    expect_grads_match_fd([&] { return sum(emax(a, b)); }, {a, b});
    expect_grads_match_fd([&] { return sum(emin(a, b)); }, {a, b});
}

TEST(Grad, MatmulChainMatchesFiniteDifference) {
    Rng rng(14);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 2}, rng);
    Tensor c = rand_tensor({3, 2}, rng);
    expect_grads_match_fd([&] { return sum(mul(matmul(a, b), c)); }, {a, b, c});
    expect_grads_match_fd([&] { return sum(matmul(transpose(b), transpose(a))); }, {a, b});
}

TEST(Grad, StructuralOpsMatchFiniteDifference) {
    Rng rng(15);
    Tensor a = rand_tensor({4, 3}, rng);
    Tensor b = rand_tensor({2, 3}, rng);
    Tensor row = rand_tensor({3}, rng);
    expect_grads_match_fd([&] { return sum(slice_cols(concat_rows({a, b}), 1, 2)); }, {a, b});
    expect_grads_match_fd([&] { return sum(mul(concat_cols({b, b}), concat_cols({b, b}))); }, {b});
    expect_grads_match_fd([&] { return sum(gather_rows(a, {2, 0, 2})); }, {a});
    expect_grads_match_fd([&] { return sum(mul(scatter_rows({1, 3}, b, 0.5, 5),
                                               scatter_rows({1, 3}, b, 0.5, 5))); },
                          {b});
    expect_grads_match_fd([&] { return sum(add_rowwise(a, row)); }, {a, row});
    expect_grads_match_fd([&] { return sum(mul(repeat_row(row, 4), a)); }, {row, a});
    expect_grads_match_fd([&] { return mean(reshape(a, {2, 6})); }, {a});
}

TEST(Grad, ReductionsMatchFiniteDifference) {
    Rng rng(16);
    Tensor a = rand_tensor({5, 3}, rng);
    expect_grads_match_fd([&] { return sum(mul(max_over_rows(a), max_over_rows(a))); }, {a});
    expect_grads_match_fd([&] { return mean(mul(a, a)); }, {a});
}

TEST(Grad, LayerNormMatchesFiniteDifference) {
    Rng rng(17);
    Tensor x = rand_tensor({4, 6}, rng);
    Tensor gain = rand_tensor({6}, rng);
    Tensor bias = rand_tensor({6}, rng);
    expect_grads_match_fd(
        [&] {
            Rng wrng(99);
            Tensor w = rand_tensor({4, 6}, wrng, false);
            return sum(mul(layernorm(x, gain, bias), w));
        },
        {x, gain, bias}, 1e-6, 1e-4);
}

TEST(Grad, MaskedSoftmaxMatchesFiniteDifference) {
    Rng rng(18);
    Tensor logits = rand_tensor({3, 5}, rng);
    MaskMatrix mask(3, 5, true);
    mask.set(0, 0, false);
    mask.set(1, 2, false);
    mask.set(1, 4, false);
    expect_grads_match_fd(
        [&] {
            Rng wrng(100);
            Tensor w = rand_tensor({3, 5}, wrng, false);
            return sum(mul(masked_softmax(logits, mask), w));
        },
        {logits});
}

TEST(Grad, ZeroIsAFixedPointOfZeroGrad) {
    Tensor w = Tensor::from_vector({2}, {3.0, -1.0}, true);
    sum(scale(w, 0.0)).backward();
    EXPECT_DOUBLE_EQ(w.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(w.grad()[1], 0.0);
}

TEST(Grad, ReusedNodeAccumulatesBothPaths) {
    Tensor w = Tensor::from_vector({1}, {3.0}, true);
    Tensor s = mul(w, w);          // w^2
    Tensor loss = sum(add(s, s));  // 2 w^2 -> d/dw = 4w = 12
    loss.backward();
    EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
}

TEST(Grad, NonFiniteLossIsRejected) {
    Tensor w = Tensor::from_vector({1}, {0.0}, true);
    Tensor loss = cpda::log(w);  // -inf
    EXPECT_THROW(loss.backward(), NumericalError);
}

// ---------------------------------------------------------------------------
// determinism and MAC counting

TEST(Tensor, SeededGraphIsBitIdentical) {
    auto run = [] {
        Rng rng(1234);
        Tensor a = rand_tensor({8, 8}, rng);
        Tensor b = rand_tensor({8, 8}, rng);
        Tensor g = Tensor::full({8}, 1.0, true);
        Tensor bs = Tensor::zeros({8}, true);
        Tensor loss = sum(sigmoid(layernorm(matmul(a, b), g, bs)));
        loss.backward();
        std::vector<double> out = {loss.value()};
        out.insert(out.end(), a.grad().begin(), a.grad().end());
        return out;
    };
    std::vector<double> r1 = run(), r2 = run();
    ASSERT_EQ(r1.size(), r2.size());
    for (size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i], r2[i]);
}

TEST(Macs, MatmulCountsMKN) {
    std::uint64_t n = 0;
    {
        macs::Scope scope(&n);
        Tensor a = Tensor::zeros({3, 5});
        Tensor b = Tensor::zeros({5, 7});
        matmul(a, b);
    }
    EXPECT_EQ(n, 3u * 5u * 7u);
    // Outside the scope nothing is counted.
    Tensor a = Tensor::zeros({3, 5});
    Tensor b = Tensor::zeros({5, 7});
    matmul(a, b);
    EXPECT_EQ(n, 3u * 5u * 7u);
}

TEST(Macs, ScopesNest) {
    std::uint64_t outer = 0, inner = 0;
    {
        macs::Scope so(&outer);
        matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
        {
            macs::Scope si(&inner);
            matmul(Tensor::zeros({3, 3}), Tensor::zeros({3, 3}));
        }
        matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
    }
    EXPECT_EQ(inner, 27u);
    EXPECT_EQ(outer, 16u);
}
