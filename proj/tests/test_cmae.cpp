#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hetsurv/cmae.hpp"
#include "hetsurv/errors.hpp"
#include "test_util.hpp"

using namespace hetsurv;
using testutil::random_tensor;

namespace {

// Plain dense 3x3 same-padded convolution, the reference for the dense limit.
Tensor dense_conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const int h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = kernel.dim(3);
    Tensor y({h, w, cout});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int oc = 0; oc < cout; ++oc) {
                double acc = bias[oc];
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const int ni = i + di, nj = j + dj;
                        if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                        for (int ic = 0; ic < cin; ++ic) {
                            acc += x.at3(ni, nj, ic) *
                                   kernel[((static_cast<std::int64_t>(di + 1) * 3 + (dj + 1)) * cin + ic) * cout + oc];
                        }
                    }
                y.at3(i, j, oc) = acc;
            }
    return y;
}

Tensor perturb_masked(const Tensor& grid, const GridMask& mask, double delta, Rng& rng) {
    Tensor out = grid;
    const int c = grid.dim(2);
    for (std::size_t p = 0; p < mask.visible.size(); ++p) {
        if (mask.visible[p]) continue;
        for (int ch = 0; ch < c; ++ch) {
            out[static_cast<std::int64_t>(p) * c + ch] += (rng.uniform() < 0.5 ? -delta : delta);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("grid_from_embedding layouts and round trip") {
    Rng rng(1);
    Tensor emb = random_tensor({4, 3}, rng);
    FeatureGrid grid = grid_from_embedding(emb, GridLayout::PathologyGrid, 2, 2);
    CHECK(grid.h() == 2);
    CHECK(grid.w() == 2);
    // grid[i][j] = node row-major(i, j)
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int ch = 0; ch < 3; ++ch) CHECK(grid.data.at3(i, j, ch) == emb.at(i * 2 + j, ch));

    FeatureGrid seq = grid_from_embedding(random_tensor({5, 3}, rng), GridLayout::Sequence, 0, 0);
    CHECK(seq.h() == 1);
    CHECK(seq.w() == 5);

    // flatten -> grid -> flatten is the identity
    Tensor flat({4, 3}, grid.data.values());
    CHECK(flat == emb);

    CHECK_THROWS_AS(grid_from_embedding(emb, GridLayout::PathologyGrid, 3, 2), DimensionError);
}

TEST_CASE("mask_grid: ratio zero, forced visibility, concentration") {
    GridMask all = mask_grid(3, 3, 0.0, 7);
    CHECK(all.visible_count() == 9);

    GridMask single = mask_grid(1, 1, 0.99, 7);
    CHECK(single.visible_count() == 1);

    GridMask big = mask_grid(100, 100, 0.6, 123);
    const double visible_fraction = big.visible_count() / 10000.0;
    CHECK(std::fabs(visible_fraction - 0.4) <= 0.02);

    GridMask a = mask_grid(8, 8, 0.5, 42), b = mask_grid(8, 8, 0.5, 42);
    CHECK(a.visible == b.visible);
    CHECK_THROWS_AS(mask_grid(2, 2, 1.0, 1), ConfigError);
}

TEST_CASE("sparse_conv3x3: dense limit equals ordinary convolution") {
    Rng rng(2);
    const int h = 4, w = 5, cin = 3, cout = 2;
    Tensor x = random_tensor({h, w, cin}, rng);
    ag::Parameter kernel("k", random_tensor({3, 3, cin, cout}, rng));
    ag::Parameter bias("b", random_tensor({cout}, rng));
    GridMask dense = all_visible_mask(h, w);

    ag::Var y = ag::sparse_conv3x3(ag::constant(x), dense.visible, kernel.node(), bias.node());
    Tensor ref = dense_conv3x3(x, kernel.value(), bias.value());
    CHECK(max_abs_diff(y->value, ref) <= 1e-12);
}

TEST_CASE("sparse_conv3x3: single visible cell sees only the center tap") {
    Rng rng(3);
    const int h = 3, w = 3, cin = 2, cout = 2;
    Tensor x = random_tensor({h, w, cin}, rng);
    ag::Parameter kernel("k", random_tensor({3, 3, cin, cout}, rng));
    ag::Parameter bias("b", random_tensor({cout}, rng));
    GridMask mask;
    mask.visible.assign(9, 0);
    mask.visible[4] = 1;  // center cell (1,1)

    ag::Var y = ag::sparse_conv3x3(ag::constant(x), mask.visible, kernel.node(), bias.node());
    for (int oc = 0; oc < cout; ++oc) {
        double expected = bias.value()[oc];
        for (int ic = 0; ic < cin; ++ic) {
            // center tap is (di,dj) = (0,0) -> kernel index [1][1]
            expected += x.at3(1, 1, ic) * kernel.value()[((4 * cin) + ic) * static_cast<std::int64_t>(cout) + oc];
        }
        CHECK(y->value.at3(1, 1, oc) == doctest::Approx(expected).epsilon(1e-12));
    }
    for (int p = 0; p < 9; ++p) {
        if (p == 4) continue;
        for (int oc = 0; oc < cout; ++oc) CHECK(y->value[static_cast<std::int64_t>(p) * cout + oc] == 0.0);
    }
}

TEST_CASE("sparse convs never read masked inputs") {
    Rng rng(4);
    const int h = 5, w = 4, c = 3;
    Tensor x = random_tensor({h, w, c}, rng);
    GridMask mask = mask_grid(h, w, 0.5, 17);
    ag::Parameter kernel("k", random_tensor({3, 3, c, c}, rng));
    ag::Parameter dwk("dk", random_tensor({3, 3, c}, rng));
    ag::Parameter bias("b", random_tensor({c}, rng));

    Tensor xp = perturb_masked(x, mask, 1e3, rng);
    ag::Var y1 = ag::sparse_conv3x3(ag::constant(x), mask.visible, kernel.node(), bias.node());
    ag::Var y2 = ag::sparse_conv3x3(ag::constant(xp), mask.visible, kernel.node(), bias.node());
    CHECK(y1->value == y2->value);

    ag::Var d1 = ag::sparse_dwconv3x3(ag::constant(x), mask.visible, dwk.node(), bias.node());
    ag::Var d2 = ag::sparse_dwconv3x3(ag::constant(xp), mask.visible, dwk.node(), bias.node());
    CHECK(d1->value == d2->value);
}

TEST_CASE("sparse conv gradients match finite differences") {
    Rng rng(5);
    const int h = 3, w = 4, cin = 2, cout = 3;
    GridMask mask = mask_grid(h, w, 0.4, 23);
    ag::Parameter x("x", random_tensor({h, w, cin}, rng));
    ag::Parameter kernel("k", random_tensor({3, 3, cin, cout}, rng));
    ag::Parameter bias("b", random_tensor({cout}, rng));
    const double err = grad_check(
        [&]() {
            return ag::sum_all(ag::sparse_conv3x3(x.node(), mask.visible, kernel.node(), bias.node()));
        },
        {x, kernel, bias});
    CHECK(err <= 1e-5);

    ag::Parameter dwk("dk", random_tensor({3, 3, cin}, rng));
    ag::Parameter dwb("db", random_tensor({cin}, rng));
    const double err2 = grad_check(
        [&]() { return ag::sum_all(ag::sparse_dwconv3x3(x.node(), mask.visible, dwk.node(), dwb.node())); },
        {x, dwk, dwb});
    CHECK(err2 <= 1e-5);
}

TEST_CASE("grn_aggregate examples") {
    ag::Var zero = ag::grn_aggregate(ag::constant(Tensor({3, 2})));
    CHECK(zero->value == Tensor({2}));

    // 1x2 grid, single channel with values [3, 4] -> og = [5]
    ag::Var og = ag::grn_aggregate(ag::constant(Tensor({2, 1}, {3.0, 4.0})));
    CHECK(og->value[0] == doctest::Approx(5.0).epsilon(1e-12));

    Rng rng(6);
    Tensor rows = random_tensor({4, 3}, rng);
    Tensor scaled = rows;
    for (std::int64_t i = 0; i < scaled.size(); ++i) scaled[i] *= -2.5;
    ag::Var a = ag::grn_aggregate(ag::constant(rows));
    ag::Var b = ag::grn_aggregate(ag::constant(scaled));
    for (int j = 0; j < 3; ++j) CHECK(b->value[j] == doctest::Approx(2.5 * a->value[j]).epsilon(1e-12));
}

TEST_CASE("grn_normalize examples") {
    ag::Var uniform = ag::grn_normalize(ag::constant(Tensor({4}, 1.0)));
    for (int j = 0; j < 4; ++j) CHECK(uniform->value[j] == doctest::Approx(0.25).epsilon(1e-6));

    ag::Var pair = ag::grn_normalize(ag::constant(Tensor({2}, {3.0, 1.0})));
    CHECK(pair->value[0] == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(pair->value[1] == doctest::Approx(0.25).epsilon(1e-6));

    ag::Var zeros = ag::grn_normalize(ag::constant(Tensor({3})));
    for (int j = 0; j < 3; ++j) CHECK(zeros->value[j] == 0.0);

    // nonnegative, sums to <= 1
    Rng rng(7);
    Tensor og({5});
    for (int j = 0; j < 5; ++j) og[j] = std::fabs(rng.normal());
    ag::Var n = ag::grn_normalize(ag::constant(og));
    double sum = 0.0;
    for (int j = 0; j < 5; ++j) {
        CHECK(n->value[j] >= 0.0);
        sum += n->value[j];
    }
    CHECK(sum <= 1.0 + 1e-12);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("grn_calibrate: identity at gamma=beta=0, doubling at uniform channels") {
    Rng rng(8);
    Tensor rows = random_tensor({3, 4}, rng);
    ag::Parameter gamma0("g", Tensor({4}));
    ag::Parameter beta0("b", Tensor({4}));
    ag::Var n = ag::constant(Tensor({4}, 0.25));

    ag::Var ident = ag::grn_calibrate(ag::constant(rows), n, gamma0.node(), beta0.node(), false);
    CHECK(max_abs_diff(ident->value, rows) == 0.0);

    ag::Parameter gamma1("g1", Tensor({4}, 1.0));
    ag::Var doubled = ag::grn_calibrate(ag::constant(rows), n, gamma1.node(), beta0.node(), false);
    for (std::int64_t i = 0; i < rows.size(); ++i) {
        CHECK(doubled->value[i] == doctest::Approx(2.0 * rows[i]).epsilon(1e-12));
    }

    // literal form: plain x * n
    ag::Var literal = ag::grn_calibrate(ag::constant(rows), n, gamma1.node(), beta0.node(), true);
    for (std::int64_t i = 0; i < rows.size(); ++i) {
        CHECK(literal->value[i] == doctest::Approx(0.25 * rows[i]).epsilon(1e-12));
    }
}

TEST_CASE("grn gradient chain matches finite differences") {
    Rng rng(9);
    ag::Parameter rows("r", random_tensor({4, 3}, rng));
    ag::Parameter gamma("g", random_tensor({3}, rng, 0.5));
    ag::Parameter beta("b", random_tensor({3}, rng, 0.5));
    for (bool literal : {false, true}) {
        const double err = grad_check(
            [&]() {
                ag::Var og = ag::grn_aggregate(rows.node());
                ag::Var n = ag::grn_normalize(og);
                return ag::sum_all(ag::grn_calibrate(rows.node(), n, gamma.node(), beta.node(), literal));
            },
            {rows, gamma, beta});
        CHECK(err <= 1e-5);
    }
}

TEST_CASE("cmae block: zero contract weights make the block an identity on visible cells") {
    Rng rng(10);
    const int c = 4;
    CmaeBlock block("blk", c, rng);
    block.contract_w.value().fill(0.0);
    block.contract_b.value().fill(0.0);

    Tensor grid = random_tensor({3, 3, c}, rng);
    GridMask mask = mask_grid(3, 3, 0.4, 31);
    // zero masked cells first, matching the encoder contract
    for (std::size_t p = 0; p < mask.visible.size(); ++p) {
        if (mask.visible[p]) continue;
        for (int ch = 0; ch < c; ++ch) grid[static_cast<std::int64_t>(p) * c + ch] = 0.0;
    }
    ag::Var out = cmae_block_forward(block, ag::constant(grid), mask.visible, false);
    CHECK(max_abs_diff(out->value, grid) == 0.0);
}

TEST_CASE("cmae block: masked cells stay exactly zero") {
    Rng rng(11);
    const int c = 3;
    CmaeBlock block("blk", c, rng);
    GridMask mask = mask_grid(4, 4, 0.5, 37);
    Tensor grid = random_tensor({4, 4, c}, rng);
    for (std::size_t p = 0; p < mask.visible.size(); ++p) {
        if (mask.visible[p]) continue;
        for (int ch = 0; ch < c; ++ch) grid[static_cast<std::int64_t>(p) * c + ch] = 0.0;
    }
    ag::Var out = cmae_block_forward(block, ag::constant(grid), mask.visible, false);
    for (std::size_t p = 0; p < mask.visible.size(); ++p) {
        if (mask.visible[p]) continue;
        for (int ch = 0; ch < c; ++ch) CHECK(out->value[static_cast<std::int64_t>(p) * c + ch] == 0.0);
    }
}

TEST_CASE("cmae block: dense-limit equivalence with masked machinery removed") {
    Rng rng(12);
    const int c = 3;
    CmaeBlock block("blk", c, rng);
    Tensor grid = random_tensor({3, 4, c}, rng);
    GridMask dense = all_visible_mask(3, 4);
    ag::Var masked_path = cmae_block_forward(block, ag::constant(grid), dense.visible, false);

    // hand-rolled dense pass: same ops without any visibility plumbing
    ag::Var x = ag::constant(grid);
    ag::Var y = ag::sparse_dwconv3x3(x, dense.visible, block.dw_kernel.node(), block.dw_bias.node());
    ag::Var rows = ag::reshape(y, {12, c});
    rows = ag::layer_norm(rows, block.ln_gamma.node(), block.ln_beta.node());
    rows = ag::dense_forward(rows, block.expand_w.node(), block.expand_b.node());
    rows = ag::prelu(rows, block.slope.node());
    ag::Var og = ag::grn_aggregate(rows);
    rows = ag::grn_calibrate(rows, ag::grn_normalize(og), block.grn_gamma.node(), block.grn_beta.node(),
                             false);
    rows = ag::dense_forward(rows, block.contract_w.node(), block.contract_b.node());
    ag::Var ref = ag::add(x, ag::reshape(rows, {3, 4, c}));
    CHECK(max_abs_diff(masked_path->value, ref->value) <= 1e-12);
}

TEST_CASE("cmae_forward: shape contract, masked-token independence, dense limit") {
    Rng rng(13);
    const int c = 4;
    CMAEModel model("cm", c, 1, false, rng);
    CHECK(model.encoder_blocks() == 6);  // 1:1:3:1 ratio

    Tensor grid = random_tensor({4, 4, c}, rng);
    GridMask mask = mask_grid(4, 4, 0.5, 41);
    CmaeForwardResult out = model.forward(ag::constant(grid), mask);
    CHECK(out.reconstruction->value.shape() == grid.shape());
    CHECK(out.latent->value.shape() == grid.shape());

    // latent at visible cells ignores the mask token value
    CMAEModel copy = model;
    for (auto& p : copy.params()) {
        if (p.name() == "cm.mask_token") p.value().fill(123.0);
    }
    CmaeForwardResult out2 = copy.forward(ag::constant(grid), mask);
    CHECK(out.latent->value == out2.latent->value);

    // all-visible mask: loss is vacuously zero
    GridMask dense = all_visible_mask(4, 4);
    CmaeForwardResult d = model.forward(ag::constant(grid), dense);
    CHECK(cmae_loss(d.reconstruction, ag::constant(grid), dense)->value.scalar_value() == 0.0);
}

TEST_CASE("cmae submanifold invariance: latent, visible reconstruction, loss") {
    Rng rng(14);
    const int c = 3;
    CMAEModel model("cm", c, 1, false, rng);
    Tensor grid = random_tensor({5, 4, c}, rng);
    GridMask mask = mask_grid(5, 4, 0.6, 43);

    Tensor perturbed = perturb_masked(grid, mask, 1e3, rng);
    CmaeForwardResult a = model.forward(ag::constant(grid), mask);
    CmaeForwardResult b = model.forward(ag::constant(perturbed), mask);
    CHECK(a.latent->value == b.latent->value);
    CHECK(a.reconstruction->value == b.reconstruction->value);

    // loss against the clean target is bit-identical
    ag::Var la = cmae_loss(a.reconstruction, ag::constant(grid), mask);
    ag::Var lb = cmae_loss(b.reconstruction, ag::constant(grid), mask);
    CHECK(la->value.scalar_value() == lb->value.scalar_value());
}

TEST_CASE("cmae_loss examples") {
    Rng rng(15);
    Tensor grid = random_tensor({2, 2, 2}, rng);
    GridMask mask = mask_grid(2, 2, 0.5, 47);
    ag::Var perfect = cmae_loss(ag::constant(grid), ag::constant(grid), mask);
    CHECK(perfect->value.scalar_value() == 0.0);

    // single masked cell with error vector [1, -1] in c=2 -> loss 1
    Tensor recon = grid;
    GridMask one;
    one.visible = {1, 1, 1, 0};
    recon[3 * 2 + 0] += 1.0;
    recon[3 * 2 + 1] -= 1.0;
    ag::Var loss = cmae_loss(ag::constant(recon), ag::constant(grid), one);
    CHECK(loss->value.scalar_value() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("I_CMAE gradient w.r.t. encoder and decoder parameters on a 4x4x3 grid") {
    Rng rng(16);
    const int c = 3;
    CMAEModel model("cm", c, 1, false, rng);
    Tensor grid = random_tensor({4, 4, c}, rng);
    GridMask mask = mask_grid(4, 4, 0.5, 53);

    auto params = model.params();
    Rng jitter(7);
    testutil::jitter_params(params, jitter);

    Rng coord_rng(99);
    const double err = grad_check(
        [&]() {
            ag::Var g = ag::constant(grid);
            CmaeForwardResult out = model.forward(g, mask);
            return cmae_loss(out.reconstruction, g, mask);
        },
        params, 1e-5, /*max_coords_per_param=*/6, &coord_rng);
    CHECK(err <= 1e-4);
}

TEST_CASE("pool_modality: visible mean") {
    // 1x1: the cell's channel vector
    Tensor single({1, 1, 3}, {1.0, 2.0, 3.0});
    GridMask one = all_visible_mask(1, 1);
    ag::Var pooled = pool_modality(ag::constant(single), one);
    CHECK(pooled->value == Tensor({3}, {1.0, 2.0, 3.0}));

    // two visible cells [1], [3] -> [2]
    Tensor two({1, 2, 1}, {1.0, 3.0});
    ag::Var mean = pool_modality(ag::constant(two), all_visible_mask(1, 2));
    CHECK(mean->value[0] == doctest::Approx(2.0).epsilon(1e-12));

    // masked cells are excluded from the mean
    Tensor three({1, 3, 1}, {1.0, 100.0, 3.0});
    GridMask mask;
    mask.visible = {1, 0, 1};
    ag::Var masked_mean = pool_modality(ag::constant(three), mask);
    CHECK(masked_mean->value[0] == doctest::Approx(2.0).epsilon(1e-12));
}
