#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "hetsurv/kernels.hpp"
#include "hetsurv/rng.hpp"

using namespace hetsurv;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

std::vector<std::uint8_t> random_mask(std::size_t n, double visible_p, Rng& rng) {
    std::vector<std::uint8_t> m(n);
    bool any = false;
    for (auto& v : m) {
        v = rng.uniform() < visible_p ? 1 : 0;
        any = any || v;
    }
    if (!any) m[0] = 1;
    return m;
}

}  // namespace

// The OpenMP kernels partition work over output elements, so they must be
// bit-identical to the serial reference, not merely close.

TEST_CASE("matmul family: omp == serial bitwise") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const int m = 3 + rng.uniform_int(60);
        const int k = 3 + rng.uniform_int(60);
        const int n = 3 + rng.uniform_int(60);
        const auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        const auto b = random_vec(static_cast<std::size_t>(k) * n, rng);

        std::vector<double> cs(static_cast<std::size_t>(m) * n), cp = cs;
        kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
        kernels::par::matmul(a.data(), b.data(), cp.data(), m, k, n);
        CHECK(cs == cp);

        auto accs = random_vec(static_cast<std::size_t>(m) * n, rng);
        auto accp = accs;
        kernels::serial::matmul_acc(a.data(), b.data(), accs.data(), m, k, n);
        kernels::par::matmul_acc(a.data(), b.data(), accp.data(), m, k, n);
        CHECK(accs == accp);

        const auto at = random_vec(static_cast<std::size_t>(k) * m, rng);
        auto tns = random_vec(static_cast<std::size_t>(m) * n, rng);
        auto tnp = tns;
        kernels::serial::matmul_tn_acc(at.data(), b.data(), tns.data(), m, k, n);
        kernels::par::matmul_tn_acc(at.data(), b.data(), tnp.data(), m, k, n);
        CHECK(tns == tnp);

        const auto bt = random_vec(static_cast<std::size_t>(n) * k, rng);
        auto nts = random_vec(static_cast<std::size_t>(m) * n, rng);
        auto ntp = nts;
        kernels::serial::matmul_nt_acc(a.data(), bt.data(), nts.data(), m, k, n);
        kernels::par::matmul_nt_acc(a.data(), bt.data(), ntp.data(), m, k, n);
        CHECK(nts == ntp);
    }
}

TEST_CASE("layer_norm: omp == serial bitwise") {
    Rng rng(11);
    const int rows = 257, cols = 33;
    const auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    const auto gamma = random_vec(cols, rng);
    const auto beta = random_vec(cols, rng);
    std::vector<double> ys(x.size()), yp(x.size()), is(rows), ip(rows);
    kernels::serial::layer_norm(x.data(), gamma.data(), beta.data(), ys.data(), is.data(), rows, cols, 1e-5);
    kernels::par::layer_norm(x.data(), gamma.data(), beta.data(), yp.data(), ip.data(), rows, cols, 1e-5);
    CHECK(ys == yp);
    CHECK(is == ip);
}

TEST_CASE("conv kernels: omp == serial bitwise under random masks") {
    Rng rng(13);
    for (int trial = 0; trial < 4; ++trial) {
        const int h = 2 + rng.uniform_int(10);
        const int w = 2 + rng.uniform_int(10);
        const int cin = 1 + rng.uniform_int(6);
        const int cout = 1 + rng.uniform_int(6);
        const auto x = random_vec(static_cast<std::size_t>(h) * w * cin, rng);
        const auto kfull = random_vec(9u * static_cast<std::size_t>(cin) * cout, rng);
        const auto bias = random_vec(static_cast<std::size_t>(cout), rng);
        const auto vis = random_mask(static_cast<std::size_t>(h) * w, 0.5, rng);

        std::vector<double> ys(static_cast<std::size_t>(h) * w * cout), yp = ys;
        kernels::serial::conv3x3(x.data(), vis.data(), kfull.data(), bias.data(), ys.data(), h, w, cin, cout);
        kernels::par::conv3x3(x.data(), vis.data(), kfull.data(), bias.data(), yp.data(), h, w, cin, cout);
        CHECK(ys == yp);

        const auto gy = random_vec(static_cast<std::size_t>(h) * w * cout, rng);
        std::vector<double> gxs(static_cast<std::size_t>(h) * w * cin), gxp = gxs;
        kernels::serial::conv3x3_grad_x(gy.data(), vis.data(), kfull.data(), gxs.data(), h, w, cin, cout);
        kernels::par::conv3x3_grad_x(gy.data(), vis.data(), kfull.data(), gxp.data(), h, w, cin, cout);
        CHECK(gxs == gxp);

        const auto kdw = random_vec(9u * static_cast<std::size_t>(cin), rng);
        const auto biasdw = random_vec(static_cast<std::size_t>(cin), rng);
        std::vector<double> ds(static_cast<std::size_t>(h) * w * cin), dp = ds;
        kernels::serial::dwconv3x3(x.data(), vis.data(), kdw.data(), biasdw.data(), ds.data(), h, w, cin);
        kernels::par::dwconv3x3(x.data(), vis.data(), kdw.data(), biasdw.data(), dp.data(), h, w, cin);
        CHECK(ds == dp);

        const auto gy2 = random_vec(static_cast<std::size_t>(h) * w * cin, rng);
        std::vector<double> dgs(static_cast<std::size_t>(h) * w * cin), dgp = dgs;
        kernels::serial::dwconv3x3_grad_x(gy2.data(), vis.data(), kdw.data(), dgs.data(), h, w, cin);
        kernels::par::dwconv3x3_grad_x(gy2.data(), vis.data(), kdw.data(), dgp.data(), h, w, cin);
        CHECK(dgs == dgp);
    }
}

TEST_CASE("dispatcher honors the runtime switch") {
    CHECK(kernels::parallel_enabled());
    kernels::set_parallel(false);
    CHECK(!kernels::parallel_enabled());
    kernels::set_parallel(true);
}
