#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bfl/metrics.hpp"
#include "oracles.hpp"

using namespace bfl;

namespace {

power_map on_grid(std::size_t n_side, Eigen::VectorXd values, double extent = 1.0) {
    return {std::move(values), std::make_shared<const scan_grid>(make_grid(n_side, extent, 2.5))};
}

} // namespace

TEST(Renyi, OneHotUnitIsZero) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(9);
    v(4) = 1;
    EXPECT_EQ(renyi_entropy(v, 1.0), 0.0);
}

TEST(Renyi, UniformMapIsLogK) {
    for (int k : {2, 7, 64}) {
        const Eigen::VectorXd v = Eigen::VectorXd::Constant(k, 1.0 / k);
        EXPECT_NEAR(renyi_entropy(v, 1.0), std::log2(static_cast<double>(k)), 1e-12);
    }
}

TEST(Renyi, DoublingShiftsByMinusOne) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    Eigen::VectorXd v(30);
    for (Eigen::Index i = 0; i < 30; ++i) v(i) = u(rng);
    EXPECT_NEAR(renyi_entropy(2 * v, 0.01), renyi_entropy(v, 0.01) - 1, 1e-12);
}

TEST(Renyi, UndefinedCases) {
    EXPECT_THROW(renyi_entropy(Eigen::VectorXd::Zero(4), 1.0), parameter_error);
    EXPECT_THROW(renyi_entropy(Eigen::VectorXd::Ones(4), 1.0, 1.0), parameter_error);
}

TEST(Peaks, OneHotAndTies) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(25);
    v(7) = 3;
    auto p = extract_locations(on_grid(5, v), 1, 0.5);
    ASSERT_EQ(p.indices.size(), 1u);
    EXPECT_EQ(p.indices[0], 7u);

    v(7) = 2;
    v(19) = 2;
    p = extract_locations(on_grid(5, v), 2, 0.5);
    ASSERT_EQ(p.indices.size(), 2u);
    EXPECT_EQ(p.indices[0], 7u);
    EXPECT_EQ(p.indices[1], 19u);
    EXPECT_TRUE(p.complete);
}

TEST(Peaks, ShortListIsFlagged) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(25);
    v(12) = 1;
    const auto p = extract_locations(on_grid(5, v), 3, 0.1);
    EXPECT_EQ(p.indices.size(), 1u);
    EXPECT_FALSE(p.complete);
}

TEST(Peaks, SuppressionRadius) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(25);
    v(12) = 5;
    v(13) = 4; // one spacing (0.5) away
    v(0) = 1;
    const auto p = extract_locations(on_grid(5, v), 2, 1.0);
    EXPECT_EQ(p.indices[1], 0u);
}

TEST(Peaks, ScaleInvariantAndFindsDasSource) {
    std::mt19937_64 rng(2);
    const auto geo = make_spiral_array(24, 0.02, 0.5, 2);
    const auto grid = make_grid(9, 1.0, 2.5);
    const auto st = build_steering(grid, geo, 2000, 343);
    for (std::size_t n : {5u, 40u, 77u}) {
        const Eigen::VectorXcd g = st.G.row(static_cast<Eigen::Index>(n)).transpose();
        auto map = das({g * g.adjoint(), 2000}, st);
        EXPECT_EQ(extract_locations(map, 1, 0.5).indices[0], n);
        map.values *= 37.5;
        EXPECT_EQ(extract_locations(map, 1, 0.5).indices[0], n);
    }
}

TEST(Bias, Examples) {
    const std::vector<vec3> t{vec3(0.1, 0.1, 2.5)};
    EXPECT_EQ(location_bias(t, t).mean, 0.0);
    EXPECT_NEAR(location_bias({vec3(0.1, 0.2, 2.5)}, t).mean, 0.1, 1e-15);
}

TEST(Bias, CrossedPairingMatchesBruteForce) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<vec3> est{vec3(u(rng), u(rng), 0), vec3(u(rng), u(rng), 0)};
        std::vector<vec3> gt{vec3(u(rng), u(rng), 0), vec3(u(rng), u(rng), 0)};
        const double straight = (est[0] - gt[0]).norm() + (est[1] - gt[1]).norm();
        const double crossed = (est[0] - gt[1]).norm() + (est[1] - gt[0]).norm();
        EXPECT_NEAR(location_bias(est, gt).mean, std::min(straight, crossed) / 2, 1e-14);
        std::swap(est[0], est[1]);
        EXPECT_NEAR(location_bias(est, gt).mean, std::min(straight, crossed) / 2, 1e-14);
        std::swap(gt[0], gt[1]);
        EXPECT_NEAR(location_bias(est, gt).mean, std::min(straight, crossed) / 2, 1e-14);
    }
}

TEST(Bias, UnmatchedTruthsAreFlagged) {
    const auto r = location_bias({vec3(0, 0, 0)}, {vec3(1, 0, 0), vec3(0.1, 0, 0)});
    EXPECT_NEAR(r.mean, 0.1, 1e-15);
    EXPECT_EQ(r.unmatched, 1u);
    EXPECT_THROW(location_bias({}, {vec3(0, 0, 0)}), parameter_error);
}

TEST(Benchmark, NoOpTimingAndStatistics) {
    const auto grid = std::make_shared<const scan_grid>(make_grid(3, 1.0, 2.5));
    Eigen::VectorXd v = Eigen::VectorXd::Zero(9);
    v(4) = 1;
    const power_map fixed{v, grid};
    std::vector<labeled_sample> inst(10);
    for (auto& s : inst) s.sources.push_back({grid->points[4], 1, 4});
    const auto s = benchmark("noop", [&](const csm_matrix&) { return fixed; }, inst);
    ASSERT_EQ(s.reports.size(), 10u);
    for (const auto& r : s.reports) {
        EXPECT_GE(r.wall_time, 0.0);
        EXPECT_LT(r.wall_time, 1e-3);
        EXPECT_EQ(r.delta_l, 0.0);
    }
    EXPECT_GE(s.cv_time, 0.0);
    double longest = 0;
    for (const auto& r : s.reports) longest = std::max(longest, r.wall_time);
    EXPECT_LE(s.median_time, longest);
    EXPECT_EQ(s.mean_renyi, renyi_entropy(fixed));
}
