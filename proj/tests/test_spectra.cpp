#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "bfl/spectra.hpp"
#include "oracles.hpp"

using namespace bfl;

namespace {

multichannel_record cosine_record(std::size_t channels, double freq, double fs = 51200, std::size_t t = 1024) {
    multichannel_record r;
    r.sample_rate = fs;
    r.samples.resize(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(t));
    for (Eigen::Index m = 0; m < r.samples.rows(); ++m)
        for (Eigen::Index i = 0; i < r.samples.cols(); ++i)
            r.samples(m, i) = std::cos(2 * std::numbers::pi * freq * static_cast<double>(i) / fs + 0.3 * static_cast<double>(m));
    return r;
}

multichannel_record random_record(std::mt19937_64& rng, std::size_t channels, std::size_t t) {
    std::normal_distribution<double> nd;
    multichannel_record r;
    r.sample_rate = 51200;
    r.samples.resize(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(t));
    for (Eigen::Index i = 0; i < r.samples.size(); ++i) r.samples.data()[i] = nd(rng);
    return r;
}

} // namespace

TEST(Frames, ExactBinCosineHasUnitMagnitude) {
    const auto s = frame_and_transform(cosine_record(1, 2000), 256, 2000);
    EXPECT_EQ(s.bin_index, 10u);
    EXPECT_DOUBLE_EQ(s.bin_frequency, 2000.0);
    ASSERT_EQ(s.frames(), 4u);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(std::abs(s.coefficients(static_cast<Eigen::Index>(j), 0)), 1.0, 1e-9);
}

TEST(Frames, ZeroAndDcRecordsGiveZero) {
    multichannel_record r;
    r.sample_rate = 51200;
    r.samples = row_matrix::Zero(2, 512);
    EXPECT_EQ(frame_and_transform(r, 256, 2000).coefficients.cwiseAbs().maxCoeff(), 0.0);
    r.samples.setConstant(3.0);
    EXPECT_LT(frame_and_transform(r, 256, 2000).coefficients.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Frames, PreconditionsAreChecked) {
    const auto r = cosine_record(1, 2000, 51200, 100);
    EXPECT_THROW(frame_and_transform(r, 1, 2000), parameter_error);
    EXPECT_THROW(frame_and_transform(r, 101, 2000), parameter_error);
    EXPECT_THROW(frame_and_transform(r, 50, 30000), parameter_error);
}

TEST(Frames, SinePhaseConvention) {
    // sin(wt - kr) at an exact bin: coefficient = -j e^{-jkr}, so phase(p) = -kr - pi/2
    const double kr = 0.7;
    multichannel_record r;
    r.sample_rate = 51200;
    r.samples.resize(1, 256);
    for (Eigen::Index i = 0; i < 256; ++i)
        r.samples(0, i) = std::sin(2 * std::numbers::pi * 2000 * static_cast<double>(i) / 51200 - kr);
    const cplx p = frame_and_transform(r, 256, 2000).coefficients(0, 0);
    EXPECT_NEAR(std::abs(p - std::polar(1.0, -kr - std::numbers::pi / 2)), 0.0, 1e-12);
}

TEST(Csm, ScalarFrame) {
    frame_spectra s;
    s.coefficients = Eigen::MatrixXcd::Constant(1, 1, cplx(1, 0));
    EXPECT_EQ(csm(s).matrix(0, 0), cplx(1, 0));
}

TEST(Csm, OrthogonalFramesAverageToHalfIdentity) {
    frame_spectra s;
    s.coefficients = Eigen::MatrixXcd::Identity(2, 2);
    EXPECT_LT((csm(s).matrix - 0.5 * Eigen::MatrixXcd::Identity(2, 2)).norm(), 1e-15);
}

TEST(Csm, IdenticalFramesGiveRankOne) {
    Eigen::VectorXcd p(3);
    p << cplx(1, 2), cplx(-0.5, 0.1), cplx(0, -1);
    frame_spectra s;
    s.coefficients = p.transpose().replicate(5, 1);
    const auto c = csm(s).matrix;
    EXPECT_LT((c - p * p.adjoint()).norm(), 1e-14);
}

TEST(Csm, HermitianPsdAndTraceOnRandomRecords) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto rec = random_record(rng, 6, 1024);
        const auto s = frame_and_transform(rec, 256, 2000);
        const auto c = csm(s).matrix;
        EXPECT_EQ(c, c.adjoint().eval());
        for (Eigen::Index i = 0; i < 6; ++i) EXPECT_EQ(c(i, i).imag(), 0.0);
        double tr_frames = 0;
        for (Eigen::Index j = 0; j < s.coefficients.rows(); ++j) tr_frames += s.coefficients.row(j).squaredNorm();
        tr_frames /= static_cast<double>(s.coefficients.rows());
        EXPECT_NEAR(c.trace().real(), tr_frames, 1e-12 * tr_frames);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(c);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * c.trace().real());
    }
}

TEST(Csm, ScalesQuadratically) {
    std::mt19937_64 rng(4);
    auto rec = random_record(rng, 4, 512);
    const auto c1 = csm(frame_and_transform(rec, 256, 2000)).matrix;
    rec.samples *= 2.0;
    const auto c2 = csm(frame_and_transform(rec, 256, 2000)).matrix;
    EXPECT_LT((c2 - 4.0 * c1).norm(), 1e-12 * c2.norm());
}

TEST(Csm, FileRoundTripAndLayout) {
    std::mt19937_64 rng(5);
    csm_matrix c{oracle::random_psd(3, rng), 2000};
    const auto path = std::filesystem::temp_directory_path() / "bfl_spectra_test.csm";
    save_csm(path, c);
    EXPECT_EQ(std::filesystem::file_size(path), 4 + 4 + 8 + 9 * 16u);
    const auto back = load_csm(path);
    EXPECT_EQ(back.matrix, c.matrix);
    EXPECT_EQ(back.frequency, 2000.0);
    io::write_text(path, "CSM1");
    EXPECT_THROW(load_csm(path), format_error);
}
