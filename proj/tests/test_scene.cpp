#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "bfl/scene.hpp"

using namespace bfl;

namespace {

array_geometry one_mic(vec3 p = vec3::Zero()) { return array_geometry({p}); }

scene tone(vec3 pos, double amp = 1.0, double phase = 0.0) {
    scene sc;
    sc.sources.push_back({pos, amp, 2000.0, phase});
    return sc;
}

} // namespace

TEST(Spiral, SingleMicSitsAtInnerRadius) {
    const auto g = make_spiral_array(1, 0.1, 0.7, 2.5);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g[0], vec3(0.1, 0, 0));
}

TEST(Spiral, FiftySixDistinctMicsWithOuterRadius) {
    const auto g = make_spiral_array(56, 0.02, 0.5, 3);
    ASSERT_EQ(g.size(), 56u);
    double rmax = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        rmax = std::max(rmax, g[i].norm());
        const double u = static_cast<double>(i) / 55.0;
        const double r = 0.02 + 0.48 * u, a = 2 * std::numbers::pi * 3 * u;
        EXPECT_NEAR(g[i].x(), r * std::cos(a), 1e-15);
        EXPECT_NEAR(g[i].y(), r * std::sin(a), 1e-15);
        for (std::size_t j = 0; j < i; ++j) EXPECT_GT((g[i] - g[j]).norm(), 1e-6);
    }
    EXPECT_NEAR(rmax, 0.5, 1e-15);
}

TEST(Spiral, ZeroTurnsPutsBothMicsOnXAxis) {
    const auto g = make_spiral_array(2, 0.1, 0.3, 0);
    EXPECT_EQ(g[0], vec3(0.1, 0, 0));
    EXPECT_EQ(g[1], vec3(0.3, 0, 0));
}

TEST(Spiral, RejectsBadRadii) {
    EXPECT_THROW(make_spiral_array(0, 0.1, 0.2, 1), parameter_error);
    EXPECT_THROW(make_spiral_array(4, 0.2, 0.1, 1), parameter_error);
    EXPECT_THROW(make_spiral_array(4, 0.0, 0.1, 1), parameter_error);
}

TEST(Geometry, CentroidIsComputed) {
    array_geometry g({vec3(1, 0, 0), vec3(3, 2, 0)});
    EXPECT_EQ(g.centroid(), vec3(2, 1, 0));
    EXPECT_THROW(array_geometry(std::vector<vec3>{}), parameter_error);
}

TEST(Synthesize, NoSourcesGivesSilence) {
    scene sc;
    const auto rec = synthesize(sc, make_spiral_array(4, 0.1, 0.3, 1));
    EXPECT_EQ(rec.length(), 1024u);
    EXPECT_EQ(rec.samples.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Synthesize, UnitDistancePeak) {
    // r = 1, t = 0: 2 sin(-k r + phase) with phase chosen so the argument is pi/2
    const double k_delay = 2 * std::numbers::pi * 2000.0 / 343.0;
    auto sc = tone(vec3(0, 0, 1), 2.0, std::numbers::pi / 2 + k_delay);
    const auto rec = synthesize(sc, one_mic());
    EXPECT_NEAR(rec.samples(0, 0), 2.0, 1e-12);
}

TEST(Synthesize, RmsFollowsAmplitudeOverDistance) {
    const auto g = make_spiral_array(8, 0.05, 0.4, 1);
    const vec3 src(0.3, -0.2, 2.0);
    const auto rec = synthesize(tone(src, 1.5), g);
    for (std::size_t m = 0; m < g.size(); ++m) {
        const double r = (src - g[m]).norm();
        const double rms = std::sqrt(rec.samples.row(static_cast<Eigen::Index>(m)).squaredNorm() / 1024.0);
        EXPECT_NEAR(rms, 1.5 / (r * std::sqrt(2.0)), 1e-6 * rms);
    }
}

TEST(Synthesize, SuperpositionIsExact) {
    const auto g = make_spiral_array(5, 0.05, 0.4, 1);
    auto a = tone(vec3(0.1, 0.2, 2.0), 1.0, 0.3);
    auto b = tone(vec3(-0.4, 0.1, 2.0), 0.5, 1.1);
    scene both = a;
    both.sources.push_back(b.sources[0]);
    const row_matrix sum = synthesize(a, g).samples + synthesize(b, g).samples;
    EXPECT_LE((synthesize(both, g).samples - sum).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Synthesize, RejectsSourceBehindOrOnTheArray) {
    EXPECT_THROW(synthesize(tone(vec3(0, 0, 0)), one_mic()), geometry_error);
    EXPECT_THROW(synthesize(tone(vec3(0, 0, -1)), one_mic()), geometry_error);
}

TEST(Synthesize, RejectsAliasedTone) {
    scene sc = tone(vec3(0, 0, 1));
    sc.sample_rate = 3000;
    EXPECT_THROW(synthesize(sc, one_mic()), parameter_error);
}

TEST(Noise, InfiniteSnrIsIdentity) {
    const auto rec = synthesize(tone(vec3(0, 0, 1)), one_mic());
    const auto out = add_noise_snr(rec, std::numeric_limits<double>::infinity(), 1);
    EXPECT_EQ(out.samples, rec.samples);
}

TEST(Noise, ZeroDbOnUnitPowerAddsUnitPower) {
    multichannel_record rec;
    rec.sample_rate = 1000;
    rec.samples = row_matrix::Ones(4, 4000);
    const auto out = add_noise_snr(rec, 0.0, 42);
    const double p = (out.samples - rec.samples).squaredNorm() / 16000.0;
    EXPECT_GE(p, 0.9);
    EXPECT_LE(p, 1.1);
}

TEST(Noise, SeedDeterminesNoise) {
    const auto rec = synthesize(tone(vec3(0, 0, 1)), one_mic());
    EXPECT_EQ(add_noise_snr(rec, 10, 7).samples, add_noise_snr(rec, 10, 7).samples);
    EXPECT_NE(add_noise_snr(rec, 10, 7).samples, add_noise_snr(rec, 10, 8).samples);
}

TEST(Noise, SilentRecordHasNoSnr) {
    multichannel_record rec;
    rec.sample_rate = 1000;
    rec.samples = row_matrix::Zero(2, 10);
    EXPECT_THROW(add_noise_snr(rec, 10, 1), parameter_error);
}

TEST(Files, RecordAndGeometryRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "bfl_scene_test";
    std::filesystem::create_directories(dir);
    const auto g = make_spiral_array(6, 0.05, 0.4, 1.3);
    save_geometry(dir / "g.txt", g);
    const auto g2 = load_geometry(dir / "g.txt");
    ASSERT_EQ(g2.size(), g.size());
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g2[i], g[i]);

    const auto rec = synthesize(tone(vec3(0.2, 0.1, 2)), g);
    save_record(dir / "r.bfl", rec);
    const auto rec2 = load_record(dir / "r.bfl");
    EXPECT_EQ(rec2.samples, rec.samples);
    EXPECT_EQ(rec2.sample_rate, rec.sample_rate);
    EXPECT_EQ(std::filesystem::file_size(dir / "r.bfl"), 4 + 4 + 4 + 8 + 8 * 6 * 1024u);
}

TEST(Files, GarbledInputsNameThePath) {
    const auto dir = std::filesystem::temp_directory_path() / "bfl_scene_test";
    std::filesystem::create_directories(dir);
    io::write_text(dir / "bad.txt", "# header\n0 0\n");
    try {
        load_geometry(dir / "bad.txt");
        FAIL();
    } catch (const format_error& e) {
        EXPECT_EQ(e.path(), (dir / "bad.txt").string());
    }
    io::write_text(dir / "bad.bfl", "XXXX");
    EXPECT_THROW(load_record(dir / "bad.bfl"), format_error);
    EXPECT_THROW(load_record(dir / "missing.bfl"), format_error);
}
