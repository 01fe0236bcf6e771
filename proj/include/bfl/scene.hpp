#pragma once

// Array geometries, point-source scenes and time-domain synthesis.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/io.hpp"

namespace bfl {

using vec3 = Eigen::Vector3d;
using row_matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class array_geometry {
public:
    array_geometry() = default;

    explicit array_geometry(std::vector<vec3> positions) : positions_(std::move(positions)) {
        if (positions_.empty()) throw parameter_error("array geometry needs at least one microphone");
        for (const auto& p : positions_)
            if (!p.allFinite()) throw parameter_error("microphone position is not finite");
        centroid_.setZero();
        for (const auto& p : positions_) centroid_ += p;
        centroid_ /= static_cast<double>(positions_.size());
    }

    std::size_t size() const { return positions_.size(); }
    const std::vector<vec3>& positions() const { return positions_; }
    const vec3& operator[](std::size_t m) const { return positions_[m]; }
    const vec3& centroid() const { return centroid_; }

    std::string content_hash() const {
        io::hasher h;
        h.add(std::string_view("geometry"));
        for (const auto& p : positions_) h.add(p.x()).add(p.y()).add(p.z());
        return h.hex();
    }

private:
    std::vector<vec3> positions_;
    vec3 centroid_ = vec3::Zero();
};

struct source_spec {
    vec3 position = vec3::Zero();
    double amplitude = 1.0;
    double frequency = 2000.0;
    double phase = 0.0;
};

struct scene {
    std::vector<source_spec> sources;
    double sample_rate = 51200.0;
    double duration = 0.02;
    double sound_speed = 343.0;

    std::size_t sample_count() const { return static_cast<std::size_t>(std::llround(duration * sample_rate)); }

    void validate() const {
        if (!(duration > 0)) throw parameter_error("scene duration must be positive");
        if (!(sound_speed > 0)) throw parameter_error("sound speed must be positive");
        if (!(sample_rate > 0)) throw parameter_error("sample rate must be positive");
        for (const auto& s : sources) {
            if (!(s.frequency > 0)) throw parameter_error("source frequency must be positive");
            if (!(s.amplitude >= 0)) throw parameter_error("source amplitude must be non-negative");
            if (!s.position.allFinite() || !std::isfinite(s.phase))
                throw parameter_error("source position and phase must be finite");
            if (!(sample_rate > 2 * s.frequency))
                throw parameter_error("sample rate must exceed twice the highest source frequency");
        }
    }
};

// M x T pressure samples, one channel per row.
struct multichannel_record {
    row_matrix samples;
    double sample_rate = 0;

    std::size_t channels() const { return static_cast<std::size_t>(samples.rows()); }
    std::size_t length() const { return static_cast<std::size_t>(samples.cols()); }
};

// Archimedean spiral in the z = 0 plane.
inline array_geometry make_spiral_array(std::size_t m, double r_min, double r_max, double turns) {
    if (m == 0) throw parameter_error("spiral array needs at least one microphone");
    if (!(r_min > 0) || !(r_max > r_min)) throw parameter_error("spiral radii must satisfy 0 < r_min < r_max");
    if (!std::isfinite(turns)) throw parameter_error("spiral turns must be finite");
    std::vector<vec3> pos;
    pos.reserve(m);
    if (m == 1) {
        pos.emplace_back(r_min, 0.0, 0.0);
        return array_geometry(std::move(pos));
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(m - 1);
        const double r = r_min + (r_max - r_min) * u;
        const double a = 2 * std::numbers::pi * turns * u;
        pos.emplace_back(r * std::cos(a), r * std::sin(a), 0.0);
    }
    return array_geometry(std::move(pos));
}

inline multichannel_record synthesize(const scene& sc, const array_geometry& geometry) {
    sc.validate();
    const double plane_z = [&] {
        double z = -std::numeric_limits<double>::infinity();
        for (const auto& p : geometry.positions()) z = std::max(z, p.z());
        return z;
    }();
    for (const auto& s : sc.sources)
        if (!(s.position.z() > plane_z)) throw geometry_error("source must lie strictly in front of the array");

    const std::size_t t_count = sc.sample_count();
    multichannel_record rec;
    rec.sample_rate = sc.sample_rate;
    rec.samples = row_matrix::Zero(static_cast<Eigen::Index>(geometry.size()), static_cast<Eigen::Index>(t_count));
    for (std::size_t m = 0; m < geometry.size(); ++m) {
        for (const auto& s : sc.sources) {
            const double r = (s.position - geometry[m]).norm();
            if (r == 0) throw geometry_error("source coincides with microphone " + std::to_string(m));
            const double gain = s.amplitude / r;
            const double w = 2 * std::numbers::pi * s.frequency;
            const double delay = r / sc.sound_speed;
            for (std::size_t t = 0; t < t_count; ++t) {
                const double time = static_cast<double>(t) / sc.sample_rate;
                rec.samples(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) +=
                    gain * std::sin(w * (time - delay) + s.phase);
            }
        }
    }
    return rec;
}

// Adds white Gaussian noise at the requested SNR relative to the clean record's
// mean-square power. snr_db = +inf disables noise.
inline multichannel_record add_noise_snr(const multichannel_record& record, double snr_db, std::uint64_t rng_seed) {
    if (std::isinf(snr_db) && snr_db > 0) return record;
    if (std::isnan(snr_db)) throw parameter_error("snr must be a number");
    if (record.samples.size() == 0) throw parameter_error("cannot add noise to an empty record");
    const double power = record.samples.squaredNorm() / static_cast<double>(record.samples.size());
    if (!(power > 0)) throw parameter_error("signal power is zero; snr is undefined");
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> noise(0.0, sigma);
    multichannel_record out = record;
    for (Eigen::Index m = 0; m < out.samples.rows(); ++m)
        for (Eigen::Index t = 0; t < out.samples.cols(); ++t) out.samples(m, t) += noise(rng);
    return out;
}

// Plain text, one "x y z" per line, '#' starts a comment.
inline array_geometry load_geometry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open geometry file", path.string());
    std::vector<vec3> pos;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x)) continue;
        if (!(ls >> y >> z)) throw format_error("line " + std::to_string(line_no) + " is not 'x y z'", path.string());
        std::string rest;
        if (ls >> rest) throw format_error("line " + std::to_string(line_no) + " has extra tokens", path.string());
        pos.emplace_back(x, y, z);
    }
    if (pos.empty()) throw format_error("geometry file lists no microphones", path.string());
    return array_geometry(std::move(pos));
}

inline void save_geometry(const std::filesystem::path& path, const array_geometry& geometry) {
    std::ostringstream os;
    os << "# x y z (meters), " << geometry.size() << " microphones\n";
    os.precision(17);
    for (const auto& p : geometry.positions()) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    io::write_text(path, os.str());
}

inline void save_record(const std::filesystem::path& path, const multichannel_record& record) {
    io::binary_writer w(path);
    w.magic("BFL1");
    w.put(static_cast<std::uint32_t>(record.channels()));
    w.put(static_cast<std::uint32_t>(record.length()));
    w.put(record.sample_rate);
    w.put_doubles({record.samples.data(), static_cast<std::size_t>(record.samples.size())});
    w.close();
}

inline multichannel_record load_record(const std::filesystem::path& path) {
    io::binary_reader r(path);
    r.expect_magic("BFL1");
    const auto m = r.get<std::uint32_t>();
    const auto t = r.get<std::uint32_t>();
    multichannel_record rec;
    rec.sample_rate = r.get<double>();
    rec.samples.resize(m, t);
    r.get_doubles({rec.samples.data(), static_cast<std::size_t>(rec.samples.size())});
    r.expect_end();
    if (!rec.samples.allFinite()) throw format_error("record holds non-finite samples", path.string());
    return rec;
}

} // namespace bfl
