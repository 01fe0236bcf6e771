#pragma once

// Single-bin framing transform and the cross-spectral matrix.

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/scene.hpp"

namespace bfl {

using cplx = std::complex<double>;

struct frame_spectra {
    Eigen::MatrixXcd coefficients; // J x M
    double bin_frequency = 0;
    std::size_t bin_index = 0;
    std::size_t frame_length = 0;

    std::size_t frames() const { return static_cast<std::size_t>(coefficients.rows()); }
    std::size_t channels() const { return static_cast<std::size_t>(coefficients.cols()); }
};

struct csm_matrix {
    Eigen::MatrixXcd matrix; // M x M, Hermitian
    double frequency = 0;

    std::size_t channels() const { return static_cast<std::size_t>(matrix.rows()); }
};

// Non-overlapping rectangular frames; for each frame and channel the DFT
// coefficient at the bin nearest scan_freq, scaled by 2/frame_length so that a
// sinusoid of amplitude a sitting exactly on the bin has magnitude a.
inline frame_spectra frame_and_transform(const multichannel_record& record, std::size_t frame_length, double scan_freq) {
    if (frame_length < 2) throw parameter_error("frame length must be at least 2 samples");
    if (frame_length > record.length()) throw parameter_error("frame length exceeds record length");
    if (!(scan_freq >= 0) || !(scan_freq < record.sample_rate / 2))
        throw parameter_error("scan frequency must lie in [0, sample_rate/2)");

    const double bin_width = record.sample_rate / static_cast<double>(frame_length);
    const auto bin = static_cast<std::size_t>(std::llround(scan_freq / bin_width));
    const std::size_t frames = record.length() / frame_length;

    std::vector<cplx> twiddle(frame_length);
    for (std::size_t t = 0; t < frame_length; ++t) {
        // reduce the index first so the angle stays in [0, 2pi)
        const auto phase_index = (bin * t) % frame_length;
        const double a = -2 * std::numbers::pi * static_cast<double>(phase_index) / static_cast<double>(frame_length);
        twiddle[t] = {std::cos(a), std::sin(a)};
    }

    frame_spectra out;
    out.bin_index = bin;
    out.bin_frequency = static_cast<double>(bin) * bin_width;
    out.frame_length = frame_length;
    out.coefficients.resize(static_cast<Eigen::Index>(frames), record.samples.rows());
    const double scale = 2.0 / static_cast<double>(frame_length);
    for (std::size_t j = 0; j < frames; ++j) {
        for (Eigen::Index m = 0; m < record.samples.rows(); ++m) {
            cplx acc{0, 0};
            const double* x = record.samples.row(m).data() + j * frame_length;
            for (std::size_t t = 0; t < frame_length; ++t) acc += x[t] * twiddle[t];
            out.coefficients(static_cast<Eigen::Index>(j), m) = scale * acc;
        }
    }
    return out;
}

// C = (1/J) sum_j p_j p_j^H, upper triangle computed and mirrored.
inline csm_matrix csm(const frame_spectra& spectra) {
    const auto frames = static_cast<Eigen::Index>(spectra.frames());
    if (frames < 1) throw parameter_error("cross-spectral matrix needs at least one frame");
    const auto m = static_cast<Eigen::Index>(spectra.channels());
    csm_matrix out;
    out.frequency = spectra.bin_frequency;
    out.matrix.resize(m, m);
    const auto& p = spectra.coefficients;
    const double inv_j = 1.0 / static_cast<double>(frames);
    for (Eigen::Index a = 0; a < m; ++a) {
        double diag = 0;
        for (Eigen::Index j = 0; j < frames; ++j) diag += std::norm(p(j, a));
        out.matrix(a, a) = {diag * inv_j, 0.0};
        for (Eigen::Index b = a + 1; b < m; ++b) {
            cplx acc{0, 0};
            for (Eigen::Index j = 0; j < frames; ++j) acc += p(j, a) * std::conj(p(j, b));
            out.matrix(a, b) = acc * inv_j;
            out.matrix(b, a) = std::conj(acc * inv_j);
        }
    }
    return out;
}

inline void save_csm(const std::filesystem::path& path, const csm_matrix& c) {
    io::binary_writer w(path);
    w.magic("CSM1");
    w.put(static_cast<std::uint32_t>(c.channels()));
    w.put(c.frequency);
    for (Eigen::Index r = 0; r < c.matrix.rows(); ++r)
        for (Eigen::Index k = 0; k < c.matrix.cols(); ++k) {
            w.put(c.matrix(r, k).real());
            w.put(c.matrix(r, k).imag());
        }
    w.close();
}

inline csm_matrix load_csm(const std::filesystem::path& path) {
    io::binary_reader r(path);
    r.expect_magic("CSM1");
    const auto m = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    csm_matrix c;
    c.frequency = r.get<double>();
    c.matrix.resize(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index k = 0; k < m; ++k) {
            const double re = r.get<double>();
            const double im = r.get<double>();
            c.matrix(i, k) = {re, im};
        }
    r.expect_end();
    if (!c.matrix.allFinite()) throw format_error("csm holds non-finite entries", path.string());
    return c;
}

} // namespace bfl
