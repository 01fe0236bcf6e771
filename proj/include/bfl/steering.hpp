#pragma once

// Scan grid, steering matrices, the DAMAS propagation matrix and its
// Lipschitz constant.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/scene.hpp"

namespace bfl {

// N x N lattice on the plane at distance z, row-major: index = row * N + col,
// x varies along a row, y along a column.
struct scan_grid {
    std::size_t n_side = 0;
    double extent = 0;
    double z = 0;
    std::vector<vec3> points;
    double cell_area = 0;

    std::size_t size() const { return points.size(); }

    double spacing() const {
        return n_side > 1 ? 2 * extent / static_cast<double>(n_side - 1) : 2 * extent;
    }

    std::size_t nearest_index(const vec3& p) const {
        auto snap = [&](double v) {
            if (n_side == 1) return std::size_t{0};
            const double f = std::round((v + extent) / spacing());
            return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(n_side - 1)));
        };
        return snap(p.y()) * n_side + snap(p.x());
    }

    std::string content_hash() const {
        io::hasher h;
        h.add(std::string_view("grid")).add(static_cast<std::uint64_t>(n_side)).add(extent).add(z);
        return h.hex();
    }
};

inline scan_grid make_grid(std::size_t n_side, double extent, double z) {
    if (n_side < 1) throw parameter_error("grid needs at least one point per side");
    if (!(extent > 0) || !std::isfinite(extent)) throw parameter_error("grid extent must be positive");
    if (!(z > 0) || !std::isfinite(z)) throw parameter_error("grid distance must be positive");
    scan_grid g;
    g.n_side = n_side;
    g.extent = extent;
    g.z = z;
    const double h = g.spacing();
    g.cell_area = h * h;
    g.points.reserve(n_side * n_side);
    for (std::size_t row = 0; row < n_side; ++row) {
        const double y = n_side == 1 ? 0.0 : -extent + h * static_cast<double>(row);
        for (std::size_t col = 0; col < n_side; ++col) {
            const double x = n_side == 1 ? 0.0 : -extent + h * static_cast<double>(col);
            g.points.emplace_back(x, y, z);
        }
    }
    return g;
}

struct steering_pair {
    Eigen::MatrixXcd G; // N^2 x M
    Eigen::MatrixXcd W; // N^2 x M
};

// G[n,m] = (r0/r) e^{-jk(r-r0)},  W[n,m] = (r/r0) e^{-jk(r-r0)},
// r0 measured from the array centroid.
inline steering_pair steering_matrices(const scan_grid& grid, const array_geometry& geometry, double freq, double c) {
    if (!(freq > 0) || !(c > 0)) throw parameter_error("frequency and sound speed must be positive");
    const double k = 2 * std::numbers::pi * freq / c;
    const auto n = static_cast<Eigen::Index>(grid.size());
    const auto m = static_cast<Eigen::Index>(geometry.size());
    steering_pair out{Eigen::MatrixXcd(n, m), Eigen::MatrixXcd(n, m)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const vec3& p = grid.points[static_cast<std::size_t>(i)];
        const double r0 = (p - geometry.centroid()).norm();
        if (r0 == 0) throw geometry_error("grid point " + std::to_string(i) + " coincides with the array centroid");
        for (Eigen::Index mi = 0; mi < m; ++mi) {
            const double r = (p - geometry[static_cast<std::size_t>(mi)]).norm();
            if (r == 0)
                throw geometry_error("grid point " + std::to_string(i) + " coincides with microphone " +
                                     std::to_string(mi));
            const std::complex<double> phase = std::polar(1.0, -k * (r - r0));
            out.G(i, mi) = (r0 / r) * phase;
            out.W(i, mi) = (r / r0) * phase;
        }
    }
    return out;
}

// A[n,j] = |w_n^H g_j|^2 / M^2, built in row blocks to bound the complex temporary.
inline row_matrix propagation_matrix(const Eigen::MatrixXcd& G, const Eigen::MatrixXcd& W, std::size_t mics) {
    if (G.rows() != W.rows() || G.cols() != W.cols())
        throw parameter_error("steering matrices G and W must have the same shape");
    if (mics == 0) throw parameter_error("microphone count must be positive");
    const Eigen::Index n = G.rows();
    const double inv_m2 = 1.0 / (static_cast<double>(mics) * static_cast<double>(mics));
    row_matrix A(n, n);
    const Eigen::MatrixXcd Gt = G.transpose();
    constexpr Eigen::Index block = 256;
    for (Eigen::Index start = 0; start < n; start += block) {
        const Eigen::Index rows = std::min(block, n - start);
        const Eigen::MatrixXcd prod = W.middleRows(start, rows).conjugate() * Gt;
        A.middleRows(start, rows) = prod.cwiseAbs2() * inv_m2;
    }
    return A;
}

struct lipschitz_estimate {
    double value = 0;
    int iterations = 0;
    bool converged = false;
};

// Largest eigenvalue of A^T A by power iteration on matrix-vector products.
inline lipschitz_estimate lipschitz_constant(const row_matrix& A, double tol = 1e-8, int max_iter = 1000) {
    if (A.size() == 0) throw parameter_error("lipschitz constant of an empty matrix");
    Eigen::VectorXd v = Eigen::VectorXd::Ones(A.cols()).normalized();
    lipschitz_estimate est;
    double previous = 0;
    for (int it = 1; it <= max_iter; ++it) {
        const Eigen::VectorXd av = A * v;
        const double rayleigh = av.squaredNorm();
        const Eigen::VectorXd w = A.transpose() * av;
        est.value = rayleigh;
        est.iterations = it;
        const double wn = w.norm();
        if (wn == 0) {
            est.converged = true;
            return est;
        }
        if (it > 1 && std::abs(rayleigh - previous) <= tol * rayleigh) {
            est.converged = true;
            return est;
        }
        previous = rayleigh;
        v = w / wn;
    }
    return est;
}

struct steering_set {
    std::shared_ptr<const scan_grid> grid;
    std::size_t mics = 0;
    double frequency = 0;
    double sound_speed = 0;
    Eigen::MatrixXcd G;
    Eigen::MatrixXcd W;
    row_matrix A;
    double lipschitz = 0;
    bool lipschitz_converged = false;
    std::string key;

    std::size_t points() const { return static_cast<std::size_t>(W.rows()); }
};

inline std::string steering_key(const scan_grid& grid, const array_geometry& geometry, double freq, double c) {
    io::hasher h;
    h.add(grid.content_hash()).add(geometry.content_hash()).add(freq).add(c);
    return h.hex();
}

inline void save_propagation(const std::filesystem::path& path, const row_matrix& A, double lipschitz) {
    io::binary_writer w(path);
    w.magic("PRP1");
    w.put(static_cast<std::uint32_t>(A.rows()));
    w.put(lipschitz);
    w.put_doubles({A.data(), static_cast<std::size_t>(A.size())});
    w.close();
}

inline std::pair<row_matrix, double> load_propagation(const std::filesystem::path& path) {
    io::binary_reader r(path);
    r.expect_magic("PRP1");
    const auto n = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    const double lipschitz = r.get<double>();
    row_matrix A(n, n);
    r.get_doubles({A.data(), static_cast<std::size_t>(A.size())});
    r.expect_end();
    return {std::move(A), lipschitz};
}

// Builds G, W, A and the Lipschitz constant. With a cache directory, A and the
// constant are reused from "prp_<key>.bin" when present and written otherwise.
inline steering_set build_steering(const scan_grid& grid, const array_geometry& geometry, double freq, double c,
                                   const std::filesystem::path& cache_dir = {}) {
    steering_set s;
    s.grid = std::make_shared<const scan_grid>(grid);
    s.mics = geometry.size();
    s.frequency = freq;
    s.sound_speed = c;
    s.key = steering_key(grid, geometry, freq, c);
    auto gw = steering_matrices(grid, geometry, freq, c);
    s.G = std::move(gw.G);
    s.W = std::move(gw.W);

    const auto cache_file = cache_dir.empty() ? std::filesystem::path{} : cache_dir / ("prp_" + s.key + ".bin");
    if (!cache_file.empty() && std::filesystem::exists(cache_file)) {
        auto [A, lip] = load_propagation(cache_file);
        if (A.rows() == static_cast<Eigen::Index>(grid.size())) {
            s.A = std::move(A);
            s.lipschitz = lip;
            s.lipschitz_converged = true;
            return s;
        }
    }
    s.A = propagation_matrix(s.G, s.W, s.mics);
    const auto est = lipschitz_constant(s.A);
    s.lipschitz = est.value;
    s.lipschitz_converged = est.converged;
    if (!cache_file.empty()) {
        std::filesystem::create_directories(cache_dir);
        save_propagation(cache_file, s.A, s.lipschitz);
    }
    return s;
}

} // namespace bfl
