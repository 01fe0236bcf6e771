#pragma once

// Model-based map reconstruction: delay-and-sum, DAMAS by projected
// Gauss-Seidel, and DAMAS-FISTA.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/spectra.hpp"
#include "bfl/steering.hpp"

namespace bfl {

struct power_map {
    Eigen::VectorXd values;
    std::shared_ptr<const scan_grid> grid;
};

struct solve_report {
    power_map map;
    std::size_t iterations = 0;
    bool converged = false;
    double wall_time = 0;
};

namespace detail {

class stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

} // namespace detail

inline double objective(const row_matrix& A, const Eigen::VectorXd& x, const Eigen::VectorXd& b) {
    return 0.5 * (A * x - b).squaredNorm();
}

// b_n = Re(w_n^H C w_n) / M^2. The imaginary residue must stay below 1e-10 of
// the Cauchy-Schwarz bound |w|^2 ||C||_F / M^2.
inline Eigen::VectorXd das_values(const Eigen::MatrixXcd& C, const Eigen::MatrixXcd& W) {
    if (C.rows() != C.cols() || C.rows() != W.cols())
        throw parameter_error("csm is " + std::to_string(C.rows()) + "x" + std::to_string(C.cols()) +
                              " but the steering matrix has " + std::to_string(W.cols()) + " channels");
    const double m = static_cast<double>(W.cols());
    const double inv_m2 = 1.0 / (m * m);
    const Eigen::MatrixXcd Q = W * C.transpose();
    const double c_norm = C.norm();
    Eigen::VectorXd b(W.rows());
    for (Eigen::Index n = 0; n < W.rows(); ++n) {
        const std::complex<double> v = W.row(n).conjugate().cwiseProduct(Q.row(n)).sum();
        const double scale = W.row(n).squaredNorm() * c_norm;
        if (std::abs(v.imag()) > 1e-10 * scale)
            throw numerical_error("das quadratic form has a non-negligible imaginary part at grid point " +
                                  std::to_string(n) + "; is the csm Hermitian?");
        b(n) = v.real() * inv_m2;
    }
    return b;
}

inline power_map das(const csm_matrix& c, const steering_set& steering) {
    return {das_values(c.matrix, steering.W), steering.grid};
}

struct iterative_result {
    Eigen::VectorXd x;
    std::size_t iterations = 0;
    bool converged = false;
};

// Projected symmetric Gauss-Seidel on A x = b with x >= 0: a forward sweep then
// a backward sweep per iteration. Stops when ||dx|| < tol ||x||.
inline iterative_result gauss_seidel_nonneg(const row_matrix& A, const Eigen::VectorXd& b, std::size_t sweeps,
                                            double tol) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || b.size() != n) throw parameter_error("gauss-seidel needs square A matching b");
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(A(i, i) > 0)) throw parameter_error("gauss-seidel needs a positive diagonal");
    iterative_result res;
    res.x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd& x = res.x;
    auto relax = [&](Eigen::Index i) {
        const double off = A.row(i).dot(x) - A(i, i) * x(i);
        x(i) = std::max(0.0, (b(i) - off) / A(i, i));
    };
    for (std::size_t s = 1; s <= sweeps; ++s) {
        const Eigen::VectorXd before = x;
        for (Eigen::Index i = 0; i < n; ++i) relax(i);
        for (Eigen::Index i = n - 1; i >= 0; --i) relax(i);
        res.iterations = s;
        const double change = (x - before).norm();
        if (!std::isfinite(change)) throw numerical_error("gauss-seidel diverged at sweep " + std::to_string(s));
        if (change == 0 || change < tol * x.norm()) {
            res.converged = true;
            break;
        }
    }
    return res;
}

// FISTA iterate for min 1/2||Ax - b||^2, x >= 0. x_prev is x^(k-1), x is x^(k),
// y is y^(k+1) after a step, t is t^(k+1).
struct fista_state {
    Eigen::VectorXd x_prev;
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    double t = 1;
    std::size_t iteration = 0;

    explicit fista_state(Eigen::Index n)
        : x_prev(Eigen::VectorXd::Zero(n)), x(Eigen::VectorXd::Zero(n)), y(Eigen::VectorXd::Zero(n)) {}

    // Momentum weight applied to x^(k) - x^(k-1) when moving from t to t_next.
    static double momentum(double t, double t_next) { return (t + 1) / t_next; }
    static double next_t(double t) { return (1 + std::sqrt(1 + 4 * t * t)) / 2; }

    void step(const row_matrix& A, const Eigen::VectorXd& b, double inv_lipschitz) {
        x_prev.swap(x);
        const Eigen::VectorXd residual = A * y - b;
        x = (y - inv_lipschitz * (A.transpose() * residual)).cwiseMax(0.0);
        const double t_next = next_t(t);
        y = x + momentum(t, t_next) * (x - x_prev);
        t = t_next;
        ++iteration;
    }
};

inline iterative_result fista_nonneg(const row_matrix& A, const Eigen::VectorXd& b, double lipschitz, double eps,
                                     std::size_t max_iter) {
    if (!(lipschitz > 0)) throw parameter_error("lipschitz constant must be positive");
    if (!(eps > 0)) throw parameter_error("stopping threshold must be positive");
    if (A.rows() != b.size() || A.cols() != b.size()) throw parameter_error("fista needs square A matching b");
    fista_state st(b.size());
    const double inv_l = 1.0 / lipschitz;
    iterative_result res;
    while (st.iteration < max_iter) {
        st.step(A, b, inv_l);
        if (!st.x.allFinite() || !st.y.allFinite())
            throw numerical_error("damas-fista produced non-finite values at iteration " +
                                  std::to_string(st.iteration));
        const double change = (st.x - st.x_prev).norm();
        if (change == 0 || change < eps * st.x_prev.norm()) {
            res.converged = true;
            break;
        }
    }
    res.iterations = st.iteration;
    res.x = std::move(st.x);
    return res;
}

inline solve_report damas_gauss_seidel(const power_map& b, const steering_set& steering, std::size_t sweeps,
                                       double tol) {
    detail::stopwatch clock;
    auto res = gauss_seidel_nonneg(steering.A, b.values, sweeps, tol);
    return {{std::move(res.x), steering.grid}, res.iterations, res.converged, clock.seconds()};
}

inline solve_report damas_fista(const power_map& b, const steering_set& steering, double eps, std::size_t max_iter) {
    detail::stopwatch clock;
    auto res = fista_nonneg(steering.A, b.values, steering.lipschitz, eps, max_iter);
    return {{std::move(res.x), steering.grid}, res.iterations, res.converged, clock.seconds()};
}

inline solve_report das_report(const csm_matrix& c, const steering_set& steering) {
    detail::stopwatch clock;
    auto map = das(c, steering);
    return {std::move(map), 1, true, clock.seconds()};
}

inline void save_map_csv(const std::filesystem::path& path, const power_map& map) {
    if (!map.grid || map.grid->size() != static_cast<std::size_t>(map.values.size()))
        throw parameter_error("map and grid sizes differ");
    std::ostringstream os;
    os.precision(17);
    os << "x,y,power\n";
    for (std::size_t i = 0; i < map.grid->size(); ++i)
        os << map.grid->points[i].x() << ',' << map.grid->points[i].y() << ','
           << map.values(static_cast<Eigen::Index>(i)) << '\n';
    io::write_text(path, os.str());
}

// Reads "x,y,power" back; the grid is rebuilt from the coordinates and z.
inline power_map load_map_csv(const std::filesystem::path& path, double z) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open map file", path.string());
    std::string line;
    if (!std::getline(in, line) || line != "x,y,power") throw format_error("map csv lacks the x,y,power header", path.string());
    std::vector<double> xs, ys, vs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x, y, v;
        char c1, c2;
        if (!(ls >> x >> c1 >> y >> c2 >> v) || c1 != ',' || c2 != ',')
            throw format_error("malformed map row '" + line + "'", path.string());
        xs.push_back(x);
        ys.push_back(y);
        vs.push_back(v);
    }
    const auto n_side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(vs.size()))));
    if (vs.empty() || n_side * n_side != vs.size()) throw format_error("map is not square", path.string());
    const double extent = n_side > 1 ? -xs.front() : 1.0;
    auto grid = std::make_shared<const scan_grid>(make_grid(n_side, extent > 0 ? extent : 1.0, z));
    return {Eigen::Map<Eigen::VectorXd>(vs.data(), static_cast<Eigen::Index>(vs.size())), grid};
}

// Binary 8-bit PGM, min-max normalized; a constant map gives all-zero pixels.
inline void save_map_pgm(const std::filesystem::path& path, const power_map& map) {
    if (!map.grid) throw parameter_error("map has no grid");
    const std::size_t n = map.grid->n_side;
    if (n * n != static_cast<std::size_t>(map.values.size())) throw parameter_error("map and grid sizes differ");
    const double lo = map.values.minCoeff();
    const double hi = map.values.maxCoeff();
    std::string pixels(n * n, '\0');
    if (hi > lo) {
        for (std::size_t i = 0; i < n * n; ++i) {
            const double u = (map.values(static_cast<Eigen::Index>(i)) - lo) / (hi - lo);
            pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u)));
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot open for writing", path.string());
    out << "P5\n" << n << ' ' << n << "\n255\n";
    out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw format_error("write failed", path.string());
}

} // namespace bfl
