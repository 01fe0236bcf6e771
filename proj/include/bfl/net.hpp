#pragma once

// Unrolled DAMAS-FISTA network: pre-imaging, L iteration blocks
// (reconstruction, non-linearity, momentum) and the residual mapping layer.
//
// Layer indices are 0-based here: block k = 0 .. L-1 uses iota[k], rho[k],
// tau[k], mu[k]. The momentum after the last block feeds nothing and is not
// evaluated, so tau[L-1] and mu[L-1] never influence the output.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/solvers.hpp"
#include "bfl/spectra.hpp"
#include "bfl/steering.hpp"
#include "json.hpp"

namespace bfl {

enum class rho_init { inverse_lipschitz, lipschitz };

struct net_params {
    row_matrix W_re; // N^2 x M
    row_matrix W_im;
    Eigen::VectorXd iota, rho, tau, mu; // one entry per block
    double eta1 = 1;
    double eta2 = 1;
    row_matrix fc_weight; // N^2 x N^2
    Eigen::VectorXd fc_bias;

    std::size_t depth() const { return static_cast<std::size_t>(iota.size()); }
    std::size_t points() const { return static_cast<std::size_t>(W_re.rows()); }
    std::size_t mics() const { return static_cast<std::size_t>(W_re.cols()); }

    static constexpr std::size_t tensor_count = 10;
    static constexpr std::array<const char*, tensor_count> tensor_names = {
        "W_re", "W_im", "iota", "rho", "tau", "mu", "eta1", "eta2", "fc_weight", "fc_bias"};

    // Flat views in a fixed order; the optimizer and checkpoint code walk these.
    std::array<std::span<double>, tensor_count> tensors() {
        return {span_of(W_re), span_of(W_im), span_of(iota), span_of(rho), span_of(tau), span_of(mu),
                std::span<double>(&eta1, 1), std::span<double>(&eta2, 1), span_of(fc_weight), span_of(fc_bias)};
    }
    std::array<std::span<const double>, tensor_count> tensors() const {
        auto v = const_cast<net_params*>(this)->tensors();
        std::array<std::span<const double>, tensor_count> out;
        for (std::size_t i = 0; i < tensor_count; ++i) out[i] = v[i];
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto t : tensors()) n += t.size();
        return n;
    }

    // Same shapes, every entry zero. Gradients and Adam moments use this.
    net_params zeros_like() const {
        net_params z = *this;
        for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
        return z;
    }

    Eigen::MatrixXcd complex_W() const {
        Eigen::MatrixXcd W(W_re.rows(), W_re.cols());
        W.real() = W_re;
        W.imag() = W_im;
        return W;
    }

    bool all_finite() const {
        for (auto t : tensors())
            for (double v : t)
                if (!std::isfinite(v)) return false;
        return true;
    }

private:
    template <class M>
    static std::span<double> span_of(M& m) {
        return {m.data(), static_cast<std::size_t>(m.size())};
    }
};

// Warm start: W from the steering set, iota = tau = mu = eta1 = eta2 = 1,
// rho = 1/Lipschitz (or the Lipschitz constant itself under rho_init::lipschitz),
// Xavier-uniform fully connected weights, zero bias.
inline net_params init_params(const steering_set& steering, std::uint64_t rng_seed, std::size_t depth = 5,
                              rho_init rho_mode = rho_init::inverse_lipschitz) {
    if (depth < 1) throw parameter_error("network depth must be at least 1");
    if (!(steering.lipschitz > 0)) throw parameter_error("steering set has no positive lipschitz constant");
    const auto n = static_cast<Eigen::Index>(steering.points());
    const auto L = static_cast<Eigen::Index>(depth);
    net_params p;
    p.W_re = steering.W.real();
    p.W_im = steering.W.imag();
    p.iota = Eigen::VectorXd::Ones(L);
    p.rho = Eigen::VectorXd::Constant(
        L, rho_mode == rho_init::inverse_lipschitz ? 1.0 / steering.lipschitz : steering.lipschitz);
    p.tau = Eigen::VectorXd::Ones(L);
    p.mu = Eigen::VectorXd::Ones(L);
    p.eta1 = 1;
    p.eta2 = 1;
    const double bound = std::sqrt(6.0 / static_cast<double>(n + n));
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> xavier(-bound, bound);
    p.fc_weight.resize(n, n);
    for (Eigen::Index i = 0; i < p.fc_weight.size(); ++i) p.fc_weight.data()[i] = xavier(rng);
    p.fc_bias = Eigen::VectorXd::Zero(n);
    return p;
}

struct forward_trace {
    Eigen::VectorXd b;
    std::vector<Eigen::VectorXd> y;        // y[k] enters block k; y[0] = 0
    std::vector<Eigen::VectorXd> data_grad; // A^T (A y[k] - b)
    std::vector<Eigen::VectorXd> r;
    std::vector<Eigen::VectorXd> x;        // x[k] leaves block k
    Eigen::VectorXd fc_out;
    Eigen::VectorXd pre_activation;        // eta1 x_L + eta2 fc_out
    Eigen::VectorXd output;
};

inline void check_net_shapes(const csm_matrix& c, const steering_set& steering, const net_params& params) {
    if (params.depth() < 1) throw parameter_error("network depth must be at least 1");
    if (params.points() != steering.points() || static_cast<std::size_t>(steering.A.rows()) != params.points())
        throw parameter_error("network and steering set disagree on the grid size");
    if (c.channels() != params.mics())
        throw parameter_error("csm has " + std::to_string(c.channels()) + " channels, network expects " +
                              std::to_string(params.mics()));
}

// b_n = Re(w_n^H C w_n) / M^2 with w_n the n-th row of the learnable W.
inline Eigen::VectorXd pre_imaging_layer(const csm_matrix& c, const net_params& params) {
    if (c.channels() != params.mics()) throw parameter_error("pre-imaging layer: csm and W disagree on channels");
    const Eigen::MatrixXcd W = params.complex_W();
    const Eigen::MatrixXcd Q = W * c.matrix.transpose();
    const double m = static_cast<double>(params.mics());
    return (W.conjugate().cwiseProduct(Q)).rowwise().sum().real() / (m * m);
}

inline Eigen::VectorXd reconstruction_layer(const Eigen::VectorXd& y, const Eigen::VectorXd& b, const row_matrix& A,
                                            std::size_t k, const net_params& params) {
    const auto ki = static_cast<Eigen::Index>(k);
    return params.iota(ki) * y - params.rho(ki) * (A.transpose() * (A * y - b));
}

inline Eigen::VectorXd nonlinear_layer(const Eigen::VectorXd& r) { return r.cwiseMax(0.0); }

inline Eigen::VectorXd momentum_layer(const Eigen::VectorXd& x_curr, const Eigen::VectorXd& x_prev, std::size_t k,
                                      const net_params& params) {
    const auto ki = static_cast<Eigen::Index>(k);
    return params.tau(ki) * x_curr + params.mu(ki) * (x_curr - x_prev);
}

struct mapping_output {
    Eigen::VectorXd fc_out;
    Eigen::VectorXd pre_activation;
    Eigen::VectorXd output;
};

inline mapping_output mapping_layer(const Eigen::VectorXd& x_last, const net_params& params) {
    mapping_output m;
    m.fc_out = params.fc_weight * x_last + params.fc_bias;
    m.pre_activation = params.eta1 * x_last + params.eta2 * m.fc_out;
    m.output = m.pre_activation.cwiseMax(0.0);
    return m;
}

inline std::pair<power_map, forward_trace> forward(const csm_matrix& c, const steering_set& steering,
                                                   const net_params& params) {
    check_net_shapes(c, steering, params);
    const std::size_t L = params.depth();
    const row_matrix& A = steering.A;
    forward_trace tr;
    tr.b = pre_imaging_layer(c, params);
    const Eigen::Index n = tr.b.size();
    tr.y.reserve(L);
    tr.r.reserve(L);
    tr.x.reserve(L);
    tr.data_grad.reserve(L);
    tr.y.push_back(Eigen::VectorXd::Zero(n));
    Eigen::VectorXd x_prev = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < L; ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        tr.data_grad.push_back(A.transpose() * (A * tr.y[k] - tr.b));
        tr.r.push_back(params.iota(ki) * tr.y[k] - params.rho(ki) * tr.data_grad[k]);
        tr.x.push_back(nonlinear_layer(tr.r[k]));
        if (!tr.x[k].allFinite()) throw numerical_error("network block " + std::to_string(k) + " is not finite");
        if (k + 1 < L) tr.y.push_back(momentum_layer(tr.x[k], k == 0 ? x_prev : tr.x[k - 1], k, params));
    }
    auto m = mapping_layer(tr.x.back(), params);
    tr.fc_out = std::move(m.fc_out);
    tr.pre_activation = std::move(m.pre_activation);
    tr.output = std::move(m.output);
    return {power_map{tr.output, steering.grid}, std::move(tr)};
}

// Output only, without keeping the activation trace.
inline power_map infer(const csm_matrix& c, const steering_set& steering, const net_params& params) {
    check_net_shapes(c, steering, params);
    const row_matrix& A = steering.A;
    const Eigen::VectorXd b = pre_imaging_layer(c, params);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd x_prev = y;
    Eigen::VectorXd x = y;
    for (std::size_t k = 0; k < params.depth(); ++k) {
        x = nonlinear_layer(reconstruction_layer(y, b, A, k, params));
        if (k + 1 < params.depth()) y = momentum_layer(x, x_prev, k, params);
        x_prev = x;
    }
    return {mapping_layer(x, params).output, steering.grid};
}

struct checkpoint_meta {
    std::string grid_hash;
    std::string geometry_hash;
    std::string steering_key;
    std::string config_hash;
};

inline void save_checkpoint(const std::filesystem::path& path, const net_params& p, const checkpoint_meta& meta) {
    io::binary_writer w(path);
    w.magic("NETP");
    w.put(static_cast<std::uint32_t>(p.points()));
    w.put(static_cast<std::uint32_t>(p.mics()));
    w.put(static_cast<std::uint32_t>(p.depth()));
    w.put_doubles({p.W_re.data(), static_cast<std::size_t>(p.W_re.size())});
    w.put_doubles({p.W_im.data(), static_cast<std::size_t>(p.W_im.size())});
    for (std::size_t k = 0; k < p.depth(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        w.put(p.iota(ki));
        w.put(p.rho(ki));
        w.put(p.tau(ki));
        w.put(p.mu(ki));
    }
    w.put(p.eta1);
    w.put(p.eta2);
    w.put_doubles({p.fc_weight.data(), static_cast<std::size_t>(p.fc_weight.size())});
    w.put_doubles({p.fc_bias.data(), static_cast<std::size_t>(p.fc_bias.size())});
    w.close();

    nlohmann::json side = {{"format", "NETP"},
                           {"points", p.points()},
                           {"mics", p.mics()},
                           {"depth", p.depth()},
                           {"grid_hash", meta.grid_hash},
                           {"geometry_hash", meta.geometry_hash},
                           {"steering_key", meta.steering_key},
                           {"config_hash", meta.config_hash}};
    io::write_text(path.string() + ".json", side.dump(2) + "\n");
}

inline checkpoint_meta load_checkpoint_meta(const std::filesystem::path& path) {
    const auto side_path = std::filesystem::path(path.string() + ".json");
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(io::read_text(side_path));
        return {side.at("grid_hash").get<std::string>(), side.at("geometry_hash").get<std::string>(),
                side.at("steering_key").get<std::string>(), side.value("config_hash", std::string{})};
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad checkpoint sidecar: ") + e.what(), side_path.string());
    }
}

// Loads parameters; when `expected` is given the sidecar hashes must match it.
inline net_params load_checkpoint(const std::filesystem::path& path, const checkpoint_meta* expected = nullptr) {
    if (expected) {
        const auto meta = load_checkpoint_meta(path);
        if (meta.grid_hash != expected->grid_hash || meta.geometry_hash != expected->geometry_hash)
            throw format_error("checkpoint was trained for a different grid or geometry", path.string());
    }
    io::binary_reader r(path);
    r.expect_magic("NETP");
    const auto n = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    const auto m = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    const auto L = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    if (L < 1) throw format_error("checkpoint depth is zero", path.string());
    net_params p;
    p.W_re.resize(n, m);
    p.W_im.resize(n, m);
    r.get_doubles({p.W_re.data(), static_cast<std::size_t>(p.W_re.size())});
    r.get_doubles({p.W_im.data(), static_cast<std::size_t>(p.W_im.size())});
    p.iota.resize(L);
    p.rho.resize(L);
    p.tau.resize(L);
    p.mu.resize(L);
    for (Eigen::Index k = 0; k < L; ++k) {
        p.iota(k) = r.get<double>();
        p.rho(k) = r.get<double>();
        p.tau(k) = r.get<double>();
        p.mu(k) = r.get<double>();
    }
    p.eta1 = r.get<double>();
    p.eta2 = r.get<double>();
    p.fc_weight.resize(n, n);
    p.fc_bias.resize(n);
    r.get_doubles({p.fc_weight.data(), static_cast<std::size_t>(p.fc_weight.size())});
    r.get_doubles({p.fc_bias.data(), static_cast<std::size_t>(p.fc_bias.size())});
    r.expect_end();
    if (!p.all_finite()) throw format_error("checkpoint holds non-finite parameters", path.string());
    return p;
}

} // namespace bfl
