#pragma once

// Labeled datasets, the per-sample loss, exact reverse-mode gradients through
// the unrolled network, Adam with coupled L2 decay, and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/net.hpp"
#include "bfl/parallel.hpp"
#include "bfl/scene.hpp"
#include "bfl/solvers.hpp"
#include "bfl/spectra.hpp"
#include "bfl/steering.hpp"
#include "json.hpp"

namespace bfl {

struct source_truth {
    vec3 position = vec3::Zero();
    double power = 0;
    std::size_t grid_index = 0;
};

struct labeled_sample {
    csm_matrix csm;
    Eigen::VectorXd gt_map;
    std::vector<source_truth> sources;
    std::uint64_t noise_seed = 0;
};

// Everything about a dataset other than the grid and geometry.
struct dataset_spec {
    std::size_t count = 200;
    std::size_t n_sources = 1;
    double amplitude = 1.0;
    double frequency = 2000.0;
    double sample_rate = 51200.0;
    double duration = 0.02;
    double sound_speed = 343.0;
    std::size_t frame_length = 256;
    double snr_db = std::numeric_limits<double>::infinity();
    bool on_grid = true;
    double min_separation_spacings = 2.0;
    std::uint64_t seed = 0;
};

namespace detail {

struct drawn_sample {
    std::vector<vec3> positions;
    std::vector<double> phases;
    std::uint64_t noise_seed = 0;
};

inline std::vector<drawn_sample> draw_positions(const dataset_spec& spec, const scan_grid& grid) {
    if (spec.n_sources != 1 && spec.n_sources != 2)
        throw parameter_error("datasets support one or two sources, got " + std::to_string(spec.n_sources));
    if (spec.n_sources == 2 && grid.n_side < 2) throw parameter_error("two-source datasets need n_side >= 2");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> coord(-grid.extent, grid.extent);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    const double min_sep = spec.min_separation_spacings * grid.spacing();
    auto draw_one = [&] {
        vec3 p(coord(rng), coord(rng), grid.z);
        if (spec.on_grid) p = grid.points[grid.nearest_index(p)];
        return p;
    };
    std::vector<drawn_sample> out(spec.count);
    for (auto& s : out) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            s.positions.clear();
            for (std::size_t k = 0; k < spec.n_sources; ++k) s.positions.push_back(draw_one());
            ok = spec.n_sources == 1 || (s.positions[0] - s.positions[1]).norm() >= min_sep * (1 - 1e-9);
        }
        if (!ok) throw parameter_error("could not place sources with the required separation after 100 draws");
        s.phases.clear();
        for (std::size_t k = 0; k < spec.n_sources; ++k) s.phases.push_back(phase(rng));
        s.noise_seed = rng();
    }
    return out;
}

} // namespace detail

// Ground truth is one-hot per source at the nearest grid point with value
// (amplitude / r0)^2, the noise-free DAS peak under the 2/frame_length scaling.
inline std::vector<labeled_sample> make_dataset(const dataset_spec& spec, const scan_grid& grid,
                                                const array_geometry& geometry) {
    const auto drawn = detail::draw_positions(spec, grid);
    std::vector<labeled_sample> out(drawn.size());
    parallel_for(drawn.size(), [&](std::size_t i) {
        const auto& d = drawn[i];
        scene sc;
        sc.sample_rate = spec.sample_rate;
        sc.duration = spec.duration;
        sc.sound_speed = spec.sound_speed;
        labeled_sample& s = out[i];
        s.gt_map = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
        for (std::size_t k = 0; k < d.positions.size(); ++k) {
            sc.sources.push_back({d.positions[k], spec.amplitude, spec.frequency, d.phases[k]});
            const std::size_t idx = grid.nearest_index(d.positions[k]);
            const double r0 = (grid.points[idx] - geometry.centroid()).norm();
            const double power = (spec.amplitude / r0) * (spec.amplitude / r0);
            s.gt_map(static_cast<Eigen::Index>(idx)) = power;
            s.sources.push_back({d.positions[k], power, idx});
        }
        s.noise_seed = d.noise_seed;
        auto rec = synthesize(sc, geometry);
        if (std::isfinite(spec.snr_db)) rec = add_noise_snr(rec, spec.snr_db, d.noise_seed);
        s.csm = csm(frame_and_transform(rec, spec.frame_length, spec.frequency));
    });
    return out;
}

// Seeded shuffle, then the first floor(fraction * n) go to training.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                                   std::uint64_t rng_seed) {
    if (!(fraction > 0 && fraction < 1)) throw parameter_error("split fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(rng_seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return {std::move(train), std::move(val)};
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& data, double fraction, std::uint64_t rng_seed) {
    auto [ti, vi] = split_indices(data.size(), fraction, rng_seed);
    std::vector<T> train, val;
    train.reserve(ti.size());
    val.reserve(vi.size());
    for (auto i : ti) train.push_back(data[i]);
    for (auto i : vi) val.push_back(data[i]);
    return {std::move(train), std::move(val)};
}

// Per-sample loss is the Euclidean norm of the error.
inline double loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& gt) {
    if (pred.size() != gt.size()) throw parameter_error("loss: prediction and ground truth lengths differ");
    return (pred - gt).norm();
}

inline double batch_loss(const std::vector<Eigen::VectorXd>& preds, const std::vector<Eigen::VectorXd>& gts) {
    if (preds.size() != gts.size() || preds.empty()) throw parameter_error("batch loss needs matching, non-empty batches");
    double sum = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) sum += loss(preds[i], gts[i]);
    return sum / static_cast<double>(preds.size());
}

using gradients = net_params;

// Reverse pass through mapping -> iteration blocks -> pre-imaging for the
// per-sample loss ||x* - gt||. ReLU derivative at 0 is 0; at zero loss the
// gradient is defined as zero.
inline gradients backward(const forward_trace& tr, const csm_matrix& c, const steering_set& steering,
                          const net_params& params, const Eigen::VectorXd& gt) {
    const std::size_t L = params.depth();
    if (tr.x.size() != L || tr.r.size() != L || tr.y.size() != L || tr.data_grad.size() != L)
        throw parameter_error("trace depth does not match the parameters");
    if (tr.output.size() != gt.size() || static_cast<std::size_t>(gt.size()) != params.points())
        throw parameter_error("trace, ground truth and parameters disagree on the grid size");
    if (c.channels() != params.mics()) throw parameter_error("csm and parameters disagree on channels");

    gradients g = params.zeros_like();
    const Eigen::VectorXd diff = tr.output - gt;
    const double norm = diff.norm();
    if (norm == 0) return g;

    const row_matrix& A = steering.A;
    const Eigen::VectorXd g_out = diff / norm;
    const Eigen::VectorXd g_z = (tr.pre_activation.array() > 0).select(g_out, 0.0);
    const Eigen::VectorXd& x_last = tr.x.back();

    g.eta1 = g_z.dot(x_last);
    g.eta2 = g_z.dot(tr.fc_out);
    const Eigen::VectorXd g_fc = params.eta2 * g_z;
    g.fc_weight.noalias() = g_fc * x_last.transpose();
    g.fc_bias = g_fc;

    std::vector<Eigen::VectorXd> g_x(L, Eigen::VectorXd::Zero(gt.size()));
    g_x[L - 1] = params.eta1 * g_z + params.fc_weight.transpose() * g_fc;
    Eigen::VectorXd g_b = Eigen::VectorXd::Zero(gt.size());

    for (std::size_t kk = L; kk-- > 0;) {
        const auto k = static_cast<Eigen::Index>(kk);
        const Eigen::VectorXd g_r = (tr.r[kk].array() > 0).select(g_x[kk], 0.0);
        g.iota(k) = g_r.dot(tr.y[kk]);
        g.rho(k) = -g_r.dot(tr.data_grad[kk]);
        const Eigen::VectorXd a_gr = A * g_r;
        g_b += params.rho(k) * a_gr;
        if (kk == 0) break; // y[0] = 0 is a constant
        const Eigen::VectorXd g_y = params.iota(k) * g_r - params.rho(k) * (A.transpose() * a_gr);
        // y[kk] = tau x[kk-1] + mu (x[kk-1] - x[kk-2])
        const Eigen::Index j = k - 1;
        const Eigen::VectorXd& x1 = tr.x[kk - 1];
        const Eigen::VectorXd x2 = kk >= 2 ? tr.x[kk - 2] : Eigen::VectorXd::Zero(gt.size());
        g.tau(j) = g_y.dot(x1);
        g.mu(j) = g_y.dot(x1 - x2);
        g_x[kk - 1] += (params.tau(j) + params.mu(j)) * g_y;
        if (kk >= 2) g_x[kk - 2] -= params.mu(j) * g_y;
    }

    // b_n = Re(w_n^H C w_n)/M^2, so db/dRe(w_n) = 2 Re(H w_n)/M^2 and
    // db/dIm(w_n) = 2 Im(H w_n)/M^2 with H the Hermitian part of C.
    const Eigen::MatrixXcd W = params.complex_W();
    const Eigen::MatrixXcd Ht = 0.5 * (c.matrix.transpose() + c.matrix.conjugate());
    const Eigen::MatrixXcd Q = W * Ht;
    const double m = static_cast<double>(params.mics());
    const Eigen::VectorXd scale = g_b * (2.0 / (m * m));
    g.W_re = scale.asDiagonal() * Q.real();
    g.W_im = scale.asDiagonal() * Q.imag();
    return g;
}

struct train_config {
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    double split_fraction = 0.7;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(split_fraction > 0 && split_fraction < 1)) throw parameter_error("split_fraction must lie in (0, 1)");
        if (batch_size < 1) throw parameter_error("batch_size must be at least 1");
        if (!(learning_rate >= 0) || !(weight_decay >= 0)) throw parameter_error("learning rate and weight decay must be >= 0");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw parameter_error("adam betas must lie in [0, 1)");
        if (!(adam_eps > 0)) throw parameter_error("adam epsilon must be positive");
    }
};

struct adam_state {
    net_params m;
    net_params v;
    std::size_t step = 0;

    explicit adam_state(const net_params& shape) : m(shape.zeros_like()), v(shape.zeros_like()) {}
};

// One Adam update with bias correction; weight decay is added to the gradient
// (g' = g + wd * theta) for every parameter. A non-finite gradient aborts the
// step before anything is modified.
inline void adam_step(net_params& params, const gradients& grads, adam_state& state, const train_config& cfg) {
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].size() != g[t].size() || p[t].size() != m[t].size())
            throw parameter_error(std::string("adam: shape mismatch in ") + net_params::tensor_names[t]);
        for (double gv : g[t])
            if (!std::isfinite(gv))
                throw numerical_error(std::string("adam: non-finite gradient in ") + net_params::tensor_names[t]);
    }
    ++state.step;
    const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t i = 0; i < p[t].size(); ++i) {
            const double gi = g[t][i] + cfg.weight_decay * p[t][i];
            m[t][i] = cfg.beta1 * m[t][i] + (1 - cfg.beta1) * gi;
            v[t][i] = cfg.beta2 * v[t][i] + (1 - cfg.beta2) * gi * gi;
            const double m_hat = m[t][i] / bc1;
            const double v_hat = v[t][i] / bc2;
            p[t][i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    }
}

inline void accumulate(gradients& into, const gradients& g, double weight) {
    auto a = into.tensors();
    const auto b = g.tensors();
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t i = 0; i < a[t].size(); ++i) a[t][i] += weight * b[t][i];
}

// Mean loss and mean gradient over a batch. Per-sample gradients are summed in
// sample order, so the result does not depend on the worker count.
inline std::pair<double, gradients> batch_gradient(const std::vector<labeled_sample>& data,
                                                   const std::vector<std::size_t>& batch,
                                                   const steering_set& steering, const net_params& params) {
    gradients total = params.zeros_like();
    double loss_sum = 0;
    const double w = 1.0 / static_cast<double>(batch.size());
    const std::size_t chunk = std::max<std::size_t>(1, worker_count());
    std::vector<std::optional<gradients>> slots(chunk);
    std::vector<double> losses(chunk);
    for (std::size_t start = 0; start < batch.size(); start += chunk) {
        const std::size_t count = std::min(chunk, batch.size() - start);
        parallel_for(count, [&](std::size_t i) {
            const auto& s = data[batch[start + i]];
            auto [map, trace] = forward(s.csm, steering, params);
            losses[i] = loss(map.values, s.gt_map);
            slots[i] = backward(trace, s.csm, steering, params, s.gt_map);
        });
        for (std::size_t i = 0; i < count; ++i) {
            loss_sum += losses[i];
            accumulate(total, *slots[i], w);
        }
    }
    return {loss_sum * w, std::move(total)};
}

inline double mean_loss(const std::vector<labeled_sample>& data, const std::vector<std::size_t>& which,
                        const steering_set& steering, const net_params& params) {
    if (which.empty()) return 0;
    std::vector<double> losses(which.size());
    parallel_for(which.size(), [&](std::size_t i) {
        const auto& s = data[which[i]];
        losses[i] = loss(infer(s.csm, steering, params).values, s.gt_map);
    });
    double sum = 0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(which.size());
}

struct epoch_record {
    std::size_t epoch = 0; // 0 is the untrained network
    double train_loss = 0;
    double val_loss = 0;
    double wall_time = 0;
};

struct train_result {
    net_params params;
    std::vector<epoch_record> history;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    bool aborted = false;
    std::string abort_reason;
};

using epoch_callback = std::function<void(const epoch_record&, const net_params&)>;

// Seeded split, per-epoch shuffles, one Adam step per mini-batch. On a
// non-finite loss or gradient the run stops and returns the parameters from the
// last completed epoch.
inline train_result train_loop(const std::vector<labeled_sample>& dataset, const steering_set& steering,
                               const train_config& cfg, net_params params, const epoch_callback& on_epoch = {}) {
    cfg.validate();
    if (dataset.empty()) throw parameter_error("training needs a non-empty dataset");
    train_result res;
    std::tie(res.train_indices, res.val_indices) = split_indices(dataset.size(), cfg.split_fraction, cfg.rng_seed);
    if (res.train_indices.empty()) throw parameter_error("training split is empty");

    detail::stopwatch clock;
    epoch_record first{0, mean_loss(dataset, res.train_indices, steering, params),
                       mean_loss(dataset, res.val_indices, steering, params), clock.seconds()};
    res.history.push_back(first);
    if (on_epoch) on_epoch(first, params);

    adam_state opt(params);
    std::mt19937_64 shuffle_rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order = res.train_indices;
    net_params last_good = params;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), start + cfg.batch_size);
                const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                     order.begin() + static_cast<std::ptrdiff_t>(end));
                auto [batch_mean, grad] = batch_gradient(dataset, batch, steering, params);
                if (!std::isfinite(batch_mean)) throw numerical_error("training loss is not finite");
                loss_sum += batch_mean * static_cast<double>(batch.size());
                adam_step(params, grad, opt, cfg);
            }
        } catch (const numerical_error& e) {
            res.aborted = true;
            res.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
            params = last_good;
            break;
        }
        epoch_record rec{epoch, loss_sum / static_cast<double>(order.size()),
                         mean_loss(dataset, res.val_indices, steering, params), clock.seconds()};
        if (!std::isfinite(rec.val_loss) || !params.all_finite()) {
            res.aborted = true;
            res.abort_reason = "epoch " + std::to_string(epoch) + ": validation loss is not finite";
            params = last_good;
            break;
        }
        res.history.push_back(rec);
        last_good = params;
        if (on_epoch) on_epoch(rec, params);
    }
    res.params = std::move(params);
    return res;
}

// Dataset directory: sample_NNNNN.csm (CSM1 format) plus manifest.json.
struct dataset_manifest {
    dataset_spec spec;
    std::size_t n_side = 0;
    double extent = 0;
    double z = 0;
    std::string grid_hash;
    std::string geometry_hash;
    std::string config_hash;
};

inline std::string sample_file_name(std::size_t i) {
    std::string digits = std::to_string(i);
    return "sample_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits + ".csm";
}

inline void save_dataset(const std::filesystem::path& dir, const std::vector<labeled_sample>& data,
                         const dataset_manifest& meta) {
    std::filesystem::create_directories(dir);
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        save_csm(dir / sample_file_name(i), s.csm);
        nlohmann::json sources = nlohmann::json::array();
        for (const auto& t : s.sources)
            sources.push_back({{"x", t.position.x()},
                               {"y", t.position.y()},
                               {"z", t.position.z()},
                               {"power", t.power},
                               {"grid_index", t.grid_index}});
        samples.push_back({{"file", sample_file_name(i)}, {"noise_seed", s.noise_seed}, {"sources", sources}});
    }
    const auto& sp = meta.spec;
    nlohmann::json j = {
        {"format", "bfl-dataset"},
        {"version", 1},
        {"count", data.size()},
        {"n_sources", sp.n_sources},
        {"amplitude", sp.amplitude},
        {"frequency", sp.frequency},
        {"sample_rate", sp.sample_rate},
        {"duration", sp.duration},
        {"sound_speed", sp.sound_speed},
        {"frame_length", sp.frame_length},
        {"snr_db", std::isfinite(sp.snr_db) ? nlohmann::json(sp.snr_db) : nlohmann::json(nullptr)},
        {"on_grid", sp.on_grid},
        {"min_separation_spacings", sp.min_separation_spacings},
        {"seed", sp.seed},
        {"grid", {{"n_side", meta.n_side}, {"extent", meta.extent}, {"z", meta.z}}},
        {"grid_hash", meta.grid_hash},
        {"geometry_hash", meta.geometry_hash},
        {"config_hash", meta.config_hash},
        {"samples", samples},
    };
    io::write_text(dir / "manifest.json", j.dump(2) + "\n");
}

inline std::pair<std::vector<labeled_sample>, dataset_manifest> load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    dataset_manifest meta;
    std::vector<labeled_sample> data;
    try {
        const auto j = nlohmann::json::parse(io::read_text(manifest_path));
        if (j.at("format") != "bfl-dataset") throw format_error("not a dataset manifest", manifest_path.string());
        auto& sp = meta.spec;
        sp.count = j.at("count");
        sp.n_sources = j.at("n_sources");
        sp.amplitude = j.at("amplitude");
        sp.frequency = j.at("frequency");
        sp.sample_rate = j.at("sample_rate");
        sp.duration = j.at("duration");
        sp.sound_speed = j.at("sound_speed");
        sp.frame_length = j.at("frame_length");
        sp.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity() : j.at("snr_db").get<double>();
        sp.on_grid = j.at("on_grid");
        sp.min_separation_spacings = j.at("min_separation_spacings");
        sp.seed = j.at("seed");
        meta.n_side = j.at("grid").at("n_side");
        meta.extent = j.at("grid").at("extent");
        meta.z = j.at("grid").at("z");
        meta.grid_hash = j.at("grid_hash");
        meta.geometry_hash = j.at("geometry_hash");
        meta.config_hash = j.value("config_hash", std::string{});
        const auto n_points = static_cast<Eigen::Index>(meta.n_side * meta.n_side);
        for (const auto& e : j.at("samples")) {
            labeled_sample s;
            s.csm = load_csm(dir / e.at("file").get<std::string>());
            s.noise_seed = e.at("noise_seed");
            s.gt_map = Eigen::VectorXd::Zero(n_points);
            for (const auto& t : e.at("sources")) {
                source_truth st;
                st.position = vec3(t.at("x"), t.at("y"), t.at("z"));
                st.power = t.at("power");
                st.grid_index = t.at("grid_index");
                if (st.grid_index >= static_cast<std::size_t>(n_points))
                    throw format_error("grid_index out of range", manifest_path.string());
                s.gt_map(static_cast<Eigen::Index>(st.grid_index)) = st.power;
                s.sources.push_back(st);
            }
            data.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad dataset manifest: ") + e.what(), manifest_path.string());
    }
    return {std::move(data), std::move(meta)};
}

} // namespace bfl
