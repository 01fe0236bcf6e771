#pragma once

// The subcommands of the bfl tool as library calls. Each writes its outputs
// under cfg.out together with the resolved config (config.json) and an index
// (artifacts.json) carrying the config, grid and geometry hashes.

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "bfl/config.hpp"
#include "bfl/metrics.hpp"
#include "bfl/net.hpp"
#include "bfl/solvers.hpp"
#include "bfl/spectra.hpp"
#include "bfl/steering.hpp"
#include "bfl/train.hpp"
#include "json.hpp"

namespace bfl {

namespace fs = std::filesystem;

struct artifact_index {
    std::string command;
    std::string config_hash;
    std::string grid_hash;
    std::string geometry_hash;
    std::vector<std::string> files;
    std::vector<vec3> sources; // truth positions, when the command knows them
};

inline void save_index(const fs::path& dir, const artifact_index& idx) {
    nlohmann::json srcs = nlohmann::json::array();
    for (const auto& p : idx.sources) srcs.push_back({p.x(), p.y(), p.z()});
    const nlohmann::json j = {{"command", idx.command},       {"config_hash", idx.config_hash},
                              {"grid_hash", idx.grid_hash},   {"geometry_hash", idx.geometry_hash},
                              {"files", idx.files},           {"sources", srcs}};
    io::write_text(dir / "artifacts.json", j.dump(2) + "\n");
}

inline artifact_index load_index(const fs::path& dir) {
    const auto path = dir / "artifacts.json";
    artifact_index idx;
    try {
        const auto j = nlohmann::json::parse(io::read_text(path));
        idx.command = j.at("command");
        idx.config_hash = j.at("config_hash");
        idx.grid_hash = j.at("grid_hash");
        idx.geometry_hash = j.at("geometry_hash");
        idx.files = j.at("files").get<std::vector<std::string>>();
        for (const auto& p : j.at("sources")) idx.sources.emplace_back(p.at(0), p.at(1), p.at(2));
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad artifact index: ") + e.what(), path.string());
    }
    return idx;
}

// Grid, geometry and their hashes as implied by a config.
struct run_context {
    run_config cfg;
    array_geometry geometry;
    scan_grid grid;
    std::string grid_hash;
    std::string geometry_hash;
    fs::path out;

    explicit run_context(run_config c)
        : cfg(std::move(c)), geometry(cfg.geometry()), grid(cfg.grid()), grid_hash(grid.content_hash()),
          geometry_hash(geometry.content_hash()), out(cfg.out) {
        fs::create_directories(out);
        io::write_text(out / "config.json",
                       nlohmann::json{{"config_hash", cfg.hash()}, {"config", cfg.to_json()}}.dump(2) + "\n");
    }

    steering_set steering() const {
        return build_steering(grid, geometry, cfg.frequency, cfg.sound_speed,
                              cfg.cache_dir.empty() ? fs::path{} : fs::path(cfg.cache_dir));
    }

    artifact_index index(std::string command) const {
        return {std::move(command), cfg.hash(), grid_hash, geometry_hash, {"config.json"}, {}};
    }

    void require_same_setup(const std::string& grid_h, const std::string& geometry_h, const std::string& what,
                            const fs::path& path) const {
        if (grid_h != grid_hash)
            throw format_error(what + " was produced on a different scan grid (hash " + grid_h + ", config gives " +
                                   grid_hash + ")",
                               path.string());
        if (geometry_h != geometry_hash)
            throw format_error(what + " was produced with a different array geometry (hash " + geometry_h +
                                   ", config gives " + geometry_hash + ")",
                               path.string());
    }
};

struct simulate_result {
    fs::path record_path;
    fs::path csm_path;
};

inline simulate_result cmd_simulate(const run_config& cfg) {
    run_context ctx(cfg);
    auto rec = synthesize(cfg.make_scene(), ctx.geometry);
    if (std::isfinite(cfg.snr_db)) rec = add_noise_snr(rec, cfg.snr_db, cfg.seed);
    const auto c = csm(frame_and_transform(rec, cfg.frame_length, cfg.frequency));
    simulate_result r{ctx.out / "record.bfl", ctx.out / "sample.csm"};
    save_record(r.record_path, rec);
    save_csm(r.csm_path, c);
    save_geometry(ctx.out / "geometry.txt", ctx.geometry);
    auto idx = ctx.index("simulate");
    idx.files.insert(idx.files.end(), {"record.bfl", "sample.csm", "geometry.txt"});
    for (const auto& s : cfg.sources) idx.sources.emplace_back(s.x, s.y, cfg.z);
    save_index(ctx.out, idx);
    return r;
}

inline fs::path cmd_dataset(const run_config& cfg) {
    run_context ctx(cfg);
    const auto data = make_dataset(cfg.dataset(), ctx.grid, ctx.geometry);
    const fs::path dir = ctx.out / "dataset";
    save_dataset(dir, data,
                 {cfg.dataset(), cfg.n_side, cfg.extent, cfg.z, ctx.grid_hash, ctx.geometry_hash, cfg.hash()});
    auto idx = ctx.index("dataset");
    idx.files.push_back("dataset/manifest.json");
    save_index(ctx.out, idx);
    return dir;
}

namespace detail {

inline nlohmann::json report_json(const eval_report& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"method", r.method_name},
            {"renyi", num(r.renyi)},
            {"delta_l", num(r.delta_l)},
            {"wall_time", r.wall_time},
            {"unmatched", r.unmatched}};
}

inline std::string csv_number(double v) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline net_params load_net_for(const run_context& ctx, const fs::path& path) {
    if (path.empty()) throw parameter_error("method 'net' needs inputs.checkpoint");
    const auto meta = load_checkpoint_meta(path);
    ctx.require_same_setup(meta.grid_hash, meta.geometry_hash, "checkpoint", path);
    return load_checkpoint(path);
}

// Full pipeline from a CSM to a map for one named method.
inline map_method method_for(const std::string& name, const run_config& cfg, const steering_set& st,
                             const net_params* net) {
    if (name == "das") return [&st](const csm_matrix& c) { return das(c, st); };
    if (name == "damas")
        return [&st, &cfg](const csm_matrix& c) { return damas_gauss_seidel(das(c, st), st, cfg.gs_sweeps, cfg.gs_tol).map; };
    if (name == "damas-fista")
        return [&st, &cfg](const csm_matrix& c) { return damas_fista(das(c, st), st, cfg.fista_eps, cfg.fista_max_iter).map; };
    if (name == "net") {
        if (!net) throw parameter_error("method 'net' needs a checkpoint");
        return [&st, net](const csm_matrix& c) { return infer(c, st, *net); };
    }
    throw parameter_error("unknown method '" + name + "'");
}

} // namespace detail

struct solve_result {
    eval_report report;
    fs::path map_csv;
    fs::path map_pgm;
};

// Reconstructs one map. The CSM comes from inputs.csm (with the truth and
// hashes from the artifacts.json beside it) or, when unset, from the scene in
// the config.
inline solve_result cmd_solve(const run_config& cfg) {
    run_context ctx(cfg);
    csm_matrix c;
    std::vector<vec3> truth;
    if (!cfg.input_csm.empty()) {
        const fs::path csm_path(cfg.input_csm);
        c = load_csm(csm_path);
        const fs::path dir = csm_path.parent_path().empty() ? fs::path(".") : csm_path.parent_path();
        if (fs::exists(dir / "artifacts.json")) {
            const auto idx = load_index(dir);
            ctx.require_same_setup(idx.grid_hash, idx.geometry_hash, "csm", csm_path);
            truth = idx.sources;
        }
    } else {
        auto rec = synthesize(cfg.make_scene(), ctx.geometry);
        if (std::isfinite(cfg.snr_db)) rec = add_noise_snr(rec, cfg.snr_db, cfg.seed);
        c = csm(frame_and_transform(rec, cfg.frame_length, cfg.frequency));
        for (const auto& s : cfg.sources) truth.emplace_back(s.x, s.y, cfg.z);
    }
    if (c.channels() != ctx.geometry.size())
        throw parameter_error("csm has " + std::to_string(c.channels()) + " channels but the geometry has " +
                              std::to_string(ctx.geometry.size()) + " microphones");

    const auto st = ctx.steering();
    net_params net;
    if (cfg.method == "net") net = detail::load_net_for(ctx, cfg.input_checkpoint);
    const auto inner = detail::method_for(cfg.method, cfg, st, cfg.method == "net" ? &net : nullptr);
    power_map map;
    const map_method method = [&](const csm_matrix& x) { return map = inner(x); };

    labeled_sample inst;
    inst.csm = c;
    for (const auto& p : truth) inst.sources.push_back({p, 0, ctx.grid.nearest_index(p)});
    const auto summary = benchmark(cfg.method, method, {inst});
    solve_result r;
    r.report = summary.reports.front();
    if (truth.empty()) r.report.delta_l = std::numeric_limits<double>::quiet_NaN();

    r.map_csv = ctx.out / "map.csv";
    r.map_pgm = ctx.out / "map.pgm";
    save_map_csv(r.map_csv, map);
    save_map_pgm(r.map_pgm, map);
    io::write_text(ctx.out / "report.json", nlohmann::json::array({detail::report_json(r.report)}).dump(2) + "\n");
    io::write_text(ctx.out / "report.csv", "method,renyi,delta_l,wall_time\n" + r.report.method_name + "," +
                                               detail::csv_number(r.report.renyi) + "," +
                                               detail::csv_number(r.report.delta_l) + "," +
                                               detail::csv_number(r.report.wall_time) + "\n");
    auto idx = ctx.index("solve");
    idx.files.insert(idx.files.end(), {"map.csv", "map.pgm", "report.json", "report.csv"});
    idx.sources = truth;
    save_index(ctx.out, idx);
    return r;
}

inline std::pair<std::vector<labeled_sample>, dataset_manifest> load_dataset_for(const run_context& ctx) {
    if (ctx.cfg.input_dataset.empty()) throw parameter_error("this command needs inputs.dataset");
    auto [data, meta] = load_dataset(ctx.cfg.input_dataset);
    ctx.require_same_setup(meta.grid_hash, meta.geometry_hash, "dataset", ctx.cfg.input_dataset);
    if (data.empty()) throw format_error("dataset is empty", ctx.cfg.input_dataset);
    return {std::move(data), std::move(meta)};
}

inline train_result cmd_train(const run_config& cfg) {
    run_context ctx(cfg);
    const auto [data, meta] = load_dataset_for(ctx);
    const auto st = ctx.steering();
    const fs::path ckpt = ctx.out / "checkpoint.netp";
    const checkpoint_meta cmeta{ctx.grid_hash, ctx.geometry_hash, st.key, cfg.hash()};
    std::string csv = "epoch,train_loss,val_loss,wall_time\n";
    auto on_epoch = [&](const epoch_record& r, const net_params& p) {
        csv += std::to_string(r.epoch) + "," + detail::csv_number(r.train_loss) + "," +
               detail::csv_number(r.val_loss) + "," + detail::csv_number(r.wall_time) + "\n";
        io::write_text(ctx.out / "loss.csv", csv);
        save_checkpoint(ckpt, p, cmeta);
    };
    auto res = train_loop(data, st, cfg.train, init_params(st, cfg.init_seed(), cfg.depth, cfg.rho_mode), on_epoch);
    auto idx = ctx.index("train");
    idx.files.insert(idx.files.end(), {"checkpoint.netp", "checkpoint.netp.json", "loss.csv"});
    save_index(ctx.out, idx);
    if (res.aborted) throw numerical_error("training diverged (" + res.abort_reason + "); last good checkpoint kept");
    return res;
}

inline std::vector<benchmark_summary> cmd_eval(const run_config& cfg) {
    run_context ctx(cfg);
    const auto [data, meta] = load_dataset_for(ctx);
    const auto st = ctx.steering();
    net_params net;
    bool have_net = false;
    for (const auto& m : cfg.eval_methods)
        if (m == "net" && !have_net) {
            net = detail::load_net_for(ctx, cfg.input_checkpoint);
            have_net = true;
        }

    std::vector<labeled_sample> instances;
    if (cfg.eval_split == "val") {
        for (auto i : split_indices(data.size(), cfg.train.split_fraction, cfg.train.rng_seed).second)
            instances.push_back(data[i]);
    } else {
        instances = data;
    }

    std::vector<benchmark_summary> out;
    nlohmann::json js = nlohmann::json::array();
    std::string csv = "method,renyi,delta_l,time_mean,time_median,time_cv,instances\n";
    for (const auto& name : cfg.eval_methods) {
        const auto method = detail::method_for(name, cfg, st, have_net ? &net : nullptr);
        auto s = benchmark(name, method, instances);
        csv += name + "," + detail::csv_number(s.mean_renyi) + "," + detail::csv_number(s.mean_delta_l) + "," +
               detail::csv_number(s.mean_time) + "," + detail::csv_number(s.median_time) + "," +
               detail::csv_number(s.cv_time) + "," + std::to_string(s.reports.size()) + "\n";
        nlohmann::json per = nlohmann::json::array();
        for (const auto& r : s.reports) per.push_back(detail::report_json(r));
        js.push_back({{"method", name},
                      {"mean_renyi", std::isfinite(s.mean_renyi) ? nlohmann::json(s.mean_renyi) : nlohmann::json(nullptr)},
                      {"mean_delta_l", s.mean_delta_l},
                      {"mean_time", s.mean_time},
                      {"median_time", s.median_time},
                      {"cv_time", s.cv_time},
                      {"delta_l_reduction", "mean over sources after minimum-distance assignment"},
                      {"reports", per}});
        out.push_back(std::move(s));
    }
    io::write_text(ctx.out / "eval.csv", csv);
    io::write_text(ctx.out / "eval.json", js.dump(2) + "\n");
    auto idx = ctx.index("eval");
    idx.files.insert(idx.files.end(), {"eval.csv", "eval.json"});
    save_index(ctx.out, idx);
    return out;
}

// Map CSV -> 8-bit PGM next to the other outputs.
inline fs::path cmd_image(const run_config& cfg) {
    run_context ctx(cfg);
    if (cfg.input_map.empty()) throw parameter_error("image needs inputs.map");
    const auto map = load_map_csv(cfg.input_map, cfg.z);
    const fs::path pgm = ctx.out / (fs::path(cfg.input_map).stem().string() + ".pgm");
    save_map_pgm(pgm, map);
    auto idx = ctx.index("image");
    idx.files.push_back(pgm.filename().string());
    save_index(ctx.out, idx);
    return pgm;
}

} // namespace bfl
