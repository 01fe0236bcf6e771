#pragma once

// Run configuration for the command-line tool. Defaults, then a JSON file,
// then individual overrides are merged; keys absent from the defaults are
// rejected wherever they appear.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "bfl/error.hpp"
#include "bfl/io.hpp"
#include "bfl/net.hpp"
#include "bfl/scene.hpp"
#include "bfl/steering.hpp"
#include "bfl/train.hpp"
#include "json.hpp"

namespace bfl {

struct run_config {
    std::uint64_t seed = 0;
    std::string out = "out";
    std::string cache_dir;

    // geometry: a text file when set, otherwise the spiral below
    std::string geometry_file;
    std::size_t spiral_m = 56;
    double spiral_r_min = 0.02;
    double spiral_r_max = 0.5;
    double spiral_turns = 3;

    std::size_t n_side = 21;
    double extent = 1.0;
    double z = 2.5;

    struct source {
        double x = 0, y = 0, amplitude = 1, phase = 0;
    };
    std::vector<source> sources{source{}};
    double frequency = 2000;
    double sample_rate = 51200;
    double duration = 0.02;
    double sound_speed = 343;
    std::size_t frame_length = 256;
    double snr_db = std::numeric_limits<double>::infinity();

    std::size_t dataset_count = 200;
    std::size_t dataset_sources = 1;
    bool on_grid = true;
    double min_separation_spacings = 2;

    std::string method = "das";
    double fista_eps = 1e-3;
    std::size_t fista_max_iter = 1000;
    std::size_t gs_sweeps = 1000;
    double gs_tol = 1e-4;

    std::size_t depth = 5;
    rho_init rho_mode = rho_init::inverse_lipschitz;

    train_config train;

    std::vector<std::string> eval_methods{"das", "damas", "damas-fista", "net"};
    std::string eval_split = "all"; // all | val

    std::string input_csm, input_dataset, input_checkpoint, input_map;

    void validate() const;
    nlohmann::json to_json() const;
    static run_config from_json(const nlohmann::json& j);

    // Hash of the canonical JSON without the output directory.
    std::string hash() const {
        auto j = to_json();
        j.erase("out");
        return io::hasher().add(std::string_view(j.dump())).hex();
    }

    array_geometry geometry() const {
        if (!geometry_file.empty()) return load_geometry(geometry_file);
        return make_spiral_array(spiral_m, spiral_r_min, spiral_r_max, spiral_turns);
    }
    scan_grid grid() const { return make_grid(n_side, extent, z); }

    dataset_spec dataset() const {
        dataset_spec d;
        d.count = dataset_count;
        d.n_sources = dataset_sources;
        d.amplitude = sources.empty() ? 1.0 : sources.front().amplitude;
        d.frequency = frequency;
        d.sample_rate = sample_rate;
        d.duration = duration;
        d.sound_speed = sound_speed;
        d.frame_length = frame_length;
        d.snr_db = snr_db;
        d.on_grid = on_grid;
        d.min_separation_spacings = min_separation_spacings;
        d.seed = seed;
        return d;
    }

    scene make_scene() const {
        scene sc;
        for (const auto& s : sources) sc.sources.push_back({vec3(s.x, s.y, z), s.amplitude, frequency, s.phase});
        sc.sample_rate = sample_rate;
        sc.duration = duration;
        sc.sound_speed = sound_speed;
        return sc;
    }

    // Independent streams derived from the one seed.
    std::uint64_t init_seed() const { return seed + 1; }
    std::uint64_t train_seed() const { return seed + 2; }
};

namespace detail {

inline double json_snr(const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
}

// Overlay `src` onto `dst`; objects merge key by key, anything else replaces.
inline void merge_strict(nlohmann::json& dst, const nlohmann::json& src, const std::string& where) {
    if (!src.is_object()) throw parameter_error("config section '" + where + "' must be an object");
    for (auto it = src.begin(); it != src.end(); ++it) {
        const std::string key = where.empty() ? it.key() : where + "." + it.key();
        if (!dst.contains(it.key())) throw parameter_error("unknown config key '" + key + "'");
        auto& slot = dst[it.key()];
        if (slot.is_object())
            merge_strict(slot, it.value(), key);
        else
            slot = it.value();
    }
}

} // namespace detail

inline nlohmann::json run_config::to_json() const {
    using nlohmann::json;
    json srcs = json::array();
    for (const auto& s : sources) srcs.push_back({{"x", s.x}, {"y", s.y}, {"amplitude", s.amplitude}, {"phase", s.phase}});
    return {
        {"seed", seed},
        {"out", out},
        {"cache_dir", cache_dir},
        {"geometry",
         {{"file", geometry_file},
          {"spiral", {{"m", spiral_m}, {"r_min", spiral_r_min}, {"r_max", spiral_r_max}, {"turns", spiral_turns}}}}},
        {"grid", {{"n_side", n_side}, {"extent", extent}, {"z", z}}},
        {"scene",
         {{"sources", srcs},
          {"frequency", frequency},
          {"sample_rate", sample_rate},
          {"duration", duration},
          {"sound_speed", sound_speed},
          {"frame_length", frame_length},
          {"snr_db", std::isfinite(snr_db) ? json(snr_db) : json(nullptr)}}},
        {"dataset",
         {{"count", dataset_count},
          {"n_sources", dataset_sources},
          {"on_grid", on_grid},
          {"min_separation_spacings", min_separation_spacings}}},
        {"solver",
         {{"method", method},
          {"fista_eps", fista_eps},
          {"fista_max_iter", fista_max_iter},
          {"gs_sweeps", gs_sweeps},
          {"gs_tol", gs_tol}}},
        {"net", {{"depth", depth}, {"rho_init", rho_mode == rho_init::lipschitz ? "lipschitz" : "inverse_lipschitz"}}},
        {"train",
         {{"learning_rate", train.learning_rate},
          {"weight_decay", train.weight_decay},
          {"beta1", train.beta1},
          {"beta2", train.beta2},
          {"adam_eps", train.adam_eps},
          {"batch_size", train.batch_size},
          {"epochs", train.epochs},
          {"split_fraction", train.split_fraction}}},
        {"eval", {{"methods", eval_methods}, {"split", eval_split}}},
        {"inputs",
         {{"csm", input_csm}, {"dataset", input_dataset}, {"checkpoint", input_checkpoint}, {"map", input_map}}},
    };
}

inline run_config run_config::from_json(const nlohmann::json& j) {
    run_config c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.out = j.at("out").get<std::string>();
        c.cache_dir = j.at("cache_dir").get<std::string>();
        const auto& g = j.at("geometry");
        c.geometry_file = g.at("file").get<std::string>();
        const auto& sp = g.at("spiral");
        c.spiral_m = sp.at("m").get<std::size_t>();
        c.spiral_r_min = sp.at("r_min").get<double>();
        c.spiral_r_max = sp.at("r_max").get<double>();
        c.spiral_turns = sp.at("turns").get<double>();
        const auto& gr = j.at("grid");
        c.n_side = gr.at("n_side").get<std::size_t>();
        c.extent = gr.at("extent").get<double>();
        c.z = gr.at("z").get<double>();
        const auto& sc = j.at("scene");
        c.sources.clear();
        for (const auto& s : sc.at("sources")) {
            source src;
            nlohmann::json fields = {{"x", 0.0}, {"y", 0.0}, {"amplitude", 1.0}, {"phase", 0.0}};
            detail::merge_strict(fields, s, "scene.sources[]");
            src.x = fields["x"].get<double>();
            src.y = fields["y"].get<double>();
            src.amplitude = fields["amplitude"].get<double>();
            src.phase = fields["phase"].get<double>();
            c.sources.push_back(src);
        }
        c.frequency = sc.at("frequency").get<double>();
        c.sample_rate = sc.at("sample_rate").get<double>();
        c.duration = sc.at("duration").get<double>();
        c.sound_speed = sc.at("sound_speed").get<double>();
        c.frame_length = sc.at("frame_length").get<std::size_t>();
        c.snr_db = detail::json_snr(sc.at("snr_db"));
        const auto& d = j.at("dataset");
        c.dataset_count = d.at("count").get<std::size_t>();
        c.dataset_sources = d.at("n_sources").get<std::size_t>();
        c.on_grid = d.at("on_grid").get<bool>();
        c.min_separation_spacings = d.at("min_separation_spacings").get<double>();
        const auto& so = j.at("solver");
        c.method = so.at("method").get<std::string>();
        c.fista_eps = so.at("fista_eps").get<double>();
        c.fista_max_iter = so.at("fista_max_iter").get<std::size_t>();
        c.gs_sweeps = so.at("gs_sweeps").get<std::size_t>();
        c.gs_tol = so.at("gs_tol").get<double>();
        const auto& n = j.at("net");
        c.depth = n.at("depth").get<std::size_t>();
        const auto rho = n.at("rho_init").get<std::string>();
        if (rho == "inverse_lipschitz")
            c.rho_mode = rho_init::inverse_lipschitz;
        else if (rho == "lipschitz")
            c.rho_mode = rho_init::lipschitz;
        else
            throw parameter_error("net.rho_init must be 'inverse_lipschitz' or 'lipschitz', got '" + rho + "'");
        const auto& t = j.at("train");
        c.train.learning_rate = t.at("learning_rate").get<double>();
        c.train.weight_decay = t.at("weight_decay").get<double>();
        c.train.beta1 = t.at("beta1").get<double>();
        c.train.beta2 = t.at("beta2").get<double>();
        c.train.adam_eps = t.at("adam_eps").get<double>();
        c.train.batch_size = t.at("batch_size").get<std::size_t>();
        c.train.epochs = t.at("epochs").get<std::size_t>();
        c.train.split_fraction = t.at("split_fraction").get<double>();
        c.train.rng_seed = c.train_seed();
        const auto& e = j.at("eval");
        c.eval_methods = e.at("methods").get<std::vector<std::string>>();
        c.eval_split = e.at("split").get<std::string>();
        const auto& in = j.at("inputs");
        c.input_csm = in.at("csm").get<std::string>();
        c.input_dataset = in.at("dataset").get<std::string>();
        c.input_checkpoint = in.at("checkpoint").get<std::string>();
        c.input_map = in.at("map").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw parameter_error(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline void run_config::validate() const {
    if (geometry_file.empty() && spiral_m < 1) throw parameter_error("geometry.spiral.m must be at least 1");
    if (n_side < 1) throw parameter_error("grid.n_side must be at least 1");
    if (n_side > 48) throw parameter_error("grid.n_side is capped at 48 (dense N^2 x N^2 matrices)");
    if (!(extent > 0) || !(z > 0)) throw parameter_error("grid.extent and grid.z must be positive");
    if (!(frequency > 0) || !(sample_rate > 2 * frequency))
        throw parameter_error("scene.sample_rate must exceed twice scene.frequency");
    if (!(duration > 0) || !(sound_speed > 0)) throw parameter_error("scene.duration and scene.sound_speed must be positive");
    if (frame_length < 2) throw parameter_error("scene.frame_length must be at least 2");
    if (dataset_sources != 1 && dataset_sources != 2) throw parameter_error("dataset.n_sources must be 1 or 2");
    if (method != "das" && method != "damas" && method != "damas-fista" && method != "net")
        throw parameter_error("solver.method must be das, damas, damas-fista or net, got '" + method + "'");
    if (!(fista_eps > 0) || !(gs_tol > 0)) throw parameter_error("solver tolerances must be positive");
    if (depth < 1) throw parameter_error("net.depth must be at least 1");
    for (const auto& m : eval_methods)
        if (m != "das" && m != "damas" && m != "damas-fista" && m != "net")
            throw parameter_error("eval.methods has unknown method '" + m + "'");
    if (eval_split != "all" && eval_split != "val") throw parameter_error("eval.split must be 'all' or 'val'");
    train.validate();
}

// Overrides use dotted keys ("grid.n_side") and JSON values; a value that is
// not valid JSON is taken as a string.
struct config_override {
    std::string key;
    std::string value;
};

inline run_config resolve_config(const std::filesystem::path& file, const std::vector<config_override>& overrides) {
    nlohmann::json merged = run_config{}.to_json();
    if (!file.empty()) {
        nlohmann::json user;
        try {
            user = nlohmann::json::parse(io::read_text(file));
        } catch (const nlohmann::json::parse_error& e) {
            throw format_error(std::string("config is not valid JSON (") + e.what() + ")", file.string());
        }
        detail::merge_strict(merged, user, "");
    }
    for (const auto& o : overrides) {
        if (o.key.empty()) throw parameter_error("empty override key");
        nlohmann::json value = nlohmann::json::parse(o.value, nullptr, false);
        if (value.is_discarded()) value = o.value;
        nlohmann::json patch = value;
        std::string rest = o.key;
        std::vector<std::string> parts;
        for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
            parts.push_back(rest.substr(0, pos));
        parts.push_back(rest);
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
        detail::merge_strict(merged, patch, "");
    }
    return run_config::from_json(merged);
}

} // namespace bfl
