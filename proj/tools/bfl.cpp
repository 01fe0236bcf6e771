// bfl: simulate scenes, build datasets, solve, train and evaluate from the shell.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bfl/commands.hpp"
#include "json.hpp"

namespace {

int fail(const std::string& kind, const std::string& message, const std::string& path = {}, int code = 1) {
    nlohmann::json j = {{"error", kind}, {"message", message}};
    if (!path.empty()) j["path"] = path;
    std::cerr << j.dump() << '\n';
    return code;
}

void print_report(const bfl::eval_report& r) {
    std::cout << r.method_name << ": renyi=" << bfl::detail::csv_number(r.renyi)
              << " delta_l=" << bfl::detail::csv_number(r.delta_l) << " time=" << r.wall_time << "s\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acoustic source mapping: DAS, DAMAS, DAMAS-FISTA and an unrolled network"};
    app.require_subcommand(1);

    std::string config_file, out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed for every random stream");
        sub->add_option("--out", out_dir, "Output directory");
        sub->add_option("--set", sets, "Override a config key, e.g. --set grid.n_side=31");
    };

    auto* simulate = app.add_subcommand("simulate", "Synthesize the configured scene; write record, CSM, geometry");
    auto* dataset = app.add_subcommand("dataset", "Generate a labeled dataset directory");
    auto* solve = app.add_subcommand("solve", "Reconstruct one map with das, damas, damas-fista or net");
    auto* train = app.add_subcommand("train", "Train the unrolled network on a dataset");
    auto* eval = app.add_subcommand("eval", "Compare methods on a dataset");
    auto* image = app.add_subcommand("image", "Convert a map CSV to an 8-bit PGM");
    for (auto* s : {simulate, dataset, solve, train, eval, image}) common(s);

    std::string method, csm_path, dataset_path, checkpoint, map_path;
    std::vector<std::string> methods;
    solve->add_option("--method", method, "das | damas | damas-fista | net");
    solve->add_option("--csm", csm_path, "CSM file written by simulate");
    solve->add_option("--checkpoint", checkpoint, "Network checkpoint for --method net");
    train->add_option("--dataset", dataset_path, "Dataset directory");
    eval->add_option("--dataset", dataset_path, "Dataset directory");
    eval->add_option("--checkpoint", checkpoint, "Network checkpoint");
    eval->add_option("--methods", methods, "Methods to compare (comma separated)")->delimiter(',');
    image->add_option("--map", map_path, "Map CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage_error", e.what(), {}, 2);
    }

    try {
        std::vector<bfl::config_override> overrides;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw bfl::parameter_error("--set expects key=value, got '" + s + "'");
            overrides.push_back({s.substr(0, eq), s.substr(eq + 1)});
        }
        auto flag = [&](const std::string& key, const std::string& value) {
            if (!value.empty()) overrides.push_back({key, nlohmann::json(value).dump()});
        };
        flag("solver.method", method);
        flag("inputs.csm", csm_path);
        flag("inputs.checkpoint", checkpoint);
        flag("inputs.dataset", dataset_path);
        flag("inputs.map", map_path);
        flag("out", out_dir);
        if (!methods.empty()) overrides.push_back({"eval.methods", nlohmann::json(methods).dump()});
        for (auto* s : app.get_subcommands())
            if (s->count("--seed")) overrides.push_back({"seed", std::to_string(seed)});

        const auto cfg = bfl::resolve_config(config_file, overrides);
        if (simulate->parsed()) {
            const auto r = bfl::cmd_simulate(cfg);
            std::cout << "wrote " << r.record_path.string() << " and " << r.csm_path.string() << '\n';
        } else if (dataset->parsed()) {
            std::cout << "wrote " << bfl::cmd_dataset(cfg).string() << '\n';
        } else if (solve->parsed()) {
            const auto r = bfl::cmd_solve(cfg);
            print_report(r.report);
        } else if (train->parsed()) {
            const auto r = bfl::cmd_train(cfg);
            const auto& first = r.history.front();
            const auto& last = r.history.back();
            std::cout << "val loss " << first.val_loss << " -> " << last.val_loss << " after " << last.epoch
                      << " epochs\n";
        } else if (eval->parsed()) {
            for (const auto& s : bfl::cmd_eval(cfg))
                std::cout << s.reports.front().method_name << ": renyi=" << bfl::detail::csv_number(s.mean_renyi)
                          << " delta_l=" << bfl::detail::csv_number(s.mean_delta_l)
                          << " time=" << s.mean_time << "s\n";
        } else if (image->parsed()) {
            std::cout << "wrote " << bfl::cmd_image(cfg).string() << '\n';
        }
    } catch (const bfl::format_error& e) {
        return fail(e.kind(), e.what(), e.path(), 3);
    } catch (const bfl::error& e) {
        return fail(e.kind(), e.what(), {}, e.kind() == std::string("numerical_error") ? 4 : 2);
    } catch (const std::exception& e) {
        return fail("internal_error", e.what());
    }
    return 0;
}
