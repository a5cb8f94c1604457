#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfate/errors.hpp"
#include "cfate/pipeline.hpp"

namespace {

// exit codes: 0 ok, 1 unexpected, 2 config, 3 missing input, 4 numeric or
// sampling failure, 5 file format
constexpr int kExitConfig = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitFormat = 5;

void print_error_record(const std::string& subcommand, const char* kind, const std::string& what) {
    nlohmann::json err;
    err["error"] = kind;
    err["subcommand"] = subcommand;
    err["message"] = what;
    std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"common-fate object learning pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;

    app.add_option("--config", config_path, "pipeline config JSON");
    app.add_option("--seed", seed, "master seed (overrides config)")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--jobs", jobs, "worker parallelism cap");
    app.add_option("--set", overrides, "config override KEY=VALUE (dotted path)")->type_size(1);

    for (const auto& name : cfate::pipeline::subcommand_names())
        app.add_subcommand(name, "");

    CLI11_PARSE(app, argc, argv);
    const std::string subcommand = app.get_subcommands().front()->get_name();

    try {
        nlohmann::json config_json;
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            if (!is) {
                print_error_record(subcommand, "input", "cannot open config: " + config_path);
                return kExitInput;
            }
            try {
                config_json = nlohmann::json::parse(is);
            } catch (const nlohmann::json::parse_error& e) {
                print_error_record(subcommand, "config", e.what());
                return kExitConfig;
            }
        } else {
            config_json = cfate::pipeline::config_to_json(cfate::pipeline::PipelineConfig{});
        }
        for (const auto& kv : overrides) cfate::pipeline::apply_override(config_json, kv);

        cfate::pipeline::PipelineConfig config = cfate::pipeline::config_from_json(config_json);
        if (seed_set) config.seed = seed;
        if (jobs > 0) config.jobs = jobs;

        cfate::pipeline::run_subcommand(subcommand, config);
        return 0;
    } catch (const cfate::config_error& e) {
        print_error_record(subcommand, "config", e.what());
        return kExitConfig;
    } catch (const cfate::input_error& e) {
        print_error_record(subcommand, "input", e.what());
        return kExitInput;
    } catch (const cfate::numeric_error& e) {
        print_error_record(subcommand, "numeric", e.what());
        return kExitNumeric;
    } catch (const cfate::sampling_error& e) {
        print_error_record(subcommand, "sampling", e.what());
        return kExitNumeric;
    } catch (const cfate::format_error& e) {
        print_error_record(subcommand, "format", e.what());
        return kExitFormat;
    } catch (const std::exception& e) {
        print_error_record(subcommand, "unexpected", e.what());
        return 1;
    }
}
