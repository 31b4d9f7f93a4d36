// Command-line front end: training, evaluation sweeps, gradient audits,
// scenario simulation and the component ablation grid. Every command is a
// pure function of (config file, --set overrides, --seed); outputs land under
// the configured output directory.
//
// Exit codes: 0 success, 1 gradient-audit breach, 2 usage or configuration
// error, 3 numerical failure (non-finite loss or covariance).

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "latsync/channel.hpp"
#include "latsync/config.hpp"
#include "latsync/eval.hpp"
#include "latsync/gradcheck.hpp"
#include "latsync/svg.hpp"
#include "latsync/training.hpp"
#include "latsync/util.hpp"
#include "latsync/world.hpp"

namespace {

using namespace latsync;

constexpr int kExitOk = 0;
constexpr int kExitAudit = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int threads = 1;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON experiment config (defaults when omitted)");
    cmd->add_option("--set", f.overrides, "key.path=value config override (repeatable)");
    cmd->add_option("--seed", f.seed, "master seed override");
    cmd->add_option("--out", f.out, "output directory override");
    cmd->add_option("--threads", f.threads, "worker threads for evaluation")
        ->check(CLI::PositiveNumber);
}

ExperimentConfig load_config(const CommonFlags& f) {
    ExperimentConfig cfg = load_experiment_config(f.config_path, f.overrides);
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out = *f.out;
    return cfg;
}

int parse_int_strict(const std::string& token, const std::string& what) {
    int value = 0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError(msg(what, ": '", token, "' is not an integer"));
    return value;
}

// "0,5" or "1..10" (inclusive range), mixes allowed: "0,2..4,7".
std::vector<int> parse_tau_list(const std::string& spec) {
    std::vector<int> taus;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = std::min(spec.find(',', pos), spec.size());
        const std::string token = spec.substr(pos, comma - pos);
        if (token.empty()) throw ConfigError(msg("--tau: empty entry in '", spec, "'"));
        const std::size_t dots = token.find("..");
        if (dots == std::string::npos) {
            taus.push_back(parse_int_strict(token, "--tau"));
        } else {
            const int lo = parse_int_strict(token.substr(0, dots), "--tau range start");
            const int hi = parse_int_strict(token.substr(dots + 2), "--tau range end");
            if (hi < lo) throw ConfigError(msg("--tau: empty range '", token, "'"));
            for (int t = lo; t <= hi; ++t) taus.push_back(t);
        }
        pos = comma + 1;
    }
    return taus;
}

std::vector<std::string> parse_system_list(const std::string& spec) {
    std::vector<std::string> systems;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = std::min(spec.find(',', pos), spec.size());
        const std::string token = spec.substr(pos, comma - pos);
        if (token.empty()) throw ConfigError(msg("--systems: empty entry in '", spec, "'"));
        systems.push_back(token);
        pos = comma + 1;
    }
    return systems;
}

void write_output_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    write_text_file(path.string(), content);
}

int cmd_train(const CommonFlags& flags, std::optional<int> epochs) {
    ExperimentConfig cfg = load_config(flags);
    if (epochs) cfg.train.epochs = *epochs;

    TrainResult r = train_model(cfg);
    if (r.halted) {
        std::cerr << "training halted: " << r.halt_reason << "\n";
        return kExitNumeric;
    }
    std::cout << "trained " << r.epochs_run << " epoch(s)\n"
              << "metrics:    " << r.metrics_path << "\n"
              << "checkpoint: " << r.checkpoint_prefix << ".{bin,json}\n";
    return kExitOk;
}

int cmd_eval(const CommonFlags& flags, std::string checkpoint, const std::string& systems_spec,
             const std::string& tau_spec) {
    ExperimentConfig cfg = load_config(flags);
    if (checkpoint.empty()) checkpoint = cfg.out + "/checkpoint";

    const std::vector<BenchmarkRow> rows =
        run_benchmark(cfg, checkpoint, parse_system_list(systems_spec), parse_tau_list(tau_spec),
                      flags.threads);
    const std::string csv = results_csv(rows);
    const std::filesystem::path path = std::filesystem::path(cfg.out) / "results.csv";
    write_output_file(path, csv);
    std::cout << csv;
    std::cerr << "wrote " << rows.size() << " rows to " << path.string() << "\n";
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
    const std::vector<ComponentCheck> checks = gradient_audit(seed, inject_fault);
    const ComponentCheck* worst = nullptr;
    for (const ComponentCheck& c : checks) {
        std::printf("%-34s %.3e\n", c.component.c_str(), c.max_rel_error);
        if (!worst || c.max_rel_error > worst->max_rel_error) worst = &c;
    }
    if (worst && worst->max_rel_error > 1e-4) {
        std::cerr << "gradient audit FAILED: component '" << worst->component
                  << "' max relative error " << worst->max_rel_error << " exceeds 1e-4\n";
        return kExitAudit;
    }
    std::cout << "gradient audit passed: worst relative error "
              << (worst ? worst->max_rel_error : 0.0) << "\n";
    return kExitOk;
}

int cmd_simulate(const CommonFlags& flags) {
    ExperimentConfig cfg = load_config(flags);
    const std::filesystem::path out = cfg.out;

    const Scenario scn = generate_scenario(cfg.world, cfg.seed);
    write_output_file(out / "scenario.json", scenario_to_json(scn));

    for (int f = 0; f < cfg.world.duration; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.svg", f);
        write_output_file(out / name, render_frame_svg(scn, f, ground_truth_boxes(scn, f), {}));
    }

    std::vector<LatencyTraceRow> trace;
    for (int f = 0; f < cfg.world.duration; ++f)
        for (int s = 0; s < cfg.world.agents; ++s)
            for (int r = 0; r < cfg.world.agents; ++r) {
                if (s == r) continue;
                trace.push_back({f, s, r, link_latency(cfg.channel, cfg.seed, f, s, r)});
            }
    write_output_file(out / "latency_trace.csv", latency_trace_csv(trace));

    std::cout << "scenario:   " << (out / "scenario.json").string() << "\n"
              << "frames:     " << cfg.world.duration << " SVG snapshot(s)\n"
              << "latencies:  " << (out / "latency_trace.csv").string() << "\n";
    return kExitOk;
}

int cmd_ablate(const CommonFlags& flags, const std::string& tau_spec) {
    ExperimentConfig cfg = load_config(flags);
    const std::vector<AblationRow> rows =
        run_ablation(cfg, parse_tau_list(tau_spec), flags.threads);
    const std::string csv = ablation_csv(rows);
    const std::filesystem::path path = std::filesystem::path(cfg.out) / "ablation.csv";
    write_output_file(path, csv);
    std::cout << csv;
    std::cerr << "wrote " << rows.size() << " rows to " << path.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latency-aware collaborative perception testbed"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    std::optional<int> train_epochs;
    CLI::App* train = app.add_subcommand("train", "run curriculum training");
    add_common_flags(train, train_flags);
    train->add_option("--epochs", train_epochs, "override train.epochs");

    CommonFlags eval_flags;
    std::string eval_checkpoint;
    std::string eval_systems = "no_collab,latency_unaware,late_kalman,syncnet";
    std::string eval_taus = "0..8";
    CLI::App* eval = app.add_subcommand("eval", "benchmark systems over a latency sweep");
    add_common_flags(eval, eval_flags);
    eval->add_option("--checkpoint", eval_checkpoint,
                     "checkpoint prefix (default <out>/checkpoint)");
    eval->add_option("--systems", eval_systems, "comma-separated system list");
    eval->add_option("--tau", eval_taus, "latencies: comma list and/or a..b ranges");

    std::uint64_t gc_seed = 17;
    bool gc_inject = false;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "audit gradients vs finite differences");
    gradcheck->add_option("--seed", gc_seed, "fixture seed");
    gradcheck->add_flag("--inject-fault", gc_inject,
                        "corrupt the conv2d backward to demonstrate detection");

    CommonFlags sim_flags;
    CLI::App* simulate = app.add_subcommand("simulate", "write a scenario fixture with SVG frames");
    add_common_flags(simulate, sim_flags);

    CommonFlags ablate_flags;
    std::string ablate_taus = "1,5";
    CLI::App* ablate = app.add_subcommand("ablate", "train and score the six architecture variants");
    add_common_flags(ablate, ablate_flags);
    ablate->add_option("--tau", ablate_taus, "latencies: comma list and/or a..b ranges");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;  // help/version stay 0, usage errors map to 2
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(train_flags, train_epochs);
        if (app.got_subcommand(eval))
            return cmd_eval(eval_flags, eval_checkpoint, eval_systems, eval_taus);
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(gc_seed, gc_inject);
        if (app.got_subcommand(simulate)) return cmd_simulate(sim_flags);
        if (app.got_subcommand(ablate)) return cmd_ablate(ablate_flags, ablate_taus);
        std::cerr << "no command given\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
