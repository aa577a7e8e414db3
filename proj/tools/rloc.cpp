#include "rloc/csv.hpp"
#include "rloc/pipeline.hpp"
#include "rloc/serialize.hpp"
#include "rloc/sim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;

namespace {

rloc::PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream is(path);
    if (!is) throw rloc::config_error("cannot open config file " + path);
    return rloc::parse_config(is, [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; });
}

std::vector<rloc::MrSample> load_mr(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw rloc::data_error("cannot open MR file " + path);
    return rloc::parse_mr_csv(is);
}

std::vector<rloc::StationRecord> load_stations(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw rloc::data_error("cannot open stations file " + path);
    return rloc::parse_stations_csv(is);
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw rloc::data_error("cannot write " + path.string());
    return os;
}

void write_world_csv(std::ostream& os, const rloc::sim::World& world,
                     const std::vector<rloc::sim::Track>& tracks) {
    os << "imsi,timestamp,lon,lat\n";
    constexpr std::int64_t kBaseEpochMs = 1600000000000;
    for (const auto& tr : tracks)
        for (const auto& pt : tr.points) {
            auto p = world.to_lonlat(pt.pos);
            os << tr.imsi << ',' << kBaseEpochMs + static_cast<std::int64_t>(std::llround(pt.t_s * 1000.0))
               << ',' << rloc::detail::fmt_double(p.lon) << ',' << rloc::detail::fmt_double(p.lat) << '\n';
        }
}

struct GeneratedData {
    rloc::sim::World world;
    std::vector<rloc::sim::Track> tracks;
    std::vector<rloc::MrSample> samples;
};

GeneratedData generate(const rloc::PipelineConfig& cfg) {
    GeneratedData g;
    g.world = rloc::sim::generate_world(cfg);
    g.tracks = rloc::sim::generate_trajectories(g.world, cfg.n_devices, cfg.duration_s, cfg.interval_dist);
    g.samples = rloc::sim::synthesize_mr(g.world, g.tracks, cfg.anonymize_non_serving);
    return g;
}

void write_generated(const GeneratedData& g, const fs::path& dir) {
    fs::create_directories(dir);
    {
        auto os = open_out(dir / "stations.csv");
        rloc::write_stations_csv(os, g.world.stations);
    }
    {
        auto os = open_out(dir / "mr.csv");
        rloc::write_mr_csv(os, g.samples);
    }
    {
        auto os = open_out(dir / "world.csv");
        write_world_csv(os, g.world, g.tracks);
    }
}

void write_run_outputs(const rloc::RunResult& run, const fs::path& dir) {
    fs::create_directories(dir);
    {
        auto os = open_out(dir / "trajectories.csv");
        rloc::write_trajectories_csv(os, run);
    }
    {
        auto os = open_out(dir / "detection.csv");
        rloc::write_detection_csv(os, run);
    }
}

void write_report(const rloc::Bundle& bundle, const rloc::EvalReport& report,
                  const std::vector<std::pair<double, double>>& errors, const fs::path& report_path,
                  const std::string& errors_csv) {
    {
        auto os = open_out(report_path);
        os << rloc::to_json(report, bundle.config).dump(1, '\t') << '\n';
    }
    if (!errors_csv.empty()) {
        auto os = open_out(errors_csv);
        os << "error_before_m,error_after_m\n";
        for (const auto& [eb, ea] : errors)
            os << rloc::detail::fmt_double(eb) << ',' << rloc::detail::fmt_double(ea) << '\n';
    }
    std::cout << "samples: " << report.n_samples << "\n"
              << "tau_m: " << report.tau_m << "\n"
              << "median_m: " << report.errors.median_m << " (before " << report.errors_before.median_m
              << ")\n"
              << "p95_m: " << report.errors.p95_m << " (before " << report.errors_before.p95_m << ")\n"
              << "detection P/R/F: " << report.detection.precision << " / " << report.detection.recall
              << " / " << report.detection.f_score << "\n";
}

std::vector<rloc::MrSample> flatten(const std::vector<rloc::MrSequence>& sequences) {
    std::vector<rloc::MrSample> out;
    for (const auto& seq : sequences) out.insert(out.end(), seq.samples.begin(), seq.samples.end());
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RLoc: grid localization with confidence-based detection and repair of flawed positions"};
    app.require_subcommand(1);

    std::string config_path, mr_path, stations_path, model_path, out_dir = ".", test_out;
    std::string trajectories_path, report_path = "report.json", errors_csv;
    bool no_repair = false, no_detect = false;

    // per-flag overrides applied on top of --config
    std::optional<std::uint64_t> seed;
    std::optional<double> tau_quantile, gamma, epsilon, xi, d_scale, cell_size;
    std::optional<int> k_max;
    auto add_overrides = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override seed");
        cmd->add_option("--cell-size", cell_size, "override cell_size_m");
        cmd->add_option("--tau-quantile", tau_quantile, "override tau_quantile");
        cmd->add_option("--gamma", gamma, "override gamma");
        cmd->add_option("--epsilon", epsilon, "override epsilon");
        cmd->add_option("--xi", xi, "override xi");
        cmd->add_option("--k-max", k_max, "override k_max");
        cmd->add_option("--d-scale", d_scale, "override d_scale_m");
    };
    auto apply_overrides = [&](rloc::PipelineConfig& cfg) {
        if (seed) cfg.seed = *seed;
        if (cell_size) cfg.cell_size_m = *cell_size;
        if (tau_quantile) cfg.tau_quantile = *tau_quantile;
        if (gamma) cfg.gamma = *gamma;
        if (epsilon) cfg.epsilon = *epsilon;
        if (xi) cfg.xi = *xi;
        if (k_max) cfg.k_max = *k_max;
        if (d_scale) cfg.d_scale_m = *d_scale;
    };

    auto* cmd_generate = app.add_subcommand("generate", "synthesize a world and MR samples");
    cmd_generate->add_option("--config", config_path, "key=value config file");
    cmd_generate->add_option("--out-dir", out_dir, "output directory");
    add_overrides(cmd_generate);

    auto* cmd_train = app.add_subcommand("train", "train the localization + detection + repair bundle");
    cmd_train->add_option("--mr", mr_path, "training MR csv with ground truth")->required();
    cmd_train->add_option("--stations", stations_path, "station positions csv")->required();
    cmd_train->add_option("--config", config_path, "key=value config file");
    cmd_train->add_option("--model-path", model_path, "bundle output path")->required();
    cmd_train->add_option("--test-out", test_out, "write the held-out test split to this csv");
    add_overrides(cmd_train);

    auto* cmd_run = app.add_subcommand("run", "localize, detect and repair a test MR file");
    cmd_run->add_option("--mr", mr_path, "test MR csv")->required();
    cmd_run->add_option("--model-path", model_path, "trained bundle")->required();
    cmd_run->add_option("--out-dir", out_dir, "output directory");
    cmd_run->add_flag("--no-repair", no_repair, "stop after detection");
    cmd_run->add_flag("--no-detect", no_detect, "raw localization only");

    auto* cmd_eval = app.add_subcommand("eval", "score a run against ground truth");
    cmd_eval->add_option("--trajectories", trajectories_path, "trajectories csv from run")->required();
    cmd_eval->add_option("--mr", mr_path, "MR csv carrying ground truth")->required();
    cmd_eval->add_option("--model-path", model_path, "trained bundle")->required();
    cmd_eval->add_option("--report", report_path, "report json output");
    cmd_eval->add_option("--errors-csv", errors_csv, "per-sample errors csv for CDF plotting");

    auto* cmd_pipeline = app.add_subcommand("pipeline", "generate + train + run + eval in one go");
    cmd_pipeline->add_option("--config", config_path, "key=value config file");
    cmd_pipeline->add_option("--out-dir", out_dir, "output directory");
    add_overrides(cmd_pipeline);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_generate->parsed()) {
            auto cfg = load_config(config_path);
            apply_overrides(cfg);
            write_generated(generate(cfg), out_dir);
        } else if (cmd_train->parsed()) {
            auto cfg = load_config(config_path);
            apply_overrides(cfg);
            auto samples = load_mr(mr_path);
            auto stations = load_stations(stations_path);
            auto trained = rloc::train_pipeline(samples, stations, cfg);
            rloc::save_bundle(model_path, trained.bundle);
            if (!test_out.empty()) {
                auto os = open_out(test_out);
                rloc::write_mr_csv(os, flatten(trained.test_sequences));
            }
            std::cout << "tau_m: " << trained.bundle.tau_m << "\n";
        } else if (cmd_run->parsed()) {
            auto bundle = rloc::load_bundle(model_path);
            auto samples = load_mr(mr_path);
            auto sequences = rloc::group_into_sequences(samples, bundle.config.max_gap_s);
            rloc::RunOptions opt;
            opt.detect = !no_detect;
            opt.repair = !no_repair && !no_detect;
            auto run = rloc::run_pipeline(bundle, std::move(sequences), opt);
            write_run_outputs(run, out_dir);
        } else if (cmd_eval->parsed()) {
            auto bundle = rloc::load_bundle(model_path);
            auto truth = load_mr(mr_path);
            std::ifstream ts(trajectories_path);
            if (!ts) throw rloc::data_error("cannot open " + trajectories_path);
            auto run = rloc::read_trajectories_csv(ts);
            std::vector<std::pair<double, double>> errors;
            auto report = rloc::evaluate_run(bundle, run, truth, &errors);
            write_report(bundle, report, errors, report_path, errors_csv);
        } else if (cmd_pipeline->parsed()) {
            auto cfg = load_config(config_path);
            apply_overrides(cfg);
            fs::path dir(out_dir);
            auto data = generate(cfg);
            write_generated(data, dir);
            auto trained = rloc::train_pipeline(data.samples, data.world.stations, cfg);
            rloc::save_bundle((dir / "bundle.json").string(), trained.bundle);
            {
                auto os = open_out(dir / "test.csv");
                rloc::write_mr_csv(os, flatten(trained.test_sequences));
            }
            auto run = rloc::run_pipeline(trained.bundle, trained.test_sequences);
            write_run_outputs(run, dir);
            std::vector<std::pair<double, double>> errors;
            auto report = rloc::evaluate_run(trained.bundle, run, flatten(trained.test_sequences), &errors);
            write_report(trained.bundle, report, errors, dir / "report.json", (dir / "errors.csv").string());
        }
    } catch (const rloc::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
