// Command-line front end: composes the library into batch workflows and
// emits one single-line JSON run report per invocation. Exit codes: 0 on
// success, 2 for input/contract errors, 3 for numerically degenerate inputs.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "radarfuse/radarfuse.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("RADARFUSE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw radarfuse::ContractError("RADARFUSE_SEED is not a valid unsigned integer: " +
                                           std::string(env));
        }
    }
    return 0;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw radarfuse::IoError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw radarfuse::ParseError(path.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw radarfuse::IoError("cannot open " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw radarfuse::IoError("write failed for " + path.string());
}

class RunReport {
public:
    explicit RunReport(std::string command) : start_(std::chrono::steady_clock::now()) {
        report_["command"] = std::move(command);
        report_["inputs"] = json::array();
        report_["outputs"] = json::array();
        report_["frames"] = json::array();
        report_["params"] = json::object();
    }

    void add_input(const fs::path& p) { report_["inputs"].push_back(p.string()); }
    void add_output(const fs::path& p) { report_["outputs"].push_back(p.string()); }
    void add_frame(json frame) { report_["frames"].push_back(std::move(frame)); }
    json& params() { return report_["params"]; }

    void print() {
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        report_["wall_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
        std::cout << report_.dump() << "\n";
    }

private:
    json report_;
    std::chrono::steady_clock::time_point start_;
};

/// Runs `work(i)` for i in [0, count) on up to `jobs` threads. The first
/// exception wins and is rethrown on the caller's thread.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& work) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        threads.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    work(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

radarfuse::RadarConfig load_config_or_default(const std::string& path) {
    radarfuse::RadarConfig config;
    if (!path.empty()) {
        try {
            config = read_json_file(path).get<radarfuse::RadarConfig>();
        } catch (const json::exception& e) {
            throw radarfuse::ParseError(path + ": " + e.what());
        }
    }
    config.validate();
    return config;
}

int cmd_simulate(const std::string& config_path, const std::string& targets_path,
                 const std::string& out_path, const std::string& out_dir, int frames,
                 std::uint64_t seed, double noise, int jobs) {
    RunReport report("simulate");
    report.add_input(targets_path);
    if (!config_path.empty()) report.add_input(config_path);
    report.params() = {{"seed", seed}, {"noise", noise}, {"frames", frames}};

    const radarfuse::RadarConfig config = load_config_or_default(config_path);
    const auto targets = radarfuse::load_targets_csv(targets_path);

    std::vector<fs::path> out_paths;
    if (frames == 1 && !out_path.empty()) {
        out_paths.emplace_back(out_path);
    } else if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        for (int f = 0; f < frames; ++f) {
            out_paths.emplace_back(fs::path(out_dir) /
                                   (radarfuse::frame_basename(f) + radarfuse::kCubeExtension));
        }
    } else {
        throw radarfuse::ContractError(
            "simulate: give --out for a single frame or --out-dir with --frames");
    }

    parallel_for(out_paths.size(), jobs, [&](std::size_t f) {
        const radarfuse::AdcCube cube =
            radarfuse::synthesize_adc_cube(config, targets, noise, nullptr, seed + f);
        radarfuse::write_cube(cube, out_paths[f]);
    });
    for (std::size_t f = 0; f < out_paths.size(); ++f) {
        report.add_output(out_paths[f]);
        report.add_frame({{"frame", f}, {"targets", targets.size()}});
    }
    report.print();
    return 0;
}

int cmd_process(const std::vector<std::string>& cube_paths, const std::string& config_path,
                double pfa, int guard, int train, const std::string& window_name,
                const std::string& out_path, const std::string& out_dir,
                const std::string& rd_map_path, const std::string& rd_map_dir, int jobs) {
    RunReport report("process");
    report.params() = {{"pfa", pfa}, {"guard", guard}, {"train", train}, {"window", window_name}};
    radarfuse::Window window = radarfuse::Window::none;
    if (window_name == "hann") {
        window = radarfuse::Window::hann;
    } else if (window_name != "none") {
        throw radarfuse::ContractError("process: unknown window '" + window_name +
                                       "', expected none or hann");
    }
    const radarfuse::RadarConfig config = load_config_or_default(config_path);
    radarfuse::CfarParams cfar;
    cfar.probability_false_alarm = pfa;
    cfar.guard_cells = guard;
    cfar.training_cells = train;
    cfar.validate();

    struct Task {
        fs::path cube;
        fs::path cloud_out;
        std::optional<fs::path> map_out;
        std::size_t detections = 0;
    };
    std::vector<Task> tasks;
    for (const auto& cube_path : cube_paths) {
        Task task;
        task.cube = cube_path;
        if (cube_paths.size() == 1 && !out_path.empty()) {
            task.cloud_out = out_path;
            if (!rd_map_path.empty()) task.map_out = rd_map_path;
        } else if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            task.cloud_out = fs::path(out_dir) / (task.cube.stem().string() + ".csv");
            if (!rd_map_dir.empty()) {
                fs::create_directories(rd_map_dir);
                task.map_out = fs::path(rd_map_dir) / (task.cube.stem().string() + ".pgm");
            }
        } else {
            throw radarfuse::ContractError(
                "process: give --out for a single cube or --out-dir for several");
        }
        report.add_input(task.cube);
        tasks.push_back(std::move(task));
    }

    parallel_for(tasks.size(), jobs, [&](std::size_t i) {
        Task& task = tasks[i];
        const radarfuse::AdcCube cube = radarfuse::read_cube(task.cube);
        const radarfuse::PointCloud cloud =
            radarfuse::cube_to_pointcloud(cube, config, cfar, window);
        radarfuse::write_pointcloud_csv(cloud, task.cloud_out);
        if (task.map_out) {
            const auto rd =
                radarfuse::doppler_fft(radarfuse::range_fft(cube, window), window);
            radarfuse::write_rd_map_pgm(radarfuse::rd_map(rd), *task.map_out);
        }
        task.detections = cloud.size();
    });
    for (const Task& task : tasks) {
        report.add_output(task.cloud_out);
        if (task.map_out) report.add_output(*task.map_out);
        report.add_frame({{"input", task.cube.string()}, {"detections", task.detections}});
    }
    report.print();
    return 0;
}

int cmd_calibrate_channels(const std::string& cube_path, const std::string& params_path,
                           const std::string& out_path) {
    RunReport report("calibrate-channels");
    report.add_input(cube_path);
    report.add_input(params_path);
    radarfuse::ChannelCalibParams params;
    try {
        params = read_json_file(params_path).get<radarfuse::ChannelCalibParams>();
    } catch (const json::exception& e) {
        throw radarfuse::ParseError(params_path + ": " + e.what());
    }
    const radarfuse::AdcCube cube = radarfuse::read_cube(cube_path);
    const radarfuse::ChannelCalibration calib =
        radarfuse::measure_channel_calibration(cube, params);
    write_json_file(json(calib), out_path);
    report.add_output(out_path);
    report.add_frame({{"channels", calib.num_channels()}});
    report.print();
    return 0;
}

int cmd_calibrate_extrinsics(const std::string& pairs_path, const std::string& out_path) {
    RunReport report("calibrate-extrinsics");
    report.add_input(pairs_path);
    const auto pairs = radarfuse::load_pairs_csv(pairs_path);
    const radarfuse::RigidFit fit = radarfuse::estimate_rigid_transform(pairs);
    json j(fit.transform);
    j["rms_residual_m"] = fit.rms_residual_m;
    write_json_file(j, out_path);
    report.add_output(out_path);
    report.add_frame({{"pairs", pairs.size()}, {"rms_residual_m", fit.rms_residual_m}});
    report.print();
    return 0;
}

int cmd_eval_depth(const std::string& pred_path, const std::string& gt_path) {
    RunReport report("eval-depth");
    report.add_input(pred_path);
    report.add_input(gt_path);
    const radarfuse::DepthImage pred = radarfuse::read_depth(pred_path);
    const radarfuse::DepthImage gt = radarfuse::read_depth(gt_path);
    const radarfuse::DepthMetrics metrics = radarfuse::depth_metrics(pred, gt);
    std::cout << json(metrics).dump() << "\n";
    report.add_frame(json(metrics));
    report.print();
    return 0;
}

int cmd_denoise(const std::string& in_path, const std::string& out_path, int close_kernel,
                int open_kernel) {
    RunReport report("denoise");
    report.add_input(in_path);
    report.params() = {{"close", close_kernel}, {"open", open_kernel}};
    const radarfuse::DepthImage img = radarfuse::read_depth(in_path);
    const radarfuse::DepthImage out = radarfuse::denoise_depth(img, close_kernel, open_kernel);
    radarfuse::write_depth(out, out_path);
    report.add_output(out_path);
    report.add_frame({{"valid_before", img.valid_count()}, {"valid_after", out.valid_count()}});
    report.print();
    return 0;
}

int cmd_project(const std::string& cloud_path, const std::string& calib_path,
                const std::string& intrinsics_path, const std::string& out_path) {
    RunReport report("project");
    report.add_input(cloud_path);
    report.add_input(calib_path);
    report.add_input(intrinsics_path);
    const radarfuse::PointCloud cloud = radarfuse::read_pointcloud_csv(cloud_path);
    radarfuse::RigidTransform radar_to_ir;
    radarfuse::CameraIntrinsics intrinsics;
    try {
        radar_to_ir = read_json_file(calib_path).get<radarfuse::RigidTransform>();
        intrinsics = read_json_file(intrinsics_path).get<radarfuse::CameraIntrinsics>();
    } catch (const json::exception& e) {
        throw radarfuse::ParseError(std::string("project: ") + e.what());
    }
    radar_to_ir.validate();
    const radarfuse::SparseDepthResult result =
        radarfuse::radar_to_sparse_depth(cloud, radar_to_ir, intrinsics);
    radarfuse::write_depth(result.depth, out_path);
    report.add_output(out_path);
    report.add_frame({{"points", cloud.size()},
                      {"dropped", result.dropped},
                      {"pixels_written", result.depth.valid_count()}});
    report.print();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FMCW radar cube synthesis, processing, calibration and depth tooling"};
    app.require_subcommand(1);

    // simulate
    std::string sim_config, sim_targets, sim_out, sim_out_dir;
    int sim_frames = 1, sim_jobs = 1;
    std::uint64_t sim_seed = 0;
    bool sim_seed_given = false;
    double sim_noise = 0.0;
    auto* simulate = app.add_subcommand("simulate", "Synthesize radar cubes from a target list");
    simulate->add_option("--config", sim_config, "Radar config JSON (defaults built in)");
    simulate->add_option("--targets", sim_targets, "Targets CSV")->required();
    simulate->add_option("--out", sim_out, "Output cube path (single frame)");
    simulate->add_option("--out-dir", sim_out_dir, "Output directory (with --frames)");
    simulate->add_option("--frames", sim_frames, "Number of frames to synthesize")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim_seed, "RNG seed (frame f uses seed+f)")
        ->each([&](const std::string&) { sim_seed_given = true; });
    simulate->add_option("--noise", sim_noise, "Complex noise standard deviation");
    simulate->add_option("--jobs", sim_jobs, "Worker threads")->check(CLI::PositiveNumber);

    // process
    std::vector<std::string> proc_cubes;
    std::string proc_config, proc_out, proc_out_dir, proc_rd_map, proc_rd_map_dir;
    std::string proc_window = "none";
    double proc_pfa = 1e-4;
    int proc_guard = 2, proc_train = 4, proc_jobs = 1;
    auto* process = app.add_subcommand("process", "Run the cube-to-point-cloud chain");
    process->add_option("--cube", proc_cubes, "Input cube file(s)")->required();
    process->add_option("--config", proc_config, "Radar config JSON (defaults built in)");
    process->add_option("--pfa", proc_pfa, "CFAR false-alarm probability");
    process->add_option("--guard", proc_guard, "CFAR guard cells per dimension");
    process->add_option("--train", proc_train, "CFAR training cells per dimension");
    process->add_option("--window", proc_window, "Fast/slow-time window: none or hann");
    process->add_option("--out", proc_out, "Point cloud CSV path (single cube)");
    process->add_option("--out-dir", proc_out_dir, "Point cloud output directory");
    process->add_option("--rd-map", proc_rd_map, "Also write the log-power graymap here");
    process->add_option("--rd-map-dir", proc_rd_map_dir, "Graymap output directory");
    process->add_option("--jobs", proc_jobs, "Worker threads")->check(CLI::PositiveNumber);

    // calibrate-channels
    std::string cc_cube, cc_params, cc_out;
    auto* calib_channels =
        app.add_subcommand("calibrate-channels", "Measure per-channel calibration from a corner scene");
    calib_channels->add_option("--cube", cc_cube, "Corner reflector cube")->required();
    calib_channels->add_option("--params", cc_params, "Calibration params JSON")->required();
    calib_channels->add_option("--out", cc_out, "Output calibration JSON")->required();

    // calibrate-extrinsics
    std::string ce_pairs, ce_out;
    auto* calib_extrinsics =
        app.add_subcommand("calibrate-extrinsics", "Fit a rigid transform to point correspondences");
    calib_extrinsics->add_option("--pairs", ce_pairs, "Correspondence CSV")->required();
    calib_extrinsics->add_option("--out", ce_out, "Output transform JSON")->required();

    // eval-depth
    std::string ed_pred, ed_gt;
    auto* eval_depth = app.add_subcommand("eval-depth", "Depth metrics between two rasters");
    eval_depth->add_option("--pred", ed_pred, "Predicted depth raster")->required();
    eval_depth->add_option("--gt", ed_gt, "Ground-truth depth raster")->required();

    // denoise
    std::string dn_in, dn_out;
    int dn_close = 3, dn_open = 3;
    auto* denoise = app.add_subcommand("denoise", "Morphological mask denoising of a depth raster");
    denoise->add_option("--in", dn_in, "Input depth raster")->required();
    denoise->add_option("--out", dn_out, "Output depth raster")->required();
    denoise->add_option("--close", dn_close, "Closing kernel (odd)");
    denoise->add_option("--open", dn_open, "Opening kernel (odd)");

    // project
    std::string pj_cloud, pj_calib, pj_intrinsics, pj_out;
    auto* project = app.add_subcommand("project", "Render a point cloud into a sparse depth raster");
    project->add_option("--pointcloud", pj_cloud, "Point cloud CSV")->required();
    project->add_option("--calib", pj_calib, "Radar-to-camera transform JSON")->required();
    project->add_option("--intrinsics", pj_intrinsics, "Camera intrinsics JSON")->required();
    project->add_option("--out", pj_out, "Output depth raster")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            if (!sim_seed_given) sim_seed = default_seed();
            return cmd_simulate(sim_config, sim_targets, sim_out, sim_out_dir, sim_frames,
                                sim_seed, sim_noise, sim_jobs);
        }
        if (process->parsed()) {
            return cmd_process(proc_cubes, proc_config, proc_pfa, proc_guard, proc_train,
                               proc_window, proc_out, proc_out_dir, proc_rd_map, proc_rd_map_dir,
                               proc_jobs);
        }
        if (calib_channels->parsed()) {
            return cmd_calibrate_channels(cc_cube, cc_params, cc_out);
        }
        if (calib_extrinsics->parsed()) {
            return cmd_calibrate_extrinsics(ce_pairs, ce_out);
        }
        if (eval_depth->parsed()) {
            return cmd_eval_depth(ed_pred, ed_gt);
        }
        if (denoise->parsed()) {
            return cmd_denoise(dn_in, dn_out, dn_close, dn_open);
        }
        if (project->parsed()) {
            return cmd_project(pj_cloud, pj_calib, pj_intrinsics, pj_out);
        }
    } catch (const radarfuse::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const radarfuse::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
