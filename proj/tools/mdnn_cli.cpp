// mdnn: train, evaluate and realize polarization-multiplexed diffractive
// networks, and run the bifocal metalens demo.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mdnn/bifocal.hpp"
#include "mdnn/checkpoint.hpp"
#include "mdnn/run_config.hpp"
#include "mdnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace mdnn;

namespace {

constexpr int exit_config = 2;
constexpr int exit_runtime = 3;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> workers;
    std::string out;
};

RunConfig load_with_overrides(const Overrides& o) {
    RunConfig rc = load_run_config(o.config);
    if (o.seed) rc.train.rng_seed = *o.seed;
    if (o.epochs) {
        if (*o.epochs < 1) throw ConfigError("must be at least 1", "epochs");
        rc.train.epochs = *o.epochs;
    }
    if (o.workers) {
        if (*o.workers < 1) throw ConfigError("must be at least 1", "workers");
        rc.train.workers = *o.workers;
    }
    if (!o.out.empty()) {
        rc.checkpoint_dir = (fs::path(o.out) / "checkpoint").string();
        rc.report_dir = (fs::path(o.out) / "reports").string();
    }
    return rc;
}

void print_diagnostics(const NetworkModel& model) {
    for (std::size_t i = 0; i < model.gaps.size(); ++i) {
        if (model.gaps[i] == 0.0) continue;
        const auto d = sampling_diagnostics({model.gaps[i], model.config}, model.n());
        std::fprintf(stderr, "gap %zu: dz=%.3g m pitch/wavelength=%.3f fresnel_number=%.3g%s\n", i, model.gaps[i],
                     d.pitch_over_wavelength, d.fresnel_number,
                     d.subwavelength_pitch ? " (sub-wavelength pitch: sampled-kernel approximation)" : "");
    }
}

std::vector<ChannelTask> plain_tasks(const RunConfig& rc) {
    std::vector<ChannelTask> out;
    for (const auto& t : rc.tasks) out.push_back(t.task);
    return out;
}

int cmd_train(const Overrides& o) {
    const RunConfig rc = load_with_overrides(o);
    require_dataset_files(rc, true, true);
    NetworkModel model = rc.make_network();
    validate_tasks(plain_tasks(rc), model.n());
    print_diagnostics(model);

    std::vector<TaskData> data;
    for (const auto& t : rc.tasks) {
        TaskData td{t.task, load_task_split(t, true), load_task_split(t, false)};
        td.train.validate(t.task.detector.classes());
        data.push_back(std::move(td));
        if (rc.init == "random") init_phases(model, t.task.channel, rc.train.rng_seed);
    }

    fs::create_directories(rc.report_dir);
    const auto result = train(model, data, rc.train, [](const EpochRecord& r) {
        std::fprintf(stderr, "epoch %zu channel %s loss %.5f train_acc %.4f test_acc %.4f\n", r.epoch,
                     to_string(r.channel), r.loss, r.train_acc, r.test_acc);
    });
    save_checkpoint(rc.checkpoint_dir, {result.model, plain_tasks(rc), rc.train.gain, rc.train.rng_seed});
    write_curves_csv((fs::path(rc.report_dir) / "curves.csv").string(), result.curves);
    for (const auto& td : data) {
        const auto ev = evaluate(result.model, td.task, td.test, rc.train.workers);
        const std::string ch = to_string(td.task.channel);
        write_confusion_csv((fs::path(rc.report_dir) / ("confusion_" + ch + ".csv")).string(), ev.confusion);
        write_energy_csv((fs::path(rc.report_dir) / ("energy_" + ch + ".csv")).string(), ev.energy);
        std::printf("channel %s test_accuracy %.4f\n", ch.c_str(), ev.confusion.accuracy());
    }
    std::printf("checkpoint written to %s\n", rc.checkpoint_dir.c_str());
    return 0;
}

/// Pairs each checkpoint task with the config task of the same channel.
const TaskConfig& matching_task(const RunConfig& rc, const ChannelTask& ck_task) {
    for (const auto& t : rc.tasks)
        if (t.task.channel == ck_task.channel) {
            if (t.task.dataset_id != ck_task.dataset_id || t.task.detector.classes() != ck_task.detector.classes())
                throw ConfigError(std::string("channel ") + to_string(ck_task.channel) +
                                      " dataset or class count differs from the checkpoint",
                                  "tasks");
            return t;
        }
    throw ConfigError(std::string("no task configured for checkpoint channel ") + to_string(ck_task.channel), "tasks");
}

void check_against_checkpoint(const RunConfig& rc, const Checkpoint& ck) {
    const auto& a = rc.optics;
    const auto& b = ck.model.config;
    if (a.wavelength != b.wavelength) throw ConfigError("differs from the checkpoint", "optics.wavelength");
    if (a.pitch != b.pitch) throw ConfigError("differs from the checkpoint", "optics.pitch");
    if (a.grid_n != b.grid_n) throw ConfigError("differs from the checkpoint", "optics.n");
}

int cmd_eval(const Overrides& o, std::string checkpoint_dir, std::string library_path) {
    const RunConfig rc = load_with_overrides(o);
    if (checkpoint_dir.empty()) checkpoint_dir = rc.checkpoint_dir;
    if (library_path.empty() && rc.library) library_path = *rc.library;
    require_dataset_files(rc, false, true);
    const Checkpoint ck = load_checkpoint(checkpoint_dir);
    check_against_checkpoint(rc, ck);
    std::optional<MetaUnitLibrary> lib;
    if (!library_path.empty()) {
        lib = load_library(library_path);
        lib->check_compatible(ck.model.config);
    }
    std::optional<NetworkModel> realized;
    if (lib) realized = realize_model(ck.model, *lib, rc.train.workers);

    const fs::path reports(rc.report_dir);
    fs::create_directories(reports);
    std::ofstream summary(reports / "eval_summary.csv", std::ios::binary);
    summary << "channel,mode,accuracy\n";
    for (const auto& task : ck.tasks) {
        const TaskConfig& tc = matching_task(rc, task);
        const LabeledImageSet test = load_task_split(tc, false);
        const std::string ch = to_string(task.channel);
        const auto phase_only = evaluate(ck.model, task, test, rc.train.workers);
        write_confusion_csv((reports / ("confusion_phase_" + ch + ".csv")).string(), phase_only.confusion);
        write_energy_csv((reports / ("energy_phase_" + ch + ".csv")).string(), phase_only.energy);
        summary << ch << ",phase-only," << detail::format_double(phase_only.confusion.accuracy()) << '\n';
        std::printf("channel %s phase-only accuracy %.4f\n", ch.c_str(), phase_only.confusion.accuracy());

        for (std::size_t i = 0; i < std::min(rc.pgm_samples, test.size()); ++i) {
            const auto f = forward_channel(encode_input(task, test.images[i], ck.model.config), ck.model, task.channel);
            const auto& s = phase_only.samples[i];
            const std::string name = "intensity_" + ch + "_" + std::to_string(i) + "_label" + std::to_string(s.label) +
                                     "_pred" + std::to_string(s.predicted) + ".pgm";
            write_pgm16((reports / name).string(), f.intensity, ck.model.n());
        }

        if (realized) {
            const auto crosstalk = evaluate(*realized, task, test, rc.train.workers);
            write_confusion_csv((reports / ("confusion_crosstalk_" + ch + ".csv")).string(), crosstalk.confusion);
            write_energy_csv((reports / ("energy_crosstalk_" + ch + ".csv")).string(), crosstalk.energy);
            write_matrix_csv((reports / ("percent_error_" + ch + ".csv")).string(),
                             compare_confusions(phase_only.confusion, crosstalk.confusion), task.detector.classes());
            summary << ch << ",amplitude-crosstalk," << detail::format_double(crosstalk.confusion.accuracy()) << '\n';
            std::printf("channel %s amplitude-crosstalk accuracy %.4f\n", ch.c_str(), crosstalk.confusion.accuracy());
        }
    }
    return 0;
}

int cmd_realize(const Overrides& o, std::string checkpoint_dir, std::string library_path) {
    const RunConfig rc = load_with_overrides(o);
    if (checkpoint_dir.empty()) checkpoint_dir = rc.checkpoint_dir;
    if (library_path.empty() && rc.library) library_path = *rc.library;
    if (library_path.empty()) throw ConfigError("a library is required (--library or paths.library)", "library");
    const Checkpoint ck = load_checkpoint(checkpoint_dir);
    const MetaUnitLibrary lib = load_library(library_path);
    lib.check_compatible(ck.model.config);

    const fs::path out = o.out.empty() ? fs::path(rc.report_dir) : fs::path(o.out);
    fs::create_directories(out);
    std::ofstream report(out / "realization_report.csv", std::ios::binary);
    report << "layer,channel,max_abs_dphi,mean_abs_dphi,min_amplitude,mean_amplitude\n";
    for (std::size_t l = 0; l < ck.model.layers.size(); ++l) {
        const auto& layer = ck.model.layers[l];
        const auto r = realize(layer.phi_x, layer.phi_y, lib, ck.model.config, rc.train.workers);
        export_layout(r.geometry, ck.model.config, (out / ("layout_layer" + std::to_string(l) + ".csv")).string());
        for (Channel c : {Channel::x, Channel::y}) {
            const RealGrid& err = c == Channel::x ? r.geometry.err_x : r.geometry.err_y;
            const RealGrid& amp = r.layer.amplitude(c);
            double mx = 0.0, mean = 0.0, amin = 1.0, amean = 0.0;
            for (std::size_t i = 0; i < err.size(); ++i) {
                mx = std::max(mx, std::abs(err[i]));
                mean += std::abs(err[i]);
                amin = std::min(amin, amp[i]);
                amean += amp[i];
            }
            mean /= static_cast<double>(err.size());
            amean /= static_cast<double>(amp.size());
            report << l << ',' << to_string(c) << ',' << detail::format_double(mx) << ','
                   << detail::format_double(mean) << ',' << detail::format_double(amin) << ','
                   << detail::format_double(amean) << '\n';
        }
    }
    std::printf("layouts written to %s\n", out.string().c_str());
    return 0;
}

int cmd_demo_bifocal(const Overrides& o) {
    const RunConfig rc = load_with_overrides(o);
    std::optional<MetaUnitLibrary> lib;
    if (rc.library) lib = load_library(*rc.library);
    const auto res = run_bifocal(rc.bifocal.focus_x, rc.bifocal.focus_y, rc.optics, rc.bifocal.n, lib ? &*lib : nullptr);
    const fs::path out = o.out.empty() ? fs::path(rc.report_dir) : fs::path(o.out);
    fs::create_directories(out);
    std::ofstream report(out / "bifocal_report.csv", std::ios::binary);
    report << "channel,designed_x,designed_y,designed_z,peak_x,peak_y,peak_intensity,cross_ratio\n";
    for (const FocusReport* r : {&res.x, &res.y}) {
        const std::string ch = to_string(r->channel);
        write_pgm16((out / ("focal_" + ch + ".pgm")).string(), r->intensity, rc.bifocal.n);
        report << ch << ',' << detail::format_double(r->designed.x) << ',' << detail::format_double(r->designed.y) << ','
               << detail::format_double(r->designed.z) << ',' << detail::format_double(r->peak_x) << ','
               << detail::format_double(r->peak_y) << ',' << detail::format_double(r->peak_intensity) << ','
               << detail::format_double(r->cross_ratio) << '\n';
        std::printf("channel %s designed (%.3g, %.3g) m, peak at (%.3g, %.3g) m, cross-polarized ratio %.4f\n",
                    ch.c_str(), r->designed.x, r->designed.y, r->peak_x, r->peak_y, r->cross_ratio);
    }
    return 0;
}

int cmd_synth_library(std::size_t steps, const std::string& path) {
    const auto lib = synth_library(steps);
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_library(path, lib);
    std::printf("%zu entries written to %s\n", lib.entries.size(), path.c_str());
    return 0;
}

template <class Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polarization-multiplexed diffractive neural network toolkit"};
    app.require_subcommand(1);

    Overrides o;
    std::string checkpoint, library;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "override train.seed");
        sub->add_option("--epochs", o.epochs, "override train.epochs");
        sub->add_option("--workers", o.workers, "override train.workers");
        sub->add_option("--out", o.out, "output directory");
    };

    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + metrics");
    add_common(train_cmd);
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (phase-only and amplitude-crosstalk)");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory (default paths.checkpoint)");
    eval_cmd->add_option("--library", library, "meta-unit library CSV for amplitude-crosstalk evaluation");
    auto* realize_cmd = app.add_subcommand("realize", "compile trained phases to nanopillar layouts");
    add_common(realize_cmd);
    realize_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory (default paths.checkpoint)");
    realize_cmd->add_option("--library", library, "meta-unit library CSV");
    auto* bifocal_cmd = app.add_subcommand("demo-bifocal", "design and simulate a polarization bifocal metalens");
    add_common(bifocal_cmd);
    std::size_t steps = 64;
    std::string library_out;
    auto* synth_cmd = app.add_subcommand("synth-library", "write a lossless steps x steps test library");
    synth_cmd->add_option("--steps", steps, "phase steps per channel")->required();
    synth_cmd->add_option("--out", library_out, "library CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    if (*train_cmd) return guarded([&] { return cmd_train(o); });
    if (*eval_cmd) return guarded([&] { return cmd_eval(o, checkpoint, library); });
    if (*realize_cmd) return guarded([&] { return cmd_realize(o, checkpoint, library); });
    if (*bifocal_cmd) return guarded([&] { return cmd_demo_bifocal(o); });
    return guarded([&] { return cmd_synth_library(steps, library_out); });
}
