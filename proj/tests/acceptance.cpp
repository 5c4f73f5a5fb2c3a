// Acceptance run: one PASS/FAIL line per criterion.
//
// Dataset-backed criteria read MNIST and Fashion-MNIST IDX files from
// $MDNN_DATA_DIR (default /root/data), laid out as <dir>/{mnist,fashion}/
// {train,t10k}-{images-idx3,labels-idx1}-ubyte. MDNN_ACCEPT_EPOCHS overrides
// the epoch count of the desk-scale runs.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdnn/bifocal.hpp"
#include "mdnn/checkpoint.hpp"
#include "mdnn/trainer.hpp"

using namespace mdnn;
namespace fs = std::filesystem;
using cd = std::complex<double>;

namespace {

// ---- settings ---------------------------------------------------------------

constexpr double wavelength = 532e-9;
constexpr double pitch = 400e-9;
constexpr double desk_gap = 10e-6;   // 28x28 runs; see README for the 100 um case
constexpr double desk_gain = 200.0;
constexpr std::size_t desk_epochs = 20;
const std::vector<std::uint64_t> seeds{1, 2, 3};

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- independent optics oracle ----------------------------------------------

// Rayleigh-Sommerfeld impulse response written out from the closed form.
cd rs_oracle(double x, double y, double z) {
    const double k = 2.0 * std::numbers::pi / wavelength;
    const double r = std::sqrt(x * x + y * y + z * z);
    return (z / r) * (1.0 / r - cd(0.0, k)) * std::exp(cd(0.0, k * r)) / (2.0 * std::numbers::pi * r);
}

// Direct sum over every source/target pixel pair, coordinates relative.
std::vector<cd> direct_oracle(const std::vector<cd>& u, std::size_t n, double z) {
    std::vector<cd> out(n * n);
    for (std::size_t yo = 0; yo < n; ++yo)
        for (std::size_t xo = 0; xo < n; ++xo) {
            cd acc = 0.0;
            for (std::size_t yi = 0; yi < n; ++yi)
                for (std::size_t xi = 0; xi < n; ++xi)
                    acc += u[yi * n + xi] * rs_oracle((double(xo) - double(xi)) * pitch, (double(yo) - double(yi)) * pitch, z);
            out[yo * n + xo] = acc * pitch * pitch;
        }
    return out;
}

ComplexGrid random_field(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    ComplexGrid g(n, pitch);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = {d(rng), d(rng)};
    return g;
}

cd inner(const ComplexGrid& a, const ComplexGrid& b) {
    cd acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
    return acc;
}

void criterion_1() {
    const std::size_t n = 16;
    const PropagationSpec spec{100e-6, OpticalConfig{wavelength, pitch, n}};
    std::mt19937_64 rng(101);
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto u = random_field(n, rng);
        const auto fast = propagate_fft(u, spec);
        const auto ref = direct_oracle(std::vector<cd>(u.data().begin(), u.data().end()), n, spec.dz);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            num = std::max(num, std::abs(fast[i] - ref[i]));
            den = std::max(den, std::abs(ref[i]));
        }
        worst = std::max(worst, num / den);
    }
    const double secs = seconds_since(t0);
    report(1, worst <= 1e-9 && secs < 10.0,
           fmt("FFT vs direct sum, 20 fields 16x16: max rel err %.3e (<= 1e-9), %.2f s (< 10 s)", worst, secs));
}

void criterion_2() {
    const std::size_t n = 16;
    const PropagationSpec spec{100e-6, OpticalConfig{wavelength, pitch, n}};
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto x = random_field(n, rng), y = random_field(n, rng);
        const cd lhs = inner(y, propagate_fft(x, spec));     // <Px, y>
        const cd rhs = inner(propagate_adjoint(y, spec), x); // <x, P^H y>
        worst = std::max(worst, std::abs(lhs - rhs) / (std::abs(lhs) + 1e-300));
    }
    report(2, worst <= 1e-9, fmt("adjoint identity over 20 pairs: max rel mismatch %.3e (<= 1e-9)", worst));
}

// ---- model-level checks -----------------------------------------------------

NetworkModel random_model(std::size_t n, std::size_t layers, std::uint64_t seed) {
    NetworkModel m = make_model(OpticalConfig{wavelength, pitch, n}, layers, 0.0, desk_gap);
    init_phases(m, Channel::x, seed);
    init_phases(m, Channel::y, seed + 1);
    return m;
}

ComplexGrid random_amplitude_input(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(n, 0.0);
    for (auto& v : img.pixels) v = u(rng);
    return encode_amplitude(img, pitch);
}

void criterion_3() {
    const std::size_t n = 16;
    const auto m = random_model(n, 2, 303);
    const auto layout = default_layout(n, 10);
    std::mt19937_64 rng(304);
    std::uniform_int_distribution<std::size_t> pixel(0, n * n - 1);
    const double h = 1e-5, gain = 10.0;
    int checked = 0;
    double worst = 0.0;
    for (Channel ch : {Channel::x, Channel::y}) {
        const auto in = random_amplitude_input(n, rng);
        const int label = ch == Channel::x ? 3 : 8;
        const auto grad = loss_gradient(in, m, ch, label, layout, gain);
        for (std::size_t l = 0; l < 2; ++l)
            for (int t = 0; t < 15; ++t) {
                const std::size_t i = pixel(rng);
                NetworkModel plus = m, minus = m;
                plus.layers[l].phase(ch)[i] += h;
                minus.layers[l].phase(ch)[i] -= h;
                const double fd = (channel_loss(in, plus, ch, label, layout, gain) -
                                   channel_loss(in, minus, ch, label, layout, gain)) /
                                  (2.0 * h);
                const double an = grad.phase[l][i];
                worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
                ++checked;
            }
    }
    report(3, checked >= 50 && worst <= 1e-3,
           fmt("gradient vs central differences (h=1e-5), %d coords on 16x16x2: max rel err %.3e (<= 1e-3)", checked,
               worst));
}

void criterion_4() {
    const std::size_t n = 28;
    const auto m = random_model(n, 3, 404);
    NetworkModel mutated = m;
    for (auto& layer : mutated.layers)
        for (std::size_t i = 0; i < layer.phi_y.size(); ++i) {
            layer.phi_y[i] = std::fmod(layer.phi_y[i] * 7.0 + 1.0, two_pi);
            layer.a_y[i] = 0.5;
        }
    std::mt19937_64 rng(405);
    const auto layout = default_layout(n, 10);
    bool identical = true;
    for (int t = 0; t < 5; ++t) {
        const auto in = random_amplitude_input(n, rng);
        const auto a = forward_channel(in, m, Channel::x), b = forward_channel(in, mutated, Channel::x);
        const auto ga = backward(a, m, t, layout, 10.0), gb = backward(b, mutated, t, layout, 10.0);
        identical = identical && a.out == b.out && a.intensity == b.intensity && ga.loss == gb.loss && ga.phase == gb.phase;
    }
    report(4, identical, fmt("x outputs and gradients after mutating every y phase: %s",
                             identical ? "bit-identical" : "DIFFER"));
}

// ---- desk-scale training ----------------------------------------------------

struct Split {
    LabeledImageSet train, test;
};

std::optional<Split> load_dataset(const fs::path& root, const std::string& name) {
    const fs::path d = root / name;
    try {
        return Split{load_idx((d / "train-images-idx3-ubyte").string(), (d / "train-labels-idx1-ubyte").string()),
                     load_idx((d / "t10k-images-idx3-ubyte").string(), (d / "t10k-labels-idx1-ubyte").string())};
    } catch (const std::exception& e) {
        std::printf("note: cannot load %s: %s\n", d.string().c_str(), e.what());
        return std::nullopt;
    }
}

struct RunOutcome {
    NetworkModel model;
    std::vector<EpochRecord> curves;
    EvalResult eval;
    double seconds = 0.0;
};

RunOutcome train_and_eval(const Split& data, const std::string& dataset_id, std::size_t layers, std::uint64_t seed,
                          std::size_t epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    NetworkModel model = make_model(OpticalConfig{wavelength, pitch, 28}, layers, 0.0, desk_gap);
    init_phases(model, Channel::x, seed);
    TaskData td;
    td.task.channel = Channel::x;
    td.task.dataset_id = dataset_id;
    td.task.encoding = Encoding::phase;
    td.task.detector = default_layout(28, 10);
    td.train = data.train;
    td.test = data.test;
    TrainConfig cfg;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.1;
    cfg.epochs = epochs;
    cfg.rng_seed = seed;
    cfg.train_subset = 10000;
    cfg.gain = desk_gain;
    cfg.curve_test = false;
    RunOutcome out;
    auto trained = train(model, {td}, cfg);
    out.model = std::move(trained.model);
    out.curves = std::move(trained.curves);
    out.eval = evaluate(out.model, td.task, data.test);
    out.seconds = seconds_since(t0);
    std::printf("  %-13s layers=%zu seed=%llu epochs=%zu: test acc %.4f (%.0f s)\n", dataset_id.c_str(), layers,
                static_cast<unsigned long long>(seed), epochs, out.eval.confusion.accuracy(), out.seconds);
    std::fflush(stdout);
    return out;
}

double mean_acc(const std::vector<RunOutcome>& runs) {
    double s = 0.0;
    for (const auto& r : runs) s += r.eval.confusion.accuracy();
    return s / static_cast<double>(runs.size());
}

void desk_scale(const fs::path& data_root, std::size_t epochs) {
    const auto mnist = load_dataset(data_root, "mnist");
    const auto fashion = load_dataset(data_root, "fashion");
    if (!mnist || !fashion) {
        const std::string why = "datasets not found under " + data_root.string() + " (set MDNN_DATA_DIR)";
        for (int id : {5, 6, 7, 8, 10}) report(id, false, why);
        return;
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RunOutcome> m3, f3, m1;
    for (auto s : seeds) m3.push_back(train_and_eval(*mnist, "mnist", 3, s, epochs));
    for (auto s : seeds) f3.push_back(train_and_eval(*fashion, "fashion-mnist", 3, s, epochs));
    for (auto s : seeds) m1.push_back(train_and_eval(*mnist, "mnist", 1, s, epochs));
    const double am = mean_acc(m3), af = mean_acc(f3), a1 = mean_acc(m1);
    double c5_secs = 0.0;
    for (const auto* runs : {&m3, &f3})
        for (const auto& r : *runs) c5_secs += r.seconds;

    report(5, am >= 0.85 && af >= 0.75 && am >= af,
           fmt("3-layer 28x28, 10k subset, batch 10, lr 0.1, 3-seed mean on 10k test: MNIST %.2f%% (>= 85), "
               "Fashion %.2f%% (>= 75), MNIST >= Fashion; %.0f s for the six runs",
               100 * am, 100 * af, c5_secs));
    report(6, am + 0.01 >= a1, fmt("3-layer MNIST %.2f%% vs 1-layer %.2f%% (3-seed means, 1-point slack)", 100 * am, 100 * a1));

    // Loss-curve sanity: the 3-seed mean epoch loss does not rise over the
    // first five epochs.
    bool monotone = true;
    std::string losses;
    double prev = 0.0;
    for (std::size_t e = 0; e < std::min<std::size_t>(5, epochs); ++e) {
        double mean = 0.0;
        for (const auto& r : m3) mean += r.curves[e].loss / static_cast<double>(m3.size());
        losses += fmt("%s%.4f", e ? " " : "", mean);
        if (e > 0 && mean > prev) monotone = false;
        prev = mean;
    }
    std::printf("[%s] property    : 3-layer MNIST mean epoch loss over the first 5 epochs [%s] non-increasing\n",
                monotone ? "PASS" : "FAIL", losses.c_str());
    if (!monotone) ++failures;

    // Energy and crosstalk use the seed-1 MNIST model.
    const RunOutcome& ref = m3.front();
    double min_frac = 1.0;
    int min_class = 0;
    std::string per_class;
    for (std::size_t k = 0; k < 10; ++k) {
        const double f = ref.eval.energy.mean[k];
        per_class += fmt("%s%.1f", k ? " " : "", 100 * f);
        if (f < min_frac) min_frac = f, min_class = static_cast<int>(k);
    }
    report(7, min_frac >= 0.25,
           fmt("mean target-region energy per class [%s]%%, min %.2f%% at class %d (>= 25)", per_class.c_str(),
               100 * min_frac, min_class));

    TaskData td;
    td.task.channel = Channel::x;
    td.task.dataset_id = "mnist";
    td.task.detector = default_layout(28, 10);
    const auto lib = synth_library(256);
    const auto xt = crosstalk_evaluate(ref.model, lib, td.task, mnist->test);
    const auto diff = compare_confusions(ref.eval.confusion, xt.confusion);
    double worst_cell = 0.0;
    for (double d : diff) worst_cell = std::max(worst_cell, std::abs(d));
    const double delta = 100.0 * std::abs(xt.confusion.accuracy() - ref.eval.confusion.accuracy());
    report(8, delta <= 2.0 && worst_cell <= 2.0,
           fmt("256x256-step library: accuracy %.2f%% -> %.2f%% (|delta| %.2f <= 2 points), max |cell| %.3f%% (<= 2)",
               100 * ref.eval.confusion.accuracy(), 100 * xt.confusion.accuracy(), delta, worst_cell));

    // Two-class, two-channel, single-layer network with binarized masks.
    struct Pair {
        Channel channel;
        const Split* data;
        const char* id;
        std::vector<int> labels;
    };
    const std::vector<Pair> pairs{{Channel::x, &*mnist, "mnist", {0, 1}},
                                  {Channel::y, &*fashion, "fashion-mnist", {0, 7}}};
    NetworkModel dual = make_model(OpticalConfig{wavelength, pitch, 28}, 1, 0.0, desk_gap);
    std::vector<TaskData> tasks;
    for (const auto& p : pairs) {
        TaskData t;
        t.task.channel = p.channel;
        t.task.dataset_id = p.id;
        t.task.encoding = Encoding::amplitude;
        t.task.binarize_threshold = 0.5;
        t.task.detector = default_layout(28, 2);
        t.train = select_labels(p.data->train, p.labels);
        t.test = select_labels(p.data->test, p.labels);
        init_phases(dual, p.channel, 1);
        tasks.push_back(std::move(t));
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.gain = desk_gain;
    cfg.curve_test = false;
    const auto trained = train(dual, tasks, cfg).model;
    const double ax = evaluate(trained, tasks[0].task, tasks[0].test).confusion.accuracy();
    const double ay = evaluate(trained, tasks[1].task, tasks[1].test).confusion.accuracy();
    report(10, ax >= 0.95 && ay >= 0.95,
           fmt("1 layer, binarized masks, 2 classes per channel: x (digits 0/1) %.2f%%, y (T-shirt/sneaker) %.2f%% "
               "on %zu/%zu held-out samples (>= 95 each)",
               100 * ax, 100 * ay, tasks[0].test.size(), tasks[1].test.size()));
    std::printf("  dataset-backed criteria took %.0f s\n", seconds_since(t0));
}

// ---- bifocal ---------------------------------------------------------------------

void criterion_9() {
    const OpticalConfig cfg{wavelength, pitch, 128};
    const Point3 fx{4e-6, 0.0, 40e-6}, fy{-4e-6, 0.0, 40e-6};
    const auto lib = synth_library(256);
    bool pass = true;
    std::string detail;
    for (const MetaUnitLibrary* l : {static_cast<const MetaUnitLibrary*>(nullptr), &lib}) {
        const auto r = run_bifocal(fx, fy, cfg, 128, l);
        for (const FocusReport* f : {&r.x, &r.y}) {
            const double dx = std::abs(f->peak_x - f->designed.x) / pitch, dy = std::abs(f->peak_y - f->designed.y) / pitch;
            pass = pass && dx <= 1.0 + 1e-9 && dy <= 1.0 + 1e-9 && f->cross_ratio < 0.2;
            detail += fmt("%s%s-%s off by (%.0f,%.0f) cells ratio %.3f", detail.empty() ? "" : "; ",
                          l ? "realized" : "ideal", to_string(f->channel), dx, dy, f->cross_ratio);
        }
    }
    report(9, pass, "foci at (+-4 um, 0, 40 um), 128x128: " + detail + " (<= 1 cell, ratio < 0.2)");
}

// ---- determinism of the train command ---------------------------------------------

int run(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_dir(const fs::path& a, const fs::path& b) {
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        if (!fs::exists(b / e.path().filename()) || slurp(e.path()) != slurp(b / e.path().filename())) return false;
        ++files;
    }
    return files > 0 && files == static_cast<std::size_t>(std::distance(fs::directory_iterator(b), {}));
}

void criterion_12() {
    const fs::path dir = fs::temp_directory_path() / "mdnn_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string base = std::string(MDNN_CLI_PATH) + " train --config " MDNN_CONFIG_DIR "/fixture.json --out ";
    const std::string quiet = " > /dev/null 2>&1";
    const int a = run(base + (dir / "a").string() + quiet);
    const int b = run(base + (dir / "b").string() + quiet);
    const int c = run(base + (dir / "c").string() + " --workers 4" + quiet);
    const bool ok = a == 0 && b == 0 && c == 0 && same_dir(dir / "a/checkpoint", dir / "b/checkpoint") &&
                    same_dir(dir / "a/checkpoint", dir / "c/checkpoint");
    report(12, ok, fmt("train on the fixture config: rerun and --workers 4 give %s checkpoints",
                       ok ? "byte-identical" : "DIFFERENT"));
}

} // namespace

int main() {
    const char* env_dir = std::getenv("MDNN_DATA_DIR");
    const fs::path data_root = env_dir ? env_dir : "/root/data";
    const char* env_epochs = std::getenv("MDNN_ACCEPT_EPOCHS");
    const std::size_t epochs = env_epochs ? std::stoul(env_epochs) : desk_epochs;
    std::printf("acceptance: data %s, desk-scale epochs %zu, gap %.0f um, gain %.0f\n", data_root.string().c_str(),
                epochs, desk_gap * 1e6, desk_gain);

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_9();
    criterion_12();
    desk_scale(data_root, epochs);
    std::printf("[N/A ] criterion 11: full-wave FDTD energy comparison is out of scope; not reproducible here\n");
    std::printf("acceptance: %d failing criteria\n", failures);
    return failures == 0 ? 0 : 1;
}
