#include "dpet/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpet/csv.hpp"
#include "dpet/evalmetrics.hpp"
#include "dpet/frames.hpp"
#include "dpet/image.hpp"
#include "dpet/input_function.hpp"
#include "dpet/phantom.hpp"
#include "dpet/potts.hpp"
#include "dpet/scf.hpp"
#include "dpet/skms.hpp"
#include "dpet/smm.hpp"

namespace dpet {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Manifest written next to each command's outputs. The manifest records the
// run (it contains the wall-clock duration) and is not itself one of the
// deterministic primary outputs.
struct Manifest {
    std::string command;
    std::vector<std::string> args;
    json inputs = json::object();
    json outputs = json::array();
    json extras = json::object();

    void write(const fs::path& path, double seconds) const {
        json j;
        j["tool"] = kToolVersion;
        j["command"] = command;
        j["args"] = args;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        if (!extras.empty()) j["extras"] = extras;
        j["duration_seconds"] = seconds;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
        out << j.dump(2) << "\n";
    }
};

class Stopwatch {
public:
    Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::invalid_argument("cannot create directory '" + dir.string() + "'");
}

std::string rep_name(int r) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "rep%03d.dpet", r);
    return buf;
}

FrameScheme load_frames(const std::string& path) {
    return path.empty() ? FrameScheme::cardiac_default() : FrameScheme::read_csv(path);
}

InputFunction load_input(const std::string& path) {
    return path.empty() ? InputFunction::bolus_default() : InputFunction::read_csv(path);
}

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
    std::string spec_path, input_path, frames_path, out_dir;
    std::string noise = "poisson";
    double level = 0.014;
    std::uint64_t seed = 0;
    int replicates = 1;
    int threads = 0;
};

int cmd_simulate(const SimulateOpts& o, const std::vector<std::string>& args) {
    Stopwatch sw;
    FrameScheme frames = load_frames(o.frames_path);
    InputFunction input = load_input(o.input_path);
    PhantomSpec spec = o.spec_path.empty()
                           ? default_phantom()
                           : PhantomSpec::from_json_file(o.spec_path, frames, input);
    if (o.spec_path.empty() && !o.frames_path.empty()) spec.frames = frames;
    if (o.spec_path.empty() && !o.input_path.empty()) spec.input = input;
    spec.validate();
    if (o.replicates < 1) throw std::invalid_argument("--replicates must be >= 1");
    const bool noiseless = o.noise == "none";
    NoiseKind kind = NoiseKind::ScaledPoisson;
    if (!noiseless) kind = noise_kind_from_string(o.noise);
    if (!noiseless && o.level <= 0) throw std::invalid_argument("--level must be > 0");

    ensure_dir(o.out_dir);
    const fs::path out(o.out_dir);
    DynamicImage clean = render_noise_free(spec);

    Manifest m;
    m.command = "simulate";
    m.args = args;
    m.inputs["spec"] = o.spec_path.empty() ? "<built-in default phantom>" : o.spec_path;
    m.inputs["frames"] = o.frames_path.empty() ? "<built-in cardiac frames>" : o.frames_path;
    m.inputs["input"] = o.input_path.empty() ? "<built-in bolus>" : o.input_path;
    m.extras["noise"] = o.noise;
    m.extras["level"] = o.level;
    m.extras["seed"] = o.seed;
    m.extras["replicates"] = o.replicates;
    m.extras["replicate_seed_rule"] = "seed + replicate index";

    for (int r = 0; r < o.replicates; ++r) {
        DynamicImage img = noiseless
                               ? clean
                               : add_noise(clean, NoiseModel{kind, o.level, o.seed + static_cast<std::uint64_t>(r)},
                                           spec.frames, o.threads);
        const fs::path p = out / rep_name(r);
        img.write_dpet(p.string());
        m.outputs.push_back(p.string());
    }
    clean.write_truth_csv((out / "truth.csv").string());
    spec.frames.write_csv((out / "frames.csv").string());
    spec.input.write_csv((out / "input.csv").string());
    std::ofstream spec_out(out / "phantom.json", std::ios::binary);
    spec_out << spec.to_json_text();
    for (const char* f : {"truth.csv", "frames.csv", "input.csv", "phantom.json"})
        m.outputs.push_back((out / f).string());
    m.write(out / "manifest.json", sw.seconds());
    std::cout << "simulate: wrote " << o.replicates << " replicate(s) to " << o.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------- partition

struct PartitionOpts {
    int nx = 32, ny = 32, g = 3;
    double beta_max = 1.0, step = 0.02;
    int sweeps = 2000, burnin = 500;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out;
};

int cmd_partition(const PartitionOpts& o, const std::vector<std::string>& args) {
    Stopwatch sw;
    if (o.nx < 1 || o.ny < 1) throw std::invalid_argument("--nx/--ny must be >= 1");
    if (o.g < 2) throw std::invalid_argument("--g must be >= 2");
    NeighborGraph graph = NeighborGraph::lattice8(o.nx, o.ny);
    McConfig mc{o.sweeps, o.burnin, o.seed};
    PartitionTable table = estimate_partition(o.g, graph, o.beta_max, o.step, mc, o.threads);
    if (fs::path(o.out).has_parent_path()) ensure_dir(fs::path(o.out).parent_path());
    table.write(o.out);

    Manifest m;
    m.command = "partition";
    m.args = args;
    m.extras["nx"] = o.nx;
    m.extras["ny"] = o.ny;
    m.extras["g"] = o.g;
    m.extras["beta_max"] = o.beta_max;
    m.extras["step"] = o.step;
    m.extras["sweeps"] = o.sweeps;
    m.extras["burnin"] = o.burnin;
    m.extras["seed"] = o.seed;
    m.outputs.push_back(o.out);
    m.write(o.out + ".manifest.json", sw.seconds());
    std::cout << "partition: wrote " << o.out << " (log C(beta_max) = "
              << table.log_c.back() << ")\n";
    return 0;
}

// ---------------------------------------------------------------- select-g

struct SelectGOpts {
    std::string image, input_path, frames_path, table_dir, out_dir;
    int gmin = 2, gmax = 6;
    int iterations = 4000;
    std::uint64_t seed = 0, table_seed = 0;
    double mult = kDefaultProposalMultiplier;
    int threads = 0;
};

int cmd_select_g(const SelectGOpts& o, const std::vector<std::string>& args) {
    Stopwatch sw;
    if (o.gmin < 2 || o.gmax < o.gmin)
        throw std::invalid_argument("--gmin/--gmax must satisfy 2 <= gmin <= gmax");
    DynamicImage img = DynamicImage::read_dpet(o.image);
    FrameScheme frames = load_frames(o.frames_path);
    InputFunction input = load_input(o.input_path);
    if (static_cast<int>(frames.size()) != img.frames())
        throw std::invalid_argument("--frames scheme does not match the image frame count");
    ensure_dir(o.out_dir);
    const fs::path out(o.out_dir);
    const std::string table_dir = o.table_dir.empty() ? (out / "ptables").string() : o.table_dir;
    ensure_dir(table_dir);

    McConfig mc{2000, 500, o.table_seed};
    TableProvider tables = [&](int g) {
        return load_or_compute_table(table_dir, img.nx(), img.ny(), g, 1.0, 0.02, mc, o.threads);
    };
    MCMCConfig cfg;
    cfg.iterations = o.iterations;
    cfg.burn_in = 0;
    cfg.thin = 1;
    cfg.seed = o.seed;
    cfg.mode = ChainMode::MAP_ONLY;
    SelectionResult sel =
        select_components(img, input, frames, Priors::simulation(),
                          ProposalScales::simulation().scaled(o.mult), cfg, o.gmin, o.gmax, tables);

    csv::Writer w((out / "bic.csv").string());
    w.row({"G", "loglik", "DF", "bic"});
    for (const auto& r : sel.rows)
        w.row({std::to_string(r.G), csv::format_double(r.loglik), std::to_string(r.DF),
               csv::format_double(r.bic)});
    for (std::size_t i = 1; i < sel.rows.size(); ++i)
        if (sel.rows[i].loglik < sel.rows[i - 1].loglik)
            std::cerr << "warning: max log-likelihood decreased from G=" << sel.rows[i - 1].G
                      << " to G=" << sel.rows[i].G << " (chains may be under-run)\n";

    Manifest m;
    m.command = "select-g";
    m.args = args;
    m.inputs["image"] = o.image;
    m.extras["gmin"] = o.gmin;
    m.extras["gmax"] = o.gmax;
    m.extras["iterations"] = o.iterations;
    m.extras["seed"] = o.seed;
    m.extras["proposal_multiplier"] = o.mult;
    m.extras["selected_g"] = sel.best_g;
    m.outputs.push_back((out / "bic.csv").string());
    m.write(out / "manifest.json", sw.seconds());
    std::cout << "select-g: G* = " << sel.best_g << "\n";
    return 0;
}

// ---------------------------------------------------------------- fit

struct FitOpts {
    std::string method, image, input_path, frames_path, out_dir;
    int threads = 0;
    // scf
    std::string weights = "counts";
    // skms
    int g = 0;
    double beta = 0.2;
    int max_iter = 100;
    // smm
    std::string table;
    int iterations = 10000, burn_in = 4000, thin = 10;
    double mult = kDefaultProposalMultiplier;
    bool map_only = false;
    std::uint64_t seed = 0;
};

std::vector<double> counts_weights(const DynamicImage& img, const FrameScheme& frames) {
    // Relative frame counts from the image itself: total activity x duration.
    // Any overall scale cancels in the weighted least-squares minimizer.
    std::vector<double> counts(frames.size(), 0.0);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        double s = 0.0;
        for (int i = 0; i < img.voxels(); ++i) s += img.at(i, static_cast<int>(t));
        counts[t] = std::max(0.0, s) * frames.duration(t);
    }
    return weights_from_counts(frames, counts);
}

int cmd_fit(const FitOpts& o, const std::vector<std::string>& args) {
    Stopwatch sw;
    DynamicImage img = DynamicImage::read_dpet(o.image);
    FrameScheme frames = load_frames(o.frames_path);
    InputFunction input = load_input(o.input_path);
    if (static_cast<int>(frames.size()) != img.frames())
        throw std::invalid_argument("--frames scheme does not match the image frame count");
    ensure_dir(o.out_dir);
    const fs::path out(o.out_dir);

    Manifest m;
    m.command = "fit";
    m.args = args;
    m.inputs["image"] = o.image;
    m.inputs["frames"] = o.frames_path.empty() ? "<built-in cardiac frames>" : o.frames_path;
    m.inputs["input"] = o.input_path.empty() ? "<built-in bolus>" : o.input_path;
    m.extras["method"] = o.method;

    if (o.method == "scf") {
        FitConfig cfg;
        if (o.weights == "counts")
            cfg.weights = counts_weights(img, frames);
        else if (o.weights != "unit")
            throw std::invalid_argument("--weights must be 'counts' or 'unit'");
        std::vector<VoxelFit> fits = fit_image(img, input, frames, cfg, o.threads);
        write_fit_csv((out / "fit.csv").string(), img.nx(), img.ny(), fits);
        m.extras["weights"] = o.weights;
        m.outputs.push_back((out / "fit.csv").string());
    } else if (o.method == "skms") {
        if (o.g < 2) throw std::invalid_argument("--g must be >= 2 for skms");
        SkmsConfig cfg;
        cfg.G = o.g;
        cfg.beta = o.beta;
        cfg.max_iter = o.max_iter;
        cfg.seed = o.seed;
        SkmsResult res = skms_fit(img, input, frames, cfg);
        std::vector<VoxelFit> fits(static_cast<std::size_t>(img.voxels()));
        for (int i = 0; i < img.voxels(); ++i) {
            fits[static_cast<std::size_t>(i)].params =
                res.cluster_params[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)] - 1)];
            fits[static_cast<std::size_t>(i)].status = FitStatus::CONVERGED;
        }
        write_fit_csv((out / "fit.csv").string(), img.nx(), img.ny(), fits);
        write_labels_csv((out / "labels.csv").string(), img.nx(), img.ny(), res.labels);
        csv::Writer cw((out / "clusters.csv").string());
        cw.row({"cluster", "K1", "k2"});
        for (std::size_t g = 0; g < res.cluster_params.size(); ++g)
            cw.row({std::to_string(g + 1), csv::format_double(res.cluster_params[g].K1),
                    csv::format_double(res.cluster_params[g].k2)});
        m.extras["g"] = o.g;
        m.extras["beta"] = o.beta;
        m.extras["seed"] = o.seed;
        m.extras["iterations"] = res.iterations;
        m.extras["converged"] = res.converged;
        for (const char* f : {"fit.csv", "labels.csv", "clusters.csv"})
            m.outputs.push_back((out / f).string());
    } else if (o.method == "smm") {
        if (o.table.empty())
            throw std::invalid_argument(
                "--table is required for smm (precompute one with the 'partition' command)");
        if (!fs::exists(o.table))
            throw std::invalid_argument("--table file '" + o.table + "' does not exist");
        PartitionTable table = PartitionTable::read(o.table);
        if (table.nx != img.nx() || table.ny != img.ny())
            throw std::invalid_argument("--table lattice does not match the image dimensions");
        if (o.g < 2) throw std::invalid_argument("--g must be >= 2 for smm");
        if (table.G != o.g)
            throw std::invalid_argument("--table was computed for G=" + std::to_string(table.G) +
                                        ", not the requested --g");
        MCMCConfig cfg;
        cfg.iterations = o.iterations;
        cfg.burn_in = o.burn_in;
        cfg.thin = o.thin;
        cfg.seed = o.seed;
        cfg.G = o.g;
        cfg.mode = o.map_only ? ChainMode::MAP_ONLY : ChainMode::FULL_POSTERIOR;
        PosteriorSummary ps = run_mcmc(img, input, frames, Priors::simulation(),
                                       ProposalScales::simulation().scaled(o.mult), cfg, table);

        std::vector<VoxelFit> fits(static_cast<std::size_t>(img.voxels()));
        for (int i = 0; i < img.voxels(); ++i) {
            const int z = ps.map_state.z[static_cast<std::size_t>(i)];
            auto& f = fits[static_cast<std::size_t>(i)];
            if (z < cfg.G) f.params = ps.map_state.kin[static_cast<std::size_t>(z - 1)];
            f.status = FitStatus::CONVERGED;  // noise voxels keep K1 = k2 = 0
        }
        write_fit_csv((out / "fit.csv").string(), img.nx(), img.ny(), fits);
        write_labels_csv((out / "labels.csv").string(), img.nx(), img.ny(), ps.map_state.z);
        if (cfg.mode == ChainMode::FULL_POSTERIOR) {
            csv::Writer sc((out / "samples.csv").string());
            sc.row({"iter", "component", "K1", "k2", "f_lv", "f_rv"});
            for (const auto& s : ps.samples)
                sc.row({std::to_string(s.iter), std::to_string(s.component),
                        csv::format_double(s.k1), csv::format_double(s.k2),
                        csv::format_double(s.f_lv), csv::format_double(s.f_rv)});
            csv::Writer bc((out / "beta.csv").string());
            bc.row({"beta"});
            for (double b : ps.beta_samples) bc.row({csv::format_double(b)});
            m.outputs.push_back((out / "samples.csv").string());
            m.outputs.push_back((out / "beta.csv").string());
        }
        json summary;
        summary["map_log_posterior"] = ps.map_log_posterior;
        summary["map_log_likelihood"] = ps.map_log_likelihood;
        summary["map_beta"] = ps.map_state.beta;
        summary["acceptance"] = {{"k1", ps.accept.k1()},
                                 {"k2", ps.accept.k2()},
                                 {"noise_mean", ps.accept.noise()},
                                 {"beta", ps.accept.beta()}};
        json comps = json::array();
        for (const auto& c : ps.components)
            comps.push_back({{"k1_mean", c.k1_mean},
                             {"k1_lo", c.k1_lo},
                             {"k1_hi", c.k1_hi},
                             {"k2_mean", c.k2_mean},
                             {"k2_lo", c.k2_lo},
                             {"k2_hi", c.k2_hi}});
        summary["components"] = comps;
        std::ofstream sum_out(out / "summary.json", std::ios::binary);
        sum_out << summary.dump(2) << "\n";
        m.extras["g"] = o.g;
        m.extras["iterations"] = o.iterations;
        m.extras["burn_in"] = o.burn_in;
        m.extras["thin"] = o.thin;
        m.extras["seed"] = o.seed;
        m.extras["proposal_multiplier"] = o.mult;
        m.extras["mode"] = o.map_only ? "map-only" : "full-posterior";
        m.inputs["table"] = o.table;
        for (const char* f : {"fit.csv", "labels.csv", "summary.json"})
            m.outputs.push_back((out / f).string());
    } else {
        throw std::invalid_argument("--method must be one of scf, skms, smm");
    }
    m.write(out / "manifest.json", sw.seconds());
    std::cout << "fit " << o.method << ": wrote " << (out / "fit.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOpts {
    std::string fits_dir, truth_csv, out_dir;
};

std::vector<std::string> collect_fit_files(const fs::path& dir) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir))
        throw std::invalid_argument("--fits directory '" + dir.string() + "' does not exist");
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) {
            const std::string name = e.path().filename().string();
            if (name.rfind("fit", 0) == 0 && e.path().extension() == ".csv")
                files.push_back(e.path().string());
        } else if (e.is_directory()) {
            const fs::path nested = e.path() / "fit.csv";
            if (fs::is_regular_file(nested)) files.push_back(nested.string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

int cmd_evaluate(const EvaluateOpts& o, const std::vector<std::string>& args) {
    Stopwatch sw;
    std::vector<std::string> files = collect_fit_files(o.fits_dir);
    if (files.empty())
        throw std::invalid_argument("--fits contains no fit CSVs (fit*.csv or */fit.csv)");
    ensure_dir(o.out_dir);
    const fs::path out(o.out_dir);

    int nx = 0, ny = 0;
    std::vector<std::vector<VoxelFit>> fits;
    for (const auto& f : files) {
        int fx = 0, fy = 0;
        fits.push_back(read_fit_csv(f, fx, fy));
        if (nx == 0) {
            nx = fx;
            ny = fy;
        } else if (fx != nx || fy != ny) {
            throw std::invalid_argument("fit map '" + f + "' has mismatched dimensions");
        }
    }
    std::vector<VoxelTruth> truth = DynamicImage::read_truth_csv(o.truth_csv, nx, ny);

    std::vector<std::vector<ParamBias>> biases;
    biases.reserve(fits.size());
    for (const auto& f : fits) biases.push_back(bias_map(f, truth));
    BiasReport report = aggregate_bias(biases, truth, nx, ny);
    write_bias_voxel_csv((out / "bias_voxels.csv").string(), report);
    write_bias_roi_csv((out / "bias_rois.csv").string(), report);

    // Classification pooled over realizations: threshold each K1 map, then
    // accumulate one confusion table against the truth classes.
    std::vector<TissueClass> truth_cls = truth_classes(truth);
    ConfusionMatrix total{};
    for (const auto& f : fits) {
        std::vector<double> k1(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) k1[i] = f[i].params.K1;
        ConfusionMatrix one = misclassification_table(classify_k1(k1), truth_cls);
        for (int t = 0; t < 3; ++t)
            for (int p = 0; p < 3; ++p) total.counts[t][p] += one.counts[t][p];
    }
    std::int64_t diag = 0;
    for (int t = 0; t < 3; ++t) {
        std::int64_t row = 0;
        for (int p = 0; p < 3; ++p) row += total.counts[t][p];
        total.total += row;
        diag += total.counts[t][t];
        total.correct_rate[t] =
            row > 0 ? static_cast<double>(total.counts[t][t]) / static_cast<double>(row)
                    : std::numeric_limits<double>::quiet_NaN();
    }
    total.overall_rate = total.total > 0
                             ? static_cast<double>(diag) / static_cast<double>(total.total)
                             : std::numeric_limits<double>::quiet_NaN();

    csv::Writer cw((out / "classification.csv").string());
    cw.row({"truth_class", "labeled_noise", "labeled_abnormal", "labeled_normal",
            "correct_rate"});
    for (int t = 0; t < 3; ++t)
        cw.row({to_string(static_cast<TissueClass>(t)), std::to_string(total.counts[t][0]),
                std::to_string(total.counts[t][1]), std::to_string(total.counts[t][2]),
                csv::format_double(total.correct_rate[t])});

    std::ofstream txt(out / "summary.txt", std::ios::binary);
    txt << bias_summary_text(report) << confusion_text(total);

    Manifest m;
    m.command = "evaluate";
    m.args = args;
    m.inputs["truth"] = o.truth_csv;
    m.inputs["fit_maps"] = files;
    m.extras["realizations"] = static_cast<int>(files.size());
    for (const char* f : {"bias_voxels.csv", "bias_rois.csv", "classification.csv", "summary.txt"})
        m.outputs.push_back((out / f).string());
    m.write(out / "manifest.json", sw.seconds());
    std::cout << "evaluate: " << files.size() << " realization(s), summary in "
              << (out / "summary.txt").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- export

struct ExportOpts {
    std::string map, column = "K1", format, out;
    int frame = 0;
};

std::vector<double> load_map_values(const ExportOpts& o, int& nx, int& ny) {
    const fs::path p(o.map);
    if (p.extension() == ".dpet") {
        DynamicImage img = DynamicImage::read_dpet(o.map);
        if (o.frame < 0 || o.frame >= img.frames())
            throw std::invalid_argument("--frame out of range for '" + o.map + "'");
        nx = img.nx();
        ny = img.ny();
        std::vector<double> v(static_cast<std::size_t>(img.voxels()));
        for (int i = 0; i < img.voxels(); ++i) v[static_cast<std::size_t>(i)] = img.at(i, o.frame);
        return v;
    }
    std::vector<VoxelFit> fits = read_fit_csv(o.map, nx, ny);
    std::vector<double> v(fits.size());
    for (std::size_t i = 0; i < fits.size(); ++i) {
        if (o.column == "K1")
            v[i] = fits[i].params.K1;
        else if (o.column == "k2")
            v[i] = fits[i].params.k2;
        else if (o.column == "wrss")
            v[i] = fits[i].wrss;
        else
            throw std::invalid_argument("--column must be K1, k2 or wrss");
    }
    return v;
}

int cmd_export(const ExportOpts& o, const std::vector<std::string>& args) {
    Stopwatch sw;
    int nx = 0, ny = 0;
    std::vector<double> v = load_map_values(o, nx, ny);
    if (fs::path(o.out).has_parent_path()) ensure_dir(fs::path(o.out).parent_path());

    Manifest m;
    m.command = "export";
    m.args = args;
    m.inputs["map"] = o.map;
    m.extras["format"] = o.format;

    if (o.format == "pgm") {
        double lo = v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
        double hi = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
        std::ofstream out(o.out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + o.out + "'");
        out << "P5\n" << nx << " " << ny << "\n255\n";
        for (double x : v) {
            const double u = hi > lo ? (x - lo) / (hi - lo) : 0.0;
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
        }
        m.extras["window"] = {{"min", lo}, {"max", hi}};
    } else if (o.format == "csv") {
        csv::Writer w(o.out);
        w.row({"x", "y", "value"});
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x)
                w.row({std::to_string(x), std::to_string(y),
                       csv::format_double(v[static_cast<std::size_t>(y) * nx + x])});
    } else {
        throw std::invalid_argument("--format must be 'pgm' or 'csv'");
    }
    m.outputs.push_back(o.out);
    m.write(o.out + ".manifest.json", sw.seconds());
    std::cout << "export: wrote " << o.out << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Dynamic PET kinetic analysis toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    SimulateOpts sim;
    CLI::App* s = app.add_subcommand("simulate", "Render phantom replicates with noise");
    s->add_option("--spec", sim.spec_path, "Phantom spec JSON (default: built-in phantom)");
    s->add_option("--input", sim.input_path, "Input-function CSV (default: built-in bolus)");
    s->add_option("--frames", sim.frames_path, "Frame-scheme CSV (default: cardiac frames)");
    s->add_option("--noise", sim.noise, "gaussian | poisson | none")
        ->check(CLI::IsMember({"gaussian", "poisson", "none"}));
    s->add_option("--level", sim.level, "Noise level (default 0.014, scaled-Poisson units)");
    s->add_option("--seed", sim.seed, "Base RNG seed; replicate r uses seed + r");
    s->add_option("--replicates", sim.replicates, "Number of noise realizations");
    s->add_option("--threads", sim.threads, "Worker count (0 = machine parallelism)");
    s->add_option("--out", sim.out_dir, "Output directory")->required();

    PartitionOpts par;
    CLI::App* p = app.add_subcommand("partition", "Estimate a Potts partition-function table");
    p->add_option("--nx", par.nx, "Lattice width");
    p->add_option("--ny", par.ny, "Lattice height");
    p->add_option("--g", par.g, "Label count")->required();
    p->add_option("--beta-max", par.beta_max, "Upper end of the beta grid");
    p->add_option("--step", par.step, "Beta grid step");
    p->add_option("--sweeps", par.sweeps, "Gibbs sweeps per grid point");
    p->add_option("--burnin", par.burnin, "Burn-in sweeps per grid point");
    p->add_option("--seed", par.seed, "RNG seed");
    p->add_option("--threads", par.threads, "Worker count (0 = machine parallelism)");
    p->add_option("--out", par.out, "Output table CSV")->required();

    SelectGOpts sg;
    CLI::App* g = app.add_subcommand("select-g", "Choose the component count by BIC");
    g->add_option("--image", sg.image, "DPET image")->required();
    g->add_option("--input", sg.input_path, "Input-function CSV (default: built-in bolus)");
    g->add_option("--frames", sg.frames_path, "Frame-scheme CSV (default: cardiac frames)");
    g->add_option("--gmin", sg.gmin, "Smallest G");
    g->add_option("--gmax", sg.gmax, "Largest G");
    g->add_option("--table-dir", sg.table_dir, "Partition-table cache dir (default: <out>/ptables)");
    g->add_option("--iterations", sg.iterations, "MAP-chain iterations per G");
    g->add_option("--seed", sg.seed, "Chain seed base (chain for G uses seed + G)");
    g->add_option("--table-seed", sg.table_seed, "Seed for table estimation");
    g->add_option("--mult", sg.mult, "Global proposal-scale multiplier");
    g->add_option("--threads", sg.threads, "Worker count (0 = machine parallelism)");
    g->add_option("--out", sg.out_dir, "Output directory")->required();

    FitOpts fit;
    CLI::App* f = app.add_subcommand("fit", "Fit kinetic parameter maps");
    f->add_option("--method", fit.method, "scf | skms | smm")
        ->required()
        ->check(CLI::IsMember({"scf", "skms", "smm"}));
    f->add_option("--image", fit.image, "DPET image")->required();
    f->add_option("--input", fit.input_path, "Input-function CSV (default: built-in bolus)");
    f->add_option("--frames", fit.frames_path, "Frame-scheme CSV (default: cardiac frames)");
    f->add_option("--threads", fit.threads, "Worker count (0 = machine parallelism)");
    f->add_option("--weights", fit.weights, "scf frame weights: counts | unit");
    f->add_option("--g", fit.g, "Cluster/component count (skms, smm)");
    f->add_option("--beta", fit.beta, "skms spatial regularization weight");
    f->add_option("--max-iter", fit.max_iter, "skms iteration cap");
    f->add_option("--table", fit.table, "smm partition table CSV (required for smm)");
    f->add_option("--iterations", fit.iterations, "smm chain length");
    f->add_option("--burn-in", fit.burn_in, "smm burn-in iterations");
    f->add_option("--thin", fit.thin, "smm thinning stride");
    f->add_option("--mult", fit.mult, "smm global proposal-scale multiplier");
    f->add_flag("--map-only", fit.map_only, "smm: skip posterior sampling, keep the MAP state");
    f->add_option("--seed", fit.seed, "RNG seed (skms, smm)");
    f->add_option("--out", fit.out_dir, "Output directory")->required();

    EvaluateOpts ev;
    CLI::App* e = app.add_subcommand("evaluate", "Bias and classification against truth");
    e->add_option("--fits", ev.fits_dir, "Directory of fit*.csv or */fit.csv maps")->required();
    e->add_option("--truth", ev.truth_csv, "Truth CSV from simulate")->required();
    e->add_option("--out", ev.out_dir, "Output directory")->required();

    ExportOpts ex;
    CLI::App* x = app.add_subcommand("export", "Quick-look export of a parameter map");
    x->add_option("--map", ex.map, "fit CSV or single/multi-frame DPET file")->required();
    x->add_option("--column", ex.column, "fit CSV column: K1 | k2 | wrss");
    x->add_option("--frame", ex.frame, "Frame index for DPET input");
    x->add_option("--format", ex.format, "pgm | csv")
        ->required()
        ->check(CLI::IsMember({"pgm", "csv"}));
    x->add_option("--out", ex.out, "Output file")->required();

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("dpet");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;  // help/version exit cleanly
    }

    try {
        if (s->parsed()) return cmd_simulate(sim, args);
        if (p->parsed()) return cmd_partition(par, args);
        if (g->parsed()) return cmd_select_g(sg, args);
        if (f->parsed()) return cmd_fit(fit, args);
        if (e->parsed()) return cmd_evaluate(ev, args);
        if (x->parsed()) return cmd_export(ex, args);
        std::cerr << "error: no command\n";
        return 2;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    }
}

}  // namespace dpet
