// hrf: datasets, training, sampling, reflow, verification and evaluation in
// reproducible run directories.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hrf/hrf.hpp"

namespace fs = std::filesystem;
using namespace hrf;

namespace {

ConfigSchema make_schema() {
    using V = ValueType;
    ConfigSchema s;
    auto key = [&](std::string name, V type, std::optional<std::string> fallback, std::vector<std::string> choices,
                   std::string help) { s.add({std::move(name), type, std::move(fallback), std::move(choices), std::move(help)}); };
    key("grid.n", V::integer, std::nullopt, {}, "grid nodes");
    key("grid.a", V::real, "0", {}, "left end of the domain");
    key("grid.b", V::real, "1", {}, "right end of the domain");
    key("basis.modes", V::integer, std::nullopt, {}, "retained eigenpairs K");
    key("data.kind", V::text, "gp", {"gp", "gp_mixture", "random_sines"}, "target dataset");
    key("data.count", V::integer, "10000", {}, "training samples");
    key("data.heldout", V::integer, "2000", {}, "held-out samples");
    key("data.mixture_offset", V::real, "1", {}, "gp_mixture component offset");
    key("kernel.kind", V::text, "matern_half", {"matern_half", "rbf", "white_plus_matern"}, "covariance kernel");
    key("kernel.variance", V::real, "1", {}, "sigma^2");
    key("kernel.lengthscale", V::real, "0.2", {}, "ell");
    key("kernel.nugget", V::real, "0", {}, "diagonal nugget");
    key("noise.spectrum", V::text, "flat", {"flat", "kernel", "inverse_square"}, "noise eigenvalues on the data eigenfunctions");
    key("noise.scale", V::real, "1", {}, "flat: multiple of trace/K; kernel: multiple of lambda_i; inverse_square: c in c/i^2");
    key("noise.count", V::integer, "10000", {}, "noise samples written by dataset");
    key("path.kind", V::text, "linear", {"linear", "ot", "vp_linear_alpha", "pfode"}, "interpolation schedule");
    key("path.sigma_min", V::real, "0.1", {}, "ot sigma_min");
    key("path.sigma_const", V::real, "0", {}, "pfode path: constant sigma when > 0, else the pfode.* schedule");
    key("model.kind", V::text, "mlp_spectral", {"mlp_spectral", "fourier_layer"}, "backbone");
    key("model.hidden", V::list, "128,128", {}, "mlp hidden widths");
    key("model.time_dim", V::integer, "4", {}, "time feature dimension (even)");
    key("model.fourier_modes", V::integer, "8", {}, "retained Fourier modes");
    key("model.layers", V::integer, "2", {}, "spectral blocks");
    key("model.width", V::integer, "16", {}, "channel width");
    key("train.steps", V::integer, "5000", {}, "Adam steps");
    key("train.batch", V::integer, "128", {}, "batch size");
    key("train.lr", V::real, "0.001", {}, "learning rate");
    key("train.clip", V::real, "10", {}, "global gradient norm clip, <= 0 disables");
    key("train.ema", V::real, "0.999", {}, "parameter moving-average decay, 0 disables");
    key("train.eval_every", V::integer, "100", {}, "loss.csv stride");
    key("solver.method", V::text, "rk4", {"euler", "midpoint", "rk4"}, "integrator");
    key("solver.steps", V::integer, "100", {}, "fixed steps");
    key("solver.endpoint_eps", V::real, "0.001", {}, "shrink for endpoint-degenerate fields");
    key("pfode.sigma_kind", V::text, "linear", {"constant", "linear"}, "sigma schedule");
    key("pfode.sigma0", V::real, "2", {}, "constant sigma");
    key("pfode.sigma_min", V::real, "0.1", {}, "linear sigma at t = 0");
    key("pfode.sigma_max", V::real, "20", {}, "linear sigma at t = 1");
    key("pfode.eps", V::real, "0.001", {}, "reverse integration stops here");
    key("oracle.bandwidth", V::real, "0", {}, "kernel-regression bandwidth, 0 = median heuristic");
    key("metrics.bootstrap", V::integer, "200", {}, "energy distance bootstrap resamples");
    key("metrics.kde_bandwidth", V::real, "0", {}, "density MSE bandwidth, 0 = Silverman per node");
    key("metrics.kde_lattice", V::integer, "101", {}, "density MSE evaluation points per node");
    key("reflow.iterations", V::integer, "2", {}, "rectify rounds");
    key("reflow.field", V::text, "oracle", {"oracle", "model"}, "velocity per round");
    key("reflow.count", V::integer, "2000", {}, "pairs in the initial coupling");
    key("reflow.v_nodes", V::integer, "33", {}, "time nodes for V");
    key("reflow.v_samples", V::integer, "0", {}, "pairs used for V, 0 = all");
    key("sample.count", V::integer, "1000", {}, "samples drawn by sample");
    key("seed", V::integer, "0", {}, "master seed");
    key("run.name", V::text, "default", {}, "run directory name under runs/");
    return s;
}

const ConfigSchema& schema() {
    static const ConfigSchema s = make_schema();
    return s;
}

// Stream indices: one per artifact, so adding a command never shifts another's draws.
enum Stream : std::uint64_t { s_data = 1, s_heldout, s_noise, s_sample, s_init, s_train, s_bootstrap, s_reflow };

std::uint64_t derive(std::uint64_t seed, Stream s) { return Rng::stream(seed, s)(); }

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
    bool verbose = false;
};

struct Run {
    Config cfg{schema()};
    fs::path dir;
    std::uint64_t seed = 0;
    std::string command;
    std::vector<fs::path> inputs;

    fs::path path(const std::string& rel) const { return dir / rel; }

    fs::path output(const std::string& rel) const {
        const auto p = dir / rel;
        fs::create_directories(p.parent_path());
        return p;
    }

    fs::path input(const std::string& rel) {
        auto p = dir / rel;
        if (!fs::exists(p)) throw InputError("missing " + p.string() + " (run the producing command first)");
        inputs.push_back(p);
        return p;
    }
};

Run open_run(const Common& c, const std::string& command, bool need_complete) {
    Run r;
    r.command = command;
    if (!c.config.empty()) r.cfg.load(c.config);
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + kv + "'");
        r.cfg.set(std::string(csv::trim(kv.substr(0, eq))), std::string(csv::trim(kv.substr(eq + 1))));
    }
    if (c.seed) r.cfg.set("seed", std::to_string(*c.seed));
    if (need_complete) r.cfg.require_complete();
    r.seed = static_cast<std::uint64_t>(r.cfg.integer("seed"));
    r.dir = c.out.empty() ? fs::path("runs") / r.cfg.text("run.name") : fs::path(c.out);
    fs::create_directories(r.dir);
    return r;
}

std::uint64_t fnv1a(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::uint64_t h = 1469598103934665603ull;
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// config.lock, then MANIFEST listing the command, seed, inputs and every file in the run directory.
void finish(const Run& r) {
    {
        std::ofstream lock(r.output("config.lock"));
        r.cfg.write_lock(lock);
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(r.dir))
        if (e.is_regular_file() && e.path().filename() != "MANIFEST") files.push_back(fs::relative(e.path(), r.dir));
    std::sort(files.begin(), files.end());
    std::ofstream m(r.output("MANIFEST"));
    m << "command " << r.command << "\nseed " << r.seed << '\n';
    for (const auto& in : r.inputs) m << "input " << fs::relative(in, r.dir).generic_string() << '\n';
    for (const auto& f : files) m << "fnv1a64 " << hex(fnv1a(r.dir / f)) << ' ' << f.generic_string() << '\n';
}

// ---------------------------------------------------------------------------
// Config -> library objects

GridPtr make_grid(const Config& c) { return make_uniform_grid(c.count("grid.n"), c.real("grid.a"), c.real("grid.b")); }

KernelParams kernel_params(const Config& c) {
    return KernelParams{c.real("kernel.variance"), c.real("kernel.lengthscale"), c.real("kernel.nugget")};
}

SpectralBasis data_basis(const Config& c) {
    const auto grid = make_grid(c);
    const auto k = c.count("basis.modes");
    detail::require(k >= 1 && k <= grid->n, "basis.modes must lie in [1, grid.n]");
    return eigendecompose(kernel_matrix(parse_kernel_kind(c.text("kernel.kind")), kernel_params(c), *grid), grid, k);
}

GaussianMeasure noise_measure(const Config& c, const SpectralBasis& data) {
    const double scale = c.real("noise.scale");
    detail::require(scale > 0.0, "noise.scale must be positive");
    const auto kind = c.text("noise.spectrum");
    std::vector<double> l(data.size());
    if (kind == "flat") {
        double trace = 0.0;
        for (double v : data.eigenvalues) trace += v;
        std::fill(l.begin(), l.end(), scale * trace / static_cast<double>(l.size()));
    } else if (kind == "kernel") {
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = scale * data.eigenvalues[i];
    } else {
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = scale / static_cast<double>((i + 1) * (i + 1));
    }
    return GaussianMeasure::centered(data.with_eigenvalues(std::move(l)));
}

SigmaSchedule sigma_schedule(const Config& c) {
    if (parse_sigma_kind(c.text("pfode.sigma_kind")) == SigmaSchedule::Kind::constant)
        return SigmaSchedule::constant(c.real("pfode.sigma0"));
    return SigmaSchedule::linear(c.real("pfode.sigma_min"), c.real("pfode.sigma_max"));
}

PathSchedule path_schedule(const Config& c) {
    const auto kind = c.text("path.kind");
    if (kind == "linear") return linear_schedule();
    if (kind == "ot") return ot_schedule(c.real("path.sigma_min"));
    if (kind == "vp_linear_alpha") return vp_linear_schedule();
    const double s = c.real("path.sigma_const");
    return induced_rf_schedule(s > 0.0 ? SigmaSchedule::constant(s) : sigma_schedule(c));
}

SolverConfig solver_config(const Config& c) {
    SolverConfig s;
    s.method = parse_method(c.text("solver.method"));
    s.steps = c.count("solver.steps");
    s.endpoint_eps = c.real("solver.endpoint_eps");
    return s;
}

TrainConfig train_config(const Config& c, std::uint64_t seed) {
    TrainConfig t;
    t.steps = c.count("train.steps");
    t.batch_size = c.count("train.batch");
    t.learning_rate = c.real("train.lr");
    t.clip_norm = c.real("train.clip");
    t.ema_decay = c.real("train.ema");
    t.eval_every = c.count("train.eval_every");
    t.seed = seed;
    return t;
}

std::unique_ptr<TrainableField> make_model(const Config& c, const SpectralBasis& basis, std::uint64_t seed) {
    const auto td = c.count("model.time_dim");
    if (c.text("model.kind") == "mlp_spectral") {
        auto m = std::make_unique<MlpSpectralModel>(basis, c.sizes("model.hidden"), td);
        m->initialize(seed);
        return m;
    }
    auto m = std::make_unique<FourierLayerModel>(basis.grid, c.count("model.fourier_modes"), c.count("model.layers"),
                                                 c.count("model.width"), td);
    m->initialize(seed);
    return m;
}

SpectralBasis load_basis(Run& r, const std::string& rel) {
    std::ifstream in(r.input(rel));
    return read_basis(in);
}

SampleSet load_set(Run& r, const std::string& rel, GridPtr grid = nullptr) { return load_sample_set(r.input(rel).string(), grid); }

GaussianMeasure data_measure(const SpectralBasis& basis) { return GaussianMeasure::centered(basis); }

// ---------------------------------------------------------------------------
// Commands

int cmd_dataset(const Common& c) {
    auto r = open_run(c, "dataset", true);
    const auto& cfg = r.cfg;
    const auto basis = data_basis(cfg);
    const auto noise = noise_measure(cfg, basis);
    const auto grid = basis.grid;
    DatasetParams p;
    p.kernel = parse_kernel_kind(cfg.text("kernel.kind"));
    p.kernel_params = kernel_params(cfg);
    p.modes = basis.size();
    p.mixture_offset = cfg.real("data.mixture_offset");
    const auto kind = parse_dataset_kind(cfg.text("data.kind"));

    Rng rd = Rng::stream(r.seed, s_data), rh = Rng::stream(r.seed, s_heldout), rn = Rng::stream(r.seed, s_noise);
    auto data = make_synthetic_dataset(kind, p, grid, cfg.count("data.count"), rd);
    auto held = make_synthetic_dataset(kind, p, grid, cfg.count("data.heldout"), rh);
    auto noise_set = sample_gaussian(noise, cfg.count("noise.count"), rn);
    data.seed = held.seed = noise_set.seed = r.seed;
    noise_set.kind = "noise";
    save_sample_set(r.output("data/data.csv").string(), data);
    save_sample_set(r.output("data/heldout.csv").string(), held);
    save_sample_set(r.output("data/noise.csv").string(), noise_set);
    {
        std::ofstream out(r.output("data/basis.csv"));
        write_basis(out, basis);
        std::ofstream nout(r.output("data/noise_basis.csv"));
        write_basis(nout, noise.basis);
    }
    std::cout << "wrote " << data.size() << " data, " << held.size() << " held-out, " << noise_set.size()
              << " noise samples to " << (r.dir / "data").string() << '\n';
    if (kind == DatasetKind::gp && data.size() >= 2) {
        const double err = covariance_recovery_error(data, data_measure(basis));
        const double bound = 0.1 * cfg.real("kernel.variance");
        std::cout << "covariance recovery max-abs error " << err << " (bound " << bound << ")\n";
    }
    finish(r);
    return 0;
}

int cmd_train(const Common& c) {
    auto r = open_run(c, "train", true);
    const auto basis = load_basis(r, "data/basis.csv");
    const auto x1 = load_set(r, "data/data.csv", basis.grid);
    const auto x0 = load_set(r, "data/noise.csv", basis.grid);
    auto model = make_model(r.cfg, basis, derive(r.seed, s_init));
    const auto tc = train_config(r.cfg, derive(r.seed, s_train));
    TrainResult res;
    if (tc.steps > 0) res = train(*model, x0, x1, path_schedule(r.cfg), tc);
    save_checkpoint(r.output("checkpoints/model.hrfm").string(), *model);
    {
        std::ofstream out(r.output("reports/loss.csv"));
        write_loss_csv(out, res);
    }
    std::cout << "trained " << tc.steps << " steps, final loss " << csv::fmt17(res.final_loss) << '\n';
    finish(r);
    return 0;
}

struct SampleFlags {
    std::string field = "oracle";
    std::size_t record = 0;
    std::optional<std::size_t> steps;
    std::optional<std::string> method;
    std::string direction = "forward";
    std::optional<std::size_t> count;
    std::string checkpoint;
};

int cmd_sample(const Common& c, const SampleFlags& f) {
    auto r = open_run(c, "sample", true);
    const auto& cfg = r.cfg;
    auto solver = solver_config(cfg);
    if (f.steps) solver.steps = *f.steps;
    if (f.method) solver.method = parse_method(*f.method);
    solver.direction = parse_direction(f.direction);
    solver.record_every = f.record > 0 ? 1 : 0;
    const std::size_t count = f.count ? *f.count : cfg.count("sample.count");
    detail::require(count >= 1, "sample count must be positive");

    const auto basis = fs::exists(r.path("data/basis.csv")) ? load_basis(r, "data/basis.csv") : data_basis(cfg);
    const auto noise = noise_measure(cfg, basis);
    const auto schedule = path_schedule(cfg);
    const bool gaussian_data = cfg.text("data.kind") == "gp";

    std::shared_ptr<const VelocityField> field;
    if (f.field == "pfode") {
        if (solver.direction != Direction::reverse)
            throw InputError("the pfode field runs in reverse (t = 1 noise to t = eps data): pass --direction reverse");
        PfodeData data = gaussian_data ? PfodeData(data_measure(basis)) : PfodeData(load_set(r, "data/data.csv", basis.grid));
        field = std::make_shared<PfodeField>(std::move(data), noise.basis, sigma_schedule(cfg));
        solver.span = std::pair{1.0, cfg.real("pfode.eps")};
    } else if (f.field == "oracle") {
        if (gaussian_data) {
            field = std::make_shared<GaussianOracle>(noise, data_measure(basis), schedule);
        } else {
            const auto x1 = load_set(r, "data/data.csv", basis.grid);
            auto x0 = load_set(r, "data/noise.csv", basis.grid);
            const std::size_t n = std::min(x0.size(), x1.size());
            const auto a = x0.slice(0, n), b = x1.slice(0, n);
            double h = cfg.real("oracle.bandwidth");
            if (h <= 0.0) h = median_bandwidth(a, b, schedule);
            field = std::make_shared<EmpiricalOracle>(a, b, schedule, h);
        }
    } else if (f.field == "checkpoint") {
        const auto path = f.checkpoint.empty() ? r.input("checkpoints/model.hrfm") : fs::path(f.checkpoint);
        if (!f.checkpoint.empty()) r.inputs.push_back(path);
        field = std::shared_ptr<const VelocityField>(load_checkpoint(path.string(), basis));
    } else {
        throw InputError("unknown field '" + f.field + "'");
    }

    // Forward and pfode runs start from noise; other reverse runs start from held-out data at t = 1.
    SampleSet start;
    if (solver.direction == Direction::forward || f.field == "pfode") {
        start = SampleSet{basis.grid, std::vector<GridFunction>(count), "noise", r.seed};
        for (std::size_t j = 0; j < count; ++j) {
            auto rng = Rng::stream(derive(r.seed, s_sample), j);
            start.items[j] = sample_gaussian(noise, 1, rng)[0];
        }
    } else {
        const auto held = load_set(r, "data/heldout.csv", basis.grid);
        start = held.slice(0, std::min(count, held.size()));
    }
    const auto flow = push_forward(*field, start, solver, f.record > 0);
    save_sample_set(r.output("data/z0.csv").string(), flow.z0);
    save_sample_set(r.output("data/z1.csv").string(), flow.z1);
    for (std::size_t j = 0; j < std::min(f.record, flow.trajectories.size()); ++j) {
        std::ofstream out(r.output("reports/trajectories/traj_" + std::to_string(j) + ".csv"));
        write_trajectory_csv(out, flow.trajectories[j]);
    }
    std::cout << "integrated " << flow.z1.size() << " samples with the " << field->name() << " field\n";
    finish(r);
    return 0;
}

int cmd_reflow(const Common& c, std::optional<std::size_t> iterations) {
    auto r = open_run(c, "reflow", true);
    const auto& cfg = r.cfg;
    const auto basis = load_basis(r, "data/basis.csv");
    const auto x1 = load_set(r, "data/data.csv", basis.grid);
    const auto x0 = load_set(r, "data/noise.csv", basis.grid);
    const std::size_t n = std::min({cfg.count("reflow.count"), x0.size(), x1.size()});
    detail::require(n >= 2, "reflow needs at least two pairs");
    Coupling initial{x0.slice(0, n), x1.slice(0, n), 0};

    ReflowOptions opt;
    opt.iterations = iterations ? *iterations : cfg.count("reflow.iterations");
    opt.solver = solver_config(cfg);
    opt.solver.record_every = 0;
    opt.schedule = path_schedule(cfg);
    opt.v_time_nodes = cfg.count("reflow.v_nodes");
    opt.v_mc_samples = cfg.count("reflow.v_samples");
    opt.ks_basis = basis;
    FieldProvider provider;
    if (cfg.text("reflow.field") == "oracle") {
        provider = oracle_provider(basis, opt.schedule);
    } else {
        opt.v_upper_bound = true;
        const auto schedule = opt.schedule;
        const auto seed = derive(r.seed, s_reflow);
        provider = [&cfg, basis, schedule, seed](const Coupling& cp, std::size_t k) -> std::shared_ptr<const VelocityField> {
            auto m = make_model(cfg, basis, Rng::stream(seed, 2 * k)());
            train(*m, cp.x0, cp.x1, schedule, train_config(cfg, Rng::stream(seed, 2 * k + 1)()), true);
            return std::shared_ptr<const VelocityField>(std::move(m));
        };
    }
    const auto res = reflow(initial, provider, opt);
    {
        std::ofstream out(r.output("reports/reflow.csv"));
        write_reflow_csv(out, res);
    }
    double total = 0.0;
    for (const auto& row : res.rows) total += row.straightness.value + row.variance.value;
    std::cout << "reflow: E||X1-X0||^2 = " << res.base_cost_sq.value << ", sum(S+V) = " << total
              << (res.v_upper_bound ? " (V is an upper bound)" : "") << '\n';
    finish(r);
    return 0;
}

// --- verify ---------------------------------------------------------------

struct Row {
    std::string name;
    double value;
    double bound;
    bool ok() const { return std::isfinite(value) && value <= bound; }
};

SpectralBasis small_basis(std::size_t n, std::size_t k, double c) {
    const auto grid = make_uniform_grid(n);
    auto b = eigendecompose(kernel_matrix(KernelKind::matern_half, KernelParams{}, *grid), grid, k);
    std::vector<double> l(k);
    for (std::size_t i = 0; i < k; ++i) l[i] = c / static_cast<double>((i + 1) * (i + 1));
    return b.with_eigenvalues(l);
}

std::vector<Row> verify_paths() {
    std::vector<Row> rows;
    // The induced PF-ODE schedule starts at alpha(0) = eta(1) > 0, so only its identity is asserted.
    auto add = [&](const std::string& name, const PathSchedule& s, bool vp, double norm_bound, bool endpoints = true) {
        const auto ch = check_schedule(s);
        if (endpoints) rows.push_back({name + ".endpoint", ch.endpoint_error, 1e-12});
        rows.push_back({name + ".derivative", ch.derivative_error, 1e-6});
        if (vp) rows.push_back({name + ".alpha2_plus_beta2", ch.norm_identity_error, norm_bound});
    };
    add("linear", linear_schedule(), false, 0);
    add("ot", ot_schedule(0.1), false, 0);
    add("vp_linear_alpha", vp_linear_schedule(), true, 1e-12);
    add("pfode_constant", induced_rf_schedule(SigmaSchedule::constant(2.0)), true, 1e-12, false);
    add("pfode_linear", induced_rf_schedule(SigmaSchedule::linear(0.1, 20.0)), true, 1e-10, false);
    return rows;
}

std::vector<Row> verify_oracle() {
    const auto b0 = small_basis(32, 4, 1.0), b1 = small_basis(32, 4, 4.0);
    const auto m0 = GaussianMeasure::centered(b0), m1 = GaussianMeasure::centered(b1);
    const GaussianOracle oracle(m0, m1, linear_schedule());
    SolverConfig s;
    s.record_every = 0;
    Rng rng(1);
    const auto flow = sample_flow(oracle, m0, 2000, s, rng);
    std::vector<Row> rows;
    rows.push_back({"oracle.terminal_variance_rel_err", moment_errors(flow.z1, m1).max_variance_rel_error, 0.1});
    const Coupling rect{flow.z0, flow.z1, 1};
    const auto refit = fit_gaussian_oracle(rect, b0, linear_schedule());
    const double cost = transport_cost(rect, CostFunction::squared_l2()).value;
    rows.push_back({"oracle.rectified_V_over_cost", coupling_variance(rect, linear_schedule(), *refit).value / cost, 1e-3});

    Rng r2(2);
    const Coupling ind{sample_gaussian(m0, 4000, r2), sample_gaussian(m1, 4000, r2), 0};
    const auto v = coupling_variance(ind, linear_schedule(), oracle);
    const Coupling ind2{sample_gaussian(m0, 4000, r2), sample_gaussian(m1, 4000, r2), 0};
    const auto batch = draw_batch(ind2.x0, ind2.x1, true, 4000, r2);
    const auto terms = rf_loss_terms(oracle, batch, linear_schedule());
    double mean = 0.0, sq = 0.0;
    for (double x : terms) mean += x;
    mean /= static_cast<double>(terms.size());
    for (double x : terms) sq += (x - mean) * (x - mean);
    const double se = std::sqrt(sq / static_cast<double>(terms.size() - 1) / static_cast<double>(terms.size()));
    rows.push_back({"oracle.bayes_risk_z", std::abs(mean - v.value) / std::hypot(se, v.stderr_), 2.0});
    return rows;
}

std::vector<Row> verify_pfode() {
    std::vector<Row> rows;
    const auto noise = small_basis(16, 4, 1.0);
    const GaussianMeasure data{GridFunction(noise.grid), small_basis(16, 4, 4.0), 1.0};
    Rng rng(3);
    for (const auto& [name, s] : {std::pair{"constant", SigmaSchedule::constant(2.0)},
                                  std::pair{"linear", SigmaSchedule::linear(0.1, 20.0)}}) {
        PfodeCoefficients c(s);
        double id = 0.0, ode = 0.0, drift = 0.0;
        for (int i = 0; i <= 100; ++i) {
            const double t = i / 100.0;
            const auto ek = c.at(t);
            id = std::max(id, std::abs(ek.eta * ek.eta + ek.kappa - 1.0));
            const double h = 1e-6, tc = std::clamp(t, h, 1.0 - h);
            const double fd = (eta_kappa(s, tc + h).kappa - eta_kappa(s, tc - h).kappa) / (2 * h);
            ode = std::max(ode, std::abs(fd - s(tc) * (1.0 - eta_kappa(s, tc).kappa)));
        }
        for (int i = 1; i <= 10; ++i) {
            const double t = i / 10.0;
            const auto y = forward_construct(sample_gaussian(data, 1, rng)[0], c, t,
                                             sample_gaussian(GaussianMeasure::centered(noise), 1, rng)[0]);
            const auto a = pfode_drift(s, conditional_score(data, noise, c, t, y), t, y);
            const auto f = forward_construction_drift(data, noise, c, t, y);
            for (std::size_t j = 0; j < a.size(); ++j) drift = std::max(drift, std::abs(a[j] - f[j]));
        }
        rows.push_back({std::string("pfode.") + name + ".eta2_plus_kappa", id, 1e-10});
        rows.push_back({std::string("pfode.") + name + ".kappa_ode", ode, 1e-8});
        rows.push_back({std::string("pfode.") + name + ".drift_vs_forward", drift, 1e-8});
    }
    return rows;
}

std::vector<Row> verify_gradients() {
    const auto basis = small_basis(16, 4, 1.0);
    Rng rng(4);
    GridFunction x(basis.grid), up(basis.grid);
    for (auto& v : x.values) v = rng.normal();
    for (auto& v : up.values) v = rng.normal();
    MlpSpectralModel mlp(basis, {8, 8}, 4);
    mlp.initialize(5);
    FourierLayerModel fno(basis.grid, 4, 2, 4, 2);
    fno.initialize(6);
    return {{"gradients.mlp_spectral", gradient_check(mlp, 0.37, x, up), 1e-4},
            {"gradients.fourier_layer", gradient_check(fno, 0.37, x, up), 1e-4}};
}

std::vector<Row> verify_solver() {
    const auto grid = make_uniform_grid(8);
    const auto z0 = GridFunction::constant(grid, 1.0);
    const LinearField f(1.0);
    auto err = [&](Method m, std::size_t steps) {
        SolverConfig s;
        s.method = m;
        s.steps = steps;
        s.record_every = 0;
        return std::abs(integrate(f, z0, s).terminal()[0] - std::exp(1.0));
    };
    auto order = [&](Method m) { return std::log2(err(m, 20) / err(m, 40)); };
    std::vector<Row> rows{{"solver.euler_order_gap", std::abs(order(Method::euler) - 1.0), 0.1},
                          {"solver.midpoint_order_gap", std::abs(order(Method::midpoint) - 2.0), 0.1},
                          {"solver.rk4_order_gap", std::abs(order(Method::rk4) - 4.0), 0.2},
                          {"solver.rk4_error_100", err(Method::rk4, 100), 1e-8}};
    SolverConfig fw;
    fw.steps = 100;
    auto bw = fw;
    bw.direction = Direction::reverse;
    const auto there = integrate(f, z0, fw).terminal();
    const auto back = integrate(f, there, bw).terminal();
    rows.push_back({"solver.reverse_roundtrip", distance(back, z0), 1e-9});
    return rows;
}

int cmd_verify(const Common& c, const std::string& suite) {
    auto r = open_run(c, "verify " + suite, false);
    std::vector<Row> rows;
    if (suite == "paths") rows = verify_paths();
    else if (suite == "oracle") rows = verify_oracle();
    else if (suite == "pfode") rows = verify_pfode();
    else if (suite == "gradients") rows = verify_gradients();
    else if (suite == "solver") rows = verify_solver();
    else throw InputError("unknown verify suite '" + suite + "'");
    {
        std::ofstream out(r.output("reports/verify.csv"));
        out << "name,value,bound\n";
        for (const auto& row : rows) out << row.name << ',' << csv::fmt17(row.value) << ',' << csv::fmt17(row.bound) << '\n';
    }
    int failed = 0;
    for (const auto& row : rows) {
        std::cout << (row.ok() ? "pass " : "FAIL ") << row.name << " value=" << row.value << " bound=" << row.bound << '\n';
        failed += row.ok() ? 0 : 1;
    }
    finish(r);
    if (failed) {
        std::cerr << "hrf: " << failed << " verification assertion(s) failed\n";
        return static_cast<int>(ExitCode::verification_failure);
    }
    return 0;
}

// --- eval -----------------------------------------------------------------

int cmd_eval(const Common& c, std::string generated, std::string reference) {
    auto r = open_run(c, "eval", false);
    const auto& cfg = r.cfg;
    auto resolve = [&](std::string& p, const std::string& rel) {
        if (p.empty()) {
            p = r.input(rel).string();
        } else {
            if (!fs::exists(p)) throw InputError("missing " + p);
            r.inputs.push_back(fs::absolute(p));
        }
    };
    resolve(generated, "data/z1.csv");
    resolve(reference, "data/heldout.csv");
    const auto a = load_sample_set(generated);
    const auto b = load_sample_set(reference);
    if (!same_grid(a.grid, b.grid)) throw InputError("generated and reference sets live on different grids");

    MetricReport rep;
    const auto ed = energy_distance_bootstrap(a, b, cfg.count("metrics.bootstrap"), derive(r.seed, s_bootstrap));
    rep.add("energy_distance", ed.value, ed.stderr_, a.size());
    rep.add("density_mse", density_mse(a, b, cfg.real("metrics.kde_bandwidth"), cfg.count("metrics.kde_lattice")), 0.0,
            a.size());
    if (fs::exists(r.path("data/basis.csv"))) {
        std::ifstream in(r.input("data/basis.csv"));
        const auto basis = read_basis(in, a.grid);
        rep.add("ks_max", per_mode_ks(a, b, basis).max, 0.0, a.size());
        const auto ca = mode_coordinates(a, basis), cb = mode_coordinates(b, basis);
        double mean_err = 0.0, var_err = 0.0;
        auto moments = [](const std::vector<double>& xs) {
            double m = 0.0, v = 0.0;
            for (double x : xs) m += x;
            m /= static_cast<double>(xs.size());
            for (double x : xs) v += (x - m) * (x - m);
            return std::pair{m, v / static_cast<double>(xs.size() - 1)};
        };
        for (std::size_t i = 0; i < basis.size(); ++i) {
            const auto [ma, va] = moments(ca[i]);
            const auto [mb, vb] = moments(cb[i]);
            mean_err = std::max(mean_err, std::abs(ma - mb));
            var_err = std::max(var_err, vb > 0.0 ? std::abs(va - vb) / vb : std::abs(va));
        }
        rep.add("mode_mean_max_abs_err", mean_err, 0.0, a.size());
        rep.add("mode_variance_max_rel_err", var_err, 0.0, a.size());
    }
    {
        std::ofstream out(r.output("reports/metrics.csv"));
        write_metric_report(out, rep);
    }
    write_metric_report(std::cout, rep);
    finish(r);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rectified flows on function spaces"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config, "key = value config file");
    app.add_option("--seed", common.seed, "master seed (overrides the config)");
    app.add_option("--out", common.out, "run directory (default runs/<run.name>)");
    app.add_option("--set", common.overrides, "config override key=value (repeatable)");
    app.add_flag("-v,--verbose", common.verbose, "progress logging");

    auto* dataset = app.add_subcommand("dataset", "write data, held-out and noise sets plus the basis cache");
    auto* train_cmd = app.add_subcommand("train", "fit the velocity model");

    auto* sample = app.add_subcommand("sample", "integrate the flow ODE");
    SampleFlags sf;
    sample->add_option("--field", sf.field, "oracle | checkpoint | pfode")->check(CLI::IsMember({"oracle", "checkpoint", "pfode"}));
    sample->add_option("--record", sf.record, "write trajectories for the first N samples");
    sample->add_option("--steps", sf.steps, "override solver.steps");
    sample->add_option("--method", sf.method, "euler | midpoint | rk4")->check(CLI::IsMember({"euler", "midpoint", "rk4"}));
    sample->add_option("--direction", sf.direction, "forward | reverse")->check(CLI::IsMember({"forward", "reverse"}));
    sample->add_option("--count", sf.count, "override sample.count");
    sample->add_option("--checkpoint", sf.checkpoint, "checkpoint path (default checkpoints/model.hrfm)");

    auto* reflow_cmd = app.add_subcommand("reflow", "iterate rectify and report S, V and costs");
    std::optional<std::size_t> iterations;
    reflow_cmd->add_option("-K,--iterations", iterations, "override reflow.iterations");

    auto* verify = app.add_subcommand("verify", "run an invariant suite");
    std::string suite;
    verify->add_option("suite", suite, "paths | oracle | pfode | gradients | solver")
        ->required()
        ->check(CLI::IsMember({"paths", "oracle", "pfode", "gradients", "solver"}));

    auto* eval = app.add_subcommand("eval", "compare generated samples with a reference set");
    std::string generated, reference;
    eval->add_option("--generated", generated, "default <run>/data/z1.csv");
    eval->add_option("--reference", reference, "default <run>/data/heldout.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::input_error);
    }
    log::set_level(common.verbose ? log::Level::info : log::Level::warn);

    try {
        if (*dataset) return cmd_dataset(common);
        if (*train_cmd) return cmd_train(common);
        if (*sample) return cmd_sample(common, sf);
        if (*reflow_cmd) return cmd_reflow(common, iterations);
        if (*verify) return cmd_verify(common, suite);
        if (*eval) return cmd_eval(common, generated, reference);
    } catch (const Error& e) {
        std::cerr << "hrf: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "hrf: " << e.what() << '\n';
        return static_cast<int>(ExitCode::input_error);
    }
    return 0;
}
