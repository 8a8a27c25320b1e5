// Batch drivers for the RBF-FD Neumann stabilization studies. Every
// subcommand writes plot-ready CSV files into the output directory and is
// deterministic for a fixed configuration and seed.

#include "nrbf/experiments.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace nrbf;

struct RunConfig {
    std::string kernel = "mq";
    double eps_s = 0.5;
    int poly = 2;
    int m_i = 15;
    double d_min = 0.7;
    double spacing = 0.0;  // 0 = per-command default
    std::string mode = "none";
    std::string domain = "star";
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    int samples = 721;
    int threads = 0;
    int hhd_iters = 50;
    bool skip_singular = false;
    bool allow_small_shape = false;  // enables eps*s < 0.2 despite the accuracy caveat
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Loads a plain `key = value` configuration file whose keys mirror the long
/// flags; values given on the command line afterwards override these.
void load_config_file(const std::string& path, RunConfig& cfg, std::string& arrangement) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key = value");
        auto trim = [](std::string v) {
            const auto a = v.find_first_not_of(" \t");
            const auto b = v.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "kernel") cfg.kernel = value;
            else if (key == "eps-s") cfg.eps_s = std::stod(value);
            else if (key == "poly") cfg.poly = std::stoi(value);
            else if (key == "mi") cfg.m_i = std::stoi(value);
            else if (key == "dmin") cfg.d_min = std::stod(value);
            else if (key == "spacing") cfg.spacing = std::stod(value);
            else if (key == "mode") cfg.mode = value;
            else if (key == "domain") cfg.domain = value;
            else if (key == "out") cfg.out_dir = value;
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "samples") cfg.samples = std::stoi(value);
            else if (key == "threads") cfg.threads = std::stoi(value);
            else if (key == "hhd-iters") cfg.hhd_iters = std::stoi(value);
            else if (key == "skip-singular") cfg.skip_singular = value == "1" || value == "true";
            else if (key == "allow-small-shape") cfg.allow_small_shape = value == "1" || value == "true";
            else if (key == "arrangement") arrangement = value;
            else throw ConfigError("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for config key " + key + ": " + value);
        }
    }
}

void add_common_options(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--kernel", cfg.kernel, "RBF family: ga, mq, imq, iq, phs<odd>, tps<k>");
    cmd->add_option("--eps-s", cfg.eps_s, "dimensionless shape factor eps*s");
    cmd->add_option("--poly", cfg.poly, "polynomial augmentation degree (-1 disables)");
    cmd->add_option("--mi", cfg.m_i, "interior nodes per stencil");
    cmd->add_option("--dmin", cfg.d_min, "boundary selection threshold d_min")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--spacing", cfg.spacing, "nominal node spacing s");
    cmd->add_option("--mode", cfg.mode, "stabilization mode: none|select|project|both")
        ->check(CLI::IsMember({"none", "select", "project", "both"}));
    cmd->add_option("--domain", cfg.domain, "domain: star|disk")
        ->check(CLI::IsMember({"star", "disk"}));
    cmd->add_option("--out", cfg.out_dir, "output directory for CSV files");
    cmd->add_option("--seed", cfg.seed, "seed for perturbation studies");
    cmd->add_option("--samples", cfg.samples, "sweep sample count");
    cmd->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
    cmd->add_option("--hhd-iters", cfg.hhd_iters, "repeated-HHD iteration count");
    cmd->add_flag("--skip-singular", cfg.skip_singular,
                  "report singular stencils instead of aborting the assembly");
    cmd->add_flag("--allow-small-shape", cfg.allow_small_shape,
                  "allow eps*s < 0.2 (double precision only; accuracy not guaranteed)");
    cmd->add_option("--config", "plain-text key = value configuration file (flags override)")
        ->expected(1);
}

void validate(const RunConfig& cfg) {
    if (cfg.eps_s < 0.2 && !cfg.allow_small_shape &&
        (cfg.kernel == "ga" || cfg.kernel == "mq" || cfg.kernel == "imq" || cfg.kernel == "iq"))
        throw ConfigError("eps*s < 0.2 needs --allow-small-shape (no extended precision here)");
    if (cfg.samples < 2) throw ConfigError("--samples must be at least 2");
    if (cfg.m_i < 1) throw ConfigError("--mi must be positive");
}

std::ofstream open_csv(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/" + name;
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path);
    std::cout << "writing " << path << "\n";
    return os;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Domain2D domain_for(const RunConfig& cfg) {
    if (cfg.domain == "disk")
        return Domain2D([](double) { return 1.0; }, [](double) { return 0.0; },
                        Eigen::Vector2d(0.0, 0.0));
    return test_domain();
}

double default_spacing(const RunConfig& cfg) {
    if (cfg.spacing > 0.0) return cfg.spacing;
    return 0.035;  // N_I ~ 3000 on the star test domain
}

// ---------------------------------------------------------------- ref-sweep
int cmd_ref_sweep(const RunConfig& cfg) {
    RefSweepConfig rc;
    rc.kernel = cfg.kernel;
    rc.eps_s = cfg.eps_s;
    rc.spacing = cfg.spacing > 0.0 ? cfg.spacing : 1.0;
    rc.poly_degree = cfg.poly;
    rc.d_min = cfg.d_min;
    rc.samples = cfg.samples;
    rc.threads = cfg.threads;

    const std::vector<std::pair<SweepMode, std::string>> modes = {
        {SweepMode::None, "none"}, {SweepMode::Approach1, "approach1"},
        {SweepMode::Approach2, "approach2"}};
    for (const auto& [mode, name] : modes) {
        if (cfg.mode == "select" && mode == SweepMode::Approach2) continue;
        if (cfg.mode == "project" && mode == SweepMode::Approach1) continue;
        auto os = open_csv(cfg, "ref_sweep_" + name + ".csv");
        os << "alpha,kappa,lambda_I,lambda_B,interp_err,N_rem\n";
        for (const RefSweepRow& r : ref_sweep(mode, rc))
            os << fmt(r.alpha) << ',' << fmt(r.kappa) << ',' << fmt(r.lambda_I) << ','
               << fmt(r.lambda_B) << ',' << fmt(r.interp_err) << ',' << r.n_rem << "\n";
    }
    return 0;
}

// --------------------------------------------------------------------- vmap
int cmd_vmap(const RunConfig& cfg, const std::string& arrangement) {
    int m_i = 3;
    if (arrangement == "hex5") m_i = 5;
    else if (arrangement == "hex12") m_i = 12;
    else if (arrangement == "hex15") m_i = 15;
    else if (arrangement != "hex3") throw ConfigError("arrangement must be hex3|hex5|hex12|hex15");

    const double s = cfg.spacing > 0.0 ? cfg.spacing : 1.0;
    Matrix interior = hex_arrangement(m_i, s);
    if (cfg.seed != 0) interior = perturb_points(interior, 0.15 * s, cfg.seed);
    const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, s);

    auto os = open_csv(cfg, "vmap_grid.csv");
    os << "x,y,vnorm,vx,vy\n";
    for (const VMapRow& r : vmap_grid(interior, kernel, s, 101, 3.0 * s, cfg.threads))
        os << fmt(r.x) << ',' << fmt(r.y) << ',' << fmt(r.vnorm) << ',' << fmt(r.vx) << ','
           << fmt(r.vy) << "\n";

    auto oc = open_csv(cfg, "vmap_curve.csv");
    oc << "x,y,vnorm,vx,vy\n";
    for (const VMapRow& r : vmap_curve(interior, kernel, s, s, 720))
        oc << fmt(r.x) << ',' << fmt(r.y) << ',' << fmt(r.vnorm) << ',' << fmt(r.vx) << ','
           << fmt(r.vy) << "\n";
    return 0;
}

// ------------------------------------------------------------------- optdir
int cmd_optdir(const RunConfig& cfg) {
    std::vector<double> shapes = {0.2, 0.3, 0.5, 1.0, 2.0, 5.0, 10.0};
    if (cfg.allow_small_shape) shapes.insert(shapes.begin(), 0.1);
    const double s = cfg.spacing > 0.0 ? cfg.spacing : 1.0;
    const int aug = cfg.poly >= 0 ? cfg.poly : 2;

    auto os = open_csv(cfg, "optdir.csv");
    os << "eps_s,perturbed,node,x,y,nx,ny,nx_aug,ny_aug,angle_gap_deg,residual,iterations,"
          "converged\n";
    for (const OptDirRow& r : optdir_study(shapes, s, aug, cfg.seed == 0 ? 1234 : cfg.seed))
        os << fmt(r.eps_s) << ',' << r.perturbed << ',' << r.node << ',' << fmt(r.x) << ','
           << fmt(r.y) << ',' << fmt(r.nx) << ',' << fmt(r.ny) << ',' << fmt(r.nx_aug) << ','
           << fmt(r.ny_aug) << ',' << fmt(r.angle_gap_deg) << ',' << fmt(r.residual) << ','
           << r.iterations << ',' << r.converged << "\n";
    return 0;
}

// ---------------------------------------------------------------- stability
int cmd_stability(const RunConfig& cfg) {
    const double s = default_spacing(cfg);
    const Domain2D dom = domain_for(cfg);
    const NodeSet nodes = generate_nodes(dom, s);
    const std::vector<double> eps_grid = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    const std::vector<double> dmin_grid = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.99};
    const std::vector<int> degrees = {2, 3, 4};

    if (cfg.mode == "none" || cfg.mode == "select" || cfg.mode == "both") {
        struct Job {
            int p;
            double eps, dmin;
        };
        std::vector<Job> jobs;
        for (int p : degrees)
            for (double e : eps_grid)
                for (double d : dmin_grid) jobs.push_back({p, e, d});
        std::vector<StabilityRow> rows(jobs.size());
        std::vector<std::vector<Stencil>> stencils_by_p(degrees.size());
        for (std::size_t i = 0; i < degrees.size(); ++i)
            stencils_by_p[i] = build_stencils(nodes, stencil_size_for_degree(degrees[i]));
        detail::parallel_for(static_cast<Index>(jobs.size()), cfg.threads, [&](Index j) {
            const Job& job = jobs[static_cast<std::size_t>(j)];
            const std::size_t pi = static_cast<std::size_t>(job.p - 2);
            const KernelSpec kernel = parse_kernel(cfg.kernel, job.eps, s);
            rows[static_cast<std::size_t>(j)] = stability_run(
                nodes, stencils_by_p[pi], kernel, job.p, job.eps, job.dmin, cfg.hhd_iters, 1,
                cfg.skip_singular);
        });
        auto os = open_csv(cfg, "stability_select.csv");
        os << "P,eps_s,dmin,stable,growth\n";
        for (const StabilityRow& r : rows)
            os << r.poly_degree << ',' << fmt(r.eps_s) << ',' << fmt(r.d_min) << ',' << r.stable
               << ',' << fmt(r.growth) << "\n";
    }

    // Projected node set, swept over the same grid; the selection threshold
    // applies on top of the projection (the two techniques compose).
    if (cfg.mode == "project" || cfg.mode == "both") {
        const NodeSet projected = project_boundary_nodes(nodes, dom);
        struct Job {
            int p;
            double eps, dmin;
        };
        std::vector<Job> jobs;
        for (int p : degrees)
            for (double e : eps_grid)
                for (double d : dmin_grid) jobs.push_back({p, e, d});
        std::vector<StabilityRow> rows(jobs.size());
        std::vector<std::vector<Stencil>> stencils_by_p(degrees.size());
        for (std::size_t i = 0; i < degrees.size(); ++i)
            stencils_by_p[i] = build_stencils(projected, stencil_size_for_degree(degrees[i]));
        detail::parallel_for(static_cast<Index>(jobs.size()), cfg.threads, [&](Index j) {
            const Job& job = jobs[static_cast<std::size_t>(j)];
            const std::size_t pi = static_cast<std::size_t>(job.p - 2);
            const KernelSpec kernel = parse_kernel(cfg.kernel, job.eps, s);
            rows[static_cast<std::size_t>(j)] = stability_run(projected, stencils_by_p[pi], kernel,
                                                              job.p, job.eps, job.dmin, cfg.hhd_iters,
                                                              1, cfg.skip_singular);
        });
        auto os = open_csv(cfg, "stability_project.csv");
        os << "P,eps_s,dmin,stable,growth\n";
        for (const StabilityRow& r : rows)
            os << r.poly_degree << ',' << fmt(r.eps_s) << ',' << fmt(r.d_min) << ',' << r.stable
               << ',' << fmt(r.growth) << "\n";
    }

    // Per-iteration history of the configured single run.
    {
        const int p = cfg.poly >= 0 ? cfg.poly : 2;
        const auto stencils = build_stencils(nodes, cfg.m_i > 0 ? cfg.m_i : stencil_size_for_degree(p));
        AssemblyOptions opts;
        opts.threads = cfg.threads;
        opts.selection = SelectionConfig{cfg.d_min};
        const Matrix w = vortex_field(nodes);
        const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, s);
        const HhdState state =
            hhd_iterate(nodes, stencils, kernel, PolyBasis(p, 2), opts, w, cfg.hhd_iters);
        auto os = open_csv(cfg, "hhd_history.csv");
        hhd_history_csv(state, os);
    }
    return 0;
}

// ------------------------------------------------------------------ poisson
int cmd_poisson(const RunConfig& cfg) {
    const double s = default_spacing(cfg);
    const Domain2D dom = domain_for(cfg);
    const NodeSet nodes = generate_nodes(dom, s);
    const int p = cfg.poly >= 0 ? cfg.poly : 3;
    const Index m_i = stencil_size_for_degree(p);
    const std::vector<double> dmin_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

    // Both node sets are swept by default; --mode select/project restricts to one.
    const bool run_plain = cfg.mode != "project";
    const bool run_project = cfg.mode != "select";

    if (run_plain) {
        const auto stencils = build_stencils(nodes, m_i);
        auto os = open_csv(cfg, "poisson_plain.csv");
        os << "P,eps_s,dmin,nrmse\n";
        for (double d : dmin_grid) {
            const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, s);
            double err = std::numeric_limits<double>::infinity();
            try {
                err = poisson_study(nodes, stencils, kernel, p, d, cfg.threads, cfg.skip_singular);
            } catch (const std::exception&) {
            }
            os << p << ',' << fmt(cfg.eps_s) << ',' << fmt(d) << ',' << fmt(err) << "\n";
        }
    }
    if (run_project) {
        const NodeSet projected = project_boundary_nodes(nodes, dom);
        const auto stencils = build_stencils(projected, m_i);
        auto os = open_csv(cfg, "poisson_project.csv");
        os << "P,eps_s,dmin,nrmse\n";
        for (double d : dmin_grid) {
            const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, s);
            double err = std::numeric_limits<double>::infinity();
            try {
                err = poisson_study(projected, stencils, kernel, p, d, cfg.threads, cfg.skip_singular);
            } catch (const std::exception&) {
            }
            os << p << ',' << fmt(cfg.eps_s) << ',' << fmt(d) << ',' << fmt(err) << "\n";
        }
    }

    // Refinement pair for the convergence check.
    auto oc = open_csv(cfg, "poisson_refine.csv");
    oc << "P,eps_s,spacing,n_interior,nrmse\n";
    for (const double sp : {s, 0.5 * s}) {
        const NodeSet n2 = generate_nodes(dom, sp);
        const auto st2 = build_stencils(n2, m_i);
        const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, sp);
        const double err = poisson_study(n2, st2, kernel, p, cfg.d_min, cfg.threads, cfg.skip_singular);
        oc << p << ',' << fmt(cfg.eps_s) << ',' << fmt(sp) << ',' << n2.interior_indices().size()
           << ',' << fmt(err) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- appendixc
int cmd_appendixc(const RunConfig& cfg) {
    const double s = cfg.spacing > 0.0 ? cfg.spacing : 1.0;
    const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, s);
    auto oh = open_csv(cfg, "appxc_cost.csv");
    oh << "alpha,iter,cost\n";
    auto op = open_csv(cfg, "appxc_positions.csv");
    op << "alpha,node,x,y,kind\n";

    for (const double alpha : {-M_PI / 12, 0.0, M_PI / 12}) {
        auto [nodes, st] = reference_stencil(alpha, s);
        const BoundaryOptimResult res = optimize_boundary_positions(st, nodes, kernel, 0.05, 200);
        for (std::size_t i = 0; i < res.cost_history.size(); ++i)
            oh << fmt(alpha) << ',' << i << ',' << fmt(res.cost_history[i]) << "\n";
        for (std::size_t k = 0; k < res.stencil.boundary.size(); ++k) {
            const Index idx = res.stencil.boundary[k];
            op << fmt(alpha) << ',' << k << ',' << fmt(res.nodes.positions(idx, 0)) << ','
               << fmt(res.nodes.positions(idx, 1)) << ",optimized\n";
        }
        const NodeSet projected = project_reference_boundary(alpha, s);
        std::size_t k = 0;
        for (const Index b : projected.boundary_indices())
            op << fmt(alpha) << ',' << k++ << ',' << fmt(projected.positions(b, 0)) << ','
               << fmt(projected.positions(b, 1)) << ",projected\n";
    }
    return 0;
}

// ------------------------------------------------------------------ nodegen
int cmd_nodegen(const RunConfig& cfg) {
    const double s = default_spacing(cfg);
    const Domain2D dom = domain_for(cfg);
    NodeSet nodes = generate_nodes(dom, s);
    if (cfg.mode == "project" || cfg.mode == "both") nodes = project_boundary_nodes(nodes, dom);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/nodes.txt";
    write_nodes(path, nodes);
    std::cout << "writing " << path << " (" << nodes.interior_indices().size() << " interior, "
              << nodes.boundary_indices().size() << " boundary)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RBF-FD meshless discretization with stabilized Neumann boundary conditions"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string arrangement = "hex15";

    CLI::App* ref = app.add_subcommand("ref-sweep", "alpha sweep of the reference stencil");
    add_common_options(ref, cfg);
    CLI::App* vmap = app.add_subcommand("vmap", "optimal-vector map for a hexagonal arrangement");
    add_common_options(vmap, cfg);
    vmap->add_option("--arrangement", arrangement, "hex3|hex5|hex12|hex15");
    CLI::App* opt = app.add_subcommand("optdir", "optimal directions across shape factors");
    add_common_options(opt, cfg);
    CLI::App* stab = app.add_subcommand("stability", "repeated-HHD stability map");
    add_common_options(stab, cfg);
    CLI::App* poi = app.add_subcommand("poisson", "pure-Neumann Poisson accuracy study");
    add_common_options(poi, cfg);
    CLI::App* appc = app.add_subcommand("appendixc", "gradient-based boundary placement");
    add_common_options(appc, cfg);
    CLI::App* gen = app.add_subcommand("nodegen", "generate and write a node set");
    add_common_options(gen, cfg);

    // A config file seeds the defaults before the flags are parsed, so any
    // flag given explicitly wins over the file.
    try {
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config") load_config_file(argv[i + 1], cfg, arrangement);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        validate(cfg);
        if (ref->parsed()) return cmd_ref_sweep(cfg);
        if (vmap->parsed()) return cmd_vmap(cfg, arrangement);
        if (opt->parsed()) return cmd_optdir(cfg);
        if (stab->parsed()) return cmd_stability(cfg);
        if (poi->parsed()) return cmd_poisson(cfg);
        if (appc->parsed()) return cmd_appendixc(cfg);
        if (gen->parsed()) return cmd_nodegen(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const KernelError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
