#include "selfsim/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "selfsim/format.hpp"

namespace selfsim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Schema helpers. Every accessor names the full key path on failure.

std::string join(const std::string &path, const std::string &key) { return path.empty() ? key : path + "." + key; }
std::string index_path(const std::string &path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void reject_unknown(const json &obj, const std::string &path, std::initializer_list<const char *> keys) {
    for (const auto &[k, v] : obj.items()) {
        bool known = false;
        for (const char *key : keys)
            known = known || k == key;
        if (!known)
            throw ConfigError(join(path, k), "unknown key");
    }
}

const json &require_object(const json &j, const std::string &path) {
    if (!j.is_object())
        throw ConfigError(path, "expected an object");
    return j;
}

double as_number(const json &j, const std::string &path) {
    if (!j.is_number())
        throw ConfigError(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v))
        throw ConfigError(path, "must be finite");
    return v;
}

long long as_integer(const json &j, const std::string &path) {
    if (j.is_number_integer())
        return j.get<long long>();
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9e15)
            return static_cast<long long>(v);
    }
    throw ConfigError(path, "expected an integer");
}

int as_int(const json &j, const std::string &path) {
    const long long v = as_integer(j, path);
    if (v < -2147483647LL || v > 2147483647LL)
        throw ConfigError(path, "out of range");
    return static_cast<int>(v);
}

std::vector<int> as_int_list(const json &j, const std::string &path) {
    if (!j.is_array())
        throw ConfigError(path, "expected an array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(as_int(j[i], index_path(path, i)));
    return out;
}

MlpSpec parse_widths(const json &j, const std::string &path) {
    MlpSpec spec{as_int_list(j, path)};
    if (spec.widths.size() < 3)
        throw ConfigError(path, "need input, at least one hidden layer and output widths");
    for (std::size_t i = 0; i < spec.widths.size(); ++i)
        if (spec.widths[i] < 1)
            throw ConfigError(index_path(path, i), "widths must be positive");
    return spec;
}

const CaseDefinition &definition(const RunConfig &config) { return find_case(config.case_name); }

void apply_case_defaults(RunConfig &c, const CaseDefinition &def) {
    c.grid = c.desk_scale ? def.desk_grid : def.full_grid;
    c.profile = def.profile;
    c.rates = def.rates;
    c.case_params = def.defaults;
    if (c.desk_scale) {
        c.lbfgs.max_iterations = def.desk_iterations;
        c.lbfgs.warmup_iterations = def.desk_warmup;
    }
}

void check_config(RunConfig &c) {
    const ProblemSpec problem = build_problem(c);
    if (c.grid.space.size() != static_cast<std::size_t>(problem.spatial_dim))
        throw ConfigError("grid.space", fmt::format("expected {} sizes for a {}-dimensional case",
                                                    problem.spatial_dim, problem.spatial_dim));
    for (std::size_t i = 0; i < c.grid.space.size(); ++i)
        if (c.grid.space[i] < 8)
            throw ConfigError(index_path("grid.space", i), "grid sizes must be at least 8");
    if (c.grid.tau < 8)
        throw ConfigError("grid.tau", "grid sizes must be at least 8");
    c.lbfgs.validate();
    c.weights.validate();
    Networks::initialize(c.profile, c.rates, 0).check_compatible(problem);
    for (std::size_t i = 0; i < c.snapshots.size(); ++i)
        if (c.snapshots[i] < 0.0 || c.snapshots[i] > c.tau_end)
            throw ConfigError(index_path("snapshots", i), "must lie in [0, tau_end]");
}

json config_to_json(const RunConfig &c) {
    json j;
    j["case"] = c.case_name;
    j["desk_scale"] = c.desk_scale;
    j["grid"] = {{"space", c.grid.space}, {"tau", c.grid.tau}};
    j["tau_end"] = c.tau_end;
    j["networks"] = {{"profile", c.profile.widths}, {"rates", c.rates.widths}};
    j["weights"] = {{"pde", c.weights.pde}, {"alg", c.weights.alg}, {"bc", c.weights.bc}, {"ic", c.weights.ic}};
    j["lbfgs"] = {{"memory", c.lbfgs.memory},
                  {"c1", c.lbfgs.c1},
                  {"c2", c.lbfgs.c2},
                  {"max_iterations", c.lbfgs.max_iterations},
                  {"gradient_tolerance", c.lbfgs.gradient_tolerance},
                  {"max_line_search_steps", c.lbfgs.max_line_search_steps},
                  {"warmup_iterations", c.lbfgs.warmup_iterations}};
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["case_params"] = json::object();
    for (const auto &[k, v] : c.case_params)
        j["case_params"][k] = v;
    j["snapshots"] = c.snapshots;
    return j;
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    out << text;
    if (!out)
        throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string snapshot_csv(const Snapshot &s, int dim) {
    std::string out = dim == 1 ? "x,w\n" : "x,y,w\n";
    for (Eigen::Index k = 0; k < s.points.cols(); ++k) {
        for (int d = 0; d < dim; ++d)
            out += format_double(s.points(d, k)) + ",";
        out += format_double(s.values[static_cast<std::size_t>(k)]) + "\n";
    }
    return out;
}

std::string snapshot_name(std::size_t index, double tau) { return fmt::format("tau_{:03d}_{:g}.csv", index, tau); }

json result_json(const CaseResult &r) {
    json j;
    j["case"] = r.name;
    for (const auto &[name, s] : r.steady)
        j["steady"][name] = {{"mean", s.mean}, {"deviation", s.deviation}};
    if (r.exponents)
        j["exponents"] = {{"alpha", r.exponents->alpha}, {"beta", r.exponents->beta}};
    j["metrics"] = json::object();
    for (const auto &[name, v] : r.metrics)
        j["metrics"][name] = v;
    j["targets"] = json::object();
    for (const auto &[name, t] : r.targets) {
        const auto it = r.metrics.find(name);
        const bool pass = it != r.metrics.end() && std::abs(it->second - t.first) <= t.second;
        j["targets"][name] = {{"target", t.first}, {"tolerance", t.second}, {"pass", pass}};
    }
    return j;
}

} // namespace

RunConfig default_run_config(const std::string &case_name, bool desk_scale) {
    const CaseDefinition &def = find_case(case_name);
    RunConfig c;
    c.case_name = def.name;
    c.desk_scale = desk_scale;
    apply_case_defaults(c, def);
    c.tau_end = def.build(c.case_params).tau_end;
    c.output_dir = "runs/" + def.name;
    for (int k = 0; k <= 4; ++k)
        c.snapshots.push_back(c.tau_end * k / 4.0);
    return c;
}

RunConfig parse_run_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    require_object(j, "(root)");
    reject_unknown(j, "", {"case", "desk_scale", "grid", "tau_end", "networks", "weights", "lbfgs", "seed",
                           "output_dir", "case_params", "snapshots"});
    if (!j.contains("case"))
        throw ConfigError("case", "missing; registered cases: " + fmt::format("{}", fmt::join(case_names(), ", ")));
    if (!j["case"].is_string())
        throw ConfigError("case", "expected a string");
    bool desk = false;
    if (j.contains("desk_scale")) {
        if (!j["desk_scale"].is_boolean())
            throw ConfigError("desk_scale", "expected true or false");
        desk = j["desk_scale"].get<bool>();
    }
    RunConfig c = default_run_config(j["case"].get<std::string>(), desk);
    const bool explicit_snapshots = j.contains("snapshots");

    if (j.contains("case_params")) {
        const json &p = require_object(j["case_params"], "case_params");
        for (const auto &[k, v] : p.items()) {
            if (!c.case_params.count(k))
                throw ConfigError(join("case_params", k), "unknown parameter for case " + c.case_name);
            c.case_params[k] = as_number(v, join("case_params", k));
        }
        c.tau_end = definition(c).build(c.case_params).tau_end;
    }
    if (j.contains("grid")) {
        const json &g = require_object(j["grid"], "grid");
        reject_unknown(g, "grid", {"space", "tau"});
        if (g.contains("space"))
            c.grid.space = as_int_list(g["space"], "grid.space");
        if (g.contains("tau"))
            c.grid.tau = as_int(g["tau"], "grid.tau");
    }
    if (j.contains("tau_end")) {
        c.tau_end = as_number(j["tau_end"], "tau_end");
        if (c.tau_end <= 0.0)
            throw ConfigError("tau_end", "must be positive");
    }
    if (j.contains("networks")) {
        const json &n = require_object(j["networks"], "networks");
        reject_unknown(n, "networks", {"profile", "rates"});
        if (n.contains("profile"))
            c.profile = parse_widths(n["profile"], "networks.profile");
        if (n.contains("rates"))
            c.rates = parse_widths(n["rates"], "networks.rates");
    }
    if (j.contains("weights")) {
        const json &w = require_object(j["weights"], "weights");
        reject_unknown(w, "weights", {"pde", "alg", "bc", "ic"});
        if (w.contains("pde"))
            c.weights.pde = as_number(w["pde"], "weights.pde");
        if (w.contains("alg"))
            c.weights.alg = as_number(w["alg"], "weights.alg");
        if (w.contains("bc"))
            c.weights.bc = as_number(w["bc"], "weights.bc");
        if (w.contains("ic"))
            c.weights.ic = as_number(w["ic"], "weights.ic");
    }
    if (j.contains("lbfgs")) {
        const json &l = require_object(j["lbfgs"], "lbfgs");
        reject_unknown(l, "lbfgs", {"memory", "c1", "c2", "max_iterations", "gradient_tolerance",
                                    "max_line_search_steps", "warmup_iterations"});
        if (l.contains("memory"))
            c.lbfgs.memory = as_int(l["memory"], "lbfgs.memory");
        if (l.contains("c1"))
            c.lbfgs.c1 = as_number(l["c1"], "lbfgs.c1");
        if (l.contains("c2"))
            c.lbfgs.c2 = as_number(l["c2"], "lbfgs.c2");
        if (l.contains("max_iterations"))
            c.lbfgs.max_iterations = as_int(l["max_iterations"], "lbfgs.max_iterations");
        if (l.contains("gradient_tolerance"))
            c.lbfgs.gradient_tolerance = as_number(l["gradient_tolerance"], "lbfgs.gradient_tolerance");
        if (l.contains("max_line_search_steps"))
            c.lbfgs.max_line_search_steps = as_int(l["max_line_search_steps"], "lbfgs.max_line_search_steps");
        if (l.contains("warmup_iterations"))
            c.lbfgs.warmup_iterations = as_int(l["warmup_iterations"], "lbfgs.warmup_iterations");
    }
    if (j.contains("seed")) {
        const long long s = as_integer(j["seed"], "seed");
        if (s < 0)
            throw ConfigError("seed", "must be nonnegative");
        c.seed = static_cast<std::uint64_t>(s);
    }
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string() || j["output_dir"].get<std::string>().empty())
            throw ConfigError("output_dir", "expected a non-empty string");
        c.output_dir = j["output_dir"].get<std::string>();
    }
    if (explicit_snapshots) {
        if (!j["snapshots"].is_array())
            throw ConfigError("snapshots", "expected an array of numbers");
        c.snapshots.clear();
        for (std::size_t i = 0; i < j["snapshots"].size(); ++i)
            c.snapshots.push_back(as_number(j["snapshots"][i], index_path("snapshots", i)));
    } else {
        c.snapshots.clear();
        for (int k = 0; k <= 4; ++k)
            c.snapshots.push_back(c.tau_end * k / 4.0);
    }
    check_config(c);
    return c;
}

RunConfig load_run_config(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("", "cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string resolved_json(const RunConfig &config) { return config_to_json(config).dump(2) + "\n"; }

ProblemSpec build_problem(const RunConfig &config) {
    const CaseDefinition &def = definition(config);
    ProblemSpec p = def.build(config.case_params);
    p.tau_end = config.tau_end;
    p.validate();
    return p;
}

RunOutcome execute_run(const RunConfig &config, const ProgressFn &progress) {
    const auto start = std::chrono::steady_clock::now();
    const CaseDefinition &def = definition(config);
    const ProblemSpec problem = build_problem(config);
    const CollocationSet cs = make_collocation(problem, config.grid);

    const fs::path dir(config.output_dir);
    fs::create_directories(dir / "snapshots");
    write_text(dir / "config.resolved", resolved_json(config));

    auto report = [&](const char *phase) -> IterationCallback {
        if (!progress)
            return {};
        return [&progress, phase](const TrainHistory &h) {
            progress({phase, h.iterations(), h.losses.back().total, h.grad_norms.back()});
        };
    };
    RunOutcome out;
    out.training = train(problem, cs, config.weights, config.lbfgs,
                         Networks::initialize(config.profile, config.rates, config.seed), report("warmup"),
                         report("train"));
    const Networks &nets = out.training.nets;
    out.result = evaluate_case(def, config.case_params, problem, cs, nets);

    const TrainHistory &h = out.training.history;
    std::string csv = "iter,e_pde,e_alg,e_bc,e_ic,total,grad_norm,step\n";
    for (std::size_t i = 0; i < h.losses.size(); ++i) {
        const LossBreakdown &l = h.losses[i];
        csv += fmt::format("{},{},{},{},{},{},{},{}\n", i, format_double(l.e_pde), format_double(l.e_alg),
                           format_double(l.e_bc), format_double(l.e_ic), format_double(l.total),
                           format_double(h.grad_norms[i]), format_double(h.steps[i]));
    }
    write_text(dir / "loss_history.csv", csv);

    const TrainHistory &w = out.training.warmup;
    csv = "iter,loss,grad_norm,step\n";
    for (std::size_t i = 0; i < w.losses.size(); ++i)
        csv += fmt::format("{},{},{},{}\n", i, format_double(w.losses[i].total), format_double(w.grad_norms[i]),
                           format_double(w.steps[i]));
    write_text(dir / "warmup_history.csv", csv);

    csv = "tau";
    for (const auto &[name, series] : out.result.rates)
        csv += "," + name;
    csv += "\n";
    for (std::size_t i = 0; i < out.result.tau.size(); ++i) {
        csv += format_double(out.result.tau[i]);
        for (const auto &[name, series] : out.result.rates)
            csv += "," + format_double(series[i]);
        csv += "\n";
    }
    write_text(dir / "rates.csv", csv);

    for (const auto &entry : fs::directory_iterator(dir / "snapshots"))
        if (entry.path().extension() == ".csv")
            fs::remove(entry.path());
    for (std::size_t i = 0; i < config.snapshots.size(); ++i) {
        const Snapshot s = profile_snapshot(problem, cs, nets, config.snapshots[i]);
        write_text(dir / "snapshots" / snapshot_name(i, config.snapshots[i]), snapshot_csv(s, problem.spatial_dim));
    }

    save_checkpoint(dir / "profile.ckpt", nets.profile, nets.profile_params());
    save_checkpoint(dir / "rates.ckpt", nets.rates, nets.rate_params());

    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json summary = result_json(out.result);
    const LossBreakdown &last = h.losses.back();
    summary["training"] = {{"iterations", h.iterations()},
                           {"evaluations", h.evaluations},
                           {"stop_reason", h.stop_reason},
                           {"line_search_failed", h.line_search_failed},
                           {"warmup_iterations", w.iterations()},
                           {"final_loss",
                            {{"e_pde", last.e_pde},
                             {"e_alg", last.e_alg},
                             {"e_bc", last.e_bc},
                             {"e_ic", last.e_ic},
                             {"total", last.total}}}};
    summary["wall_clock_seconds"] = out.seconds;
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return out;
}

std::vector<std::string> required_run_files() {
    return {"config.resolved", "loss_history.csv", "rates.csv", "summary.json", "profile.ckpt", "rates.ckpt"};
}

MissingFilesError::MissingFilesError(std::vector<std::string> files)
    : Error(fmt::format("missing run artifacts: {}", fmt::join(files, ", "))), files_(std::move(files)) {}

std::string format_result_table(const CaseResult &r) {
    std::string out = fmt::format("case: {}\n", r.name);
    if (!r.steady.empty()) {
        out += "steady rates (mean over the last 10% of tau):\n";
        for (const auto &[name, s] : r.steady)
            out += fmt::format("  {:<4} {:>14.8f}  (std {:.2e})\n", name, s.mean, s.deviation);
    }
    out += fmt::format("{:<16} {:>14} {:>14} {:>10}  {}\n", "quantity", "value", "target", "tol", "status");
    for (const auto &[name, t] : r.targets) {
        const auto it = r.metrics.find(name);
        if (it == r.metrics.end()) {
            out += fmt::format("{:<16} {:>14} {:>14.6f} {:>10.4g}  FAIL\n", name, "n/a", t.first, t.second);
            continue;
        }
        const bool pass = std::abs(it->second - t.first) <= t.second;
        out += fmt::format("{:<16} {:>14.6f} {:>14.6f} {:>10.4g}  {}\n", name, it->second, t.first, t.second,
                           pass ? "PASS" : "FAIL");
    }
    for (const auto &[name, v] : r.metrics)
        if (!r.targets.count(name))
            out += fmt::format("{:<16} {:>14.6f}\n", name, v);
    return out;
}

Report generate_report(const fs::path &run_dir) {
    std::vector<std::string> missing;
    for (const auto &f : required_run_files())
        if (!fs::is_regular_file(run_dir / f))
            missing.push_back(f);
    if (!missing.empty())
        throw MissingFilesError(std::move(missing));

    const RunConfig config = parse_run_config(read_text(run_dir / "config.resolved"));
    const CaseDefinition &def = definition(config);
    const ProblemSpec problem = build_problem(config);
    const CollocationSet cs = make_collocation(problem, config.grid);
    Networks nets;
    {
        auto [pspec, pparams] = load_checkpoint(run_dir / "profile.ckpt");
        auto [rspec, rparams] = load_checkpoint(run_dir / "rates.ckpt");
        if (!(pspec == config.profile) || !(rspec == config.rates))
            throw Error("checkpoint layouts do not match config.resolved");
        nets.profile = pspec;
        nets.rates = rspec;
        nets.params = std::move(pparams);
        nets.params.insert(nets.params.end(), rparams.begin(), rparams.end());
    }
    const CaseResult r = evaluate_case(def, config.case_params, problem, cs, nets);

    Report rep;
    const json summary = json::parse(read_text(run_dir / "summary.json"));
    rep.table = format_result_table(r);
    if (summary.contains("training")) {
        const json &t = summary["training"];
        rep.table += fmt::format("training: {} iterations, stop reason {}", t.value("iterations", 0),
                                 t.value("stop_reason", std::string("?")));
        if (summary.contains("wall_clock_seconds"))
            rep.table += fmt::format(", {:.1f} s", summary["wall_clock_seconds"].get<double>());
        rep.table += "\n";
    }

    const fs::path plot = run_dir / "plot";
    fs::create_directories(plot);
    auto emit = [&](const std::string &name, const std::string &text) {
        write_text(plot / name, text);
        rep.files.push_back("plot/" + name);
    };

    // Loss history, space separated for gnuplot.
    {
        std::ifstream in(run_dir / "loss_history.csv");
        std::string line, data = "# iter e_pde e_alg e_bc e_ic total grad_norm step\n";
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::replace(line.begin(), line.end(), ',', ' ');
            data += line + "\n";
        }
        emit("loss.dat", data);
    }
    {
        std::string data = "# tau";
        for (const auto &[name, s] : r.rates)
            data += " " + name;
        data += "\n";
        for (std::size_t i = 0; i < r.tau.size(); ++i) {
            data += format_double(r.tau[i]);
            for (const auto &[name, s] : r.rates)
                data += " " + format_double(s[i]);
            data += "\n";
        }
        emit("rates.dat", data);
    }
    const int dim = problem.spatial_dim;
    const bool has_oracle = !r.oracle.empty();
    {
        const Snapshot &s = r.final_profile;
        std::string data = dim == 1 ? "# x w" : "# x y w";
        data += has_oracle ? " oracle\n" : "\n";
        const std::size_t ny = dim == 2 ? cs.quad_axes[1].size() : 1;
        for (Eigen::Index k = 0; k < s.points.cols(); ++k) {
            const auto i = static_cast<std::size_t>(k);
            if (dim == 2 && k > 0 && i % ny == 0)
                data += "\n";
            for (int d = 0; d < dim; ++d)
                data += format_double(s.points(d, k)) + " ";
            data += format_double(s.values[i]);
            if (has_oracle)
                data += " " + format_double(r.oracle[i]);
            data += "\n";
        }
        emit("profile.dat", data);
    }
    std::size_t n_snap = 0;
    if (dim == 1) {
        std::string data;
        for (std::size_t i = 0; i < config.snapshots.size(); ++i) {
            const Snapshot s = profile_snapshot(problem, cs, nets, config.snapshots[i]);
            data += fmt::format("# tau = {}\n", format_double(config.snapshots[i]));
            for (Eigen::Index k = 0; k < s.points.cols(); ++k)
                data += format_double(s.points(0, k)) + " " + format_double(s.values[static_cast<std::size_t>(k)]) +
                        "\n";
            data += "\n\n";
            ++n_snap;
        }
        emit("snapshots.dat", data);
    }

    std::string gp = "# gnuplot -c plots.gp (run inside this directory)\n"
                     "set terminal pngcairo size 900,600\n"
                     "set key outside\n"
                     "set output 'loss.png'\n"
                     "set logscale y\nset xlabel 'iteration'\n"
                     "plot 'loss.dat' using 1:6 with lines title 'total', \\\n"
                     "     '' using 1:2 with lines title 'e_pde', '' using 1:3 with lines title 'e_alg', \\\n"
                     "     '' using 1:4 with lines title 'e_bc', '' using 1:5 with lines title 'e_ic'\n"
                     "unset logscale y\n"
                     "set output 'rates.png'\nset xlabel 'tau'\nplot ";
    {
        int col = 2;
        for (const auto &[name, s] : r.rates) {
            gp += fmt::format("{}'rates.dat' using 1:{} with lines title '{}'", col > 2 ? ", " : "", col, name);
            ++col;
        }
        gp += "\n";
    }
    if (dim == 1) {
        gp += fmt::format("set output 'profile.png'\nset xlabel 'x'\n"
                          "plot 'profile.dat' using 1:2 with lines title 'network, tau = {:g}'{}\n",
                          problem.tau_end, has_oracle ? ", '' using 1:3 with lines dashtype 2 title 'oracle'" : "");
        gp += fmt::format("set output 'snapshots.png'\n"
                          "plot for [i=0:{}] 'snapshots.dat' index i using 1:2 with lines title sprintf('snapshot %d', i)\n",
                          n_snap == 0 ? 0 : n_snap - 1);
    } else {
        gp += fmt::format("set output 'profile.png'\nset xlabel 'x'\nset ylabel 'y'\n"
                          "splot 'profile.dat' using 1:2:3 with lines title 'network, tau = {:g}'\n",
                          problem.tau_end);
    }
    emit("plots.gp", gp);

    write_text(run_dir / "report.txt", rep.table);
    rep.files.insert(rep.files.begin(), "report.txt");
    return rep;
}

} // namespace selfsim
