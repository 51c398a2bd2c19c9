#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "selfsim/run.hpp"

using namespace selfsim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string field_of(const std::string &text) {
    try {
        (void)parse_run_config(text);
    } catch (const ConfigError &e) {
        return e.field();
    }
    return "<accepted>";
}

std::string tiny_config(const fs::path &out) {
    nlohmann::json j = {{"case", "nagumo"},
                        {"grid", {{"space", {12}}, {"tau", 8}}},
                        {"networks", {{"profile", {2, 6, 1}}, {"rates", {1, 4, 1}}}},
                        {"lbfgs", {{"max_iterations", 6}, {"warmup_iterations", 4}}},
                        {"seed", 3},
                        {"output_dir", out.string()}};
    return j.dump();
}

} // namespace

TEST_CASE("config errors name the offending field") {
    CHECK(field_of(R"({"case": "nagumo", "grid": {"space": [4]}})") == "grid.space[0]");
    CHECK(field_of(R"({"case": "nagumo", "grid": {"tau": 3}})") == "grid.tau");
    CHECK(field_of(R"({"case": "nagumo", "colour": 1})") == "colour");
    CHECK(field_of(R"({"case": "nagumo", "lbfgs": {"memory": 0}})") == "lbfgs.memory");
    CHECK(field_of(R"({"case": "nagumo", "lbfgs": {"memory": 2.5}})") == "lbfgs.memory");
    CHECK(field_of(R"({"case": "nagumo", "case_params": {"nu": 1}})") == "case_params.nu");
    CHECK(field_of(R"({"case": "nagumo", "case_params": {"a": 0.7}})") == "case_params.a");
    CHECK(field_of(R"({"case": "nagumo", "networks": {"profile": [3, 5, 1]}})") == "networks.profile[0]");
    CHECK(field_of(R"({"case": "nagumo", "snapshots": [-1]})") == "snapshots[0]");
    CHECK(field_of(R"({"grid": {}})") == "case");
    CHECK(field_of("{not json") == "");
    try {
        (void)parse_run_config(R"({"case": "heat"})");
        FAIL("expected ConfigError");
    } catch (const ConfigError &e) {
        CHECK(e.field() == "case");
        for (const auto &n : case_names())
            CHECK(std::string(e.what()).find(n) != std::string::npos);
    }
}

TEST_CASE("defaults and the resolved round trip") {
    for (const auto &name : case_names()) {
        for (bool desk : {false, true}) {
            const RunConfig c = parse_run_config(nlohmann::json{{"case", name}, {"desk_scale", desk}}.dump());
            CHECK(c.case_name == name);
            CHECK(c.snapshots.size() == 5);
            CHECK(c.snapshots.back() == c.tau_end);
            const std::string r = resolved_json(c);
            CHECK(resolved_json(parse_run_config(r)) == r);
        }
    }
    const RunConfig full = default_run_config("diffusion2d", false);
    const RunConfig desk = default_run_config("diffusion2d", true);
    CHECK(desk.grid.space[0] <= full.grid.space[0]);
}

TEST_CASE("tiny run writes a deterministic run directory") {
    const fs::path base = fs::temp_directory_path() / "selfsim_test_run";
    fs::remove_all(base);
    const RunConfig c1 = parse_run_config(tiny_config(base / "a"));
    const RunConfig c2 = parse_run_config(tiny_config(base / "b"));
    int calls = 0;
    const RunOutcome o = execute_run(c1, [&](const RunProgress &) { ++calls; });
    CHECK(calls > 0);
    (void)execute_run(c2);
    for (const auto &f : required_run_files())
        CHECK(fs::is_regular_file(base / "a" / f));
    CHECK(fs::is_regular_file(base / "a" / "warmup_history.csv"));
    for (const char *f : {"loss_history.csv", "warmup_history.csv", "rates.csv", "profile.ckpt", "rates.ckpt"})
        CHECK(slurp(base / "a" / f) == slurp(base / "b" / f));
    CHECK(std::distance(fs::directory_iterator(base / "a" / "snapshots"), fs::directory_iterator{}) == 5);

    const auto summary = nlohmann::json::parse(slurp(base / "a" / "summary.json"));
    CHECK(summary.contains("metrics"));
    CHECK(summary["case"] == "nagumo");

    const std::string header = slurp(base / "a" / "loss_history.csv").substr(0, 60);
    CHECK(header.rfind("iter,e_pde,e_alg,e_bc,e_ic,total,grad_norm,step", 0) == 0);
    CHECK(o.training.history.iterations() <= 6);

    const Report rep = generate_report(base / "a");
    CHECK(rep.table.find("nagumo") != std::string::npos);
    CHECK(fs::is_regular_file(base / "a" / "report.txt"));
    for (const auto &f : rep.files)
        CHECK(fs::exists(base / "a" / f));
    fs::remove_all(base);
}

TEST_CASE("report on an incomplete directory lists missing files") {
    const fs::path d = fs::temp_directory_path() / "selfsim_test_empty";
    fs::remove_all(d);
    fs::create_directories(d);
    try {
        (void)generate_report(d);
        FAIL("expected MissingFilesError");
    } catch (const MissingFilesError &e) {
        CHECK(e.files() == required_run_files());
    }
    fs::remove_all(d);
}
