#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "selfsim.h"

namespace fs = std::filesystem;

namespace {

std::string take(char *s) {
    std::string out = s ? s : "";
    ss_string_free(s);
    return out;
}

int count_progress(const char *, int, double, double, void *user) {
    ++*static_cast<int *>(user);
    return 1;
}

} // namespace

TEST_CASE("registry and version") {
    CHECK(std::strlen(ss_version()) > 0);
    REQUIRE(ss_case_count() == 5);
    CHECK(std::string(ss_case_name(0)) == "nagumo");
    CHECK(ss_case_name(99) == nullptr);
    CHECK(ss_check_count() >= 5);
    CHECK(ss_check_name(ss_check_count()) == nullptr);
}

TEST_CASE("config errors map to SS_ERR_CONFIG with the field") {
    ss_run *run = nullptr;
    CHECK(ss_run_from_json(R"({"case": "nagumo", "grid": {"space": [4]}})", &run) == SS_ERR_CONFIG);
    CHECK(run == nullptr);
    CHECK(std::string(ss_last_error_field()) == "grid.space[0]");
    CHECK(ss_run_from_json(R"({"case": "heat"})", &run) == SS_ERR_CONFIG);
    CHECK(std::string(ss_last_error()).find("burgers") != std::string::npos);
    CHECK(ss_run_from_file("/nonexistent/selfsim.json", &run) != SS_OK);
    CHECK(ss_run_from_json(nullptr, &run) == SS_ERR_ARGUMENT);
    CHECK(ss_run_from_json("{}", nullptr) == SS_ERR_ARGUMENT);
    char *s = nullptr;
    CHECK(ss_run_summary(nullptr, &s) == SS_ERR_ARGUMENT);
}

TEST_CASE("tiny run through the C interface") {
    const fs::path dir = fs::temp_directory_path() / "selfsim_test_capi";
    fs::remove_all(dir);
    const nlohmann::json cfg = {{"case", "nagumo"},
                                {"grid", {{"space", {10}}, {"tau", 8}}},
                                {"networks", {{"profile", {2, 5, 1}}, {"rates", {1, 3, 1}}}},
                                {"lbfgs", {{"max_iterations", 3}, {"warmup_iterations", 2}}},
                                {"output_dir", dir.string()}};
    ss_run *run = nullptr;
    REQUIRE(ss_run_from_json(cfg.dump().c_str(), &run) == SS_OK);
    char *s = nullptr;
    CHECK(ss_run_summary(run, &s) == SS_ERR_ARGUMENT);
    REQUIRE(ss_run_output_dir(run, &s) == SS_OK);
    CHECK(take(s) == dir.string());
    REQUIRE(ss_run_resolved_config(run, &s) == SS_OK);
    CHECK(nlohmann::json::parse(take(s))["lbfgs"]["max_iterations"] == 3);

    int calls = 0;
    REQUIRE(ss_run_execute(run, count_progress, &calls) == SS_OK);
    CHECK(calls > 0);
    REQUIRE(ss_run_summary(run, &s) == SS_OK);
    const auto summary = nlohmann::json::parse(take(s));
    CHECK(summary["case"] == "nagumo");
    ss_run_free(run);

    REQUIRE(ss_report(dir.string().c_str(), &s) == SS_OK);
    CHECK(take(s).find("nagumo") != std::string::npos);
    fs::remove_all(dir);
    fs::create_directories(dir);
    CHECK(ss_report(dir.string().c_str(), &s) == SS_ERR_MISSING);
    CHECK(std::string(ss_last_error()).find("summary.json") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("a fast property suite runs") {
    std::size_t idx = ss_check_count();
    for (std::size_t i = 0; i < ss_check_count(); ++i)
        if (std::string(ss_check_name(i)) == "scaling_law")
            idx = i;
    REQUIRE(idx < ss_check_count());
    int passed = 0;
    double seconds = 0.0;
    char *detail = nullptr;
    REQUIRE(ss_check_run(idx, &passed, &seconds, &detail) == SS_OK);
    CHECK(passed == 1);
    CHECK(!take(detail).empty());
    CHECK(ss_check_run(ss_check_count(), &passed, &seconds, &detail) == SS_ERR_ARGUMENT);
}
