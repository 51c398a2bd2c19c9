// selfsim: run, report and check front end over the C library.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selfsim.h"

namespace {

int exit_code(ss_status s) {
    switch (s) {
    case SS_OK:
        return 0;
    case SS_ERR_CONFIG:
    case SS_ERR_ARGUMENT:
        return 2;
    default:
        return 1;
    }
}

int report_error(ss_status s) {
    const std::string field = ss_last_error_field();
    std::fprintf(stderr, "error: %s\n", ss_last_error());
    if (s == SS_ERR_CONFIG && field == "case") {
        std::fprintf(stderr, "registered cases:");
        for (size_t i = 0; i < ss_case_count(); ++i)
            std::fprintf(stderr, " %s", ss_case_name(i));
        std::fprintf(stderr, "\n");
    }
    return exit_code(s);
}

struct ProgressState {
    int every = 100;
    bool quiet = false;
};

int on_progress(const char *phase, int iteration, double loss, double grad_norm, void *user) {
    const auto *st = static_cast<const ProgressState *>(user);
    if (!st->quiet && iteration % st->every == 0)
        std::fprintf(stderr, "%-6s %6d  loss %.6e  |g| %.3e\n", phase, iteration, loss, grad_norm);
    return 1;
}

int cmd_run(const std::string &config, ProgressState progress) {
    ss_run *run = nullptr;
    ss_status s = ss_run_from_file(config.c_str(), &run);
    if (s != SS_OK)
        return report_error(s);
    char *dir = nullptr;
    ss_run_output_dir(run, &dir);
    std::fprintf(stderr, "writing %s\n", dir);
    ss_string_free(dir);
    s = ss_run_execute(run, on_progress, &progress);
    if (s != SS_OK) {
        ss_run_free(run);
        return report_error(s);
    }
    char *summary = nullptr;
    if (ss_run_summary(run, &summary) == SS_OK) {
        std::fputs(summary, stdout);
        ss_string_free(summary);
    }
    ss_run_free(run);
    return 0;
}

int cmd_report(const std::string &dir) {
    char *table = nullptr;
    const ss_status s = ss_report(dir.c_str(), &table);
    if (s != SS_OK)
        return report_error(s);
    std::fputs(table, stdout);
    ss_string_free(table);
    return 0;
}

int cmd_check(bool list, const std::vector<std::string> &only) {
    const size_t n = ss_check_count();
    if (list) {
        for (size_t i = 0; i < n; ++i)
            std::printf("%-20s %s\n", ss_check_name(i), ss_check_description(i));
        return 0;
    }
    for (const auto &name : only) {
        bool found = false;
        for (size_t i = 0; i < n; ++i)
            found = found || name == ss_check_name(i);
        if (!found) {
            std::fprintf(stderr, "error: unknown suite %s (see check --list)\n", name.c_str());
            return 2;
        }
    }
    bool all_passed = true;
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const std::string name = ss_check_name(i);
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end())
            continue;
        int passed = 0;
        double seconds = 0.0;
        char *detail = nullptr;
        const ss_status s = ss_check_run(i, &passed, &seconds, &detail);
        if (s != SS_OK) {
            std::printf("%-20s ERROR %s\n", name.c_str(), ss_last_error());
            all_passed = false;
            continue;
        }
        std::printf("%-20s %s  %7.2f s  %s\n", name.c_str(), passed ? "PASS" : "FAIL", seconds, detail);
        std::fflush(stdout);
        ss_string_free(detail);
        all_passed = all_passed && passed;
        total += seconds;
    }
    std::printf("%s in %.2f s\n", all_passed ? "all suites passed" : "FAILED", total);
    return all_passed ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Self-similar and travelling-wave solutions by physics-informed networks"};
    app.set_version_flag("--version", std::string(ss_version()));
    app.require_subcommand(1);

    std::string config;
    ProgressState progress;
    auto *run = app.add_subcommand("run", "Train a case from a JSON config and write its run directory");
    run->add_option("config", config, "Config file")->required();
    run->add_option("--progress-every", progress.every, "Print progress every N iterations")
        ->check(CLI::PositiveNumber);
    run->add_flag("-q,--quiet", progress.quiet, "No progress output");

    std::string dir;
    auto *report = app.add_subcommand("report", "Comparison tables and plot data for a run directory");
    report->add_option("dir", dir, "Run directory")->required();

    bool list = false;
    std::vector<std::string> only;
    auto *check = app.add_subcommand("check", "Run the property suites");
    check->add_flag("--list", list, "List the suites without running them");
    check->add_option("--suite", only, "Run only these suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*run)
        return cmd_run(config, progress);
    if (*report)
        return cmd_report(dir);
    return cmd_check(list, only);
}
