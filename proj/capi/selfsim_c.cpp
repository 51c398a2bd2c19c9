#include "selfsim.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "selfsim/checks.hpp"
#include "selfsim/run.hpp"

namespace {

thread_local std::string last_error;
thread_local std::string last_field;

ss_status fail(ss_status code, const std::string &message, const std::string &field = {}) {
    last_error = message;
    last_field = field;
    return code;
}

// Runs f, translating exceptions into status codes.
template <class F>
ss_status guard(F &&f) {
    last_error.clear();
    last_field.clear();
    try {
        return f();
    } catch (const selfsim::ConfigError &e) {
        return fail(SS_ERR_CONFIG, e.what(), e.field());
    } catch (const selfsim::MissingFilesError &e) {
        return fail(SS_ERR_MISSING, e.what());
    } catch (const selfsim::NonFiniteError &e) {
        return fail(SS_ERR_NUMERIC, e.what());
    } catch (const std::filesystem::filesystem_error &e) {
        return fail(SS_ERR_IO, e.what());
    } catch (const std::exception &e) {
        return fail(SS_ERR_RUNTIME, e.what());
    } catch (...) {
        return fail(SS_ERR_RUNTIME, "unknown error");
    }
}

char *copy_string(const std::string &s) {
    char *out = static_cast<char *>(std::malloc(s.size() + 1));
    if (out)
        std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

ss_status hand_out(const std::string &s, char **out) {
    if (!out)
        return fail(SS_ERR_ARGUMENT, "null output pointer");
    *out = copy_string(s);
    return *out ? SS_OK : fail(SS_ERR_RUNTIME, "out of memory");
}

const std::vector<std::string> &names() {
    static const std::vector<std::string> n = selfsim::case_names();
    return n;
}

} // namespace

struct ss_run {
    selfsim::RunConfig config;
    std::string summary;
};

extern "C" {

const char *ss_version(void) { return "1.0.0"; }
const char *ss_last_error(void) { return last_error.c_str(); }
const char *ss_last_error_field(void) { return last_field.c_str(); }
void ss_string_free(char *s) { std::free(s); }

size_t ss_case_count(void) { return names().size(); }
const char *ss_case_name(size_t index) { return index < names().size() ? names()[index].c_str() : nullptr; }

ss_status ss_run_from_file(const char *path, ss_run **out) {
    if (!path || !out)
        return fail(SS_ERR_ARGUMENT, "null argument");
    return guard([&] {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            return fail(SS_ERR_CONFIG, std::string("cannot read config file ") + path);
        std::stringstream ss;
        ss << in.rdbuf();
        *out = new ss_run{selfsim::parse_run_config(ss.str()), {}};
        return SS_OK;
    });
}

ss_status ss_run_from_json(const char *json_text, ss_run **out) {
    if (!json_text || !out)
        return fail(SS_ERR_ARGUMENT, "null argument");
    return guard([&] {
        *out = new ss_run{selfsim::parse_run_config(json_text), {}};
        return SS_OK;
    });
}

void ss_run_free(ss_run *run) { delete run; }

ss_status ss_run_resolved_config(const ss_run *run, char **json_out) {
    if (!run)
        return fail(SS_ERR_ARGUMENT, "null run handle");
    return guard([&] { return hand_out(selfsim::resolved_json(run->config), json_out); });
}

ss_status ss_run_output_dir(const ss_run *run, char **path_out) {
    if (!run)
        return fail(SS_ERR_ARGUMENT, "null run handle");
    return hand_out(run->config.output_dir, path_out);
}

ss_status ss_run_execute(ss_run *run, ss_progress_fn progress, void *user) {
    if (!run)
        return fail(SS_ERR_ARGUMENT, "null run handle");
    return guard([&] {
        selfsim::ProgressFn fn;
        if (progress)
            fn = [&](const selfsim::RunProgress &p) {
                progress(p.phase.c_str(), p.iteration, p.total, p.grad_norm, user);
            };
        selfsim::execute_run(run->config, fn);
        std::ifstream in(std::filesystem::path(run->config.output_dir) / "summary.json", std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        run->summary = ss.str();
        return SS_OK;
    });
}

ss_status ss_run_summary(const ss_run *run, char **json_out) {
    if (!run)
        return fail(SS_ERR_ARGUMENT, "null run handle");
    if (run->summary.empty())
        return fail(SS_ERR_ARGUMENT, "run has not been executed");
    return hand_out(run->summary, json_out);
}

ss_status ss_report(const char *run_dir, char **table_out) {
    if (!run_dir)
        return fail(SS_ERR_ARGUMENT, "null run directory");
    return guard([&] {
        const selfsim::Report rep = selfsim::generate_report(run_dir);
        return table_out ? hand_out(rep.table, table_out) : SS_OK;
    });
}

size_t ss_check_count(void) { return selfsim::suite_list().size(); }

const char *ss_check_name(size_t index) {
    const auto &l = selfsim::suite_list();
    return index < l.size() ? l[index].name.c_str() : nullptr;
}

const char *ss_check_description(size_t index) {
    const auto &l = selfsim::suite_list();
    return index < l.size() ? l[index].description.c_str() : nullptr;
}

ss_status ss_check_run(size_t index, int *passed, double *seconds, char **detail_out) {
    const auto &l = selfsim::suite_list();
    if (index >= l.size())
        return fail(SS_ERR_ARGUMENT, "suite index out of range");
    return guard([&] {
        const selfsim::SuiteResult r = selfsim::run_suite(l[index].name);
        if (passed)
            *passed = r.passed ? 1 : 0;
        if (seconds)
            *seconds = r.seconds;
        return detail_out ? hand_out(r.detail, detail_out) : SS_OK;
    });
}

} // extern "C"
