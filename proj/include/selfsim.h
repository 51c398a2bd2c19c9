#ifndef SELFSIM_H
#define SELFSIM_H

/* C interface of the selfsim solver library.
 *
 * Every function returns an ss_status; on failure ss_last_error() gives a
 * message for the calling thread (valid until its next call into the
 * library). Strings handed out through `char **` must be released with
 * ss_string_free. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SS_API __declspec(dllexport)
#else
#define SS_API __attribute__((visibility("default")))
#endif

typedef enum ss_status {
    SS_OK = 0,
    SS_ERR_CONFIG = 1,    /* invalid or unreadable configuration, unknown name */
    SS_ERR_RUNTIME = 2,   /* training or evaluation failure */
    SS_ERR_IO = 3,        /* unreadable or unwritable file */
    SS_ERR_MISSING = 4,   /* run directory lacks artifacts */
    SS_ERR_ARGUMENT = 5,  /* null handle or out-of-range index */
    SS_ERR_NUMERIC = 6    /* non-finite value encountered */
} ss_status;

typedef struct ss_run ss_run;

/* Progress callback: phase is "warmup" or "train". Return nonzero to keep
 * going; the return value is currently ignored. */
typedef int (*ss_progress_fn)(const char *phase, int iteration, double loss, double grad_norm, void *user);

SS_API const char *ss_version(void);
SS_API const char *ss_last_error(void);
/* Offending config key of the last SS_ERR_CONFIG, or "" if none. */
SS_API const char *ss_last_error_field(void);
SS_API void ss_string_free(char *s);

/* Registered case names. */
SS_API size_t ss_case_count(void);
SS_API const char *ss_case_name(size_t index);

/* Configured run. The config is JSON; every default is materialized. */
SS_API ss_status ss_run_from_file(const char *path, ss_run **out);
SS_API ss_status ss_run_from_json(const char *json_text, ss_run **out);
SS_API void ss_run_free(ss_run *run);
SS_API ss_status ss_run_resolved_config(const ss_run *run, char **json_out);
SS_API ss_status ss_run_output_dir(const ss_run *run, char **path_out);
/* Train and write the output directory. */
SS_API ss_status ss_run_execute(ss_run *run, ss_progress_fn progress, void *user);
/* Summary of the last execute as JSON text. */
SS_API ss_status ss_run_summary(const ss_run *run, char **json_out);

/* Report of a finished run directory: writes report.txt and plot/, returns
 * the comparison table. SS_ERR_MISSING lists absent files in ss_last_error. */
SS_API ss_status ss_report(const char *run_dir, char **table_out);

/* Property suites. */
SS_API size_t ss_check_count(void);
SS_API const char *ss_check_name(size_t index);
SS_API const char *ss_check_description(size_t index);
SS_API ss_status ss_check_run(size_t index, int *passed, double *seconds, char **detail_out);

#ifdef __cplusplus
}
#endif

#endif
