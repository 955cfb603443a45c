#ifndef COMPRESSBENCH_H
#define COMPRESSBENCH_H

/*
 * C interface to the compressbench library.
 *
 * Every fallible call returns a cb_status. On failure the message for the
 * calling thread is available from cb_last_error() until the next failing
 * call on that thread. Strings returned through char** are owned by the
 * caller and released with cb_string_free(); arrays of doubles with
 * cb_doubles_free().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(CB_BUILDING_LIBRARY)
#define CB_API __attribute__((visibility("default")))
#else
#define CB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cb_status {
  CB_OK = 0,
  CB_INVALID_ARGUMENT = 1,
  CB_EMPTY_PROMPT = 2,
  CB_INVALID_RATIO = 3,
  CB_SPAN_OUT_OF_RANGE = 4,
  CB_INVALID_ANNOTATION = 5,
  CB_PROFILE_INCOMPLETE = 6,
  CB_INVALID_PARAMS = 7,
  CB_TRANSIENT_BACKEND = 8,
  CB_PERMANENT_BACKEND = 9,
  CB_REPLAY_MISS = 10,
  CB_CONFIG = 11,
  CB_INSUFFICIENT_PROMPTS = 12,
  CB_EMPTY_CELL = 13,
  CB_INSUFFICIENT_DATA = 14,
  CB_DEGENERATE_TEST = 15,
  CB_UNIDENTIFIABLE = 16,
  CB_CONVERGENCE_FAILURE = 17,
  CB_NO_BREAKPOINT = 18,
  CB_DIVISION_BY_ZERO = 19,
  CB_INVALID_WEIGHTS = 20,
  CB_UNDEFINED_QUALITY_RATIO = 21,
  CB_IO = 22,
  CB_PARSE = 23,
  CB_INTERNAL = 24
} cb_status;

/* Error name such as "ReplayMiss"; never NULL. */
CB_API const char* cb_status_name(cb_status status);
/* Message of the last failure on this thread ("" if none). */
CB_API const char* cb_last_error(void);
CB_API const char* cb_version(void);
CB_API void cb_string_free(char* s);
CB_API void cb_doubles_free(double* values);

typedef enum cb_rounding { CB_ROUND_FLOOR = 0, CB_ROUND_NEAREST = 1 } cb_rounding;
typedef enum cb_survival_kind {
  CB_SURVIVAL_STRICT = 0,
  CB_SURVIVAL_FRACTIONAL = 1
} cb_survival_kind;

/* ---- prompts and compression ---- */

typedef struct cb_prompt cb_prompt;

CB_API cb_status cb_prompt_create(const char* text, cb_prompt** out);
CB_API void cb_prompt_free(cb_prompt* prompt);
CB_API size_t cb_prompt_length(const cb_prompt* prompt);
CB_API cb_status cb_prompt_text(const cb_prompt* prompt, char** out);
/* First-N-words compression keeping max(1, floor(r * n)) tokens (or the
 * nearest integer with CB_ROUND_NEAREST). */
CB_API cb_status cb_prompt_compress(const cb_prompt* prompt, double ratio, cb_rounding rounding,
                                    cb_prompt** out);
CB_API cb_status cb_retained_count(size_t n, double ratio, cb_rounding rounding, size_t* out);

/* ---- instruction survival ---- */

typedef struct cb_span {
  size_t a; /* 1-based, inclusive */
  size_t b;
  double weight;
  const char* label; /* may be NULL */
} cb_span;

/* Weighted survival of the given spans. per_segment (optional) receives one
 * value per span in input order. */
CB_API cb_status cb_weighted_survival(const cb_span* spans, size_t n_spans, size_t prompt_length,
                                      double ratio, cb_survival_kind kind, double threshold,
                                      cb_rounding rounding, double* psi,
                                      double* per_segment);

typedef struct cb_profile cb_profile;

CB_API cb_status cb_profile_load(const char* path, cb_profile** out);
CB_API cb_status cb_profile_parse(const char* json, cb_profile** out);
CB_API void cb_profile_free(cb_profile* profile);
CB_API const char* cb_profile_name(const cb_profile* profile);
CB_API double cb_profile_mean_tokens(const cb_profile* profile);
CB_API cb_status cb_profile_survival(const cb_profile* profile, double ratio, double* psi);
/* {"benchmark", "ratio", "psi", "source": "table"|"template",
 *  "segments": [{"label", "a", "b", "weight", "psi"}]} */
CB_API cb_status cb_profile_survival_json(const cb_profile* profile, double ratio, char** out);
/* Survival of every prompt in a prompt JSONL file that carries spans:
 * [{"prompt_id", "tokens", "psi" (null without spans), "segments": [...]}] */
CB_API cb_status cb_prompt_file_survival_json(const char* path, double ratio,
                                              cb_survival_kind kind, double threshold,
                                              cb_rounding rounding, char** out);

/* ---- metrics ---- */

CB_API cb_status cb_energy(double t_in, double t_out, double eps_in_mj, double eps_out_mj,
                           double* out);
CB_API cb_status cb_explosion_ratio(double baseline, double compressed, double* out);
CB_API cb_status cb_weighted_mixture(const double* values, const double* weights, size_t n,
                                     double* out);

typedef struct cb_outcome {
  const char* benchmark;
  double q0;
  double qr;
  double t0;
  double tr;
  double tmax;
} cb_outcome;

typedef struct cb_cri_term {
  double quality_retention;
  double length_factor;
  double term;
  double weight;
  int excluded;
  int exceeds_one;
} cb_cri_term;

/* weights may be NULL (uniform); terms may be NULL, else n entries. */
CB_API cb_status cb_cri(const cb_outcome* outcomes, size_t n, const double* weights,
                        double* cri, cb_cri_term* terms);

/* ---- statistics ---- */

typedef struct cb_welch_result {
  double t_statistic;
  double degrees_of_freedom;
  double p_value;
  int degenerate;
} cb_welch_result;

CB_API cb_status cb_welch_t(const double* a, size_t na, const double* b, size_t nb,
                            cb_welch_result* out);

typedef enum cb_statistic { CB_STAT_MEAN = 0, CB_STAT_MEDIAN = 1 } cb_statistic;

typedef struct cb_bootstrap_options {
  size_t resamples;
  double level;
  uint64_t seed;
  size_t threads; /* 0 = hardware concurrency */
} cb_bootstrap_options;

typedef struct cb_interval {
  double statistic;
  double lower;
  double upper;
  double level;
  double bias_correction;
  double acceleration;
  int degenerate;
} cb_interval;

CB_API void cb_bootstrap_options_init(cb_bootstrap_options* options);
CB_API cb_status cb_bootstrap_bca(const double* x, size_t n, cb_statistic statistic,
                                  const cb_bootstrap_options* options, cb_interval* out);

typedef struct cb_tobit_result {
  double mu;
  double sigma;
  double censored_fraction;
  double log_likelihood;
  double standardized_bound;
  size_t iterations;
  int uncensored_fallback;
} cb_tobit_result;

/* On CB_CONVERGENCE_FAILURE the message includes the iterate trace. */
CB_API cb_status cb_tobit_fit(const double* y, size_t n, double ceiling, cb_tobit_result* out);
CB_API cb_status cb_truncated_mean(double mu, double sigma, double ceiling, double* out);

typedef struct cb_threshold_result {
  double tau;
  double intercept;
  double slope_low;
  double slope_high;
  double rss;
  size_t candidates;
  int degenerate_break;
} cb_threshold_result;

CB_API cb_status cb_threshold_fit(const double* psi, const double* mean_tout, size_t n,
                                  cb_threshold_result* out);

/* ---- synthetic backend and simulation ---- */

typedef struct cb_vc_params {
  double t0;
  double alpha;
  double tau;
  double tmax;
  double beta;
  double dispersion_linear;
  double dispersion_ceiling;
} cb_vc_params;

CB_API cb_status cb_params_load(const char* path, cb_vc_params* out);
/* count draws at one psi from a generator seeded with seed. */
CB_API cb_status cb_synthesize_lengths(const cb_vc_params* params, double psi, uint64_t seed,
                                       size_t count, double* out);

typedef struct cb_simulate_request {
  cb_vc_params params;
  const double* psi_grid;
  size_t n_psi;
  size_t trials_per_point;
  uint64_t seed;
  const char* out_path; /* JSONL records, truncated first; NULL to skip */
} cb_simulate_request;

/* summary_json: [{"psi", "trials", "mean_tout", "sd", "ceiling_fraction"}] */
CB_API cb_status cb_simulate(const cb_simulate_request* request, char** summary_json);

/* ---- experiments and records ---- */

typedef struct cb_run_summary {
  size_t planned;
  size_t skipped;
  size_t completed;
  size_t errors;
} cb_run_summary;

typedef void (*cb_progress_fn)(size_t done, size_t total, void* user);

typedef struct cb_run_options {
  int64_t stop_after; /* < 0: run to completion */
  int retry_errors;
  int64_t seed_override; /* < 0: keep the plan's seed */
  cb_progress_fn progress;
  void* progress_user;
} cb_run_options;

CB_API void cb_run_options_init(cb_run_options* options);
/* Runs (or resumes) the plan in config_path, appending to out_path. */
CB_API cb_status cb_run_plan(const char* config_path, const char* out_path,
                             const cb_run_options* options, cb_run_summary* summary);

/* Output tokens of one cell (model, benchmark, ratio) across record files. */
CB_API cb_status cb_records_output_tokens(const char* const* paths, size_t n_paths,
                                          const char* model, const char* benchmark, double ratio,
                                          double** values, size_t* n_values);
/* mismatches_json: [{"model", "benchmark", "ratio", "prompt_id", "output_tokens": [...]}] */
CB_API cb_status cb_verify_determinism(const char* const* paths, size_t n_paths,
                                       size_t* n_mismatches, char** mismatches_json);

/* ---- reports ---- */

typedef enum cb_format {
  CB_FORMAT_TABLE = 0,
  CB_FORMAT_CSV = 1,
  CB_FORMAT_MARKDOWN = 2
} cb_format;

enum {
  CB_SECTION_CELLS = 1,
  CB_SECTION_RECONCILIATION = 2,
  CB_SECTION_PROVIDER = 4,
  CB_SECTION_CRI = 8,
  CB_SECTION_THRESHOLD = 16,
  CB_SECTION_THRESHOLD_POINTS = 32,
  CB_SECTION_ALL = 63
};

typedef struct cb_report_request {
  const char* const* record_paths; /* trial records; take precedence over the fixture */
  size_t n_record_paths;
  const char* fixture_path; /* cell-summary CSV */
  const char* profiles_dir; /* benchmark profiles (mean tokens, survival) */
  double ratio;
  double tmax;
  double eps_in_mj;
  double eps_out_mj;
  const char* const* weight_benchmarks; /* optional custom mixture row */
  const double* weights;
  size_t n_weights;
  size_t bootstrap_resamples;
  uint64_t seed;
  unsigned sections;
  cb_format format;
} cb_report_request;

/* Renders a rectangular table; cells are row-major, n_rows * n_columns. */
CB_API cb_status cb_render_table(const char* title, const char* const* headers, size_t n_columns,
                                 const char* const* cells, size_t n_rows,
                                 const char* const* footnotes, size_t n_footnotes,
                                 cb_format format, char** out);
/* Locale-independent fixed-point text. */
CB_API cb_status cb_format_fixed(double value, int decimals, char** out);

CB_API void cb_report_request_init(cb_report_request* request);
/* warnings (optional) receives newline-separated warnings, possibly "". */
CB_API cb_status cb_report_render(const cb_report_request* request, char** text,
                                  char** warnings);

#ifdef __cplusplus
}
#endif

#endif /* COMPRESSBENCH_H */
