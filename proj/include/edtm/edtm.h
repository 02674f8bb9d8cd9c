/* C interface to the edtm engine. Every function returning edtm_status
 * leaves a message for edtm_last_error() on failure (per thread). Objects
 * handed out through `out` parameters are owned by the caller and released
 * with the matching *_free function. */
#ifndef EDTM_EDTM_H
#define EDTM_EDTM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(EDTM_BUILDING)
#    define EDTM_API __declspec(dllexport)
#  else
#    define EDTM_API __declspec(dllimport)
#  endif
#else
#  define EDTM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum edtm_status {
  EDTM_OK = 0,
  EDTM_ERR_INPUT = 1,
  EDTM_ERR_SOLVER = 2,
  EDTM_ERR_PROVIDER = 3,
  EDTM_ERR_CONFIG = 4,
  EDTM_ERR_HARDENING = 5,
  EDTM_ERR_EVALUATION = 6,
  EDTM_ERR_IO = 7,
  EDTM_ERR_CONFLICT = 8,
  EDTM_ERR_NOT_FOUND = 9,
  EDTM_ERR_INTERNAL = 10
} edtm_status;

#define EDTM_UNASSIGNED (-1)

EDTM_API const char* edtm_version(void);
EDTM_API const char* edtm_status_name(edtm_status status);
/* Message of the last failure on this thread; "" when none. */
EDTM_API const char* edtm_last_error(void);

/* Dense row-major matrix of finite doubles, at least 1x1. */
typedef struct edtm_matrix edtm_matrix;

EDTM_API edtm_status edtm_matrix_create(size_t rows, size_t cols, const double* values, edtm_matrix** out);
EDTM_API edtm_status edtm_matrix_read(const char* path, edtm_matrix** out);
EDTM_API edtm_status edtm_matrix_write(const edtm_matrix* m, const char* path);
EDTM_API size_t edtm_matrix_rows(const edtm_matrix* m);
EDTM_API size_t edtm_matrix_cols(const edtm_matrix* m);
/* Row-major view, valid until the matrix is freed. */
EDTM_API const double* edtm_matrix_data(const edtm_matrix* m);
EDTM_API void edtm_matrix_free(edtm_matrix* m);

typedef struct edtm_solver_config {
  double lambda;
  size_t max_iters;
  double tolerance;
  /* 0 selects a complete solve; (0, 1] a partial solve of that mass. */
  double mass_p;
} edtm_solver_config;

typedef struct edtm_schedule {
  size_t batch_size;
  size_t epochs;
  uint64_t shuffle_seed;
} edtm_schedule;

EDTM_API void edtm_solver_config_default(edtm_solver_config* cfg);
EDTM_API void edtm_schedule_default(edtm_schedule* schedule);

typedef struct edtm_plan edtm_plan;

/* Single solve. NULL marginals mean uniform weights, a NULL cfg the defaults. */
EDTM_API edtm_status edtm_sinkhorn(const edtm_matrix* cost, const double* row_weights, const double* col_weights,
                                   const edtm_solver_config* cfg, edtm_plan** out);
/* Batched assignment with uniform marginals; partial when cfg->mass_p > 0. */
EDTM_API edtm_status edtm_assign(const edtm_matrix* cost, const edtm_schedule* schedule,
                                 const edtm_solver_config* cfg, edtm_plan** out);
EDTM_API size_t edtm_plan_rows(const edtm_plan* plan);
EDTM_API size_t edtm_plan_cols(const edtm_plan* plan);
EDTM_API const double* edtm_plan_data(const edtm_plan* plan);
EDTM_API double edtm_plan_total_mass(const edtm_plan* plan);
EDTM_API int edtm_plan_converged(const edtm_plan* plan);
EDTM_API size_t edtm_plan_iterations(const edtm_plan* plan);
EDTM_API double edtm_plan_residual(const edtm_plan* plan);
EDTM_API edtm_status edtm_plan_cost(const edtm_plan* plan, const edtm_matrix* cost, double* out);
EDTM_API void edtm_plan_free(edtm_plan* plan);

/* Label index per document, EDTM_UNASSIGNED for withheld documents. */
typedef struct edtm_clustering edtm_clustering;

EDTM_API edtm_status edtm_clustering_create(const int32_t* labels, size_t n, edtm_clustering** out);
EDTM_API size_t edtm_clustering_size(const edtm_clustering* c);
EDTM_API const int32_t* edtm_clustering_labels(const edtm_clustering* c);
EDTM_API void edtm_clustering_free(edtm_clustering* c);

EDTM_API edtm_status edtm_harden_complete(const edtm_plan* plan, edtm_clustering** out);
EDTM_API edtm_status edtm_harden_partial(const edtm_plan* plan, double p, edtm_clustering** out);
EDTM_API edtm_status edtm_nearest_label(const edtm_matrix* cost, edtm_clustering** out);

EDTM_API edtm_status edtm_l2_costs(const edtm_matrix* docs, const edtm_matrix* labels, edtm_matrix** out);
EDTM_API edtm_status edtm_ce_costs(const edtm_matrix* scores, edtm_matrix** out);

typedef struct edtm_metrics {
  double purity;
  double inverse_purity;
  double p1;
  double mi_nats;
  double assigned_fraction;
  size_t n_evaluated;
} edtm_metrics;

EDTM_API edtm_status edtm_evaluate(const edtm_clustering* predicted, const edtm_clustering* gold, edtm_metrics* out);

/* Experiment driver. `command` is "assign", "nn", "omit" or "costs";
 * `config_json` an experiment config whose relative paths resolve against
 * `base_dir` (may be NULL). The report JSON is returned in *result_json and
 * released with edtm_string_free. */
EDTM_API edtm_status edtm_run_experiment(const char* command, const char* config_json, const char* base_dir,
                                         char** result_json);
/* Metrics report JSON for a clustering JSONL file against corpus gold labels. */
EDTM_API edtm_status edtm_evaluate_files(const char* corpus_path, const char* clustering_path, char** result_json);
EDTM_API void edtm_string_free(char* s);

typedef struct edtm_service edtm_service;

/* `config_json` may be NULL for defaults; EDTM_PORT and EDTM_DATA_DIR
 * override it. */
EDTM_API edtm_status edtm_service_create(const char* config_json, const char* base_dir, edtm_service** out);
EDTM_API edtm_status edtm_service_start(edtm_service* service, int* bound_port);
EDTM_API edtm_status edtm_service_stop(edtm_service* service);
EDTM_API void edtm_service_free(edtm_service* service);

#ifdef __cplusplus
}
#endif

#endif
