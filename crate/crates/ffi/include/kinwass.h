#ifndef KINWASS_H
#define KINWASS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KwStatus {
  KW_STATUS_OK = 0,
  KW_STATUS_NULL_POINTER = 1,
  KW_STATUS_INVALID_ARGUMENT = 2,
  KW_STATUS_SOLVER = 3,
  KW_STATUS_BLOW_UP = 4,
  KW_STATUS_IO = 5,
  KW_STATUS_PANIC = 6,
} KwStatus;

typedef enum KwDomain {
  KW_DOMAIN_TORUS = 0,
  KW_DOMAIN_WHOLE_SPACE = 1,
} KwDomain;

typedef enum KwForm {
  KW_FORM_METRIC = 0,
  KW_FORM_FLOW = 1,
} KwForm;

/*
 Opaque experiment configuration.
 */
typedef struct KwConfig KwConfig;

/*
 Opaque weighted phase-space measure.
 */
typedef struct KwMeasure KwMeasure;

/*
 Root of the implicit kinetic equation and its inputs.
 */
typedef struct KwKineticResult {
  /*
   `dp^{1/p}`; equal to `dp` for a bare root solve.
   */
  double value;
  double dp;
  double cx;
  double cv;
  double lambda;
  double residual;
  uint8_t regime_flag;
} KwKineticResult;

typedef struct KwBoundConstants {
  double c_l;
  double c_kw;
  double c_hw;
  double c_loglip;
  double c_d;
  double c0;
} KwBoundConstants;

typedef struct KwRunSummary {
  size_t snapshots;
  bool blew_up;
  double blowup_time;
  double final_qp;
  double final_dp;
  double final_wp_sub;
} KwRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (nul-terminated,
 truncated to `len`). Returns the full message length, 0 when there is none.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t kw_last_error_message(char *buf, size_t len);

/*
 Builds a measure from `n` atoms in dimension `dim`; coordinate arrays hold
 `n * dim` values atom-major. A null `weights` means uniform.

 # Safety
 Array pointers must be valid for the stated lengths; `out` must be writable.
 */
enum KwStatus kw_measure_new(size_t dim,
                             size_t n,
                             const double *positions,
                             const double *velocities,
                             const double *weights,
                             struct KwMeasure **out);

/*
 Reads a measure CSV (`x1..xd,v1..vd,w`).

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum KwStatus kw_measure_read_csv(const char *path, struct KwMeasure **out);

/*
 Number of atoms, 0 for null.

 # Safety
 `m` must be null or a live handle.
 */
size_t kw_measure_len(const struct KwMeasure *m);

/*
 # Safety
 `m` must be null or a handle not yet freed.
 */
void kw_measure_free(struct KwMeasure *m);

/*
 `W_p` under the cost `|x-y|^p + |v-w|^p`.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum KwStatus kw_wp_distance(const struct KwMeasure *a,
                             const struct KwMeasure *b,
                             double p,
                             enum KwDomain dom,
                             double *out);

/*
 Kinetic Wasserstein distance `W_{lambda,p}`.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum KwStatus kw_kinetic_distance(const struct KwMeasure *a,
                                  const struct KwMeasure *b,
                                  double p,
                                  enum KwDomain dom,
                                  struct KwKineticResult *out);

/*
 Root of `s = lambda(s) cx + cv` (metric) or of the same divided by `p` (flow).

 # Safety
 `out` must be writable.
 */
enum KwStatus kw_solve_dp_implicit(double cx,
                                   double cv,
                                   double p,
                                   enum KwForm form,
                                   struct KwKineticResult *out);

struct KwBoundConstants kw_bound_constants_default(void);

/*
 Double-exponential envelope at `int A = int_a`.

 # Safety
 `consts` and `out` must be valid pointers.
 */
enum KwStatus kw_loeper_bound(double w0p,
                              double int_a,
                              const struct KwBoundConstants *consts,
                              double p,
                              size_t d,
                              double *out);

/*
 Kinetic envelope at `int A = int_a`.

 # Safety
 `consts` and `out` must be valid pointers.
 */
enum KwStatus kw_kinetic_bound(double w0p,
                               double int_a,
                               const struct KwBoundConstants *consts,
                               double p,
                               double *out);

/*
 Validity horizons `log|log delta|` and `sqrt|log delta|`.

 # Safety
 Output pointers must be writable.
 */
enum KwStatus kw_horizons(double delta, double *loeper, double *kinetic);

/*
 Parses a TOML configuration; a null `text` gives the defaults.

 # Safety
 `text` must be null or nul-terminated; `out` must be writable.
 */
enum KwStatus kw_config_from_toml(const char *text, struct KwConfig **out);

/*
 Overrides one key, e.g. `("sim.p", "3")`.

 # Safety
 `config` must be live; strings nul-terminated.
 */
enum KwStatus kw_config_set(struct KwConfig *config, const char *key, const char *value);

/*
 # Safety
 `config` must be null or a handle not yet freed.
 */
void kw_config_free(struct KwConfig *config);

/*
 Runs a paired simulation, writing its files into `out_dir`. Returns
 `BlowUp` with `summary` filled when the density cap was reached.

 # Safety
 `config` must be live, `out_dir` nul-terminated, `summary` null or writable.
 */
enum KwStatus kw_simulate(const struct KwConfig *config,
                          const char *out_dir,
                          struct KwRunSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KINWASS_H */
