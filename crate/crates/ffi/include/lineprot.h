#ifndef LINEPROT_H
#define LINEPROT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LpStatus {
  LP_STATUS_OK = 0,
  LP_STATUS_NULL_ARGUMENT = 1,
  LP_STATUS_INVALID_PARAMETER = 2,
  LP_STATUS_INVALID_WINDOW = 3,
  LP_STATUS_DEGRADED_DATA = 4,
  LP_STATUS_DATA_INTEGRITY = 5,
  LP_STATUS_SIMULATION = 6,
  LP_STATUS_SOLVER = 7,
  LP_STATUS_CONFIG = 8,
  LP_STATUS_IO = 9,
  LP_STATUS_INVALID_UTF8 = 10,
  LP_STATUS_BUFFER_TOO_SMALL = 11,
  LP_STATUS_PANIC = 12,
} LpStatus;

// Measurement channel of a record.
typedef enum LpChannel {
  LP_CHANNEL_U1 = 0,
  LP_CHANNEL_U2 = 1,
  LP_CHANNEL_I1 = 2,
  LP_CHANNEL_I2 = 3,
} LpChannel;

typedef enum LpInceptionKind {
  // No fault declared.
  LP_INCEPTION_KIND_NONE = 0,
  // Inception within `[inception_lo, inception_hi]` (sample indices).
  LP_INCEPTION_KIND_INTERVAL = 1,
  // The fault started before the window.
  LP_INCEPTION_KIND_BEFORE_WINDOW = 2,
} LpInceptionKind;

typedef enum LpFaultType {
  LP_FAULT_TYPE_NONE = 0,
  LP_FAULT_TYPE_K3 = 1,
  LP_FAULT_TYPE_K2 = 2,
  LP_FAULT_TYPE_K2G = 3,
  LP_FAULT_TYPE_K1 = 4,
  LP_FAULT_TYPE_UNCLASSIFIED = 5,
} LpFaultType;

typedef struct LpRecord LpRecord;

typedef struct LpScenario LpScenario;

typedef struct LpVerdict LpVerdict;

// Sequence parameters of the protected line.
typedef struct LpLine {
  double r1_ohm_per_km;
  double l1_h_per_km;
  // Zero/positive sequence ratio for resistance and inductance.
  double k_seq;
  double length_km;
} LpLine;

// Detector settings; start from [`lp_detector_config_default`].
typedef struct LpDetectorConfig {
  double window_ms;
  size_t m_blocks;
  // Samples per derivative stencil.
  size_t l;
  double max_missing_fraction;
  // Upper bound on estimated fault resistances; may be infinite.
  double r_max_ohm;
  double classify_threshold_ohm;
} LpDetectorConfig;

// Flat view of a verdict.
typedef struct LpVerdictInfo {
  bool trip;
  size_t selected_case;
  // `alpha` and `r_f` are valid only when set.
  bool has_estimate;
  double alpha;
  // `[R_a, R_b, R_c, R_g]` in ohms.
  double r_f[4];
  enum LpInceptionKind inception_kind;
  size_t inception_lo;
  size_t inception_hi;
  enum LpFaultType fault_type;
  size_t delta_count;
} LpVerdictInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t lp_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *lp_version(void);

// The built-in reference scenario.
//
// # Safety
// `out` must be valid for writes.
enum LpStatus lp_scenario_reference(struct LpScenario **out);

// Parses and validates a scenario from TOML text.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be valid for writes.
enum LpStatus lp_scenario_from_toml(const char *toml, struct LpScenario **out);

// Line parameters of a scenario.
//
// # Safety
// `sc` must be a live scenario handle; `out` must be valid for writes.
enum LpStatus lp_scenario_line(const struct LpScenario *sc, struct LpLine *out);

// # Safety
// `sc` must be null or a handle from this library not yet freed.
void lp_scenario_free(struct LpScenario *sc);

// Simulates a scenario into a new record.
//
// # Safety
// `sc` must be a live scenario handle; `out` must be valid for writes.
enum LpStatus lp_simulate(const struct LpScenario *sc, struct LpRecord **out);

// Builds a record from measured samples. Each channel holds `3 * n` values,
// phase-major: `[a_0 .. a_{n-1}, b_0 .. b_{n-1}, c_0 .. c_{n-1}]`.
//
// # Safety
// Each channel pointer must be valid for `3 * n` reads; `out` must be valid
// for writes.
enum LpStatus lp_record_new(double sample_rate_hz,
                            size_t n,
                            const double *u1,
                            const double *u2,
                            const double *i1,
                            const double *i2,
                            struct LpRecord **out);

// Number of samples in a record.
//
// # Safety
// `rec` must be a live record handle; `out` must be valid for writes.
enum LpStatus lp_record_len(const struct LpRecord *rec, size_t *out);

// Copies one phase of one channel into `buf`, which must hold the whole
// record (`lp_record_len` values).
//
// # Safety
// `rec` must be a live record handle; `buf` must be valid for `len` writes.
enum LpStatus lp_record_channel(const struct LpRecord *rec,
                                enum LpChannel channel,
                                size_t phase,
                                double *buf,
                                size_t len);

// Marks remote sample `index` as lost in transit.
//
// # Safety
// `rec` must be a live record handle.
enum LpStatus lp_record_mark_missing(struct LpRecord *rec, size_t index);

// # Safety
// `rec` must be null or a handle from this library not yet freed.
void lp_record_free(struct LpRecord *rec);

// Default detector settings.
//
// # Safety
// `out` must be valid for writes.
enum LpStatus lp_detector_config_default(struct LpDetectorConfig *out);

// Runs the detector on the window of `rec` starting at sample `start`; the
// window length follows from `cfg.window_ms` and the record's sample rate.
//
// # Safety
// Pointers must be valid; `out` must be valid for writes.
enum LpStatus lp_detect_window(const struct LpRecord *rec,
                               size_t start,
                               const struct LpLine *line,
                               const struct LpDetectorConfig *cfg,
                               struct LpVerdict **out);

// Flat summary of a verdict.
//
// # Safety
// `v` must be a live verdict handle; `out` must be valid for writes.
enum LpStatus lp_verdict_info(const struct LpVerdict *v, struct LpVerdictInfo *out);

// Copies the per-case residuals `Δ_1 ..` into `buf`.
//
// # Safety
// `v` must be a live verdict handle; `buf` must be valid for `len` writes.
enum LpStatus lp_verdict_deltas(const struct LpVerdict *v, double *buf, size_t len);

// # Safety
// `v` must be null or a handle from this library not yet freed.
void lp_verdict_free(struct LpVerdict *v);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINEPROT_H */
