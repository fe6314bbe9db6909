#ifndef REPRSIM_H
#define REPRSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RS_MEASURE_NEU_NEU 0

#define RS_MEASURE_NEU_LAY 1

#define RS_MEASURE_SVCCA 2

#define RS_MEASURE_PWCCA 3

#define RS_MEASURE_ATTENTION 4

#define RS_DIRECTION_ROWS 0

#define RS_DIRECTION_COLUMNS 1

/**
 * Result of every fallible call.
 */
typedef enum RsStatus {
  RS_STATUS_OK = 0,
  /**
   * Bad argument or unsatisfiable request.
   */
  RS_STATUS_USAGE = 1,
  /**
   * Unreadable or malformed input.
   */
  RS_STATUS_DATA = 2,
  /**
   * A numerical routine failed.
   */
  RS_STATUS_NUMERICAL = 3,
  /**
   * A required pointer was null.
   */
  RS_STATUS_NULL_POINTER = 4,
  /**
   * The library panicked; the handle involved should be discarded.
   */
  RS_STATUS_PANIC = 5,
} RsStatus;

/**
 * A similarity grid.
 */
typedef struct RsGrid RsGrid;

/**
 * Moment sets of one or more layer pairs.
 */
typedef struct RsMoments RsMoments;

/**
 * Scoring options; fill with [`rs_params_default`] before changing fields.
 */
typedef struct RsParams {
  /**
   * Nonzero compares correlation magnitudes (neu-neu, attention).
   */
  int use_abs;
  double ridge_eps;
  double eig_floor;
  double svcca_threshold;
  /**
   * `RS_DIRECTION_ROWS` or `RS_DIRECTION_COLUMNS`.
   */
  int direction;
} RsParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *rs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rs_version(void);

/**
 * Writes the default scoring options.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `RsParams`.
 */
enum RsStatus rs_params_default(struct RsParams *out);

/**
 * Checks a dump file. `is_clean` receives 1 when no violations were found.
 *
 * # Safety
 * `path` must be a NUL-terminated string; the out pointers must be writable.
 */
enum RsStatus rs_validate_dump(const char *path, int *is_clean, uint64_t *n_violations);

/**
 * Moments of one layer pair from row-major frame buffers (`n x dx` and `n x dy`).
 *
 * # Safety
 * `x` and `y` must hold `n*dx` and `n*dy` doubles; `out` must be writable.
 */
enum RsStatus rs_moments_from_frames(const double *x,
                                     const double *y,
                                     size_t n,
                                     size_t dx,
                                     size_t dy,
                                     struct RsMoments **out);

/**
 * Streams two activation dumps. `pairs` is `"all"`, `"diagonal"` or a list
 * like `"0:0,1:2"`; `budget_bytes` bounds the memory of each pass.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum RsStatus rs_moments_from_dumps(const char *x_path,
                                    const char *y_path,
                                    const char *pairs,
                                    uint64_t budget_bytes,
                                    struct RsMoments **out);

/**
 * Loads a `.rsm` file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum RsStatus rs_moments_read(const char *path, struct RsMoments **out);

/**
 * Saves moments as a `.rsm` file. All sets must come from one pass.
 *
 * # Safety
 * `moments` must be a live handle and `path` NUL-terminated.
 */
enum RsStatus rs_moments_write(const struct RsMoments *moments, const char *path);

/**
 * Number of layer pairs held; 0 for a null handle.
 *
 * # Safety
 * `moments` must be null or a live handle.
 */
size_t rs_moments_len(const struct RsMoments *moments);

/**
 * Layers, frame count and unit counts of pair `index`.
 *
 * # Safety
 * `moments` must be a live handle; out pointers must be writable.
 */
enum RsStatus rs_moments_pair(const struct RsMoments *moments,
                              size_t index,
                              uint16_t *layer_x,
                              uint16_t *layer_y,
                              uint64_t *n_frames);

/**
 * Releases a moments handle. Null is ignored.
 *
 * # Safety
 * `moments` must be null or a handle not yet freed.
 */
void rs_moments_free(struct RsMoments *moments);

/**
 * Scores pair `index` with one measure. `params` may be null for defaults.
 *
 * # Safety
 * `moments` must be a live handle; out pointers must be writable.
 */
enum RsStatus rs_score(const struct RsMoments *moments,
                       size_t index,
                       int measure_code,
                       const struct RsParams *params_in,
                       double *value,
                       uint32_t *flags);

/**
 * Scores every pair and arranges the results as a grid. The pairs must
 * cover every combination of the layers they mention.
 *
 * # Safety
 * `moments` must be a live handle; `out` must be writable.
 */
enum RsStatus rs_grid_build(const struct RsMoments *moments,
                            int measure_code,
                            const struct RsParams *params_in,
                            struct RsGrid **out);

/**
 * Parses grid CSV text.
 *
 * # Safety
 * `csv` must be NUL-terminated; `out` must be writable.
 */
enum RsStatus rs_grid_from_csv(const char *csv, struct RsGrid **out);

/**
 * # Safety
 * `grid` must be a live handle; out pointers must be writable.
 */
enum RsStatus rs_grid_dims(const struct RsGrid *grid, size_t *rows, size_t *cols);

/**
 * Value and warning flags of cell (`row`, `col`).
 *
 * # Safety
 * `grid` must be a live handle; out pointers must be writable.
 */
enum RsStatus rs_grid_cell(const struct RsGrid *grid,
                           size_t row,
                           size_t col,
                           double *value,
                           uint32_t *flags);

/**
 * Grid as CSV text; release with [`rs_string_free`]. Null on failure.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
char *rs_grid_to_csv(const struct RsGrid *grid);

/**
 * Grid as an SVG heatmap with default styling; release with [`rs_string_free`].
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
char *rs_grid_to_svg(const struct RsGrid *grid);

/**
 * Releases a grid handle. Null is ignored.
 *
 * # Safety
 * `grid` must be null or a handle not yet freed.
 */
void rs_grid_free(struct RsGrid *grid);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void rs_string_free(char *s);

/**
 * Number of bottom layers to freeze: the longest prefix of `similarity`
 * (bottom layer first) at or above `threshold`.
 *
 * # Safety
 * `similarity` must hold `n` doubles; `freeze_prefix` must be writable.
 */
enum RsStatus rs_advise(const double *similarity,
                        size_t n,
                        double threshold,
                        size_t *freeze_prefix);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPRSIM_H */
