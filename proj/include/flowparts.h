#ifndef FLOWPARTS_H_
#define FLOWPARTS_H_

/* C interface to the flowparts library.
 *
 * Every call returns an fp_status. On failure a message describing the error
 * is available from fp_last_error() until the next call on the same thread.
 * Strings returned through `char**` out-parameters are owned by the caller
 * and must be released with fp_free().
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define FP_API __declspec(dllexport)
#else
#define FP_API __attribute__((visibility("default")))
#endif

typedef enum fp_status {
  FP_OK = 0,
  FP_ERR_INVALID_ARGUMENT = 1,
  FP_ERR_DEGENERATE_POSE = 2,
  FP_ERR_SHAPE = 3,
  FP_ERR_CONFIG = 4,
  FP_ERR_ASSET = 5,
  FP_ERR_IO = 6,
  FP_ERR_INCOMPATIBLE = 7,
  FP_ERR_NON_FINITE = 8,
  FP_ERR_UNDEFINED_REGION = 9,
  FP_ERR_INTERNAL = 10
} fp_status;

typedef struct fp_model fp_model;

FP_API const char* fp_version(void);
FP_API const char* fp_last_error(void);
FP_API const char* fp_status_name(fp_status status);
/* Process exit code for a status: 0 ok, 2 user/config error, 1 otherwise. */
FP_API int fp_exit_code(fp_status status);
FP_API void fp_free(void* ptr);

/* Seed override: pass NULL to keep the seed from the config file. */

/* Writes the dataset described by `config_path` into `out_dir`. With
 * `dry_run` nonzero nothing is written. `summary_json` (nullable) receives
 * {"samples":N,"splits":{...}}. */
FP_API fp_status fp_gen(const char* config_path, const char* out_dir, int dry_run,
                        const uint64_t* seed, char** summary_json);

/* Trains on `data_dir`, writing checkpoints and metrics.jsonl into
 * `out_dir`. `resume_ckpt` may be NULL. */
FP_API fp_status fp_train(const char* config_path, const char* data_dir, const char* out_dir,
                          int deterministic, const uint64_t* seed, const char* resume_ckpt,
                          char** summary_json);

typedef struct fp_eval_options {
  const char* split;  /* NULL: "test" */
  int limit;          /* < 0: whole split */
  int clusters;       /* 0: skip clustering */
  const char* labels; /* "shape_set" (default) or "shape_count" */
  uint64_t seed;
} fp_eval_options;

FP_API void fp_eval_options_default(fp_eval_options* options);

/* Evaluates a checkpoint; writes the report to `report_path` when non-NULL. */
FP_API fp_status fp_eval(const char* checkpoint, const char* data_dir, const char* report_path,
                         const fp_eval_options* options, char** report_json);

/* Runs an ablation sweep. `out_dir` NULL: taken from the sweep file
 * ("out_dir"), falling back to "ablation". */
FP_API fp_status fp_ablate(const char* config_path, const char* sweep_path, const char* out_dir,
                           const uint64_t* seed, char** report_json);

/* Writes visualizations. Exactly one of `sample >= 0` (with data_dir/split)
 * or `image_path` selects the input. */
FP_API fp_status fp_viz(const char* checkpoint, const char* data_dir, const char* split,
                        int sample, const char* image_path, const char* out_dir,
                        char** summary_json);

/* Model handle. Images are interleaved RGB float in [0,1], row-major. */
FP_API fp_status fp_model_load(const char* checkpoint, fp_model** out);
FP_API void fp_model_free(fp_model* model);
/* {"K","C","height","width",...} */
FP_API fp_status fp_model_info(const fp_model* model, char** info_json);
/* `capsules` receives K*C floats. */
FP_API fp_status fp_model_encode(const fp_model* model, const float* image, int height, int width,
                                 float* capsules, size_t capsules_len);
/* `masks` receives K*H*W raw masks followed by K*H*W visibilities when
 * `visible` is non-NULL. */
FP_API fp_status fp_model_masks(const fp_model* model, const float* image, int height, int width,
                                float* masks, float* visible, size_t len);
/* `flow` receives H*W*2 pixel displacements (u, v interleaved). */
FP_API fp_status fp_model_flow(const fp_model* model, const float* image_a, const float* image_b,
                               int height, int width, float* flow, size_t len);

/* Middlebury .flo I/O. `data` is H*W*2 floats; free with fp_free. */
FP_API fp_status fp_flo_read(const char* path, int* height, int* width, float** data);
FP_API fp_status fp_flo_write(const char* path, int height, int width, const float* data);

#ifdef __cplusplus
}
#endif

#endif /* FLOWPARTS_H_ */
