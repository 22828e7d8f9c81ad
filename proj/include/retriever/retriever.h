#ifndef RETRIEVER_RETRIEVER_H
#define RETRIEVER_RETRIEVER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(RETRIEVER_BUILD_SHARED)
#define RT_API __attribute__((visibility("default")))
#else
#define RT_API
#endif

/* Status codes. 2, 3 and 4 double as the CLI exit codes. */
typedef enum rt_status {
  RT_OK = 0,
  RT_ERR_ARGUMENT = 1,
  RT_ERR_CONFIG = 2,
  RT_ERR_NUMERIC = 3,
  RT_ERR_ARTIFACT = 4,
  RT_ERR_SHAPE = 5,
  RT_ERR_STATE = 6,
  RT_ERR_IO = 7,
  RT_ERR_INTERNAL = 8
} rt_status;

typedef struct rt_dataset rt_dataset;
typedef struct rt_model rt_model;

/* Message of the last failed call on this thread; "" when none. */
RT_API const char* rt_last_error(void);
RT_API const char* rt_version(void);

/* ---- datasets ---- */

typedef struct rt_dataset_info {
  int grid; /* 0 sequence, 1 grid */
  size_t count;
  size_t tokens;
  size_t dim;
  size_t height;
  size_t width;
  size_t symbols;
  size_t styles;
  uint64_t hash;
  double oracle_style;  /* nearest-row oracle accuracy */
  double oracle_symbol;
} rt_dataset_info;

/* Generates from key=value spec text. seed_override < 0 keeps the spec seed. */
RT_API rt_status rt_dataset_generate(const char* spec_text, const char* source, int64_t seed_override,
                                     rt_dataset** out);
/* Canonical spec text of a parsed spec, including defaults. Caller frees with rt_string_free. */
RT_API rt_status rt_spec_canonical(const char* spec_text, const char* source, int64_t seed_override, char** out);
RT_API rt_status rt_dataset_save(const rt_dataset* data, const char* dir);
RT_API rt_status rt_dataset_load(const char* dir, rt_dataset** out);
RT_API rt_status rt_dataset_info_get(const rt_dataset* data, rt_dataset_info* out);
/* Style label of a sample (grids: the style of part 0); UINT32_MAX when out of range. */
RT_API uint32_t rt_dataset_style(const rt_dataset* data, size_t sample);
/* Style of one part of a grid sample; sequences return the sample style. */
RT_API uint32_t rt_dataset_part_style(const rt_dataset* data, size_t sample, size_t part);
RT_API void rt_dataset_free(rt_dataset* data);

/* ---- models ---- */

/* Validates config text; on success *param_count (if non-null) receives the
   number of scalars the model would hold. */
RT_API rt_status rt_config_check(const char* config_text, const char* source, size_t* param_count);
RT_API rt_status rt_model_create(const char* config_text, const char* source, int64_t seed_override,
                                 rt_model** out);
/* runtime_config_text may be null; otherwise its architecture fields must
   match the checkpoint (RT_ERR_ARTIFACT naming the field). */
RT_API rt_status rt_model_load(const char* path, const char* runtime_config_text, rt_model** out);
RT_API rt_status rt_model_save(const rt_model* model, const char* path);
RT_API size_t rt_model_param_count(const rt_model* model);
/* Completed training updates recorded in the loaded checkpoint (0 if none). */
RT_API uint64_t rt_model_train_step(const rt_model* model);
/* Config text owned by the model, valid until the model changes or is freed. */
RT_API const char* rt_model_config(const rt_model* model);
/* Replaces training-only fields (lr, max_steps, seed, ...). */
RT_API rt_status rt_model_set_training_config(rt_model* model, const char* config_text, const char* source);
RT_API void rt_model_free(rt_model* model);

/* ---- training ---- */

typedef void (*rt_log_fn)(const char* line, void* user);

/* Trains from the model's recorded step (0 for a fresh model) to the
   configured total; writes train_log.csv and checkpoints into out_dir. */
RT_API rt_status rt_train(rt_model* model, const rt_dataset* data, const char* out_dir, rt_log_fn log, void* user,
                          uint64_t* steps_done);

/* ---- evaluation ---- */

#define RT_MAX_GROUPS 16

typedef struct rt_eval_options {
  size_t transfer_pairs; /* 0: default 200 */
  int per_group;
  uint64_t probe_seed; /* probe seeds are probe_seed and probe_seed + 1 */
} rt_eval_options;

typedef struct rt_eval_report {
  double rec_mse;
  double code_perplexity;
  double content_frame;
  double content_context;
  double leakage;
  double leakage_chance;
  double transfer;
  size_t groups;
  double group_context[RT_MAX_GROUPS];
  double group01_context;
} rt_eval_report;

RT_API rt_status rt_evaluate(const rt_model* model, const rt_dataset* data, const rt_eval_options* options,
                             rt_eval_report* out);

typedef struct rt_cooccurrence_info {
  size_t categories;
  size_t style_tokens;
  double unique_fraction;
} rt_cooccurrence_info;

/* Co-occurrence map over the training split; writes CSV and PGM files. */
RT_API rt_status rt_export_cooccurrence(const rt_model* model, const rt_dataset* data, const char* csv_path,
                                        const char* pgm_path, rt_cooccurrence_info* info);
RT_API rt_status rt_export_codes(const rt_model* model, const rt_dataset* data, const char* csv_path);
/* Grid data only: group-0 code image of one sample and per-part centers of
   the held-out split. */
RT_API rt_status rt_export_part_assignment(const rt_model* model, const rt_dataset* data, size_t sample,
                                           const char* ppm_path);
RT_API rt_status rt_export_part_centers(const rt_model* model, const rt_dataset* data, const char* csv_path);
/* Writes each held-out sample's style label and flattened style tokens. */
RT_API rt_status rt_export_style_vectors(const rt_model* model, const rt_dataset* data, const char* csv_path);

typedef struct rt_transfer_result {
  uint32_t source_style;
  uint32_t target_style;
  uint32_t predicted_style; /* oracle vote over the output tokens */
  double inside;            /* masked cells classified as the target's style for their part */
  double outside;           /* other cells classified as the source's style for their part */
} rt_transfer_result;

/* Decodes the source's content with the target's style. With parts == NULL
   every style token comes from the target; otherwise only the tokens whose
   co-occurrence major category is listed. out receives tokens * dim values. */
RT_API rt_status rt_transfer(const rt_model* model, const rt_dataset* data, size_t source, size_t target,
                             const size_t* parts, size_t part_count, double* out, size_t out_len,
                             rt_transfer_result* result);

/* ---- checks ---- */

typedef struct rt_check_value {
  char name[64];
  double value;
  double bound;
  int pass;
} rt_check_value;

/* Runs a named suite ("pi", "grad" or "losses") on the model (pi and grad)
   and fills up to capacity values; *count receives the number produced. */
RT_API rt_status rt_check(const rt_model* model, const char* what, uint64_t seed, rt_check_value* values,
                          size_t capacity, size_t* count);

RT_API void rt_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
