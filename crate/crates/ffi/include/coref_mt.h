#ifndef COREF_MT_H
#define COREF_MT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes.
typedef enum CmtStatus {
  CMT_STATUS_OK = 0,
  CMT_STATUS_NULL_POINTER = 1,
  CMT_STATUS_INVALID_UTF8 = 2,
  CMT_STATUS_INVALID_ARGUMENT = 3,
  CMT_STATUS_IO = 4,
  CMT_STATUS_CHECKPOINT_MISMATCH = 5,
  CMT_STATUS_RUNTIME = 6,
  CMT_STATUS_PANIC = 7,
} CmtStatus;

// A loaded model. Only ever handled through a pointer.
typedef struct CmtModel CmtModel;

// MUC precision, recall and F1.
typedef struct CmtMuc {
  double precision;
  double recall;
  double f1;
} CmtMuc;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint into `*out_model`.
enum CmtStatus cmt_model_load(const char *path, struct CmtModel **out_model);

// Releases a model. Null is ignored.
void cmt_model_free(struct CmtModel *model);

// Beam-decodes one window and writes its N-best list as JSON to `*out_json`,
// reranked with weight `beta` when the model has a coreference head.
// `clusters_json` may be null.
enum CmtStatus cmt_translate(const struct CmtModel *model,
                             const char *source,
                             const char *clusters_json,
                             size_t beam,
                             double beta,
                             char **out_json);

// `log p(C | y, x)` of the gold clusters with the decoder teacher-forced on
// `target`.
enum CmtStatus cmt_coref_log_prob(const struct CmtModel *model,
                                  const char *source,
                                  const char *target,
                                  const char *clusters_json,
                                  double *out_value);

// Corpus BLEU in `[0, 100]` over newline-separated sentences.
enum CmtStatus cmt_corpus_bleu(const char *hypotheses, const char *references, double *out_value);

// MUC of a predicted against a gold cluster set.
enum CmtStatus cmt_muc_score(const char *predicted_json,
                             const char *gold_json,
                             struct CmtMuc *out_muc);

// Message of the last failure on this thread, or null. Valid until the next
// call on the same thread; do not free.
const char *cmt_last_error(void);

// Releases a string returned by this library. Null is ignored.
void cmt_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* COREF_MT_H */
