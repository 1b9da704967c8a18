#ifndef SEQTAG_H
#define SEQTAG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum {
  SEQTAG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SEQTAG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SEQTAG_STATUS_INVALID_UTF8 = 2,
  /**
   * Input text could not be parsed (CoNLL syntax, unknown tag, ...).
   */
  SEQTAG_STATUS_PARSE_ERROR = 3,
  /**
   * The checkpoint file could not be read or verified.
   */
  SEQTAG_STATUS_MODEL_ERROR = 4,
  /**
   * Prediction failed (e.g. a word exceeds the subword budget).
   */
  SEQTAG_STATUS_PREDICT_ERROR = 5,
  /**
   * Gold and prediction texts are inconsistent.
   */
  SEQTAG_STATUS_EVAL_ERROR = 6,
  /**
   * Invalid argument value (unknown tagset or style name, ...).
   */
  SEQTAG_STATUS_INVALID_ARGUMENT = 7,
  /**
   * An internal panic was caught; this is a bug.
   */
  SEQTAG_STATUS_INTERNAL = 8,
} SeqtagStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct SeqtagModel SeqtagModel;

/**
 * Opaque tagset handle.
 */
typedef struct SeqtagTagset SeqtagTagset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent non-OK status on this thread. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *seqtag_last_error_message(void);

/**
 * Crate version as a static string.
 */
const char *seqtag_version(void);

/**
 * Creates a builtin tagset (`"peyma"` or `"arman"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 * A returned handle must be released with [`seqtag_tagset_free`].
 */
SeqtagStatus seqtag_tagset_builtin(const char *name, SeqtagTagset **out);

/**
 * Creates a tagset from `class_count` class-name strings.
 *
 * # Safety
 * `classes` must point to `class_count` NUL-terminated strings; `name`
 * and `out` as in [`seqtag_tagset_builtin`].
 */
SeqtagStatus seqtag_tagset_from_classes(const char *name,
                                        const char *const *classes,
                                        size_t class_count,
                                        SeqtagTagset **out);

/**
 * Number of classes in a tagset; 0 for a null handle.
 *
 * # Safety
 * `tagset` must be a live handle from this library or null.
 */
size_t seqtag_tagset_class_count(const SeqtagTagset *tagset);

/**
 * Releases a tagset handle. Null is a no-op.
 *
 * # Safety
 * `tagset` must come from this library and not be freed twice.
 */
void seqtag_tagset_free(SeqtagTagset *tagset);

/**
 * Loads the best model from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 * A returned handle must be released with [`seqtag_model_free`].
 */
SeqtagStatus seqtag_model_load(const char *path, SeqtagModel **out);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from this library and not be freed twice.
 */
void seqtag_model_free(SeqtagModel *model);

/**
 * Tags one tokenized sentence. On success, `*out_tags` receives an
 * array of `token_count` newly allocated tag strings (`O`, `B-c`,
 * `I-c`), to be released with [`seqtag_tags_free`].
 *
 * # Safety
 * `model` must be a live handle; `tokens` must point to `token_count`
 * NUL-terminated strings; `out_tags` must be a valid pointer.
 */
SeqtagStatus seqtag_model_predict(const SeqtagModel *model,
                                  const char *const *tokens,
                                  size_t token_count,
                                  char ***out_tags);

/**
 * Releases a tag array from [`seqtag_model_predict`]. Null is a no-op.
 *
 * # Safety
 * `tags` must be an array of exactly `count` strings returned by this
 * library, freed at most once.
 */
void seqtag_tags_free(char **tags, size_t count);

/**
 * Scores prediction text against gold text (both CoNLL, same token
 * column) and writes a rendered report to `*out_report`. `style` is
 * `"per-tag"`, `"per-class"`, `"summary"`, or `"metrics"` for the flat
 * machine-readable key=value form.
 *
 * # Safety
 * All strings NUL-terminated; `tagset` a live handle; `out_report` a
 * valid pointer. The returned string is released with
 * [`seqtag_string_free`].
 */
SeqtagStatus seqtag_eval_conll(const SeqtagTagset *tagset,
                               const char *gold_text,
                               const char *pred_text,
                               const char *style,
                               char **out_report);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `text` must come from this library and not be freed twice.
 */
void seqtag_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQTAG_H */
