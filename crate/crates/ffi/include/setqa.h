#ifndef SETQA_H
#define SETQA_H

#include <stdbool.h>
#include <stddef.h>

// Result codes. Zero is success.
typedef enum SetqaStatus {
  SETQA_STATUS_OK = 0,
  SETQA_STATUS_NULL_ARGUMENT = 1,
  SETQA_STATUS_INVALID_UTF8 = 2,
  SETQA_STATUS_IO = 3,
  SETQA_STATUS_INPUT_FORMAT = 4,
  SETQA_STATUS_UNKNOWN_REFERENCE = 5,
  SETQA_STATUS_PARSE = 6,
  SETQA_STATUS_INVALID_ARGUMENT = 7,
  SETQA_STATUS_PANIC = 99,
} SetqaStatus;

typedef enum SetqaCorpusFormat {
  SETQA_CORPUS_FORMAT_MERGED = 0,
  SETQA_CORPUS_FORMAT_PASSAGES = 1,
} SetqaCorpusFormat;

// Opaque corpus handle.
typedef struct SetqaCorpus SetqaCorpus;

// Opaque question-set handle, validated against the corpus it was loaded with.
typedef struct SetqaQuestions SetqaQuestions;

// Per-example set metrics, each in [0, 1].
typedef struct SetqaExampleMetrics {
  double f1;
  double precision;
  double recall;
  double accuracy;
  double subspan_em;
} SetqaExampleMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library on the same thread.
const char *setqa_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void setqa_string_free(char *s);

// # Safety
// `path` must be a valid C string; `out` must be writable.
enum SetqaStatus setqa_corpus_load(const char *path,
                                   enum SetqaCorpusFormat format,
                                   struct SetqaCorpus **out);

// # Safety
// `corpus` must be NULL or a live handle.
void setqa_corpus_free(struct SetqaCorpus *corpus);

// Number of documents, or 0 for NULL.
//
// # Safety
// `corpus` must be NULL or a live handle.
size_t setqa_corpus_len(const struct SetqaCorpus *corpus);

// Title of `doc_id` as a new string, or NULL if the id is unknown.
//
// # Safety
// `corpus` must be a live handle; `doc_id` a valid C string.
char *setqa_corpus_title(const struct SetqaCorpus *corpus, const char *doc_id);

// # Safety
// `path` must be a valid C string; `corpus` a live handle; `out` writable.
enum SetqaStatus setqa_questions_load(const char *path,
                                      const struct SetqaCorpus *corpus,
                                      struct SetqaQuestions **out);

// # Safety
// `questions` must be NULL or a live handle.
void setqa_questions_free(struct SetqaQuestions *questions);

// # Safety
// `questions` must be NULL or a live handle.
size_t setqa_questions_len(const struct SetqaQuestions *questions);

// Set metrics for one example. The three arguments are JSON arrays of
// entity names; names are normalized before comparison.
//
// # Safety
// All pointers must be valid C strings; `out` must be writable.
enum SetqaStatus setqa_set_metrics(const char *match_json,
                                   const char *debatable_json,
                                   const char *predicted_json,
                                   struct SetqaExampleMetrics *out);

// Scores a predictions JSONL file and writes the report as JSON to `out`.
//
// # Safety
// Handles must be live; strings valid; `out` writable.
enum SetqaStatus setqa_score_predictions(const struct SetqaQuestions *questions,
                                         const char *predictions_path,
                                         const char *method,
                                         char **out);

// Parses baseline output into `{"doc_ids": [...], "diagnostics": [...]}`.
// Never fails on malformed output; problems land in `diagnostics`.
//
// # Safety
// `output` must be a valid C string; `out` writable.
enum SetqaStatus setqa_parse_baseline(const char *output, char **out);

// Parses justified QA output into
// `{"response": {...}, "ids_missing": bool, "diagnostics": [...]}`.
//
// # Safety
// `output` must be a valid C string; `out` writable.
enum SetqaStatus setqa_parse_justified(const char *output, bool cot, char **out);

// Parses verifier output into `{"judgment": {...}, "diagnostics": [...]}`.
//
// # Safety
// `output` must be a valid C string; `out` writable.
enum SetqaStatus setqa_parse_verification(const char *output, bool cot, char **out);

// Renders a justified QA prompt over the documents named by `doc_ids_json`
// (a JSON array of doc ids, in prompt order).
//
// # Safety
// `corpus` must be live; strings valid; `out` writable.
enum SetqaStatus setqa_render_justified_prompt(const struct SetqaCorpus *corpus,
                                               const char *doc_ids_json,
                                               const char *question,
                                               bool cot,
                                               bool quest_instruction,
                                               char **out);

// Renders a candidate verification prompt over the documents named by
// `doc_ids_json`.
//
// # Safety
// `corpus` must be live; strings valid; `out` writable.
enum SetqaStatus setqa_render_verification_prompt(const struct SetqaCorpus *corpus,
                                                  const char *doc_ids_json,
                                                  const char *question,
                                                  const char *candidate,
                                                  bool cot,
                                                  bool quest_instruction,
                                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SETQA_H */
