#ifndef EVQA_H
#define EVQA_H

/* C interface to the evqa core library. All entry points are exported with C
 * linkage; state lives behind an opaque session handle and every call
 * returns a status code. Status values match the CLI exit-code contract. */

#include <stddef.h>

#if defined(_WIN32)
#define EVQA_API __declspec(dllexport)
#else
#define EVQA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct evqa_session evqa_session;

typedef enum evqa_status {
  EVQA_OK = 0,
  EVQA_E_INTERNAL = 1,
  EVQA_E_CONFIG = 2,
  EVQA_E_CHECKPOINT = 3,
  EVQA_E_INPUT = 4,
  EVQA_E_NUMERIC = 5
} evqa_status;

EVQA_API unsigned evqa_abi_version(void);
EVQA_API const char* evqa_status_name(int status);

/* Opens a session from a key=value config file (NULL for built-in defaults)
 * plus override strings of the form "key=value". */
EVQA_API evqa_status evqa_session_open(const char* config_path, const char* const* overrides,
                                       size_t n_overrides, evqa_session** out);
EVQA_API void evqa_session_close(evqa_session* s);

/* Message for the most recent failure on this session; owned by the session
 * and valid until the next call. */
EVQA_API const char* evqa_errmsg(const evqa_session* s);

/* Writes dataset.jsonl, captions.jsonl and image sidecars into out_dir. */
EVQA_API evqa_status evqa_gen_data(evqa_session* s, const char* out_dir);

/* stage 1: caption alignment (with LM warmup), stage 2: VQA fine-tuning.
 * resume_path continues an interrupted run of the same stage, or seeds
 * stage 2 from a stage-1 checkpoint. May be NULL. */
EVQA_API evqa_status evqa_train(evqa_session* s, int stage, const char* out_dir,
                                const char* resume_path);

/* Evaluates a checkpoint on the test split; writes report.json and
 * vocab.jsonl into out_dir. report_json (optional) receives a malloc'd copy
 * of the report; release it with evqa_free. */
EVQA_API evqa_status evqa_eval(evqa_session* s, const char* checkpoint, const char* out_dir,
                               int use_tp, int use_tto, char** report_json);

/* Answers one question about one image file. answer and trace_json are
 * malloc'd; release with evqa_free. */
EVQA_API evqa_status evqa_infer(evqa_session* s, const char* checkpoint, const char* image_path,
                                const char* question, char** answer, char** trace_json);

/* Central-difference verification of every backward rule. table_text
 * (optional, malloc'd) receives the per-operation report. Returns
 * EVQA_E_NUMERIC if any check fails. */
EVQA_API evqa_status evqa_gradcheck(evqa_session* s, char** table_text);

EVQA_API void evqa_free(char* p);

#ifdef __cplusplus
}
#endif

#endif /* EVQA_H */
