#ifndef SPLITLLM_H
#define SPLITLLM_H

#include <stddef.h>

#if defined(SPLITLLM_BUILDING)
#define SPLITLLM_API __attribute__((visibility("default")))
#else
#define SPLITLLM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum slm_status {
    SLM_OK = 0,
    SLM_ERR_RUNTIME = 1,
    SLM_ERR_CONFIG = 2
} slm_status;

typedef struct slm_config slm_config;

/* Default configuration. */
SPLITLLM_API slm_status slm_config_create(slm_config** out);
/* "default" or "gradcheck" (the tiny finite-difference model). */
SPLITLLM_API slm_status slm_config_create_preset(const char* name, slm_config** out);
SPLITLLM_API void slm_config_destroy(slm_config* cfg);

/* `key = value` lines; later settings override earlier ones. */
SPLITLLM_API slm_status slm_config_load_file(slm_config* cfg, const char* path);
SPLITLLM_API slm_status slm_config_set(slm_config* cfg, const char* key, const char* value);

/* Copies the value (NUL-terminated, truncated to cap) and stores the full
   size including the terminator in *needed when non-null. */
SPLITLLM_API slm_status slm_config_get(const slm_config* cfg, const char* key, char* buf, size_t cap,
                                       size_t* needed);
SPLITLLM_API slm_status slm_config_validate(const slm_config* cfg);

/* 16 hex digits plus terminator; cap must be at least 17. */
SPLITLLM_API slm_status slm_config_hash(const slm_config* cfg, char* buf, size_t cap);

/* Run directory path is copied to dir_buf when non-null. Progress and the
   final accuracy go to stdout. */
SPLITLLM_API slm_status slm_run(const slm_config* cfg, char* dir_buf, size_t cap);
SPLITLLM_API slm_status slm_compare(const slm_config* cfg, char* dir_buf, size_t cap);

/* *passed is 1 iff both gradient and split checks are within tolerance. */
SPLITLLM_API slm_status slm_gradcheck(const slm_config* cfg, int corrupt_backward, int* passed);

/* Message of the last failed call on this thread, or "" after success. */
SPLITLLM_API const char* slm_last_error(void);
SPLITLLM_API const char* slm_version(void);

#ifdef __cplusplus
}
#endif

#endif
