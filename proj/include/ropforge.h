#ifndef ROPFORGE_H
#define ROPFORGE_H

/* C interface to the ropforge obfuscation pipeline. All structured data
 * crosses this boundary as JSON text; images cross as ROPI byte buffers.
 * Every function returns RF_OK or an rf_status error code; the message for
 * the most recent failure on the calling thread is rf_last_error(). */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct rf_ctx rf_ctx; /* one obfuscation run: images, manifest, report */
typedef struct rf_img rf_img; /* a loaded program image */

enum rf_status {
  RF_OK = 0,
  RF_E_SYNTAX,
  RF_E_CFG_INCOMPLETE,
  RF_E_UNTRANSLATABLE,
  RF_E_NO_GADGET,
  RF_E_REGISTER_PRESSURE,
  RF_E_WIDTH,
  RF_E_LAYOUT,
  RF_E_STUB_TOO_LARGE,
  RF_E_PARAM,
  RF_E_FORMAT,
  RF_E_IO,
  RF_E_EMU,
  RF_E_INTERNAL
};

const char* rf_version(void);
const char* rf_status_name(int status);
const char* rf_last_error(void);

/* Assembles `source` and builds both the baseline and the obfuscated image.
 * `config_json` matches the CLI's config document; NULL means defaults. */
int rf_obfuscate(const char* source, const char* config_json, rf_ctx** out);
void rf_free(rf_ctx* ctx);

/* Build report (config, manifest, per-function stats) as JSON. */
int rf_report(rf_ctx* ctx, char** json);
/* Manifest only: the adversary's ground truth. */
int rf_manifest(rf_ctx* ctx, char** json);
/* Serialized image, ROPI format. obfuscated=0 gives the baseline. */
int rf_image(rf_ctx* ctx, int obfuscated, uint8_t** bytes, size_t* len);

int rf_img_from_bytes(const uint8_t* bytes, size_t len, rf_img** out);
int rf_img_load(const char* path, rf_img** out);
void rf_img_free(rf_img* img);

/* Runs `fn` as it exists in the image: through its pivot stub when the
 * function is obfuscated, natively otherwise. Result JSON carries the exit
 * reason, registers, globals and, when want_trace is nonzero, the trace. */
int rf_run_image(rf_img* img, const char* fn, const uint64_t* args,
                 size_t nargs, uint64_t fuel, int want_trace, char** json);

/* Attack harness. mode is "flip", "scan" or "explore"; `manifest_json` is
 * the document from rf_manifest (or the CLI manifest file). params_json:
 *   {"args":[...], "budget":N, "fuel":N,
 *    "domains":[{"arg":0,"lo":0,"hi":255}, ...]}
 * Any field may be omitted; NULL means all defaults. */
int rf_attack_image(rf_img* img, const char* manifest_json, const char* fn,
                    const char* mode, const char* params_json, char** json);

void rf_buf_free(uint8_t* bytes);
void rf_str_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* ROPFORGE_H */
