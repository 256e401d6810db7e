#ifndef DEEPGA_H
#define DEEPGA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DGA_OK 0

#define DGA_NULL_POINTER 1

#define DGA_INVALID_ARGUMENT 2

#define DGA_BUFFER_TOO_SMALL 3

#define DGA_PANIC 4

#define DGA_CODEC_BAD_MAGIC 10

#define DGA_CODEC_TRUNCATED 11

#define DGA_CODEC_SEED_OUT_OF_RANGE 12

#define DGA_CODEC_BAD_MODE 13

#define DGA_CODEC_BAD_SIGMA 14

#define DGA_CODEC_TRAILING_BYTES 15

#define DGA_NOISE_ERROR 30

#define DGA_SHAPE_ERROR 31

/**
 * Seed-chain genotype.
 */
typedef struct DgaGenotype DgaGenotype;

/**
 * Read-only table of standard-normal values.
 */
typedef struct DgaNoiseTable DgaNoiseTable;

/**
 * Compiled policy network.
 */
typedef struct DgaPolicy DgaPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *dga_status_message(int32_t code);

/**
 * Builds a table of `size` values from a 28-bit master seed.
 */
int32_t dga_noise_table_new(uint32_t master_seed, size_t size, struct DgaNoiseTable **out);

int32_t dga_noise_table_len(const struct DgaNoiseTable *table, size_t *out);

/**
 * FNV-1a checksum over the table's bytes, as exchanged in worker handshakes.
 */
int32_t dga_noise_table_checksum(const struct DgaNoiseTable *table, uint64_t *out);

void dga_noise_table_free(struct DgaNoiseTable *table);

/**
 * A genotype with an empty mutation chain. `hash_extended` selects the
 * hash-extended noise indexing.
 */
int32_t dga_genotype_new(uint32_t init_seed,
                         double sigma,
                         bool hash_extended,
                         struct DgaGenotype **out);

/**
 * Appends one mutation seed to the chain.
 */
int32_t dga_genotype_push(struct DgaGenotype *genotype, uint32_t mutation_seed);

/**
 * Parses a "DGN1" blob.
 */
int32_t dga_genotype_from_bytes(const uint8_t *bytes, size_t len, struct DgaGenotype **out);

int32_t dga_genotype_serialized_len(const struct DgaGenotype *genotype, size_t *out);

/**
 * Writes the "DGN1" blob into `buf`. `written` receives the blob size; when
 * `cap` is too small nothing is written and `DGA_BUFFER_TOO_SMALL` returned.
 */
int32_t dga_genotype_to_bytes(const struct DgaGenotype *genotype,
                              uint8_t *buf,
                              size_t cap,
                              size_t *written);

int32_t dga_genotype_chain_length(const struct DgaGenotype *genotype, size_t *out);

int32_t dga_genotype_sigma(const struct DgaGenotype *genotype, double *out);

void dga_genotype_free(struct DgaGenotype *genotype);

/**
 * The default maze network: two conv layers and two dense layers over an
 * 84x84x4 frame stack, two tanh outputs.
 */
int32_t dga_policy_new_desk_maze(struct DgaPolicy **out);

/**
 * The large DQN-shaped network over an 84x84x4 frame stack.
 */
int32_t dga_policy_new_dqn(size_t outputs, struct DgaPolicy **out);

/**
 * Fully connected ReLU network with a tanh head.
 */
int32_t dga_policy_new_mlp(size_t inputs,
                           const size_t *hidden,
                           size_t hidden_len,
                           size_t outputs,
                           struct DgaPolicy **out);

int32_t dga_policy_param_count(const struct DgaPolicy *policy, size_t *out);

int32_t dga_policy_input_len(const struct DgaPolicy *policy, size_t *out);

int32_t dga_policy_output_len(const struct DgaPolicy *policy, size_t *out);

/**
 * Runs the network on one observation.
 */
int32_t dga_policy_forward(const struct DgaPolicy *policy,
                           const float *theta,
                           size_t theta_len,
                           const float *obs,
                           size_t obs_len,
                           float *action,
                           size_t action_len);

void dga_policy_free(struct DgaPolicy *policy);

/**
 * Rebuilds the parameter vector of `genotype` for `policy` into `theta`,
 * which must hold exactly the policy's parameter count.
 */
int32_t dga_reconstruct(const struct DgaGenotype *genotype,
                        const struct DgaPolicy *policy,
                        const struct DgaNoiseTable *table,
                        float *theta,
                        size_t theta_len);

/**
 * Parameter bytes (4 per parameter) over serialized genotype bytes.
 */
int32_t dga_compression_ratio(const struct DgaGenotype *genotype,
                              const struct DgaPolicy *policy,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPGA_H */
