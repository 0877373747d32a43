#ifndef MFLAB_H
#define MFLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MflabFamily {
  MFLAB_FAMILY_EXPANDING_BALL = 0,
  MFLAB_FAMILY_BARENBLATT = 1,
  MFLAB_FAMILY_RADIAL_VORTEX_PATCH = 2,
  MFLAB_FAMILY_UNIFORM_BALL_STATIC = 3,
} MflabFamily;

typedef enum MflabFlow {
  MFLAB_FLOW_GRADIENT = 0,
  MFLAB_FLOW_CONSERVATIVE = 1,
  MFLAB_FLOW_NEWTON = 2,
} MflabFlow;

typedef enum MflabStatus {
  MFLAB_STATUS_OK = 0,
  MFLAB_STATUS_NULL_POINTER = 1,
  MFLAB_STATUS_INVALID_SPEC = 2,
  MFLAB_STATUS_SINGULARITY = 3,
  MFLAB_STATUS_COLLISION = 4,
  MFLAB_STATUS_OUT_OF_REGIME = 5,
  MFLAB_STATUS_INTEGRATOR = 6,
  MFLAB_STATUS_CFL = 7,
  MFLAB_STATUS_SHOCK = 8,
  MFLAB_STATUS_EXTRAPOLATION = 9,
  MFLAB_STATUS_GRID_MISMATCH = 10,
  MFLAB_STATUS_CONFIG = 11,
  MFLAB_STATUS_SCHEMA = 12,
  MFLAB_STATUS_IO = 13,
  MFLAB_STATUS_PANIC = 14,
} MflabStatus;

// Interaction kernel.
typedef struct MflabKernel MflabKernel;

// Radial reference density.
typedef struct MflabMeasure MflabMeasure;

// Particle positions (and velocities for second-order flows).
typedef struct MflabParticles MflabParticles;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *mflab_last_error(void);

// Library version as a static NUL-terminated string.
const char *mflab_version(void);

// Riesz kernel `|x|^{-s}`.
//
// # Safety
// `out` must be a valid pointer.
enum MflabStatus mflab_kernel_riesz(size_t d, double s, struct MflabKernel **out);

// Logarithmic kernel `-log|x|` (d = 1, 2).
//
// # Safety
// `out` must be a valid pointer.
enum MflabStatus mflab_kernel_log(size_t d, struct MflabKernel **out);

// # Safety
// `k` must come from a kernel constructor and not be used afterwards.
void mflab_kernel_free(struct MflabKernel *k);

// `g(r)`.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_kernel_eval(const struct MflabKernel *k, double r, double *out);

// Normalization constant of the kernel's extension.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_kernel_constant(const struct MflabKernel *k, double *out);

// Particles from `n * d` row-major positions; `velocities` may be NULL.
//
// # Safety
// `positions` (and `velocities` when given) must hold `n * d` doubles.
enum MflabStatus mflab_particles_new(size_t d,
                                     size_t n,
                                     const double *positions,
                                     const double *velocities,
                                     struct MflabParticles **out);

// # Safety
// `p` must come from [`mflab_particles_new`] and not be used afterwards.
void mflab_particles_free(struct MflabParticles *p);

// Number of particles; 0 for NULL.
//
// # Safety
// `p` must be NULL or valid.
size_t mflab_particles_len(const struct MflabParticles *p);

// Copies positions into `buf`, which holds `len` doubles (at least `n * d`).
//
// # Safety
// `buf` must hold `len` doubles.
enum MflabStatus mflab_particles_positions(const struct MflabParticles *p, double *buf, size_t len);

// Advances the particles in place by `steps` RK4 steps of size `dt`.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_particles_advance(struct MflabParticles *p,
                                         const struct MflabKernel *k,
                                         enum MflabFlow flow,
                                         double dt,
                                         size_t steps);

// `sum_{i != j} g(x_i - x_j)`.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_interaction_energy(const struct MflabParticles *p,
                                          const struct MflabKernel *k,
                                          double *out);

// Uniform ball of the given radius centered at `center` (`d` doubles, or NULL for the origin).
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_uniform_ball(const struct MflabKernel *k,
                                    const double *center,
                                    double radius,
                                    struct MflabMeasure **out);

// Closed-form solution of `family` at time `t`, coupling `kappa`, centered at the origin.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_exact_solution(const struct MflabKernel *k,
                                      enum MflabFamily family,
                                      double r0,
                                      double p,
                                      double kappa,
                                      double t,
                                      struct MflabMeasure **out);

// # Safety
// `m` must come from a measure constructor and not be used afterwards.
void mflab_measure_free(struct MflabMeasure *m);

// Support radius of a radial measure.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_measure_radius(const struct MflabMeasure *m, double *out);

// Potential `h = g * mu` at `x` (`d` doubles).
//
// # Safety
// Pointers must be valid; `x` must hold `d` doubles.
enum MflabStatus mflab_measure_potential(const struct MflabMeasure *m,
                                         const double *x,
                                         double *out);

// Modulated energy of the particles relative to `m`.
//
// # Safety
// Pointers must be valid.
enum MflabStatus mflab_modulated_energy(const struct MflabParticles *p,
                                        const struct MflabMeasure *m,
                                        double *out);

// Truncated energy at the minimal distances, with `sum g(r_i)` and `min r_i`.
// Any of the output pointers may be NULL.
//
// # Safety
// Non-NULL pointers must be valid.
enum MflabStatus mflab_truncated_energy(const struct MflabParticles *p,
                                        const struct MflabMeasure *m,
                                        double *te,
                                        double *sum_g_r,
                                        double *min_r);

// Runs the `simulate` command for a config file, writing under `out_dir`
// (NULL: the config's output directory).
//
// # Safety
// Strings must be NUL-terminated UTF-8.
enum MflabStatus mflab_simulate(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFLAB_H */
