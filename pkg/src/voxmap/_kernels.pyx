# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Native batch-integration kernels.

One task per ray segment; voxel payloads are updated with lock-free
compare-and-swap loops on 32- or 64-bit words, so any number of worker
threads may run these kernels concurrently on the same region buffers
(the GIL is released for the whole chunk).  Region topology must be
frozen while a batch is in flight; lookups go through an open-addressing
hash table built at prefetch time.
"""

from libc.math cimport INFINITY, exp, floor, fmax, fmin, sqrt
from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    #include <string.h>
    #include <pthread.h>

    static pthread_mutex_t vm_fallback_mutex = PTHREAD_MUTEX_INITIALIZER;

    static inline int vm_cas32(volatile uint32_t *p, uint32_t expected, uint32_t desired) {
        return __atomic_compare_exchange_n(p, &expected, desired, 0,
                                           __ATOMIC_SEQ_CST, __ATOMIC_SEQ_CST);
    }
    static inline int vm_cas64(volatile uint64_t *p, uint64_t expected, uint64_t desired) {
        return __atomic_compare_exchange_n(p, &expected, desired, 0,
                                           __ATOMIC_SEQ_CST, __ATOMIC_SEQ_CST);
    }
    static inline uint32_t vm_load32(volatile uint32_t *p) {
        return __atomic_load_n(p, __ATOMIC_SEQ_CST);
    }
    static inline uint64_t vm_load64(volatile uint64_t *p) {
        return __atomic_load_n(p, __ATOMIC_SEQ_CST);
    }
    static inline void vm_store32(volatile uint32_t *p, uint32_t v) {
        __atomic_store_n(p, v, __ATOMIC_SEQ_CST);
    }
    static inline uint32_t vm_fetch_add32(volatile uint32_t *p, uint32_t v) {
        return __atomic_fetch_add(p, v, __ATOMIC_SEQ_CST);
    }
    static inline uint32_t vm_f2b(float f) { uint32_t u; memcpy(&u, &f, 4); return u; }
    static inline float vm_b2f(uint32_t u) { float f; memcpy(&f, &u, 4); return f; }
    static inline uint64_t vm_d2b(double d) { uint64_t u; memcpy(&u, &d, 8); return u; }
    static inline double vm_b2d(uint64_t u) { double d; memcpy(&d, &u, 8); return d; }
    static inline uint64_t vm_pack2f(float a, float b) {
        uint64_t u; float t[2]; t[0] = a; t[1] = b; memcpy(&u, t, 8); return u;
    }
    static inline void vm_unpack2f(uint64_t u, float *a, float *b) {
        float t[2]; memcpy(t, &u, 8); *a = t[0]; *b = t[1];
    }
    static inline void vm_fallback_lock(void)   { pthread_mutex_lock(&vm_fallback_mutex); }
    static inline void vm_fallback_unlock(void) { pthread_mutex_unlock(&vm_fallback_mutex); }
    """
    int vm_cas32(uint32_t *p, uint32_t expected, uint32_t desired) nogil
    int vm_cas64(uint64_t *p, uint64_t expected, uint64_t desired) nogil
    uint32_t vm_load32(uint32_t *p) nogil
    uint64_t vm_load64(uint64_t *p) nogil
    void vm_store32(uint32_t *p, uint32_t v) nogil
    uint32_t vm_fetch_add32(uint32_t *p, uint32_t v) nogil
    uint32_t vm_f2b(float f) nogil
    float vm_b2f(uint32_t u) nogil
    uint64_t vm_d2b(double d) nogil
    double vm_b2d(uint64_t u) nogil
    uint64_t vm_pack2f(float a, float b) nogil
    void vm_unpack2f(uint64_t u, float *a, float *b) nogil
    void vm_fallback_lock() nogil
    void vm_fallback_unlock() nogil


DEF PACK_BIAS = 1048576  # 1 << 20
DEF PACK_MASK = 2097151  # (1 << 21) - 1


cdef struct Stats:
    int64_t cas_retries
    int64_t cas_failures
    int64_t region_misses
    int64_t visits


# -- region hashing ------------------------------------------------------

cdef inline int64_t floordiv(int64_t a, int64_t d) nogil:
    cdef int64_t q = a / d
    if a % d != 0 and ((a < 0) != (d < 0)):
        q -= 1
    return q


cdef inline int64_t pack_region(int64_t rx, int64_t ry, int64_t rz) nogil:
    return (((rx + PACK_BIAS) & PACK_MASK) << 42) | \
           (((ry + PACK_BIAS) & PACK_MASK) << 21) | \
           ((rz + PACK_BIAS) & PACK_MASK)


cdef inline uint64_t mix_key(int64_t key) nogil:
    # splitmix64 finalizer
    cdef uint64_t h = <uint64_t>key + <uint64_t>0x9E3779B97F4A7C15
    h = (h ^ (h >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    h = (h ^ (h >> 27)) * <uint64_t>0x94D049BB133111EB
    return h ^ (h >> 31)


cdef inline int64_t table_lookup(int64_t key, const int64_t* tkeys,
                                 const int32_t* tvals, int64_t mask) nogil:
    cdef uint64_t h = mix_key(key) & <uint64_t>mask
    cdef int64_t probes = 0
    while probes <= mask:
        if tkeys[h] == key:
            return tvals[h]
        if tkeys[h] == -1:
            return -1
        h = (h + 1) & <uint64_t>mask
        probes += 1
    return -1


def hash_mix(key):
    """Python view of the table hash (used when building the table)."""
    return int(mix_key(<int64_t>key))


# -- voxel walking -------------------------------------------------------

cdef int walk_fill(double ox, double oy, double oz,
                   double ex, double ey, double ez,
                   double cell,
                   int64_t* gx, int64_t* gy, int64_t* gz,
                   double* t_entry, double* t_exit, int cap) nogil:
    """Amanatides-Woo walk; fills per-visit arrays, returns visit count.

    Ray parameters are normalized to [0, 1]; ties step x, then y, then z.
    """
    cdef double vx = ex - ox, vy = ey - oy, vz = ez - oz
    cdef int64_t cur[3]
    cdef int64_t last[3]
    cdef int64_t step[3]
    cdef double t_max[3]
    cdef double t_delta[3]
    cdef double o[3]
    cdef double v[3]
    cdef int a, n, axis
    cdef double t_prev, t_next
    cdef int64_t remaining

    o[0] = ox; o[1] = oy; o[2] = oz
    v[0] = vx; v[1] = vy; v[2] = vz
    cur[0] = <int64_t>floor(ox / cell)
    cur[1] = <int64_t>floor(oy / cell)
    cur[2] = <int64_t>floor(oz / cell)
    last[0] = <int64_t>floor(ex / cell)
    last[1] = <int64_t>floor(ey / cell)
    last[2] = <int64_t>floor(ez / cell)

    for a in range(3):
        step[a] = 0
        t_max[a] = INFINITY
        t_delta[a] = INFINITY
        if v[a] > 0:
            step[a] = 1
            t_max[a] = ((cur[a] + 1) * cell - o[a]) / v[a]
            t_delta[a] = cell / v[a]
        elif v[a] < 0:
            step[a] = -1
            t_max[a] = (cur[a] * cell - o[a]) / v[a]
            t_delta[a] = -cell / v[a]

    remaining = 0
    for a in range(3):
        remaining += last[a] - cur[a] if last[a] > cur[a] else cur[a] - last[a]

    n = 0
    t_prev = 0.0
    while True:
        if n >= cap:
            return -1
        if cur[0] == last[0] and cur[1] == last[1] and cur[2] == last[2]:
            gx[n] = cur[0]; gy[n] = cur[1]; gz[n] = cur[2]
            t_entry[n] = t_prev; t_exit[n] = 1.0
            return n + 1
        if remaining <= 0:
            # numerical fallback: jump to the end cell
            gx[n] = last[0]; gy[n] = last[1]; gz[n] = last[2]
            t_entry[n] = t_prev; t_exit[n] = 1.0
            return n + 1
        axis = 0
        if t_max[1] < t_max[axis]:
            axis = 1
        if t_max[2] < t_max[axis]:
            axis = 2
        t_next = t_max[axis]
        if t_next < t_prev:
            t_next = t_prev
        if t_next > 1.0:
            t_next = 1.0
        gx[n] = cur[0]; gy[n] = cur[1]; gz[n] = cur[2]
        t_entry[n] = t_prev; t_exit[n] = t_next
        cur[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        t_prev = t_next
        n += 1
        remaining -= 1


def walk_voxels_native(double ox, double oy, double oz,
                       double ex, double ey, double ez, double cell):
    """Python-visible wrapper of the native walk (for cross-checking)."""
    cdef int cap = 4096
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gx = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gy = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gz = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t0 = np.empty(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t1 = np.empty(cap, dtype=np.float64)
    cdef int n = walk_fill(ox, oy, oz, ex, ey, ez, cell,
                           &gx[0], &gy[0], &gz[0], &t0[0], &t1[0], cap)
    if n < 0:
        raise RuntimeError("walk overflow")
    coords = np.stack([gx[:n], gy[:n], gz[:n]], axis=1)
    return coords, np.asarray(t0[:n]).copy(), np.asarray(t1[:n]).copy()


# -- atomic voxel update primitives -------------------------------------

cdef inline int update_logodds_cas(uint32_t* cell, float delta, float cmin,
                                   float cmax, int retry_limit,
                                   Stats* stats) nogil:
    """Clamped log-odds accumulation via 32-bit CAS; returns final-bits index.

    On retry exhaustion the update is completed under a global mutex (the
    serialized fallback path) and counted as a cas failure; evidence is
    never dropped.
    """
    cdef uint32_t old, new
    cdef float l
    cdef int attempts = 0
    while True:
        old = vm_load32(cell)
        l = vm_b2f(old) + delta
        if l < cmin:
            l = cmin
        elif l > cmax:
            l = cmax
        new = vm_f2b(l)
        if vm_cas32(cell, old, new):
            return 0
        stats.cas_retries += 1
        attempts += 1
        if attempts >= retry_limit:
            stats.cas_failures += 1
            vm_fallback_lock()
            while True:
                old = vm_load32(cell)
                l = vm_b2f(old) + delta
                if l < cmin:
                    l = cmin
                elif l > cmax:
                    l = cmax
                if vm_cas32(cell, old, vm_f2b(l)):
                    break
                stats.cas_retries += 1
            vm_fallback_unlock()
            return 1


cdef inline void add_float_cas(uint32_t* cell, float delta, int retry_limit,
                               Stats* stats) nogil:
    cdef uint32_t old
    cdef int attempts = 0
    while True:
        old = vm_load32(cell)
        if vm_cas32(cell, old, vm_f2b(vm_b2f(old) + delta)):
            return
        stats.cas_retries += 1
        attempts += 1
        if attempts >= retry_limit:
            stats.cas_failures += 1
            vm_fallback_lock()
            while True:
                old = vm_load32(cell)
                if vm_cas32(cell, old, vm_f2b(vm_b2f(old) + delta)):
                    break
                stats.cas_retries += 1
            vm_fallback_unlock()
            return


cdef inline void add_double_cas(uint64_t* cell, double delta, int retry_limit,
                                Stats* stats) nogil:
    cdef uint64_t old
    cdef int attempts = 0
    while True:
        old = vm_load64(cell)
        if vm_cas64(cell, old, vm_d2b(vm_b2d(old) + delta)):
            return
        stats.cas_retries += 1
        attempts += 1
        if attempts >= retry_limit:
            stats.cas_failures += 1
            vm_fallback_lock()
            while True:
                old = vm_load64(cell)
                if vm_cas64(cell, old, vm_d2b(vm_b2d(old) + delta)):
                    break
                stats.cas_retries += 1
            vm_fallback_unlock()
            return


cdef inline void update_mean_cas(uint32_t* mean_cell, uint32_t* count_cell,
                                 double offx, double offy, double offz,
                                 int retry_limit, Stats* stats) nogil:
    """Packed 10-bit mean update: CAS-increment the count, then fold the
    sample into the packed word with the fetched ordinal."""
    cdef uint32_t n_old = vm_fetch_add32(count_cell, 1)
    cdef uint32_t old, qx, qy, qz
    cdef double mx, my, mz, w
    cdef int attempts = 0
    cdef int iq
    if n_old == <uint32_t>0xFFFFFFFF:
        # saturated: undo the wrap and freeze the mean
        vm_store32(count_cell, <uint32_t>0xFFFFFFFF)
        return
    w = 1.0 / (<double>n_old + 1.0)
    while True:
        old = vm_load32(mean_cell)
        if n_old == 0:
            mx = offx; my = offy; mz = offz
        else:
            mx = ((<double>(old & 1023)) + 0.5) / 1024.0
            my = ((<double>((old >> 10) & 1023)) + 0.5) / 1024.0
            mz = ((<double>((old >> 20) & 1023)) + 0.5) / 1024.0
            mx = mx + (offx - mx) * w
            my = my + (offy - my) * w
            mz = mz + (offz - mz) * w
        iq = <int>floor(mx * 1024.0)
        qx = <uint32_t>(0 if iq < 0 else (1023 if iq > 1023 else iq))
        iq = <int>floor(my * 1024.0)
        qy = <uint32_t>(0 if iq < 0 else (1023 if iq > 1023 else iq))
        iq = <int>floor(mz * 1024.0)
        qz = <uint32_t>(0 if iq < 0 else (1023 if iq > 1023 else iq))
        if vm_cas32(mean_cell, old, qx | (qy << 10) | (qz << 20)):
            return
        stats.cas_retries += 1
        attempts += 1
        if attempts >= retry_limit:
            stats.cas_failures += 1
            # mean is approximate under contention; last CAS value stands
            return


# -- integration kernels -------------------------------------------------

cdef inline int64_t region_slot_for(int64_t gx, int64_t gy, int64_t gz,
                                    int64_t dim, const int64_t* tkeys,
                                    const int32_t* tvals, int64_t mask,
                                    int64_t* local_out) nogil:
    cdef int64_t rx = floordiv(gx, dim)
    cdef int64_t ry = floordiv(gy, dim)
    cdef int64_t rz = floordiv(gz, dim)
    cdef int64_t lx = gx - rx * dim
    cdef int64_t ly = gy - ry * dim
    cdef int64_t lz = gz - rz * dim
    local_out[0] = lx + dim * (ly + dim * lz)
    return table_lookup(pack_region(rx, ry, rz), tkeys, tvals, mask)


def integrate_occupancy(double[:, ::1] origins, double[:, ::1] ends,
                        uint8_t[::1] has_sample,
                        int64_t[::1] tkeys, int32_t[::1] tvals,
                        cnp.intp_t[::1] occ_ptrs,
                        cnp.intp_t[::1] mean_ptrs,
                        cnp.intp_t[::1] count_ptrs,
                        cnp.intp_t[::1] dhit_ptrs,
                        cnp.intp_t[::1] ddist_ptrs,
                        double voxel_size, int64_t region_dim,
                        double hit_delta, double miss_delta,
                        double clamp_min, double clamp_max,
                        int retry_limit, int walk_cap):
    """Occupancy (+ mean, + decay when pointer tables are non-empty) over a
    chunk of ray segments.  Thread-safe; releases the GIL."""
    cdef Stats stats
    cdef int64_t mask = tkeys.shape[0] - 1
    cdef Py_ssize_t nrays = origins.shape[0]
    cdef int has_mean = mean_ptrs.shape[0] > 0
    cdef int has_decay = dhit_ptrs.shape[0] > 0
    cdef float fhit = <float>hit_delta
    cdef float fmiss = <float>miss_delta
    cdef float fcmin = <float>clamp_min
    cdef float fcmax = <float>clamp_max
    cdef int64_t* wgx
    cdef int64_t* wgy
    cdef int64_t* wgz
    cdef double* wt0
    cdef double* wt1
    cdef Py_ssize_t r
    cdef int n, i, sample_hit
    cdef int64_t slot, li
    cdef double ox, oy, oz, ex, ey, ez, length, offx, offy, offz
    cdef uint32_t* occ
    cdef uint32_t* meanb
    cdef uint32_t* countb
    cdef uint32_t* dhits
    cdef uint64_t* ddist64

    stats.cas_retries = 0
    stats.cas_failures = 0
    stats.region_misses = 0
    stats.visits = 0

    wgx = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wgy = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wgz = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wt0 = <double*>malloc(walk_cap * sizeof(double))
    wt1 = <double*>malloc(walk_cap * sizeof(double))
    if wgx == NULL or wgy == NULL or wgz == NULL or wt0 == NULL or wt1 == NULL:
        free(wgx); free(wgy); free(wgz); free(wt0); free(wt1)
        raise MemoryError()

    with nogil:
        for r in range(nrays):
            ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
            ex = ends[r, 0]; ey = ends[r, 1]; ez = ends[r, 2]
            length = sqrt((ex - ox) ** 2 + (ey - oy) ** 2 + (ez - oz) ** 2)
            n = walk_fill(ox, oy, oz, ex, ey, ez, voxel_size,
                          wgx, wgy, wgz, wt0, wt1, walk_cap)
            if n <= 0:
                continue
            stats.visits += n
            for i in range(n):
                slot = region_slot_for(wgx[i], wgy[i], wgz[i], region_dim,
                                       &tkeys[0], &tvals[0], mask, &li)
                if slot < 0:
                    stats.region_misses += 1
                    continue
                occ = <uint32_t*><void*>occ_ptrs[slot]
                sample_hit = has_sample[r] and i == n - 1
                if sample_hit:
                    update_logodds_cas(occ + li, fhit, fcmin, fcmax,
                                       retry_limit, &stats)
                    if has_mean:
                        meanb = <uint32_t*><void*>mean_ptrs[slot]
                        countb = <uint32_t*><void*>count_ptrs[slot]
                        offx = ex / voxel_size - <double>wgx[i]
                        offy = ey / voxel_size - <double>wgy[i]
                        offz = ez / voxel_size - <double>wgz[i]
                        update_mean_cas(meanb + li, countb + li,
                                        offx, offy, offz, retry_limit, &stats)
                else:
                    update_logodds_cas(occ + li, fmiss, fcmin, fcmax,
                                       retry_limit, &stats)
                if has_decay:
                    ddist64 = <uint64_t*><void*>ddist_ptrs[slot]
                    add_double_cas(ddist64 + li, (wt1[i] - wt0[i]) * length,
                                   retry_limit, &stats)
                    if sample_hit:
                        dhits = <uint32_t*><void*>dhit_ptrs[slot]
                        vm_fetch_add32(dhits + li, 1)

    free(wgx); free(wgy); free(wgz); free(wt0); free(wt1)
    return (stats.cas_retries, stats.cas_failures, stats.region_misses,
            stats.visits)


cdef inline double ndt_gaussian_weight(double mux, double muy, double muz,
                                       const float* cov_sqrt,
                                       double sigma2,
                                       double ox, double oy, double oz,
                                       double vx, double vy, double vz,
                                       double t0, double t1) nogil:
    """exp(-0.5 * mahalanobis^2) of the closest chord point to the voxel
    Gaussian, with covariance regularized by sigma2 * I."""
    cdef double s0 = cov_sqrt[0], s1 = cov_sqrt[1], s2 = cov_sqrt[2]
    cdef double s3 = cov_sqrt[3], s4 = cov_sqrt[4], s5 = cov_sqrt[5]
    # A = S S^T + sigma2 I (symmetric)
    cdef double a00 = s0 * s0 + sigma2
    cdef double a01 = s0 * s1
    cdef double a02 = s0 * s3
    cdef double a11 = s1 * s1 + s2 * s2 + sigma2
    cdef double a12 = s1 * s3 + s2 * s4
    cdef double a22 = s3 * s3 + s4 * s4 + s5 * s5 + sigma2
    # inverse via adjugate
    cdef double c00 = a11 * a22 - a12 * a12
    cdef double c01 = a02 * a12 - a01 * a22
    cdef double c02 = a01 * a12 - a02 * a11
    cdef double det = a00 * c00 + a01 * c01 + a02 * c02
    if det <= 0:
        return 1.0
    cdef double i00 = c00 / det
    cdef double i01 = c01 / det
    cdef double i02 = c02 / det
    cdef double i11 = (a00 * a22 - a02 * a02) / det
    cdef double i12 = (a02 * a01 - a00 * a12) / det
    cdef double i22 = (a00 * a11 - a01 * a01) / det
    # closest t on [t0, t1] of o + t v to mu in the A^-1 metric
    cdef double wx = mux - ox, wy = muy - oy, wz = muz - oz
    cdef double denom = (vx * (i00 * vx + i01 * vy + i02 * vz)
                         + vy * (i01 * vx + i11 * vy + i12 * vz)
                         + vz * (i02 * vx + i12 * vy + i22 * vz))
    cdef double t
    if denom <= 0:
        t = t0
    else:
        t = (vx * (i00 * wx + i01 * wy + i02 * wz)
             + vy * (i01 * wx + i11 * wy + i12 * wz)
             + vz * (i02 * wx + i12 * wy + i22 * wz)) / denom
        if t < t0:
            t = t0
        elif t > t1:
            t = t1
    cdef double dx = ox + t * vx - mux
    cdef double dy = oy + t * vy - muy
    cdef double dz = oz + t * vz - muz
    cdef double m2 = (dx * (i00 * dx + i01 * dy + i02 * dz)
                      + dy * (i01 * dx + i11 * dy + i12 * dz)
                      + dz * (i02 * dx + i12 * dy + i22 * dz))
    return exp(-0.5 * m2)


def integrate_ndt_phase1(double[:, ::1] origins, double[:, ::1] ends,
                         uint8_t[::1] has_sample,
                         int64_t[::1] tkeys, int32_t[::1] tvals,
                         cnp.intp_t[::1] occ_ptrs,
                         cnp.intp_t[::1] mean_ptrs,
                         cnp.intp_t[::1] count_ptrs,
                         cnp.intp_t[::1] cov_ptrs,
                         cnp.intp_t[::1] hit_ptrs,
                         cnp.intp_t[::1] miss_ptrs,
                         cnp.intp_t[::1] intens_ptrs,
                         double voxel_size, int64_t region_dim,
                         double miss_delta, double clamp_min, double clamp_max,
                         double sensor_noise, double reset_threshold,
                         double miss_check_threshold,
                         int retry_limit, int walk_cap):
    """NDT miss pass: likelihood-scaled miss updates plus voxel resets.

    Sample voxels of sample-carrying segments are skipped; they are
    handled exclusively in phase 2.  With hit/miss pointer tables present
    (NDT-TM) the miss counter is incremented when the ray interrogates the
    voxel's point mass (likelihood >= threshold, or no Gaussian yet)."""
    cdef Stats stats
    cdef int64_t mask = tkeys.shape[0] - 1
    cdef Py_ssize_t nrays = origins.shape[0]
    cdef int is_tm = hit_ptrs.shape[0] > 0
    cdef float fcmin = <float>clamp_min
    cdef float fcmax = <float>clamp_max
    cdef float fthresh = <float>reset_threshold
    cdef double sigma2 = sensor_noise * sensor_noise
    cdef int64_t* wgx
    cdef int64_t* wgy
    cdef int64_t* wgz
    cdef double* wt0
    cdef double* wt1
    cdef Py_ssize_t r
    cdef int n, i, j
    cdef int64_t slot, li
    cdef double ox, oy, oz, ex, ey, ez, vx, vy, vz
    cdef double g, mux, muy, muz
    cdef uint32_t nsamples, packed
    cdef float lnow
    cdef uint32_t* occ
    cdef uint32_t* meanb
    cdef uint32_t* countb
    cdef uint32_t* covb
    cdef uint32_t* hitb
    cdef uint32_t* missb
    cdef uint32_t* intensb
    cdef float cov6[6]

    stats.cas_retries = 0
    stats.cas_failures = 0
    stats.region_misses = 0
    stats.visits = 0

    wgx = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wgy = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wgz = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wt0 = <double*>malloc(walk_cap * sizeof(double))
    wt1 = <double*>malloc(walk_cap * sizeof(double))
    if wgx == NULL or wgy == NULL or wgz == NULL or wt0 == NULL or wt1 == NULL:
        free(wgx); free(wgy); free(wgz); free(wt0); free(wt1)
        raise MemoryError()

    with nogil:
        for r in range(nrays):
            ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
            ex = ends[r, 0]; ey = ends[r, 1]; ez = ends[r, 2]
            vx = ex - ox; vy = ey - oy; vz = ez - oz
            n = walk_fill(ox, oy, oz, ex, ey, ez, voxel_size,
                          wgx, wgy, wgz, wt0, wt1, walk_cap)
            if n <= 0:
                continue
            stats.visits += n
            for i in range(n):
                if has_sample[r] and i == n - 1:
                    continue  # sample voxel: hit handled in phase 2
                slot = region_slot_for(wgx[i], wgy[i], wgz[i], region_dim,
                                       &tkeys[0], &tvals[0], mask, &li)
                if slot < 0:
                    stats.region_misses += 1
                    continue
                occ = <uint32_t*><void*>occ_ptrs[slot]
                countb = <uint32_t*><void*>count_ptrs[slot]
                nsamples = vm_load32(countb + li)
                g = 1.0
                if nsamples >= 3:
                    meanb = <uint32_t*><void*>mean_ptrs[slot]
                    covb = <uint32_t*><void*>cov_ptrs[slot]
                    packed = vm_load32(meanb + li)
                    mux = (<double>wgx[i] + ((<double>(packed & 1023)) + 0.5) / 1024.0) * voxel_size
                    muy = (<double>wgy[i] + ((<double>((packed >> 10) & 1023)) + 0.5) / 1024.0) * voxel_size
                    muz = (<double>wgz[i] + ((<double>((packed >> 20) & 1023)) + 0.5) / 1024.0) * voxel_size
                    for j in range(6):
                        cov6[j] = vm_b2f(vm_load32(covb + li * 6 + j))
                    g = ndt_gaussian_weight(mux, muy, muz, cov6, sigma2,
                                            ox, oy, oz, vx, vy, vz,
                                            wt0[i], wt1[i])
                update_logodds_cas(occ + li, <float>(g * miss_delta),
                                   fcmin, fcmax, retry_limit, &stats)
                if is_tm and (nsamples < 3 or g >= miss_check_threshold):
                    missb = <uint32_t*><void*>miss_ptrs[slot]
                    vm_fetch_add32(missb + li, 1)
                # transient-object reset: clear sample data when occupancy
                # drops below the threshold
                lnow = vm_b2f(vm_load32(occ + li))
                if lnow < fthresh and vm_load32(countb + li) > 0:
                    meanb = <uint32_t*><void*>mean_ptrs[slot]
                    covb = <uint32_t*><void*>cov_ptrs[slot]
                    vm_store32(countb + li, 0)
                    vm_store32(meanb + li, 0)
                    for j in range(6):
                        vm_store32(covb + li * 6 + j, 0)
                    if is_tm:
                        hitb = <uint32_t*><void*>hit_ptrs[slot]
                        missb = <uint32_t*><void*>miss_ptrs[slot]
                        intensb = <uint32_t*><void*>intens_ptrs[slot]
                        vm_store32(hitb + li, 0)
                        vm_store32(missb + li, 0)
                        vm_store32(intensb + li * 2, 0)
                        vm_store32(intensb + li * 2 + 1, 0)

    free(wgx); free(wgy); free(wgz); free(wt0); free(wt1)
    return (stats.cas_retries, stats.cas_failures, stats.region_misses,
            stats.visits)


def integrate_tsdf(double[:, ::1] origins, double[:, ::1] ends,
                   uint8_t[::1] has_sample,
                   int64_t[::1] tkeys, int32_t[::1] tvals,
                   cnp.intp_t[::1] tsdf_ptrs,
                   double voxel_size, int64_t region_dim,
                   double truncation, double max_weight,
                   int retry_limit, int walk_cap):
    """Projective TSDF pass: updates voxels within the truncation band
    around each sample, merging (distance, weight) with one 64-bit CAS."""
    cdef Stats stats
    cdef int64_t mask = tkeys.shape[0] - 1
    cdef Py_ssize_t nrays = origins.shape[0]
    cdef int64_t* wgx
    cdef int64_t* wgy
    cdef int64_t* wgz
    cdef double* wt0
    cdef double* wt1
    cdef Py_ssize_t r
    cdef int n, i, attempts
    cdef int64_t slot, li
    cdef double ox, oy, oz, ex, ey, ez, dx, dy, dz, length
    cdef double t_start, t_end, sx, sy, sz, bx, by, bz
    cdef double cxw, cyw, czw, proj, dv
    cdef uint64_t old, new
    cdef float fd, fw, nd, nw
    cdef uint64_t* cell
    cdef uint32_t* base

    stats.cas_retries = 0
    stats.cas_failures = 0
    stats.region_misses = 0
    stats.visits = 0

    wgx = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wgy = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wgz = <int64_t*>malloc(walk_cap * sizeof(int64_t))
    wt0 = <double*>malloc(walk_cap * sizeof(double))
    wt1 = <double*>malloc(walk_cap * sizeof(double))
    if wgx == NULL or wgy == NULL or wgz == NULL or wt0 == NULL or wt1 == NULL:
        free(wgx); free(wgy); free(wgz); free(wt0); free(wt1)
        raise MemoryError()

    with nogil:
        for r in range(nrays):
            if not has_sample[r]:
                continue
            ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
            ex = ends[r, 0]; ey = ends[r, 1]; ez = ends[r, 2]
            dx = ex - ox; dy = ey - oy; dz = ez - oz
            length = sqrt(dx * dx + dy * dy + dz * dz)
            if length == 0.0:
                continue
            dx /= length; dy /= length; dz /= length
            t_start = fmax(0.0, length - truncation)
            t_end = length + truncation
            sx = ox + dx * t_start; sy = oy + dy * t_start; sz = oz + dz * t_start
            bx = ox + dx * t_end; by = oy + dy * t_end; bz = oz + dz * t_end
            n = walk_fill(sx, sy, sz, bx, by, bz, voxel_size,
                          wgx, wgy, wgz, wt0, wt1, walk_cap)
            if n <= 0:
                continue
            stats.visits += n
            for i in range(n):
                slot = region_slot_for(wgx[i], wgy[i], wgz[i], region_dim,
                                       &tkeys[0], &tvals[0], mask, &li)
                if slot < 0:
                    stats.region_misses += 1
                    continue
                cxw = (<double>wgx[i] + 0.5) * voxel_size
                cyw = (<double>wgy[i] + 0.5) * voxel_size
                czw = (<double>wgz[i] + 0.5) * voxel_size
                proj = (cxw - ox) * dx + (cyw - oy) * dy + (czw - oz) * dz
                dv = length - proj
                if dv > truncation:
                    dv = truncation
                elif dv < -truncation:
                    dv = -truncation
                base = <uint32_t*><void*>tsdf_ptrs[slot]
                cell = <uint64_t*>(base + li * 2)
                attempts = 0
                while True:
                    old = vm_load64(cell)
                    vm_unpack2f(old, &fd, &fw)
                    nd = <float>((fw * fd + dv) / (fw + 1.0))
                    nw = <float>fmin(fw + 1.0, max_weight)
                    new = vm_pack2f(nd, nw)
                    if vm_cas64(cell, old, new):
                        break
                    stats.cas_retries += 1
                    attempts += 1
                    if attempts >= retry_limit:
                        stats.cas_failures += 1
                        vm_fallback_lock()
                        while True:
                            old = vm_load64(cell)
                            vm_unpack2f(old, &fd, &fw)
                            nd = <float>((fw * fd + dv) / (fw + 1.0))
                            nw = <float>fmin(fw + 1.0, max_weight)
                            if vm_cas64(cell, old, vm_pack2f(nd, nw)):
                                break
                            stats.cas_retries += 1
                        vm_fallback_unlock()
                        break

    free(wgx); free(wgy); free(wgz); free(wt0); free(wt1)
    return (stats.cas_retries, stats.cas_failures, stats.region_misses,
            stats.visits)
