# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels (tree-indexed process and auxiliary spine).

Mirrors ``_pycore`` operation by operation, so both backends produce the same
numbers for the same keys.
"""

from libc.math cimport log, sqrt, cos, exp, expm1, isfinite, INFINITY
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy
from libc.stdint cimport uint64_t, int64_t, int32_t
from scipy.special.cython_special cimport betaincinv

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef uint64_t PURPOSE_MUL = 0xD6E8FEB86659FD93ULL
cdef uint64_t CHILD_C = 0x632BE59BD9B4E019ULL
cdef uint64_t THETA_C = 0xA0761D6478BD642FULL
cdef double SCALE = 2.220446049250313e-16  # 2**-52
cdef double TWO_PI = 6.283185307179586

cdef enum:
    LIFE = 1
    NU = 2
    MOTION = 3
    JUMP = 4
    JUMPMAP = 5
    BRIDGE = 6
    KERNEL = 7
    THETA_EXTRA = 9
    SP_WAIT = 11
    SP_H = 12
    SP_I = 13
    SP_THETA = 14

cdef enum:
    ERR_NONFINITE = 1
    ERR_ARITY = 2
    ERR_MEMORY = 3

cdef enum:
    JUMP_NONE = 0
    JUMP_ATOMS = 1
    JUMP_AGING = 2

cdef enum:
    KER_IDENTITY = 0
    KER_EQUAL = 1
    KER_UNIFORM = 2
    KER_BETA = 3
    KER_ADDITIVE = 4
    KER_AGING = 5


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline uint64_t sbase(uint64_t key, uint64_t purpose) noexcept nogil:
    return mix64(key ^ (purpose * PURPOSE_MUL))


cdef inline double unif(uint64_t base, uint64_t i) noexcept nogil:
    cdef uint64_t v = mix64(base + (i + 1) * GOLDEN) >> 12
    return (<double>v + 0.5) * SCALE


cdef inline double normal(uint64_t base, uint64_t i) noexcept nogil:
    cdef double u1 = unif(base, 2 * i)
    cdef double u2 = unif(base, 2 * i + 1)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef inline uint64_t child_key(uint64_t key, uint64_t j) noexcept nogil:
    return mix64(key ^ mix64(j * GOLDEN + CHILD_C))


cdef inline uint64_t theta_key(double theta) noexcept nogil:
    cdef uint64_t bits
    memcpy(&bits, &theta, 8)
    return mix64(bits ^ THETA_C)


cdef struct Model:
    double rate
    double m
    const int64_t* off_k
    const double* off_cum
    Py_ssize_t n_off
    const int64_t* sb_k
    const double* sb_cum
    Py_ssize_t n_sb
    const double* lin
    int jump_kind
    double jump_rate
    const double* atoms_val
    const double* atoms_cum
    Py_ssize_t n_atoms
    const double* aging
    int ker_kind
    const double* ker_p
    const int64_t* add_off
    Py_ssize_t n_add_off
    const double* add_val


cdef inline Py_ssize_t search(const double* cum, Py_ssize_t n, double u) noexcept nogil:
    # first index with cum[i] > u (bisect_right), clipped to n-1
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    if lo > n - 1:
        lo = n - 1
    return lo


cdef inline Py_ssize_t bisect_left(const double* a, Py_ssize_t n, double x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t bisect_right(const double* a, Py_ssize_t n, double x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x < a[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline double transition(double b0, double b1, double sig, double x, double dt, double z) noexcept nogil:
    cdef double m, v
    if b1 == 0.0:
        m = x + b0 * dt
        v = sig * sig * dt
    else:
        m = x * exp(b1 * dt) + b0 * expm1(b1 * dt) / b1
        v = sig * sig * expm1(2.0 * b1 * dt) / (2.0 * b1)
    if v > 0.0:
        return m + sqrt(v) * z
    return m


cdef inline double bridge(double b0, double b1, double sig, double tl, double xl,
                          double tr, double xr, double s, double z) noexcept nogil:
    cdef double d1 = s - tl
    cdef double d2 = tr - s
    cdef double m1, v1, a, c, w, prec, mean
    if b1 == 0.0:
        m1 = xl + b0 * d1
        v1 = sig * sig * d1
        a = 1.0
        c = b0 * d2
        w = sig * sig * d2
    else:
        m1 = xl * exp(b1 * d1) + b0 * expm1(b1 * d1) / b1
        v1 = sig * sig * expm1(2.0 * b1 * d1) / (2.0 * b1)
        a = exp(b1 * d2)
        c = b0 * expm1(b1 * d2) / b1
        w = sig * sig * expm1(2.0 * b1 * d2) / (2.0 * b1)
    if not v1 > 0.0:
        return m1
    if not w > 0.0:
        return xr
    prec = 1.0 / v1 + a * a / w
    mean = (m1 / v1 + a * (xr - c) / w) / prec
    return mean + z / sqrt(prec)


cdef int kernel_children(Model* M, double x, int ty, int64_t k, double theta,
                         double* cx, int* cty) noexcept nogil:
    cdef int64_t j, lo
    cdef double q, c0, z0, z1
    cdef uint64_t tb
    cdef int kind = M.ker_kind
    if k == 0:
        return 0
    if kind == KER_IDENTITY:
        for j in range(k):
            cx[j] = x
            cty[j] = ty
        return 0
    if kind == KER_EQUAL:
        for j in range(k):
            cx[j] = x / k
            cty[j] = ty
        return 0
    if kind == KER_UNIFORM or kind == KER_BETA:
        if k != 2:
            return ERR_ARITY
        if kind == KER_UNIFORM:
            q = theta
        else:
            q = betaincinv(M.ker_p[0], M.ker_p[1], theta)
        c0 = q * x
        cx[0] = c0
        cx[1] = x - c0
        cty[0] = ty
        cty[1] = ty
        return 0
    if kind == KER_ADDITIVE:
        if k + 1 >= M.n_add_off or M.add_off[k + 1] - M.add_off[k] != k:
            return ERR_ARITY
        lo = M.add_off[k]
        for j in range(k):
            cx[j] = x + M.add_val[lo + j]
            cty[j] = ty
        return 0
    if kind == KER_AGING:
        if k != 2:
            return ERR_ARITY
        tb = sbase(theta_key(theta), THETA_EXTRA)
        z0 = normal(tb, 0)
        z1 = normal(tb, 1)
        cx[0] = M.ker_p[0] * x + M.ker_p[1] + M.ker_p[2] * z0
        cty[0] = 0
        cx[1] = M.ker_p[3] * x + M.ker_p[4] + M.ker_p[5] * z1
        cty[1] = 1
        return 0
    return ERR_ARITY


cdef inline void jump_map(Model* M, uint64_t base_map, Py_ssize_t p, double x, int ty,
                          double* xo, int* tyo) noexcept nogil:
    cdef double u, theta, z0, z1, th2, sig, rho
    cdef uint64_t tb
    if M.jump_kind == JUMP_ATOMS:
        u = unif(base_map, p)
        xo[0] = x + M.atoms_val[search(M.atoms_cum, M.n_atoms, u)]
        tyo[0] = ty
        return
    theta = unif(base_map, p)
    tb = sbase(theta_key(theta), THETA_EXTRA)
    z0 = normal(tb, 0)
    z1 = normal(tb, 1)
    th2 = unif(tb, 4)
    sig = M.aging[5]
    rho = M.aging[6]
    if th2 <= M.aging[0]:
        xo[0] = M.aging[1] * x + M.aging[2] + sig * z0
        tyo[0] = 0
    else:
        xo[0] = M.aging[3] * x + M.aging[4] + sig * (rho * z0 + sqrt(1.0 - rho * rho) * z1)
        tyo[0] = 1


cdef struct Work:
    double* starts
    double* ps_x
    double* pe_x
    int* pty
    Py_ssize_t cap
    # per-segment observation output
    Py_ssize_t* rec_idx
    double* rec_x
    int* rec_ty
    Py_ssize_t rec_cap


cdef int work_init(Work* W, Py_ssize_t n_obs) noexcept nogil:
    W.cap = 64
    W.starts = <double*>malloc(W.cap * sizeof(double))
    W.ps_x = <double*>malloc(W.cap * sizeof(double))
    W.pe_x = <double*>malloc(W.cap * sizeof(double))
    W.pty = <int*>malloc(W.cap * sizeof(int))
    W.rec_cap = n_obs + 1
    W.rec_idx = <Py_ssize_t*>malloc(W.rec_cap * sizeof(Py_ssize_t))
    W.rec_x = <double*>malloc(W.rec_cap * sizeof(double))
    W.rec_ty = <int*>malloc(W.rec_cap * sizeof(int))
    if not (W.starts and W.ps_x and W.pe_x and W.pty and W.rec_idx and W.rec_x and W.rec_ty):
        return ERR_MEMORY
    return 0


cdef void work_free(Work* W) noexcept nogil:
    free(W.starts)
    free(W.ps_x)
    free(W.pe_x)
    free(W.pty)
    free(W.rec_idx)
    free(W.rec_x)
    free(W.rec_ty)


cdef int work_grow(Work* W) noexcept nogil:
    cdef Py_ssize_t cap = W.cap * 2
    cdef double* a = <double*>realloc(W.starts, cap * sizeof(double))
    if a == NULL:
        return ERR_MEMORY
    W.starts = a
    a = <double*>realloc(W.ps_x, cap * sizeof(double))
    if a == NULL:
        return ERR_MEMORY
    W.ps_x = a
    a = <double*>realloc(W.pe_x, cap * sizeof(double))
    if a == NULL:
        return ERR_MEMORY
    W.pe_x = a
    cdef int* b = <int*>realloc(W.pty, cap * sizeof(int))
    if b == NULL:
        return ERR_MEMORY
    W.pty = b
    W.cap = cap
    return 0


cdef int segment(Model* M, Work* W, uint64_t key, double x, int ty, double t0, double t1,
                 const double* obs, Py_ssize_t lo, Py_ssize_t hi,
                 double* x_end, int* ty_end, Py_ssize_t* n_rec) noexcept nogil:
    cdef Py_ssize_t n_p = 1, i, p, oi, k
    cdef double tt, ts, te, sig, z, xe, xs, s, tl, xl, tr, xo
    cdef uint64_t bj, bm, bmap, bb
    cdef int t_, err
    cdef bint moved
    W.starts[0] = t0
    if M.jump_kind != JUMP_NONE and M.jump_rate > 0.0:
        bj = sbase(key, JUMP)
        tt = t0
        i = 0
        while True:
            tt += -log(unif(bj, i)) / M.jump_rate
            i += 1
            if tt >= t1:
                break
            if n_p >= W.cap:
                err = work_grow(W)
                if err:
                    return err
            W.starts[n_p] = tt
            n_p += 1
    bm = sbase(key, MOTION)
    bmap = sbase(key, JUMPMAP)
    xs = x
    for p in range(n_p):
        ts = W.starts[p]
        te = W.starts[p + 1] if p + 1 < n_p else t1
        W.ps_x[p] = xs
        W.pty[p] = ty
        sig = M.lin[3 * ty + 2]
        z = normal(bm, p) if sig != 0.0 else 0.0
        xe = transition(M.lin[3 * ty], M.lin[3 * ty + 1], sig, xs, te - ts, z)
        if not isfinite(xe):
            return ERR_NONFINITE
        W.pe_x[p] = xe
        if p + 1 < n_p:
            jump_map(M, bmap, p, xe, ty, &xs, &ty)
            if not isfinite(xs):
                return ERR_NONFINITE
    x_end[0] = W.pe_x[n_p - 1]
    ty_end[0] = W.pty[n_p - 1]
    n_rec[0] = 0
    if hi > lo:
        bb = sbase(key, BRIDGE)
        p = 0
        tl = W.starts[0]
        xl = W.ps_x[0]
        k = 0
        for oi in range(lo, hi):
            s = obs[oi]
            if s >= t1:
                W.rec_idx[n_rec[0]] = oi
                W.rec_x[n_rec[0]] = x_end[0]
                W.rec_ty[n_rec[0]] = ty_end[0]
                n_rec[0] += 1
                continue
            moved = False
            while p + 1 < n_p and W.starts[p + 1] <= s:
                p += 1
                moved = True
            if moved:
                tl = W.starts[p]
                xl = W.ps_x[p]
            tr = W.starts[p + 1] if p + 1 < n_p else t1
            t_ = W.pty[p]
            sig = M.lin[3 * t_ + 2]
            z = normal(bb, k) if sig != 0.0 else 0.0
            k += 1
            xo = bridge(M.lin[3 * t_], M.lin[3 * t_ + 1], sig, tl, xl, tr, W.pe_x[p], s, z)
            W.rec_idx[n_rec[0]] = oi
            W.rec_x[n_rec[0]] = xo
            W.rec_ty[n_rec[0]] = t_
            n_rec[0] += 1
            tl = s
            xl = xo
    return 0


# ---------------------------------------------------------------- buffers

cdef struct NodeBuf:
    int64_t* parent
    int32_t* child
    int32_t* gen
    double* birth
    double* death
    int32_t* nu
    double* x_birth
    double* x_end
    int32_t* ty_birth
    int32_t* ty_end
    double* mark
    uint64_t* key
    Py_ssize_t n
    Py_ssize_t cap


cdef struct ObsBuf:
    int64_t* node
    int32_t* idx
    double* x
    int32_t* ty
    Py_ssize_t n
    Py_ssize_t cap


cdef struct Heap:
    double* t
    int64_t* idx
    Py_ssize_t n
    Py_ssize_t cap


cdef void* grow(void* p, Py_ssize_t cap, size_t size) noexcept nogil:
    return realloc(p, cap * size)


cdef int nodebuf_reserve(NodeBuf* B, Py_ssize_t need) noexcept nogil:
    cdef Py_ssize_t cap
    if need <= B.cap:
        return 0
    cap = B.cap * 2 if B.cap > 0 else 1024
    while cap < need:
        cap *= 2
    B.parent = <int64_t*>grow(B.parent, cap, sizeof(int64_t))
    B.child = <int32_t*>grow(B.child, cap, sizeof(int32_t))
    B.gen = <int32_t*>grow(B.gen, cap, sizeof(int32_t))
    B.birth = <double*>grow(B.birth, cap, sizeof(double))
    B.death = <double*>grow(B.death, cap, sizeof(double))
    B.nu = <int32_t*>grow(B.nu, cap, sizeof(int32_t))
    B.x_birth = <double*>grow(B.x_birth, cap, sizeof(double))
    B.x_end = <double*>grow(B.x_end, cap, sizeof(double))
    B.ty_birth = <int32_t*>grow(B.ty_birth, cap, sizeof(int32_t))
    B.ty_end = <int32_t*>grow(B.ty_end, cap, sizeof(int32_t))
    B.mark = <double*>grow(B.mark, cap, sizeof(double))
    B.key = <uint64_t*>grow(B.key, cap, sizeof(uint64_t))
    if not (B.parent and B.child and B.gen and B.birth and B.death and B.nu and B.x_birth
            and B.x_end and B.ty_birth and B.ty_end and B.mark and B.key):
        return ERR_MEMORY
    B.cap = cap
    return 0


cdef void nodebuf_free(NodeBuf* B) noexcept nogil:
    free(B.parent); free(B.child); free(B.gen); free(B.birth); free(B.death); free(B.nu)
    free(B.x_birth); free(B.x_end); free(B.ty_birth); free(B.ty_end); free(B.mark); free(B.key)


cdef int obsbuf_reserve(ObsBuf* B, Py_ssize_t need) noexcept nogil:
    cdef Py_ssize_t cap
    if need <= B.cap:
        return 0
    cap = B.cap * 2 if B.cap > 0 else 1024
    while cap < need:
        cap *= 2
    B.node = <int64_t*>grow(B.node, cap, sizeof(int64_t))
    B.idx = <int32_t*>grow(B.idx, cap, sizeof(int32_t))
    B.x = <double*>grow(B.x, cap, sizeof(double))
    B.ty = <int32_t*>grow(B.ty, cap, sizeof(int32_t))
    if not (B.node and B.idx and B.x and B.ty):
        return ERR_MEMORY
    B.cap = cap
    return 0


cdef int heap_push(Heap* H, double t, int64_t idx) noexcept nogil:
    cdef Py_ssize_t i, parent
    cdef Py_ssize_t cap
    if H.n >= H.cap:
        cap = H.cap * 2 if H.cap > 0 else 1024
        H.t = <double*>grow(H.t, cap, sizeof(double))
        H.idx = <int64_t*>grow(H.idx, cap, sizeof(int64_t))
        if not (H.t and H.idx):
            return ERR_MEMORY
        H.cap = cap
    i = H.n
    H.n += 1
    while i > 0:
        parent = (i - 1) >> 1
        if H.t[parent] < t or (H.t[parent] == t and H.idx[parent] < idx):
            break
        H.t[i] = H.t[parent]
        H.idx[i] = H.idx[parent]
        i = parent
    H.t[i] = t
    H.idx[i] = idx
    return 0


cdef int64_t heap_pop(Heap* H) noexcept nogil:
    cdef int64_t top = H.idx[0]
    cdef double t
    cdef int64_t idx
    cdef Py_ssize_t i = 0, c, n
    H.n -= 1
    n = H.n
    if n == 0:
        return top
    t = H.t[n]
    idx = H.idx[n]
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and (H.t[c + 1] < H.t[c] or (H.t[c + 1] == H.t[c] and H.idx[c + 1] < H.idx[c])):
            c += 1
        if t < H.t[c] or (t == H.t[c] and idx < H.idx[c]):
            break
        H.t[i] = H.t[c]
        H.idx[i] = H.idx[c]
        i = c
    H.t[i] = t
    H.idx[i] = idx
    return top


cdef int create_node(Model* M, Work* W, NodeBuf* B, ObsBuf* O, Heap* H,
                     uint64_t key, int64_t parent, int32_t j, int32_t gen, double birth,
                     double x, int ty, double mark, double horizon,
                     const double* obs, Py_ssize_t n_obs) noexcept nogil:
    cdef double life = -log(unif(sbase(key, LIFE), 0)) / M.rate
    cdef double death = birth + life
    cdef int64_t nu = M.off_k[search(M.off_cum, M.n_off, unif(sbase(key, NU), 0))]
    cdef bint alive_at_end = not death < horizon
    cdef double t_end = horizon if alive_at_end else death
    cdef Py_ssize_t lo = bisect_left(obs, n_obs, birth)
    cdef Py_ssize_t hi = bisect_right(obs, n_obs, t_end) if alive_at_end else bisect_left(obs, n_obs, t_end)
    cdef double xe
    cdef int tye, err
    cdef Py_ssize_t n_rec, r, idx
    err = segment(M, W, key, x, ty, birth, t_end, obs, lo, hi, &xe, &tye, &n_rec)
    if err:
        return err
    err = nodebuf_reserve(B, B.n + 1)
    if err:
        return err
    idx = B.n
    B.parent[idx] = parent
    B.child[idx] = j
    B.gen[idx] = gen
    B.birth[idx] = birth
    B.death[idx] = death
    B.nu[idx] = <int32_t>nu
    B.x_birth[idx] = x
    B.x_end[idx] = xe
    B.ty_birth[idx] = ty
    B.ty_end[idx] = tye
    B.mark[idx] = mark
    B.key[idx] = key
    B.n += 1
    if n_rec > 0:
        err = obsbuf_reserve(O, O.n + n_rec)
        if err:
            return err
        for r in range(n_rec):
            O.node[O.n] = idx
            O.idx[O.n] = <int32_t>W.rec_idx[r]
            O.x[O.n] = W.rec_x[r]
            O.ty[O.n] = W.rec_ty[r]
            O.n += 1
    if not alive_at_end:
        return heap_push(H, death, idx)
    return 0


cdef int fill_model(Model* M, enc, tuple arrs) except -1:
    # the caller keeps ``arrs`` alive for as long as M is used
    cdef const int64_t[::1] off_k = arrs[0]
    cdef const double[::1] off_cum = arrs[1]
    cdef const int64_t[::1] sb_k = arrs[2]
    cdef const double[::1] sb_cum = arrs[3]
    cdef const double[::1] lin = arrs[4]
    cdef const double[::1] atoms_val = arrs[5]
    cdef const double[::1] atoms_cum = arrs[6]
    cdef const double[::1] aging = arrs[7]
    cdef const double[::1] ker_p = arrs[8]
    cdef const int64_t[::1] add_off = arrs[9]
    cdef const double[::1] add_val = arrs[10]
    M.rate = enc.rate
    M.m = enc.m
    M.off_k = &off_k[0]
    M.off_cum = &off_cum[0]
    M.n_off = off_k.shape[0]
    M.sb_k = &sb_k[0] if sb_k.shape[0] > 0 else NULL
    M.sb_cum = &sb_cum[0] if sb_cum.shape[0] > 0 else NULL
    M.n_sb = sb_k.shape[0]
    M.lin = &lin[0]
    M.jump_kind = enc.jump_kind
    M.jump_rate = enc.jump_rate
    M.atoms_val = &atoms_val[0]
    M.atoms_cum = &atoms_cum[0]
    M.n_atoms = atoms_val.shape[0]
    M.aging = &aging[0]
    M.ker_kind = enc.ker_kind
    M.ker_p = &ker_p[0]
    M.add_off = &add_off[0]
    M.n_add_off = add_off.shape[0]
    M.add_val = &add_val[0]
    return 0


def _arrays(enc):
    return (
        np.ascontiguousarray(enc.off_k, dtype=np.int64),
        np.ascontiguousarray(enc.off_cum, dtype=np.float64),
        np.ascontiguousarray(enc.sb_k, dtype=np.int64),
        np.ascontiguousarray(enc.sb_cum, dtype=np.float64),
        np.ascontiguousarray(enc.lin, dtype=np.float64).ravel(),
        np.ascontiguousarray(enc.atoms_val, dtype=np.float64),
        np.ascontiguousarray(enc.atoms_cum, dtype=np.float64),
        np.ascontiguousarray(enc.aging_jump, dtype=np.float64),
        np.ascontiguousarray(enc.ker_p, dtype=np.float64),
        np.ascontiguousarray(enc.add_off, dtype=np.int64),
        np.ascontiguousarray(enc.add_val, dtype=np.float64),
    )


class CoreError(Exception):
    def __init__(self, code, index):
        super().__init__(code, index)
        self.code = code
        self.index = index


cdef object _copy(void* src, Py_ssize_t n, object dtype):
    arr = np.empty(n, dtype=dtype)
    cdef cnp.ndarray a = arr
    if n > 0:
        memcpy(cnp.PyArray_DATA(a), src, n * a.itemsize)
    return arr


def simulate_trees(enc, root_keys, x0, ty0, double horizon, obs, Py_ssize_t max_nodes):
    arrs = _arrays(enc)
    cdef Model M
    fill_model(&M, enc, arrs)
    cdef const uint64_t[::1] keys = np.ascontiguousarray(root_keys, dtype=np.uint64)
    cdef const double[::1] xs0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const int32_t[::1] tys0 = np.ascontiguousarray(ty0, dtype=np.int32)
    obs_arr = np.ascontiguousarray(obs, dtype=np.float64)
    if obs_arr.shape[0] == 0:
        obs_arr = np.zeros(1)
        n_obs_py = 0
    else:
        n_obs_py = obs_arr.shape[0]
    cdef const double[::1] obs_v = obs_arr
    cdef Py_ssize_t n_obs = n_obs_py
    cdef Py_ssize_t n_rep = keys.shape[0]
    offsets = np.zeros(n_rep + 1, dtype=np.int64)
    truncated = np.zeros(n_rep, dtype=np.uint8)
    cdef int64_t[::1] off_v = offsets
    cdef unsigned char[::1] trunc_v = truncated
    cdef NodeBuf B
    cdef ObsBuf O
    cdef Heap H
    cdef Work W
    B.n = 0; B.cap = 0
    B.parent = NULL; B.child = NULL; B.gen = NULL; B.birth = NULL; B.death = NULL; B.nu = NULL
    B.x_birth = NULL; B.x_end = NULL; B.ty_birth = NULL; B.ty_end = NULL; B.mark = NULL; B.key = NULL
    O.n = 0; O.cap = 0; O.node = NULL; O.idx = NULL; O.x = NULL; O.ty = NULL
    H.n = 0; H.cap = 0; H.t = NULL; H.idx = NULL
    cdef int err = 0
    cdef Py_ssize_t rep = 0, base_idx, j, cnt
    cdef int64_t u, nu
    cdef double theta, mark
    cdef uint64_t key_u
    cdef double* cx = NULL
    cdef int* cty = NULL
    cdef Py_ssize_t ccap = 0
    with nogil:
        err = work_init(&W, n_obs)
        if not err:
            for rep in range(n_rep):
                base_idx = B.n
                H.n = 0
                err = create_node(&M, &W, &B, &O, &H, keys[rep], -1, 0, 0, 0.0,
                                  xs0[rep], tys0[rep], 0.0, horizon, &obs_v[0], n_obs)
                while not err and H.n > 0:
                    u = heap_pop(&H)
                    nu = B.nu[u]
                    if nu == 0:
                        continue
                    if nu > ccap:
                        ccap = nu * 2
                        cx = <double*>realloc(cx, ccap * sizeof(double))
                        cty = <int*>realloc(cty, ccap * sizeof(int))
                        if cx == NULL or cty == NULL:
                            err = ERR_MEMORY
                            break
                    key_u = B.key[u]
                    theta = unif(sbase(key_u, KERNEL), 0)
                    err = kernel_children(&M, B.x_end[u], B.ty_end[u], nu, theta, cx, cty)
                    if err:
                        break
                    if B.n - base_idx + nu > max_nodes:
                        trunc_v[rep] = 1
                        break
                    mark = B.mark[u] + log(<double>nu)
                    for j in range(nu):
                        if not isfinite(cx[j]):
                            err = ERR_NONFINITE
                            break
                        err = create_node(&M, &W, &B, &O, &H, child_key(key_u, j + 1), u,
                                          <int32_t>(j + 1), B.gen[u] + 1, B.death[u], cx[j], cty[j],
                                          mark, horizon, &obs_v[0], n_obs)
                        if err:
                            break
                if err:
                    break
                off_v[rep + 1] = B.n
        work_free(&W)
        free(cx)
        free(cty)
        free(H.t)
        free(H.idx)
    if err:
        nodebuf_free(&B)
        free(O.node); free(O.idx); free(O.x); free(O.ty)
        if err == ERR_MEMORY:
            raise MemoryError("tree simulation ran out of memory")
        raise CoreError(err, rep)
    cdef Py_ssize_t n = B.n
    cdef Py_ssize_t no = O.n
    out = {
        "offsets": offsets,
        "parent": _copy(B.parent, n, np.int64),
        "child": _copy(B.child, n, np.int32),
        "gen": _copy(B.gen, n, np.int32),
        "birth": _copy(B.birth, n, np.float64),
        "death": _copy(B.death, n, np.float64),
        "nu": _copy(B.nu, n, np.int32),
        "x_birth": _copy(B.x_birth, n, np.float64),
        "x_end": _copy(B.x_end, n, np.float64),
        "ty_birth": _copy(B.ty_birth, n, np.int32),
        "ty_end": _copy(B.ty_end, n, np.int32),
        "mark": _copy(B.mark, n, np.float64),
        "key": _copy(B.key, n, np.uint64),
        "truncated": truncated.astype(bool),
        "obs_node": _copy(O.node, no, np.int64),
        "obs_idx": _copy(O.idx, no, np.int32),
        "obs_x": _copy(O.x, no, np.float64),
        "obs_ty": _copy(O.ty, no, np.int32),
    }
    nodebuf_free(&B)
    free(O.node); free(O.idx); free(O.x); free(O.ty)
    return out


def simulate_spines(enc, keys_in, x0, ty0, durations, obs, bint record_jumps, bint branching=True):
    arrs = _arrays(enc)
    cdef Model M
    fill_model(&M, enc, arrs)
    cdef const uint64_t[::1] keys = np.ascontiguousarray(keys_in, dtype=np.uint64)
    cdef const double[::1] xs0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const int32_t[::1] tys0 = np.ascontiguousarray(ty0, dtype=np.int32)
    cdef const double[::1] dur = np.ascontiguousarray(durations, dtype=np.float64)
    obs_arr = np.ascontiguousarray(obs, dtype=np.float64)
    n_obs_py = obs_arr.shape[0]
    if n_obs_py == 0:
        obs_arr = np.zeros(1)
    cdef const double[::1] obs_v = obs_arr
    cdef Py_ssize_t n_obs = n_obs_py
    cdef Py_ssize_t n = keys.shape[0]
    X = np.empty(n)
    TY = np.empty(n, dtype=np.int32)
    S = np.empty(n, dtype=np.int64)
    LAM = np.empty(n)
    OX = np.full((n, n_obs), np.nan)
    OTY = np.full((n, n_obs), -1, dtype=np.int32)
    OS = np.full((n, n_obs), -1, dtype=np.int64)
    OL = np.full((n, n_obs), np.nan)
    cdef double[::1] Xv = X
    cdef int32_t[::1] TYv = TY
    cdef int64_t[::1] Sv = S
    cdef double[::1] Lv = LAM
    cdef double[:, ::1] OXv = OX
    cdef int32_t[:, ::1] OTYv = OTY
    cdef int64_t[:, ::1] OSv = OS
    cdef double[:, ::1] OLv = OL
    cdef Work W
    cdef int err = 0
    cdef Py_ssize_t i = 0, lo, hi, r, ii
    cdef uint64_t key, bw, bh, bi, bt
    cdef double x, t, T, lam, w, nxt, seg_end, theta, rm = M.rate * M.m
    cdef int ty
    cdef int64_t q, h
    cdef bint last
    cdef Py_ssize_t n_rec
    cdef double* cx = NULL
    cdef int* cty = NULL
    cdef Py_ssize_t ccap = 0
    # jump records
    cdef int64_t* j_sp = NULL
    cdef double* j_t = NULL
    cdef int64_t* j_h = NULL
    cdef int64_t* j_i = NULL
    cdef double* j_th = NULL
    cdef Py_ssize_t jn = 0, jcap = 0
    with nogil:
        err = work_init(&W, n_obs)
        if not err:
            for i in range(n):
                key = keys[i]
                x = xs0[i]
                ty = tys0[i]
                T = dur[i]
                t = 0.0
                q = 0
                lam = 0.0
                bw = sbase(key, SP_WAIT)
                bh = sbase(key, SP_H)
                bi = sbase(key, SP_I)
                bt = sbase(key, SP_THETA)
                while True:
                    if branching and rm > 0.0:
                        w = -log(unif(bw, q)) / rm
                        nxt = t + w
                    else:
                        nxt = INFINITY
                    last = not nxt < T
                    seg_end = T if last else nxt
                    lo = bisect_left(&obs_v[0], n_obs, t)
                    hi = bisect_right(&obs_v[0], n_obs, seg_end) if last else bisect_left(&obs_v[0], n_obs, seg_end)
                    err = segment(&M, &W, child_key(key, q + 1), x, ty, t, seg_end, &obs_v[0], lo, hi,
                                  &x, &ty, &n_rec)
                    if err:
                        break
                    for r in range(n_rec):
                        OXv[i, W.rec_idx[r]] = W.rec_x[r]
                        OTYv[i, W.rec_idx[r]] = W.rec_ty[r]
                        OSv[i, W.rec_idx[r]] = q
                        OLv[i, W.rec_idx[r]] = lam
                    if last:
                        break
                    t = nxt
                    h = M.sb_k[search(M.sb_cum, M.n_sb, unif(bh, q))]
                    ii = <Py_ssize_t>(unif(bi, q) * h)
                    theta = unif(bt, q)
                    if h > ccap:
                        ccap = h * 2
                        cx = <double*>realloc(cx, ccap * sizeof(double))
                        cty = <int*>realloc(cty, ccap * sizeof(int))
                        if cx == NULL or cty == NULL:
                            err = ERR_MEMORY
                            break
                    err = kernel_children(&M, x, ty, h, theta, cx, cty)
                    if err:
                        break
                    x = cx[ii]
                    ty = cty[ii]
                    if not isfinite(x):
                        err = ERR_NONFINITE
                        break
                    lam += log(<double>h)
                    q += 1
                    if record_jumps:
                        if jn >= jcap:
                            jcap = jcap * 2 if jcap > 0 else 1024
                            j_sp = <int64_t*>grow(j_sp, jcap, sizeof(int64_t))
                            j_t = <double*>grow(j_t, jcap, sizeof(double))
                            j_h = <int64_t*>grow(j_h, jcap, sizeof(int64_t))
                            j_i = <int64_t*>grow(j_i, jcap, sizeof(int64_t))
                            j_th = <double*>grow(j_th, jcap, sizeof(double))
                            if not (j_sp and j_t and j_h and j_i and j_th):
                                err = ERR_MEMORY
                                break
                        j_sp[jn] = i
                        j_t[jn] = t
                        j_h[jn] = h
                        j_i[jn] = ii + 1
                        j_th[jn] = theta
                        jn += 1
                if err:
                    break
                Xv[i] = x
                TYv[i] = ty
                Sv[i] = q
                Lv[i] = lam
        work_free(&W)
        free(cx)
        free(cty)
    if err:
        free(j_sp); free(j_t); free(j_h); free(j_i); free(j_th)
        if err == ERR_MEMORY:
            raise MemoryError("spine simulation ran out of memory")
        raise CoreError(err, i)
    out = {"x": X, "ty": TY, "S": S, "lam": LAM,
           "obs_x": OX, "obs_ty": OTY, "obs_S": OS, "obs_lam": OL}
    if record_jumps:
        out["jump_spine"] = _copy(j_sp, jn, np.int64)
        out["jump_t"] = _copy(j_t, jn, np.float64)
        out["jump_H"] = _copy(j_h, jn, np.int64)
        out["jump_I"] = _copy(j_i, jn, np.int64)
        out["jump_theta"] = _copy(j_th, jn, np.float64)
    free(j_sp); free(j_t); free(j_h); free(j_i); free(j_th)
    return out


def branch_children(enc, double x, int ty, int64_t k, double theta):
    arrs = _arrays(enc)
    cdef Model M
    fill_model(&M, enc, arrs)
    if k <= 0:
        return []
    cx = np.empty(k)
    cty = np.empty(k, dtype=np.int32)
    cdef double[::1] cxv = cx
    cdef int[::1] ctyv = cty
    cdef int err = kernel_children(&M, x, ty, k, theta, &cxv[0], &ctyv[0])
    if err:
        raise CoreError(err, 0)
    return [(float(cx[j]), int(cty[j])) for j in range(k)]


def pick_children(enc, x, ty, k, theta, idx):
    """Child ``idx[i]`` (0-based) of a k[i]-split of a mother at x[i], for each i."""
    arrs = _arrays(enc)
    cdef Model M
    fill_model(&M, enc, arrs)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const int32_t[::1] tyv = np.ascontiguousarray(ty, dtype=np.int32)
    cdef const int64_t[::1] kv = np.ascontiguousarray(k, dtype=np.int64)
    cdef const double[::1] thv = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const int64_t[::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t n = xv.shape[0], i = 0
    xo = np.empty(n)
    tyo = np.empty(n, dtype=np.int32)
    cdef double[::1] xov = xo
    cdef int32_t[::1] tyov = tyo
    cdef double* cx = NULL
    cdef int* cty = NULL
    cdef Py_ssize_t ccap = 0
    cdef int err = 0
    with nogil:
        for i in range(n):
            if kv[i] > ccap:
                ccap = kv[i] * 2
                cx = <double*>realloc(cx, ccap * sizeof(double))
                cty = <int*>realloc(cty, ccap * sizeof(int))
                if cx == NULL or cty == NULL:
                    err = ERR_MEMORY
                    break
            err = kernel_children(&M, xv[i], tyv[i], kv[i], thv[i], cx, cty)
            if err:
                break
            xov[i] = cx[iv[i]]
            tyov[i] = cty[iv[i]]
        free(cx)
        free(cty)
    if err == ERR_MEMORY:
        raise MemoryError("out of memory")
    if err:
        raise CoreError(err, i)
    return xo, tyo
