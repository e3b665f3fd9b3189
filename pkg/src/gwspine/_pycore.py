"""Pure-Python simulation kernels.

Reference implementation of the compiled core: same random addressing, same
floating-point operation order, same output layout.  It also runs models the
compiled core cannot encode (Python callables for drift/vol or kernels).
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_left, bisect_right

import numpy as np
from scipy.special import betaincinv

from . import rng as R
from ._encoded import (
    JUMP_AGING,
    JUMP_ATOMS,
    KER_ADDITIVE,
    KER_AGING,
    KER_BETA,
    KER_EQUAL,
    KER_IDENTITY,
    KER_UNIFORM,
)

ERR_NONFINITE = 1
ERR_ARITY = 2


class CoreError(Exception):
    def __init__(self, code, index):
        super().__init__(code, index)
        self.code = code
        self.index = index


def _search(cum, u):
    i = bisect_right(cum, u)
    return min(i, len(cum) - 1)


def transition(b0, b1, sig, x, dt, z):
    if b1 == 0.0:
        m = x + b0 * dt
        v = sig * sig * dt
    else:
        m = x * math.exp(b1 * dt) + b0 * math.expm1(b1 * dt) / b1
        v = sig * sig * math.expm1(2.0 * b1 * dt) / (2.0 * b1)
    if v > 0.0:
        return m + math.sqrt(v) * z
    return m


def bridge(b0, b1, sig, tl, xl, tr, xr, s, z):
    """Sample X_s given X_tl = xl and X_tr = xr for the linear Gaussian SDE."""
    d1 = s - tl
    d2 = tr - s
    if b1 == 0.0:
        m1 = xl + b0 * d1
        v1 = sig * sig * d1
        a = 1.0
        c = b0 * d2
        w = sig * sig * d2
    else:
        m1 = xl * math.exp(b1 * d1) + b0 * math.expm1(b1 * d1) / b1
        v1 = sig * sig * math.expm1(2.0 * b1 * d1) / (2.0 * b1)
        a = math.exp(b1 * d2)
        c = b0 * math.expm1(b1 * d2) / b1
        w = sig * sig * math.expm1(2.0 * b1 * d2) / (2.0 * b1)
    if not v1 > 0.0:
        return m1
    if not w > 0.0:
        return xr
    prec = 1.0 / v1 + a * a / w
    mean = (m1 / v1 + a * (xr - c) / w) / prec
    return mean + z / math.sqrt(prec)


def kernel_children(enc, x, ty, k, theta):
    """Offspring states ``[(x_j, type_j)]`` for a mother at ``x`` with k children."""
    if k == 0:
        return []
    if enc.kernel_fn is not None:
        return enc.kernel_fn(x, ty, k, theta)
    kind = enc.ker_kind
    if kind == KER_IDENTITY:
        return [(x, ty)] * k
    if kind == KER_EQUAL:
        return [(x / k, ty)] * k
    if kind == KER_UNIFORM or kind == KER_BETA:
        if k != 2:
            raise CoreError(ERR_ARITY, k)
        if kind == KER_UNIFORM:
            q = theta
        else:
            q = float(betaincinv(enc.ker_p[0], enc.ker_p[1], theta))
        c0 = q * x
        return [(c0, ty), (x - c0, ty)]
    if kind == KER_ADDITIVE:
        off = enc.add_off
        if k + 1 >= len(off) or off[k + 1] - off[k] != k:
            raise CoreError(ERR_ARITY, k)
        lo = off[k]
        return [(x + enc.add_val[lo + j], ty) for j in range(k)]
    if kind == KER_AGING:
        if k != 2:
            raise CoreError(ERR_ARITY, k)
        p = enc.ker_p
        tb = R.stream_base(R.theta_key(theta), R.THETA_EXTRA)
        z0 = R.normal_at(tb, 0)
        z1 = R.normal_at(tb, 1)
        return [(p[0] * x + p[1] + p[2] * z0, 0), (p[3] * x + p[4] + p[5] * z1, 1)]
    raise ValueError(f"unknown kernel kind {kind}")


def _jump_map(enc, base_map, p, x, ty):
    if enc.jump_kind == JUMP_ATOMS:
        u = R.uniform_at(base_map, p)
        return x + enc.atoms_val[_search(enc.atoms_cum, u)], ty
    # aging single-child replacement
    g = enc.aging_jump
    theta = R.uniform_at(base_map, p)
    tb = R.stream_base(R.theta_key(theta), R.THETA_EXTRA)
    z0 = R.normal_at(tb, 0)
    z1 = R.normal_at(tb, 1)
    th2 = R.uniform_at(tb, 4)
    sig = g[5]
    rho = g[6]
    if th2 <= g[0]:
        return g[1] * x + g[2] + sig * z0, 0
    return g[3] * x + g[4] + sig * (rho * z0 + math.sqrt(1.0 - rho * rho) * z1), 1


def linear_segment(enc, key, x, ty, t0, t1, cut, obs, lo, hi):
    """Motion over [t0, t1] started at x; states at obs[lo:hi] are bridged.

    Returns ``(x_end, type_end, [(obs_index, x, type), ...])``.  The end
    state never depends on which observation times are requested.
    """
    starts = [t0]
    if enc.jump_kind and enc.jump_rate > 0.0:
        bj = R.stream_base(key, R.JUMP)
        tt = t0
        i = 0
        while True:
            tt += -math.log(R.uniform_at(bj, i)) / enc.jump_rate
            i += 1
            if tt >= t1:
                break
            starts.append(tt)
    n_p = len(starts)
    bm = R.stream_base(key, R.MOTION)
    bmap = R.stream_base(key, R.JUMPMAP)
    lin = enc.lin
    ps_x = [0.0] * n_p
    pe_x = [0.0] * n_p
    pty = [0] * n_p
    xs = x
    for p in range(n_p):
        ts = starts[p]
        te = starts[p + 1] if p + 1 < n_p else t1
        ps_x[p] = xs
        pty[p] = ty
        sig = lin[ty, 2]
        z = R.normal_at(bm, p) if sig != 0.0 else 0.0
        xe = transition(lin[ty, 0], lin[ty, 1], sig, xs, te - ts, z)
        if not math.isfinite(xe):
            raise CoreError(ERR_NONFINITE, 0)
        pe_x[p] = xe
        if p + 1 < n_p:
            xs, ty = _jump_map(enc, bmap, p, xe, ty)
            if not math.isfinite(xs):
                raise CoreError(ERR_NONFINITE, 0)
    x_end = pe_x[n_p - 1]
    records = []
    if hi > lo:
        bb = R.stream_base(key, R.BRIDGE)
        p = 0
        tl = starts[0]
        xl = ps_x[0]
        k = 0
        for oi in range(lo, hi):
            s = obs[oi]
            if s >= t1:
                records.append((oi, x_end, pty[n_p - 1]))
                continue
            moved = False
            while p + 1 < n_p and starts[p + 1] <= s:
                p += 1
                moved = True
            if moved:
                tl = starts[p]
                xl = ps_x[p]
            tr = starts[p + 1] if p + 1 < n_p else t1
            t_ = pty[p]
            sig = lin[t_, 2]
            z = R.normal_at(bb, k) if sig != 0.0 else 0.0
            k += 1
            xo = bridge(lin[t_, 0], lin[t_, 1], sig, tl, xl, tr, pe_x[p], s, z)
            records.append((oi, xo, t_))
            tl = s
            xl = xo
    return x_end, pty[n_p - 1], records


def euler_segment(drift, vol, h, key, x, ty, t0, t1, cut, obs, lo, hi):
    """Euler-Maruyama on the absolute grid k*h; off-grid observations are
    filled with a frozen-coefficient Brownian bridge."""
    nodes = [t0]
    k = math.floor(t0 / h) + 1
    while k * h < t1:
        nodes.append(k * h)
        k += 1
    nodes.append(t1)
    bm = R.stream_base(key, R.MOTION)
    xs = [x]
    cur = x
    for i in range(len(nodes) - 1):
        dt = nodes[i + 1] - nodes[i]
        z = R.normal_at(bm, i)
        cur = cur + drift(cur) * dt + vol(cur) * math.sqrt(dt) * z
        if not math.isfinite(cur):
            raise CoreError(ERR_NONFINITE, 0)
        xs.append(cur)
    records = []
    if hi > lo:
        bb = R.stream_base(key, R.BRIDGE)
        i = 0
        tl = nodes[0]
        xl = xs[0]
        kk = 0
        for oi in range(lo, hi):
            s = obs[oi]
            if s >= t1:
                records.append((oi, xs[-1], ty))
                continue
            moved = False
            while nodes[i + 1] <= s:
                i += 1
                moved = True
            if moved:
                tl = nodes[i]
                xl = xs[i]
            tr = nodes[i + 1]
            sg = vol(xs[i])
            z = R.normal_at(bb, kk)
            kk += 1
            if s == tl:
                xo = xl
            else:
                frac = (s - tl) / (tr - tl)
                mean = xl + (xs[i + 1] - xl) * frac
                xo = mean + abs(sg) * math.sqrt((s - tl) * (tr - s) / (tr - tl)) * z
            records.append((oi, xo, ty))
            tl = s
            xl = xo
    return xs[-1], ty, records


def _segment(enc, key, x, ty, t0, t1, cut, obs, lo, hi):
    if enc.motion_fn is not None:
        return enc.motion_fn(key, x, ty, t0, t1, cut, obs, lo, hi)
    return linear_segment(enc, key, x, ty, t0, t1, cut, obs, lo, hi)


def simulate_trees(enc, root_keys, x0, ty0, horizon, obs, max_nodes):
    """Simulate one tree-indexed process per root key up to ``horizon``.

    Nodes are generated from a min-heap keyed on death time, so within a
    replica they come out ordered by birth time.
    """
    obs = [float(s) for s in obs]
    cols = {name: [] for name in (
        "parent", "child", "gen", "birth", "death", "nu", "x_birth", "x_end",
        "ty_birth", "ty_end", "mark", "key")}
    o_node, o_idx, o_x, o_ty = [], [], [], []
    offsets = [0]
    truncated = []
    r = enc.rate
    off_k = enc.off_k
    off_cum = list(enc.off_cum)
    for rep in range(len(root_keys)):
        base_idx = len(cols["key"])
        heap = []
        trunc = False

        def create(key, parent, j, gen, birth, x, ty, mark):
            life = -math.log(R.uniform_at(R.stream_base(key, R.LIFE), 0)) / r
            death = birth + life
            nu = int(off_k[_search(off_cum, R.uniform_at(R.stream_base(key, R.NU), 0))])
            alive_at_end = not death < horizon
            t_end = horizon if alive_at_end else death
            lo = bisect_left(obs, birth)
            hi = bisect_right(obs, t_end) if alive_at_end else bisect_left(obs, t_end)
            try:
                xe, tye, recs = _segment(enc, key, x, ty, birth, t_end, alive_at_end, obs, lo, hi)
            except CoreError as exc:
                raise CoreError(exc.code, rep) from None
            idx = len(cols["key"])
            for name, val in (("parent", parent), ("child", j), ("gen", gen), ("birth", birth),
                              ("death", death), ("nu", nu), ("x_birth", x), ("x_end", xe),
                              ("ty_birth", ty), ("ty_end", tye), ("mark", mark), ("key", key)):
                cols[name].append(val)
            for oi, xo, to in recs:
                o_node.append(idx)
                o_idx.append(oi)
                o_x.append(xo)
                o_ty.append(to)
            if not alive_at_end:
                heapq.heappush(heap, (death, idx))

        create(int(root_keys[rep]), -1, 0, 0, 0.0, float(x0[rep]), int(ty0[rep]), 0.0)
        while heap:
            death, u = heapq.heappop(heap)
            nu = cols["nu"][u]
            if nu == 0:
                continue
            key_u = cols["key"][u]
            theta = R.uniform_at(R.stream_base(key_u, R.KERNEL), 0)
            try:
                kids = kernel_children(enc, cols["x_end"][u], cols["ty_end"][u], nu, theta)
            except CoreError as exc:
                raise CoreError(exc.code, rep) from None
            if len(cols["key"]) - base_idx + nu > max_nodes:
                trunc = True
                break
            mark = cols["mark"][u] + math.log(nu)
            for j in range(nu):
                cx, cty = kids[j]
                if not math.isfinite(cx):
                    raise CoreError(ERR_NONFINITE, rep)
                create(R.child_key(key_u, j + 1), u, j + 1, cols["gen"][u] + 1, death, cx, cty, mark)
        offsets.append(len(cols["key"]))
        truncated.append(trunc)
    out = {
        "offsets": np.array(offsets, dtype=np.int64),
        "parent": np.array(cols["parent"], dtype=np.int64),
        "child": np.array(cols["child"], dtype=np.int32),
        "gen": np.array(cols["gen"], dtype=np.int32),
        "birth": np.array(cols["birth"], dtype=np.float64),
        "death": np.array(cols["death"], dtype=np.float64),
        "nu": np.array(cols["nu"], dtype=np.int32),
        "x_birth": np.array(cols["x_birth"], dtype=np.float64),
        "x_end": np.array(cols["x_end"], dtype=np.float64),
        "ty_birth": np.array(cols["ty_birth"], dtype=np.int32),
        "ty_end": np.array(cols["ty_end"], dtype=np.int32),
        "mark": np.array(cols["mark"], dtype=np.float64),
        "key": np.array(cols["key"], dtype=np.uint64),
        "truncated": np.array(truncated, dtype=bool),
        "obs_node": np.array(o_node, dtype=np.int64),
        "obs_idx": np.array(o_idx, dtype=np.int32),
        "obs_x": np.array(o_x, dtype=np.float64),
        "obs_ty": np.array(o_ty, dtype=np.int32),
    }
    return out


def simulate_spines(enc, keys, x0, ty0, durations, obs, record_jumps, branching=True):
    """Auxiliary (spine) processes, one per key, each run for its own duration.

    ``obs`` are times relative to the spine start, shared by all spines;
    entries beyond a spine's duration are NaN.  With ``branching=False`` the
    spine jumps are switched off and this is the plain motion.
    """
    n = len(keys)
    obs = [float(s) for s in obs]
    n_obs = len(obs)
    X = np.empty(n)
    TY = np.empty(n, dtype=np.int32)
    S = np.empty(n, dtype=np.int64)
    LAM = np.empty(n)
    OX = np.full((n, n_obs), np.nan)
    OTY = np.full((n, n_obs), -1, dtype=np.int32)
    OS = np.full((n, n_obs), -1, dtype=np.int64)
    OL = np.full((n, n_obs), np.nan)
    jumps = ([], [], [], [], [])
    rm = enc.rate * enc.m
    sb_k = enc.sb_k
    sb_cum = list(enc.sb_cum)
    for i in range(n):
        key = int(keys[i])
        x = float(x0[i])
        ty = int(ty0[i])
        T = float(durations[i])
        t = 0.0
        q = 0
        lam = 0.0
        bw = R.stream_base(key, R.SP_WAIT)
        bh = R.stream_base(key, R.SP_H)
        bi = R.stream_base(key, R.SP_I)
        bt = R.stream_base(key, R.SP_THETA)
        while True:
            if branching and rm > 0.0:
                w = -math.log(R.uniform_at(bw, q)) / rm
                nxt = t + w
            else:
                nxt = math.inf
            last = not nxt < T
            seg_end = T if last else nxt
            lo = bisect_left(obs, t)
            hi = bisect_right(obs, seg_end) if last else bisect_left(obs, seg_end)
            try:
                x, ty, recs = _segment(enc, R.child_key(key, q + 1), x, ty, t, seg_end, last, obs, lo, hi)
            except CoreError as exc:
                raise CoreError(exc.code, i) from None
            for oi, xo, to in recs:
                OX[i, oi] = xo
                OTY[i, oi] = to
                OS[i, oi] = q
                OL[i, oi] = lam
            if last:
                break
            t = nxt
            h = int(sb_k[_search(sb_cum, R.uniform_at(bh, q))])
            ii = int(R.uniform_at(bi, q) * h)
            theta = R.uniform_at(bt, q)
            try:
                kids = kernel_children(enc, x, ty, h, theta)
            except CoreError as exc:
                raise CoreError(exc.code, i) from None
            x, ty = kids[ii]
            if not math.isfinite(x):
                raise CoreError(ERR_NONFINITE, i)
            lam += math.log(h)
            q += 1
            if record_jumps:
                for lst, val in zip(jumps, (i, t, h, ii + 1, theta)):
                    lst.append(val)
        X[i] = x
        TY[i] = ty
        S[i] = q
        LAM[i] = lam
    out = {"x": X, "ty": TY, "S": S, "lam": LAM,
           "obs_x": OX, "obs_ty": OTY, "obs_S": OS, "obs_lam": OL}
    if record_jumps:
        out["jump_spine"] = np.array(jumps[0], dtype=np.int64)
        out["jump_t"] = np.array(jumps[1], dtype=np.float64)
        out["jump_H"] = np.array(jumps[2], dtype=np.int64)
        out["jump_I"] = np.array(jumps[3], dtype=np.int64)
        out["jump_theta"] = np.array(jumps[4], dtype=np.float64)
    return out


def branch_children(enc, x, ty, k, theta):
    try:
        return kernel_children(enc, x, ty, k, theta)
    except CoreError as exc:
        raise CoreError(exc.code, 0) from None


def pick_children(enc, x, ty, k, theta, idx):
    """Child ``idx[i]`` (0-based) of a k[i]-split of a mother at x[i], for each i."""
    n = len(x)
    xo = np.empty(n)
    tyo = np.empty(n, dtype=np.int32)
    for i in range(n):
        try:
            kids = kernel_children(enc, float(x[i]), int(ty[i]), int(k[i]), float(theta[i]))
        except CoreError as exc:
            raise CoreError(exc.code, i) from None
        xo[i], tyo[i] = kids[int(idx[i])]
    return xo, tyo
