"""Path sampling and Monte Carlo estimators: confinement, strong control,
big-jump coupling and the local-time functional behind wreath-product
return probabilities.

Trials are processed in fixed-size chunks; each chunk depends only on
``(master_seed, trial index)`` so the worker count never changes a result.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy import stats

from .geometry import Norm, OutOfBall
from .measures import SparseMeasure
from .rng import trial_keys, uniforms

__all__ = [
    "Estimate",
    "wilson_interval",
    "mean_estimate",
    "AliasTable",
    "Sampler",
    "build_sampler",
    "WalkConfig",
    "TrajectoryStats",
    "simulate_walk",
    "confinement_probability",
    "strong_control_probe",
    "meyer_discrepancy",
    "wreath_return_mc",
    "range_return_mc",
    "poissonized_return_mc",
    "write_estimates",
]

Z95 = 1.959963984540054


# -- estimates -------------------------------------------------------------------

@dataclass
class Estimate:
    value: float
    ci_lo: float
    ci_hi: float
    trials: int
    seed: int
    se: float = 0.0
    meta: dict = field(default_factory=dict)

    def contains(self, x: float, k: float = 1.0) -> bool:
        """Whether ``x`` lies within ``k`` half-widths of the interval."""
        half_lo = self.value - self.ci_lo
        half_hi = self.ci_hi - self.value
        return self.value - k * half_lo <= x <= self.value + k * half_hi

    def within_se(self, x: float, k: float = 4.0) -> bool:
        return abs(self.value - x) <= k * self.se


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("no trials")
    p = successes / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def _proportion(hits: np.ndarray, seed: int, meta: dict | None = None) -> Estimate:
    n = int(hits.size)
    k = int(np.count_nonzero(hits))
    lo, hi = wilson_interval(k, n)
    p = k / n
    return Estimate(p, lo, hi, n, seed, math.sqrt(p * (1 - p) / n), dict(meta or {}))


def mean_estimate(values: np.ndarray, seed: int, meta: dict | None = None) -> Estimate:
    """Mean with a normal 95% interval; summation is compensated and in trial order."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        raise ValueError("no trials")
    m = math.fsum(v) / n
    var = math.fsum((v - m) ** 2) / max(n - 1, 1)
    se = math.sqrt(var / n)
    return Estimate(m, m - Z95 * se, m + Z95 * se, n, seed, se, dict(meta or {}))


def write_estimates(rows: Sequence[tuple[dict, Estimate]], path, header: dict | None = None) -> None:
    """CSV with columns ``params..., estimate, ci_lo, ci_hi, trials, seed``."""
    keys = list(rows[0][0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(keys + ["estimate", "ci_lo", "ci_hi", "trials", "seed"])
        for params, e in rows:
            w.writerow([params[k] for k in keys] + [repr(e.value), repr(e.ci_lo), repr(e.ci_hi),
                                                    e.trials, e.seed])


# -- sampling ------------------------------------------------------------------------

class AliasTable:
    """Walker/Vose alias table; one uniform yields both column and coin."""

    def __init__(self, probs: np.ndarray):
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or (p < 0).any():
            raise ValueError("need a nonempty nonnegative weight vector")
        K = p.size
        q = p * (K / math.fsum(p))
        prob = np.ones(K)
        alias = np.arange(K)
        small = [i for i in range(K) if q[i] < 1.0]
        large = [i for i in range(K) if q[i] >= 1.0]
        while small and large:
            s = small.pop()
            l = large.pop()
            prob[s] = q[s]
            alias[s] = l
            q[l] = (q[l] + q[s]) - 1.0
            (small if q[l] < 1.0 else large).append(l)
        self.prob = prob
        self.alias = alias
        self.size = K

    def draw(self, u: np.ndarray) -> np.ndarray:
        x = u * self.size
        col = np.minimum(x.astype(np.int64), self.size - 1)
        coin = x - col
        return np.where(coin < self.prob[col], col, self.alias[col])


def _coord_len(group) -> int:
    if group.kind == "lattice":
        return group.d
    if group.kind == "heisenberg":
        return 3
    raise NotImplementedError(f"path sampling is implemented for lattices and Heisenberg, not {group!r}")


class Sampler:
    """Exact i.i.d. sampler of increments, as coordinate arrays.

    Measures on generator powers draw the generator, then the exponent from
    its materialized table or (with the remaining probability) from the exact
    power-law tail by rejection from a rounded Pareto envelope. Other measures
    draw from an alias table over the stored atoms, i.e. conditioned on the
    materialized ball; the conditioning probability is kept in ``meta``.
    """

    def __init__(self, nu: SparseMeasure, tail_tolerance: float = 1e-3):
        self.group = nu.group
        self.norm = nu.norm
        self.dim = _coord_len(nu.group)
        self.meta: dict = {"family": nu.meta.get("family")}
        self._axes = None
        if nu.meta.get("family") == "mu_sa":
            self._init_powers(nu)
        else:
            hi = nu.tail_hi
            if hi > tail_tolerance:
                raise ValueError(f"tail mass up to {hi:.3g} exceeds the sampler tolerance "
                                 f"{tail_tolerance:g} and no exact tail sampler exists for this family")
            items = nu.items()
            self._coords = np.array([list(g) for g, _ in items], dtype=np.int64).reshape(len(items), self.dim)
            w = np.array([m for _, m in items])
            self._table = AliasTable(w)
            self.meta["conditioning"] = math.fsum(w)

    def _init_powers(self, nu: SparseMeasure) -> None:
        from .measures import _kappa, _power_tail
        a = nu.meta["a"]
        Ms = nu.meta["M"]
        gens = [np.array(list(s), dtype=np.int64) for s in self.group.generators]
        self._axes = []
        for alpha, M, s in zip(a, Ms, gens):
            kp = _kappa(alpha)
            m = np.arange(-M, M + 1)
            w = kp * (1.0 + np.abs(m)) ** (-(1.0 + alpha))
            tail = 2.0 * kp * _power_tail(alpha, M)
            p_in = 1.0 - tail
            self._axes.append((alpha, M, s, m, AliasTable(w), p_in))
        self.meta["conditioning"] = 1.0
        self.meta["exact_tail"] = True

    def _power_coords(self, s: np.ndarray, m: np.ndarray) -> np.ndarray:
        out = m[..., None] * s
        if self.group.kind == "heisenberg":
            # (a,b,c)^m = (ma, mb, mc + ab m(m-1)/2)
            out[..., 2] += s[0] * s[1] * (m * (m - 1) // 2)
        return out

    def sample(self, keys: np.ndarray, steps: np.ndarray) -> np.ndarray:
        """Increments with shape ``(len(keys), len(steps), dim)``."""
        u0 = uniforms(keys, steps, 0)
        if self._axes is None:
            return self._coords[self._table.draw(u0)]
        k = len(self._axes)
        x = u0 * k
        gi = np.minimum(x.astype(np.int64), k - 1)
        v = x - gi
        out = np.zeros(u0.shape + (self.dim,), dtype=np.int64)
        for i, (alpha, M, s, mvals, table, p_in) in enumerate(self._axes):
            sel = gi == i
            if not sel.any():
                continue
            vi = v[sel]
            inside = vi < p_in
            m = np.empty(vi.shape, dtype=np.int64)
            m[inside] = mvals[table.draw(vi[inside] / p_in)]
            if (~inside).any():
                m[~inside] = self._tail_draw(keys, steps, sel, ~inside, alpha, M)
            out[sel] = self._power_coords(s, m)
        return out

    def _tail_draw(self, keys, steps, sel, mask, alpha, M) -> np.ndarray:
        # positions (trial, step) of the tail draws
        ti, si = np.nonzero(sel)
        ti, si = ti[mask], si[mask]
        kk = keys[ti]
        st = steps[si]
        k0 = M + 2.0
        res = np.zeros(ti.size)
        todo = np.ones(ti.size, dtype=bool)
        for attempt in range(30):
            idx = np.flatnonzero(todo)
            if idx.size == 0:
                break
            uy = _pointwise_uniforms(kk[idx], st[idx], 2 + 2 * attempt)
            ua = _pointwise_uniforms(kk[idx], st[idx], 3 + 2 * attempt)
            y = (k0 - 0.5) * uy ** (-1.0 / alpha)
            kint = np.floor(y + 0.5)
            acc = alpha * kint ** (-(1.0 + alpha)) / ((kint - 0.5) ** (-alpha) - (kint + 0.5) ** (-alpha))
            ok = (ua <= acc) | (attempt == 29)
            res[idx[ok]] = kint[ok]
            todo[idx[ok]] = False
        if (res > 2.0**62).any():
            raise OverflowError("power-law tail draw exceeds the 64-bit coordinate range")
        sign = np.where(_pointwise_uniforms(kk, st, 1) < 0.5, -1, 1)
        return sign * (res.astype(np.int64) - 1)


def _pointwise_uniforms(keys: np.ndarray, steps: np.ndarray, stream: int) -> np.ndarray:
    from .rng import GOLDEN, N_STREAMS, mix64
    ctr = steps.astype(np.uint64) * np.uint64(N_STREAMS) + np.uint64(stream + 1)
    with np.errstate(over="ignore"):
        x = mix64(keys.astype(np.uint64) + ctr * GOLDEN)
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def build_sampler(nu: SparseMeasure, tail_tolerance: float = 1e-3) -> Sampler:
    return Sampler(nu, tail_tolerance)


# -- walks -----------------------------------------------------------------------------

@dataclass
class WalkConfig:
    steps: int
    trials: int
    master_seed: int
    measure: SparseMeasure | Sampler
    norm: Norm | None = None
    threads: int = 1
    chunk: int = 4096
    start: Any = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.trials <= 0:
            raise ValueError("trials must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def sampler(self) -> Sampler:
        if isinstance(self.measure, Sampler):
            return self.measure
        s = getattr(self, "_sampler", None)
        if s is None:
            s = Sampler(self.measure)
            object.__setattr__(self, "_sampler", s)
        return s

    def norm_ref(self) -> Norm:
        return self.norm or self.sampler.norm


@dataclass
class TrajectoryStats:
    end: tuple
    sup_norm: float
    end_norm: float
    local_times: dict | None = None


def _norm_coords(norm: Norm, group, coords: np.ndarray) -> np.ndarray:
    try:
        return norm.on_coords(coords)
    except OutOfBall as exc:
        raise OutOfBall(f"norm not evaluable on a visited element ({exc}); "
                        f"use a closed-form norm or a larger table") from None


def _chunks(trials: int, chunk: int) -> list[np.ndarray]:
    return [np.arange(a, min(a + chunk, trials)) for a in range(0, trials, chunk)]


def _map_chunks(config: WalkConfig, fn: Callable[[np.ndarray], Any]) -> list:
    parts = _chunks(config.trials, config.chunk)
    if config.threads == 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=config.threads) as ex:
        return list(ex.map(fn, parts))


def _advance(group, pos: np.ndarray, inc: np.ndarray) -> np.ndarray:
    """Positions after each increment, shape ``(T, L, dim)``, starting from ``pos``."""
    if group.kind == "lattice":
        return pos[:, None, :] + np.cumsum(inc, axis=1)
    # Heisenberg: z_k = z_{k-1} + dz_k + x_{k-1} dy_k
    x = pos[:, None, 0] + np.cumsum(inc[..., 0], axis=1)
    y = pos[:, None, 1] + np.cumsum(inc[..., 1], axis=1)
    xprev = np.concatenate([pos[:, None, 0], x[:, :-1]], axis=1)
    z = pos[:, None, 2] + np.cumsum(inc[..., 2] + xprev * inc[..., 1], axis=1)
    return np.stack([x, y, z], axis=-1)


def _walk_chunk(config: WalkConfig, trials: np.ndarray, *, keep_path: bool = False,
                big_jump: float | None = None, block: int = 512) -> dict:
    sampler = config.sampler
    group = sampler.group
    norm = config.norm_ref()
    keys = trial_keys(config.master_seed, trials)
    T = trials.size
    start = group.identity if config.start is None else group.normalize(config.start)
    pos = np.tile(np.array(list(start), dtype=np.int64), (T, 1))
    sup = _norm_coords(norm, group, pos[:, None, :])[:, 0].copy()
    paths = [pos[:, None, :].copy()] if keep_path else None
    jumped = np.zeros(T, dtype=bool) if big_jump is not None else None
    for a in range(0, config.steps, block):
        steps = np.arange(a, min(a + block, config.steps))
        inc = sampler.sample(keys, steps)
        if big_jump is not None:
            jumped |= (_norm_coords(norm, group, inc) > big_jump + 1e-9).any(axis=1)
        P = _advance(group, pos, inc)
        sup = np.maximum(sup, _norm_coords(norm, group, P).max(axis=1))
        pos = P[:, -1, :]
        if keep_path:
            paths.append(P)
    out = {"end": pos, "sup": sup, "end_norm": _norm_coords(norm, group, pos[:, None, :])[:, 0]}
    if keep_path:
        out["path"] = np.concatenate(paths, axis=1)
    if jumped is not None:
        out["jumped"] = jumped
    return out


def simulate_walk(config: WalkConfig, local_times: bool = False) -> Iterator[TrajectoryStats]:
    """Per-trial statistics of ``X_k = X_{k-1} xi_k`` started at ``config.start``
    (default the identity), in trial order."""
    def run(tr):
        return _walk_chunk(config, tr, keep_path=local_times)

    for res in _map_chunks(config, run):
        for i in range(res["end"].shape[0]):
            lt = None
            if local_times:
                pts, cnt = np.unique(res["path"][i], axis=0, return_counts=True)
                lt = {tuple(int(v) for v in p): int(c) for p, c in zip(pts, cnt)}
            yield TrajectoryStats(tuple(int(v) for v in res["end"][i]), float(res["sup"][i]),
                                  float(res["end_norm"][i]), lt)


def _scalar_threshold(r_of_n, n: int) -> float:
    if hasattr(r_of_n, "r"):
        return float(r_of_n.r(n))
    return float(r_of_n(n))


def confinement_probability(config: WalkConfig, gamma: float, r_of_n) -> Estimate:
    """``P(sup_{k<=n} ||X_k|| >= gamma r(n))`` with a Wilson interval."""
    thr = gamma * _scalar_threshold(r_of_n, config.steps)
    res = _map_chunks(config, lambda tr: _walk_chunk(config, tr)["sup"])
    sup = np.concatenate(res)
    return _proportion(sup >= thr - 1e-9, config.master_seed,
                       {"gamma": gamma, "threshold": thr, "n": config.steps})


def strong_control_probe(config: WalkConfig, tau: float, gamma2: float, start: Any = None) -> Estimate:
    """``P_start(sup_{k<=n} ||X_k|| <= gamma2 tau and ||X_n|| <= tau)``."""
    group = config.sampler.group
    start = group.identity if start is None else group.normalize(start)
    norm = config.norm_ref()
    if norm(start) > tau + 1e-9:
        raise ValueError(f"start has norm {norm(start)} > tau={tau}")
    cfg = WalkConfig(config.steps, config.trials, config.master_seed, config.sampler, norm,
                     config.threads, config.chunk, start)

    def run(tr):
        r = _walk_chunk(cfg, tr)
        return (r["sup"] <= gamma2 * tau + 1e-9) & (r["end_norm"] <= tau + 1e-9)

    hits = np.concatenate(_map_chunks(cfg, run))
    return _proportion(hits, config.master_seed, {"tau": tau, "gamma2": gamma2, "n": config.steps,
                                                 "start": tuple(start)})


def meyer_discrepancy(config: WalkConfig, R: float) -> Estimate:
    """Empirical probability that some step among ``n`` has norm ``> R``
    (a big jump in the coupling of the walk with its truncation)."""
    norm = config.norm_ref()

    def run(tr):
        sampler = config.sampler
        keys = trial_keys(config.master_seed, tr)
        hit = np.zeros(tr.size, dtype=bool)
        for a in range(0, config.steps, 512):
            steps = np.arange(a, min(a + 512, config.steps))
            inc = sampler.sample(keys, steps)
            hit |= (_norm_coords(norm, sampler.group, inc) > R + 1e-9).any(axis=1)
        return hit

    hits = np.concatenate(_map_chunks(config, run))
    return _proportion(hits, config.master_seed, {"R": R, "n": config.steps})


# -- wreath products ---------------------------------------------------------------

def _as_lamp_function(F_K, need_real: bool) -> Callable[[np.ndarray], np.ndarray]:
    if callable(F_K):
        def f(x):
            x = np.asarray(x, dtype=float)
            try:
                out = np.asarray(F_K(x), dtype=float)
                if out.shape != x.shape:
                    raise TypeError
            except (TypeError, ValueError):
                out = np.array([float(F_K(float(v))) for v in x.ravel()]).reshape(x.shape)
            return out
        return f
    if need_real:
        raise TypeError("the l* variant evaluates F_K at half-integers; supply F_K as a "
                        "function on nonnegative reals, not an integer table")
    table = np.asarray(F_K, dtype=float)

    def g(x):
        xi = np.asarray(x).astype(np.int64)
        if (xi >= table.size).any():
            raise ValueError("local time beyond the supplied F_K table")
        return table[xi]

    return g


def wreath_return_mc(config: WalkConfig, F_K, target: Any = None,
                     variants: Sequence[str] = ("l_star", "l")) -> dict[str, Estimate]:
    """Monte Carlo of ``E[exp(-sum_h F_K(L(h))) 1{X_n = g}]`` on the base walk.

    ``l``: ``L(h)`` is the local time ``#{0 <= i <= n : X_i = h}``.
    ``l_star``: ``L(h) = l(n,h) - 1{h=e}/2 - 1{h=g}/2``, half the number of
    lamp moves at ``h`` under the switch-walk-switch measure, which makes the
    functional equal to the wreath return probability when ``F_K`` is exact.
    Sites never visited contribute ``F_K(0) = 0``.
    """
    for v in variants:
        if v not in ("l", "l_star"):
            raise ValueError(f"unknown variant {v!r}")
    fns = {v: _as_lamp_function(F_K, v == "l_star") for v in variants}
    if any(abs(float(fns[v](np.zeros(1))[0])) > 0 for v in variants):
        raise ValueError("F_K(0) must be 0")
    group = config.sampler.group
    g = group.identity if target is None else group.normalize(target)
    garr = np.array(list(g), dtype=np.int64)
    e = np.array(list(group.identity), dtype=np.int64)

    def run(tr):
        r = _walk_chunk(config, tr, keep_path=True)
        path = r["path"]                      # (T, n+1, d)
        T, L, d = path.shape
        lo = path.min(axis=(0, 1))
        span = path.max(axis=(0, 1)) - lo + 1
        lin = np.zeros(path.shape[:2], dtype=np.int64)
        for j in range(d):
            lin = lin * span[j] + (path[..., j] - lo[j])
        W = int(np.prod(span))
        counts = np.bincount((np.arange(T)[:, None] * W + lin).ravel(), minlength=T * W).reshape(T, W)
        hit = (r["end"] == garr).all(axis=1)

        def site(x):
            if ((x - lo) < 0).any() or ((x - lo) >= span).any():
                return None
            k = 0
            for j in range(d):
                k = k * span[j] + (x[j] - lo[j])
            return int(k)

        out = {}
        for v, f in fns.items():
            lt = counts.astype(float)
            if v == "l_star":
                for x in (e, garr):
                    s = site(x)
                    if s is not None:
                        lt[:, s] -= 0.5
                lt = np.maximum(lt, 0.0)
            vals = np.where(lt > 0, f(lt), 0.0).sum(axis=1)
            out[v] = np.where(hit, np.exp(-vals), 0.0)
        return out

    parts = _map_chunks(config, run)
    res = {}
    for v in variants:
        res[v] = mean_estimate(np.concatenate([p[v] for p in parts]), config.master_seed,
                               {"variant": v, "n": config.steps, "target": tuple(g)})
    return res


def range_return_mc(config: WalkConfig, checkpoints: Sequence[int], weight: float = math.log(2.0),
                    block: int = 256) -> list[Estimate]:
    """``E[exp(-weight * #range(X_0..X_n)) 1{X_n = 0}]`` at each checkpoint
    ``n``, for nearest-neighbour walks on ``Z``.

    The visited set of such a walk is an integer interval, so the functional
    is carried by the running minimum and maximum. With ``F_K = weight *
    1{x > 0}`` it equals :func:`wreath_return_mc` at ``g = e`` for both
    variants (the origin is visited at least twice on ``{X_n = 0}``).
    """
    sampler = config.sampler
    if sampler.group.kind != "lattice" or sampler.group.d != 1:
        raise ValueError("range functional needs a walk on Z")
    if sampler._axes is None and np.abs(sampler._coords).max() > 1:
        raise ValueError("range functional needs nearest-neighbour steps")
    cps = sorted(set(int(c) for c in checkpoints))
    if cps[0] < 1:
        raise ValueError("checkpoints must be positive")
    nmax = cps[-1]

    def run(tr):
        keys = trial_keys(config.master_seed, tr)
        T = tr.size
        pos = np.zeros(T, dtype=np.int64)
        lo = np.zeros(T, dtype=np.int64)
        hi = np.zeros(T, dtype=np.int64)
        out = np.zeros((T, len(cps)))
        ci = 0
        for a in range(0, nmax, block):
            b = min(a + block, nmax)
            inc = sampler.sample(keys, np.arange(a, b))[..., 0]
            P = pos[:, None] + np.cumsum(inc, axis=1)
            # record checkpoints inside this block
            while ci < len(cps) and cps[ci] <= b:
                k = cps[ci] - a - 1
                lo_k = np.minimum(lo, P[:, : k + 1].min(axis=1))
                hi_k = np.maximum(hi, P[:, : k + 1].max(axis=1))
                rng = (hi_k - lo_k + 1).astype(float)
                out[:, ci] = np.where(P[:, k] == 0, np.exp(-weight * rng), 0.0)
                ci += 1
            lo = np.minimum(lo, P.min(axis=1))
            hi = np.maximum(hi, P.max(axis=1))
            pos = P[:, -1]
        return out

    vals = np.concatenate(_map_chunks(config, run), axis=0)
    return [mean_estimate(vals[:, i], config.master_seed, {"n": n, "weight": weight})
            for i, n in enumerate(cps)]


def poissonized_return_mc(config: WalkConfig, t: float, target: Any = None) -> Estimate:
    """``P(X_{N_t} = g)`` with ``N_t ~ Poisson(t)`` independent of the walk:
    a Monte Carlo check of the heat kernel ``p_t(g)``."""
    sampler = config.sampler
    group = sampler.group
    g = np.array(list(group.identity if target is None else group.normalize(target)), dtype=np.int64)
    nmax = int(stats.poisson.isf(1e-15, t)) + 1

    def run(tr):
        keys = trial_keys(config.master_seed, tr)
        N = stats.poisson.ppf(uniforms(keys, np.zeros(1, dtype=np.int64), 63)[:, 0], t)
        N = np.minimum(N.astype(np.int64), nmax)
        inc = sampler.sample(keys, np.arange(nmax))
        P = _advance(group, np.zeros((tr.size, sampler.dim), dtype=np.int64), inc)
        P = np.concatenate([np.zeros((tr.size, 1, sampler.dim), dtype=np.int64), P], axis=1)
        endp = P[np.arange(tr.size), N]
        return (endp == g).all(axis=1)

    hits = np.concatenate(_map_chunks(config, run))
    return _proportion(hits, config.master_seed, {"t": t})
