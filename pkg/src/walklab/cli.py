"""Command line harness: ``walklab run``, ``walklab verify``, ``walklab list-experiments``.

Configurations are INI files. The ``[experiment]`` section names the
experiment kind and seed; ``[group]``, ``[measure]`` and an experiment
specific section hold the parameters. Every output file starts with comment
lines carrying the package version and the sha256 of the resolved
configuration. The worker count is an execution setting: it is not part of
the resolved configuration and never changes any output byte.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import __version__

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "run", "main", "EXPERIMENTS"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# -- configuration ---------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    sections: dict[str, dict[str, str]]
    threads: int = 1

    def resolved_text(self) -> str:
        """Canonical text of the configuration (sorted, seed applied, threads excluded)."""
        buf = io.StringIO()
        for sec in sorted(self.sections):
            buf.write(f"[{sec}]\n")
            for k in sorted(self.sections[sec]):
                if sec == "experiment" and k == "threads":
                    continue
                buf.write(f"{k} = {self.sections[sec][k]}\n")
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()

    def header(self) -> list[str]:
        lines = [f"walklab {__version__}", f"experiment={self.kind}", f"config_sha256={self.sha256()}"]
        lines += [f"config: {ln}" for ln in self.resolved_text().splitlines()]
        return lines

    # typed getters ------------------------------------------------------------
    def _raw(self, sec: str, key: str, default=None):
        try:
            return self.sections[sec][key]
        except KeyError:
            if default is None:
                raise ConfigError(f"missing key [{sec}] {key}") from None
            return default

    def get_str(self, sec, key, default=None) -> str:
        return str(self._raw(sec, key, default)).strip()

    def get_int(self, sec, key, default=None) -> int:
        v = self._raw(sec, key, default)
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"[{sec}] {key} must be an integer, got {v!r}") from None

    def get_float(self, sec, key, default=None) -> float:
        v = self._raw(sec, key, default)
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"[{sec}] {key} must be a number, got {v!r}") from None

    def get_list(self, sec, key, conv=float, default=None) -> list:
        v = self._raw(sec, key, default)
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        try:
            return [conv(x) for x in str(v).replace(";", ",").split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"[{sec}] {key} must be a comma separated list, got {v!r}") from None


def load_config(path: str | Path, seed: int | None = None, threads: int | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    sections = {s: dict(cp[s]) for s in cp.sections()}
    if "experiment" not in sections or "kind" not in sections["experiment"]:
        raise ConfigError("missing key [experiment] kind")
    kind = sections["experiment"]["kind"].strip()
    if kind not in EXPERIMENTS:
        raise ConfigError(f"[experiment] kind: unknown experiment {kind!r}; "
                          f"see `walklab list-experiments`")
    if seed is not None:
        sections["experiment"]["seed"] = str(seed)
    sections["experiment"].setdefault("seed", "0")
    cfg = ExperimentConfig(kind, 0, sections)
    cfg.seed = cfg.get_int("experiment", "seed")
    cfg.threads = threads if threads is not None else cfg.get_int("experiment", "threads", "1")
    if cfg.threads < 1:
        raise ConfigError("[experiment] threads must be at least 1")
    return cfg


# -- builders from config ------------------------------------------------------------

def _group(cfg: ExperimentConfig):
    from .groups import GroupError, GroupSpec, make_group
    sec = "group"
    kind = cfg.get_str(sec, "kind", "lattice")
    try:
        if kind == "lattice":
            return make_group(GroupSpec("lattice", d=cfg.get_int(sec, "d", "1")))
        if kind == "heisenberg":
            return make_group(GroupSpec("heisenberg"))
        if kind == "wreath":
            return make_group(GroupSpec("wreath", m=cfg.get_int(sec, "m", "2"), d=cfg.get_int(sec, "d", "1")))
        if kind == "cyclic":
            return make_group(GroupSpec("cyclic", m=cfg.get_int(sec, "m")))
    except GroupError as exc:
        raise ConfigError(f"[group]: {exc}") from None
    raise ConfigError(f"[group] kind: unknown group {kind!r}")


def _measure(cfg: ExperimentConfig, group=None):
    from .geometry import NormWeights
    from .measures import PhiFunction, build_mu_sa, build_nu_phi, build_nu_sa_beta, lazy_srw
    group = group or _group(cfg)
    sec = "measure"
    fam = cfg.get_str(sec, "family")
    if fam == "nu_alpha":
        if group.kind != "lattice":
            raise ConfigError("[measure] family nu_alpha needs a lattice group")
        alpha = cfg.get_float(sec, "alpha")
        nu = build_nu_phi((group, cfg.get_int(sec, "radius")), PhiFunction(alpha))
        nu.meta.update(family="nu_alpha", alpha=alpha)
        return nu
    if fam == "nu_phi":
        if group.kind != "lattice":
            raise ConfigError("[measure] family nu_phi is configured for lattice groups")
        phi = PhiFunction(cfg.get_float(sec, "beta"), cfg.get_float(sec, "gamma", "0"))
        return build_nu_phi((group, cfg.get_int(sec, "radius")), phi)
    if fam == "mu_sa":
        a = cfg.get_list(sec, "a")
        M = cfg.get_int(sec, "M", "4096")
        return build_mu_sa(group, a, M)
    if fam == "nu_sa_beta":
        a = cfg.get_list(sec, "a")
        return build_nu_sa_beta((NormWeights(tuple(a)), cfg.get_float(sec, "radius")), cfg.get_float(sec, "beta"))
    if fam == "lazy_srw":
        return lazy_srw(group, cfg.get_float(sec, "laziness", "0.5"))
    raise ConfigError(f"[measure] family: unknown family {fam!r}")


def _budget(cfg: ExperimentConfig, default=None):
    from .convolution import ConvolutionBudget
    r = cfg.sections.get("budget", {}).get("ball_radius")
    return ConvolutionBudget(float(r) if r is not None else default)


# -- output --------------------------------------------------------------------------

class Output:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def csv(self, name: str, columns: list[str], rows: list[list[Any]]) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            for ln in self.cfg.header():
                fh.write(f"# {ln}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(path)
        return path

    def plot(self, rows: list[tuple[float, float, str]]) -> Path:
        return self.csv("plot.csv", ["x", "y", "series"], [list(r) for r in rows])

    def summary(self, lines: list[str]) -> Path:
        path = self.out / "summary.txt"
        with open(path, "w") as fh:
            for ln in self.cfg.header():
                fh.write(f"# {ln}\n")
            fh.write("\n".join(lines) + "\n")
        self.files.append(path)
        return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# -- experiments ------------------------------------------------------------------------

def exp_return_series(cfg: ExperimentConfig, out: Output) -> None:
    from .analysis import fit_exponent
    from .convolution import axis_return_series, return_series
    ns = cfg.get_list("series", "n", int)
    if not ns or any(n < 0 for n in ns):
        raise ConfigError("[series] n must list nonnegative integers")
    ns = sorted(ns)
    method = cfg.get_str("series", "method", "doubling")
    if method == "axis":
        group = _group(cfg)
        if not group.standard_basis or cfg.get_str("measure", "family") != "mu_sa":
            raise ConfigError("[series] method=axis needs family mu_sa on a standard lattice")
        rows = axis_return_series(cfg.get_list("measure", "a"), ns)
    elif method == "doubling":
        nu = _measure(cfg)
        rows = return_series(nu, ns, _budget(cfg))
    else:
        raise ConfigError(f"[series] method: unknown method {method!r}")
    out.csv("return_series.csv", ["n", "value", "lower", "upper"],
            [[r.n, r.value, r.lower, r.upper] for r in rows])
    out.plot([(float(r.n), r.value, "return") for r in rows if r.n > 0])
    pos = [(r.n, r.value) for r in rows if r.n > 0 and r.value > 0]
    lines = [f"points={len(rows)}", f"flagged={sum(r.flagged for r in rows)}"]
    if len(pos) >= 3:
        s, c, res = fit_exponent(pos)
        lines.append(f"fitted_slope={s!r} intercept={c!r} max_residual={res!r}")
    out.summary(lines)


def _scaling_model(beta: float, gamma: float) -> tuple[str, Callable[[float], float]]:
    if beta < 2:
        return f"t^(1/{beta:g})", lambda t: t ** (1.0 / beta)
    if beta == 2 and gamma == 0:
        return "(t log t)^(1/2)", lambda t: math.sqrt(t * math.log(t))
    if beta == 2 and gamma == 1:
        return "(t log log t)^(1/2)", lambda t: math.sqrt(t * math.log(math.log(t)))
    return "t^(1/2)", lambda t: math.sqrt(t)


def exp_scaling(cfg: ExperimentConfig, out: Output) -> None:
    import numpy as np
    from .analysis import scaling_r
    from .measures import PhiFunction
    beta = cfg.get_float("scaling", "beta")
    gamma = cfg.get_float("scaling", "gamma", "0")
    t_min = cfg.get_float("scaling", "t_min", "100")
    t_max = cfg.get_float("scaling", "t_max", "1e6")
    pts = cfg.get_int("scaling", "points", "41")
    if not (t_min > 2 and t_max > t_min and pts >= 2):
        raise ConfigError("[scaling] needs 2 < t_min < t_max and points >= 2")
    phi = PhiFunction(beta, gamma)
    name, model = _scaling_model(beta, gamma)
    ts = np.logspace(math.log10(t_min), math.log10(t_max), pts)
    rows = []
    for t in ts:
        r = scaling_r(phi, float(t))
        rows.append([float(t), r, model(float(t)), r / model(float(t))])
    out.csv("scaling.csv", ["t", "r", "model", "ratio"], rows)
    out.plot([(r[0], r[1], "r") for r in rows] + [(r[0], r[2], name) for r in rows])
    ratios = [r[3] for r in rows]
    out.summary([f"phi={phi.label()}", f"model={name}", f"max_over_min_ratio={max(ratios) / min(ratios)!r}"])


def exp_truncation(cfg: ExperimentConfig, out: Output) -> None:
    from .measures import second_moment_truncated, truncate_measure
    nu = _measure(cfg)
    Rs = cfg.get_list("truncation", "R", float)
    rows = []
    for R in Rs:
        _, delta = truncate_measure(nu, R)
        rows.append([R, delta, second_moment_truncated(nu, R)])
    out.csv("truncation.csv", ["R", "delta", "G"], rows)
    out.plot([(r[0], r[1], "delta") for r in rows] + [(r[0], r[2], "G") for r in rows])
    out.summary([f"radii={len(rows)}"])


def exp_volume(cfg: ExperimentConfig, out: Output) -> None:
    from .analysis import fit_exponent
    from .cache import cached_ball
    group = _group(cfg)
    rs = cfg.get_list("volume", "r", float)
    ball = cached_ball(group, max(rs))
    rows = [[r, ball.volume(r)] for r in rs]
    out.csv("volume.csv", ["r", "V"], rows)
    out.plot([(r, float(v), "V") for r, v in rows])
    pos = [(r, v) for r, v in rows if r > 0]
    lines = [f"ball_elements={len(ball)}"]
    if len(pos) >= 3:
        lines.append(f"fitted_slope={fit_exponent(pos)[0]!r}")
    out.summary(lines)


def _walk_config(cfg: ExperimentConfig, steps: int, sec: str):
    from .montecarlo import WalkConfig
    trials = cfg.get_int(sec, "trials")
    if trials <= 0:
        raise ConfigError(f"[{sec}] trials must be positive")
    return WalkConfig(steps, trials, cfg.seed, _measure(cfg), threads=cfg.threads)


def exp_confinement(cfg: ExperimentConfig, out: Output) -> None:
    from .analysis import ScalingFunction
    from .montecarlo import confinement_probability
    n = cfg.get_int("confinement", "n")
    wc = _walk_config(cfg, n, "confinement")
    scal = ScalingFunction.power(cfg.get_float("confinement", "scaling_beta"))
    rows = []
    for g in cfg.get_list("confinement", "gamma"):
        e = confinement_probability(wc, g, scal)
        rows.append([n, g, e.value, e.ci_lo, e.ci_hi, e.trials, e.seed])
    out.csv("confinement.csv", ["n", "gamma", "estimate", "ci_lo", "ci_hi", "trials", "seed"], rows)
    out.plot([(r[1], r[2], "confinement") for r in rows])
    out.summary([f"n={n}", f"points={len(rows)}"])


def exp_meyer(cfg: ExperimentConfig, out: Output) -> None:
    from .measures import truncate_measure
    from .montecarlo import meyer_discrepancy
    rows = []
    nu = _measure(cfg)
    for n in cfg.get_list("meyer", "n", int):
        for R in cfg.get_list("meyer", "R"):
            from .montecarlo import WalkConfig
            trials = cfg.get_int("meyer", "trials")
            if trials <= 0:
                raise ConfigError("[meyer] trials must be positive")
            e = meyer_discrepancy(WalkConfig(n, trials, cfg.seed, nu, threads=cfg.threads), R)
            _, delta = truncate_measure(nu, R)
            rows.append([n, R, delta, n * delta, 1 - (1 - delta) ** n, e.value, e.ci_lo, e.ci_hi, e.trials, e.seed])
    out.csv("meyer.csv", ["n", "R", "delta", "bound", "exact", "estimate", "ci_lo", "ci_hi", "trials", "seed"], rows)
    out.plot([(float(r[0]), r[5], f"R={r[1]:g}") for r in rows])
    out.summary([f"points={len(rows)}"])


def exp_wreath_mc(cfg: ExperimentConfig, out: Output) -> None:
    from .analysis import fit_exponent
    from .groups import lattice
    from .measures import lazy_srw
    from .montecarlo import WalkConfig, range_return_mc
    sec = "wreath"
    trials = cfg.get_int(sec, "trials")
    if trials <= 0:
        raise ConfigError("[wreath] trials must be positive")
    cps = sorted(cfg.get_list(sec, "n", int))
    if not cps or cps[0] < 1:
        raise ConfigError("[wreath] n must list positive integers")
    m = cfg.get_int(sec, "m", "2")
    if m < 2:
        raise ConfigError("[wreath] m must be at least 2")
    wc = WalkConfig(max(cps), trials, cfg.seed, lazy_srw(lattice(1), cfg.get_float(sec, "laziness", "0.5")),
                    threads=cfg.threads)
    # uniform lamps: F_K(x) = log m for x > 0
    est = range_return_mc(wc, cps, weight=math.log(m))
    rows = [[e.meta["n"], e.value, e.ci_lo, e.ci_hi, e.trials, e.seed] for e in est]
    out.csv("wreath.csv", ["n", "estimate", "ci_lo", "ci_hi", "trials", "seed"], rows)
    out.plot([(float(r[0]), -math.log(r[1]) if r[1] > 0 else math.inf, "-log q") for r in rows])
    pos = [(r[0], -math.log(r[1])) for r in rows if 0 < r[1] < 1]
    lines = [f"checkpoints={len(rows)}"]
    if len(pos) >= 3:
        lines.append(f"slope_loglog={fit_exponent(pos)[0]!r}")
    out.summary(lines)


def exp_heat_kernel(cfg: ExperimentConfig, out: Output) -> None:
    from .convolution import heat_kernel_series
    nu = _measure(cfg)
    ts = sorted(cfg.get_list("heat", "t"))
    ks = heat_kernel_series(nu, ts, budget=_budget(cfg))
    e = nu.group.identity
    rows = []
    for t, k in zip(ts, ks):
        v, lo, hi = k.value_bracket(e)
        rows.append([t, v, lo, hi])
    out.csv("heat_kernel.csv", ["t", "value", "lower", "upper"], rows)
    out.plot([(r[0], r[1], "p_t(e)") for r in rows])
    out.summary([f"points={len(rows)}"])


def exp_bounds(cfg: ExperimentConfig, out: Output) -> None:
    from .analysis import bound_check_davies, bound_check_offdiagonal, fit_on_diagonal
    nu = _measure(cfg)
    sec = "bounds"
    ts = cfg.get_list(sec, "t")
    xs = cfg.get_list(sec, "x", int)
    m_fn, (slope, A) = fit_on_diagonal(nu, cfg.get_list(sec, "fit_t", float, "2,4,8,16,32,64"), _budget(cfg))
    check = cfg.get_str(sec, "check", "davies")
    if check == "davies":
        rep = bound_check_davies(nu, cfg.get_float(sec, "R"), ts, xs, m_fn, _budget(cfg))
    elif check in ("up1", "up2"):
        rep = bound_check_offdiagonal(nu, ts, xs, cfg.get_float(sec, "alpha"), cfg.get_float(sec, "D", "1"),
                                      check, m_fn, _budget(cfg))
    else:
        raise ConfigError(f"[bounds] check: unknown check {check!r}")
    out.csv("bounds.csv", ["t", "x_norm", "lhs", "shape", "ratio"],
            [[r["t"], r["x_norm"], r["lhs"], r["shape"], r["ratio"]] for r in rep.rows])
    out.plot([(r["x_norm"], r["ratio"], f"t={r['t']:g}") for r in rep.rows])
    out.summary([f"m(t) = {A!r} * t^{slope!r}", rep.summary()])


EXPERIMENTS: dict[str, tuple[Callable, str]] = {
    "return_series": (exp_return_series, "certified nu^(n)(e) series with fitted slope"),
    "scaling": (exp_scaling, "scaling function r(t) against its closed-form model"),
    "truncation": (exp_truncation, "tail mass delta_R and truncated second moment G(R)"),
    "volume": (exp_volume, "word-ball volumes V(r) and growth slope"),
    "confinement": (exp_confinement, "Monte Carlo P(sup ||X_k|| >= gamma r(n))"),
    "meyer": (exp_meyer, "Monte Carlo big-jump probability against n delta_R"),
    "wreath_mc": (exp_wreath_mc, "lamplighter return probability via the range functional"),
    "heat_kernel": (exp_heat_kernel, "Poissonized p_t(e) with brackets"),
    "bounds": (exp_bounds, "calibrated heat-kernel upper bounds (davies, up1, up2)"),
}


def run(config_path: str | Path, seed: int | None = None, out: str | Path | None = None,
        threads: int | None = None) -> list[Path]:
    cfg = load_config(config_path, seed, threads)
    out_dir = Path(out) if out is not None else Path(cfg.get_str("experiment", "out", "walklab-out"))
    o = Output(cfg, out_dir)
    EXPERIMENTS[cfg.kind][0](cfg, o)
    return o.files


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="walklab", description="Random walk experiments on finitely generated groups.",
                                 epilog="Set WALKLAB_CACHE to a directory to reuse enumerated balls across runs.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    pr = sub.add_parser("run", help="run an experiment from a config file")
    pr.add_argument("--config", required=True, help="INI experiment file")
    pr.add_argument("--seed", type=int, help="override [experiment] seed")
    pr.add_argument("--out", help="output directory (default: [experiment] out or walklab-out)")
    pr.add_argument("--threads", type=int, help="worker threads; outputs do not depend on it")
    pv = sub.add_parser("verify", help="run a named acceptance suite")
    pv.add_argument("suite", help="suite name, see list-experiments")
    pv.add_argument("--threads", type=int, default=1, help="worker threads")
    pv.add_argument("--seed", type=int, help="override the default seed")
    sub.add_parser("list-experiments", help="list experiment kinds and verify suites")
    args = ap.parse_args(argv)

    if args.cmd == "list-experiments":
        from .verify import SUITES
        print("experiments:")
        for k, (_, doc) in EXPERIMENTS.items():
            print(f"  {k:15s} {doc}")
        print("verify suites:")
        for k, s in SUITES.items():
            print(f"  {k:20s} {s.doc}")
        return 0
    if args.cmd == "run":
        try:
            files = run(args.config, args.seed, args.out, args.threads)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except MemoryError as exc:
            print(f"resource limit: {exc}", file=sys.stderr)
            return 3
        for f in files:
            print(f)
        return 0
    from .verify import SUITES, run_suite
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from: {', '.join(SUITES)}", file=sys.stderr)
        return 2
    ok = run_suite(args.suite, threads=args.threads, seed=args.seed)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
