"""File cache for enumerated balls and norm tables, keyed by a hash of the
defining parameters. Enabled by the ``WALKLAB_CACHE`` environment variable."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .geometry import Ball, NormWeights, enumerate_ball, weighted_norm_table
from .groups import Group

__all__ = ["cache_dir", "cached_ball", "cached_norm_table", "save_ball", "load_ball"]

ENV = "WALKLAB_CACHE"


def cache_dir() -> Path | None:
    d = os.environ.get(ENV)
    if not d:
        return None
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:32]


def save_ball(ball: Ball, path: Path) -> None:
    keys = [ball.group.canonical_key(g) for g in ball.elements]
    lens = np.array([len(k) for k in keys], dtype=np.int64)
    blob = np.frombuffer(b"".join(keys), dtype=np.uint8)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, lens=lens, blob=blob, norms=ball.norms,
             info=np.array(json.dumps({"radius": ball.radius, "norm_name": ball.norm_name,
                                       "integer_valued": ball.integer_valued,
                                       "meta": ball.meta}, default=str)))
    os.replace(tmp, path)


def load_ball(group: Group, path: Path) -> Ball:
    with np.load(path) as z:
        lens, blob, norms = z["lens"], z["blob"].tobytes(), z["norms"]
        info = json.loads(str(z["info"]))
    offs = np.concatenate([[0], np.cumsum(lens)])
    els = [group.decode(blob[a:b]) for a, b in zip(offs[:-1], offs[1:])]
    return Ball(group, float(info["radius"]), els, norms, norm_name=info["norm_name"],
                integer_valued=bool(info["integer_valued"]), meta=info["meta"])


def _cached(group: Group, payload: dict, build) -> Ball:
    d = cache_dir()
    if d is None:
        return build()
    path = d / f"ball-{_key(payload)}.npz"
    if path.exists():
        return load_ball(group, path)
    ball = build()
    save_ball(ball, path)
    return ball


def cached_ball(group: Group, r: float, cap: int = 5_000_000) -> Ball:
    payload = {"what": "word_ball", "group": group.spec.to_dict(), "r": r, "cap": cap}
    return _cached(group, payload, lambda: enumerate_ball(group, r, cap))


def cached_norm_table(group: Group, weights: NormWeights, r_max: float, cap: int = 5_000_000) -> Ball:
    payload = {"what": "weighted_table", "group": group.spec.to_dict(), "a": list(weights.a),
               "r": r_max, "cap": cap}
    return _cached(group, payload, lambda: weighted_norm_table(group, weights, r_max, cap))
