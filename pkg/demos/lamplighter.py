"""Monte Carlo return probability of the lamplighter walk over Z.

The lazy switch-walk-switch walk on Z_2 wr Z returns to the identity with
probability E[2^(-#range) 1{X_n = 0}] for the base walk. Its logarithm decays
like n^(1/3); the script prints log(-log q(n)) against log n and the slope.

    python demos/lamplighter.py [trials]
"""
import math
import sys

from walklab.analysis import fit_exponent
from walklab.groups import lattice
from walklab.measures import lazy_srw
from walklab.montecarlo import WalkConfig, range_return_mc

if __name__ == "__main__":
    trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
    cps = [2**k for k in range(6, 12)]
    cfg = WalkConfig(max(cps), trials, 7, lazy_srw(lattice(1)))
    est = range_return_mc(cfg, cps)
    pts = []
    for e in est:
        n = e.meta["n"]
        print(f"n={n:6d}  q={e.value:.3e}  se={e.se:.1e}")
        if e.value > 0:
            pts.append((n, -math.log(e.value)))
    print(f"slope of log(-log q) vs log n: {fit_exponent(pts)[0]:.3f} (expected near 1/3)")
