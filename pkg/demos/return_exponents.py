"""Return probabilities of nu_alpha on Z for a few alpha.

For alpha < 2 the return probability decays like n^(-1/alpha); at alpha = 2
a logarithmic correction appears. The script prints the fitted log-log slope
next to -1/alpha and the relative bracket width of the last point;
convergence of the slope is slow as alpha approaches 2.

    python demos/return_exponents.py
"""
from walklab.analysis import fit_exponent
from walklab.convolution import ConvolutionBudget, return_series
from walklab.groups import lattice
from walklab.measures import build_nu_alpha

R = 2**14
NS = [2**k for k in range(4, 10)]

if __name__ == "__main__":
    print(f"{'alpha':>6} {'slope':>8} {'-1/alpha':>9} {'last bracket':>13}")
    for alpha in (1.0, 1.5, 1.8):
        nu = build_nu_alpha(lattice(1), alpha, R)
        rows = return_series(nu, NS, ConvolutionBudget(R))
        slope = fit_exponent([(r.n, r.value) for r in rows])[0]
        last = rows[-1]
        width = (last.upper - last.lower) / last.value
        print(f"{alpha:6.2f} {slope:8.4f} {-1 / alpha:9.4f} {width:13.2e}")
