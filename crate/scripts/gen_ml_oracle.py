#!/usr/bin/env python3
"""Generate frozen oracle fixtures for the Mittag-Leffler evaluator.

Writes two JSON fixtures under crates/core/tests/data/:

  mlf_oracle_grid.json   -- 1000 stratified random (a, b, z) points with
                            E_{a,b}(z) computed by an arbitrary-precision
                            oracle (power series with adaptive precision;
                            Poincare asymptotic continuation when the series
                            would require excessive cancellation headroom).
  ml_kernel_grid.json    -- 220 random (beta, c, t) points with the
                            Mittag-Leffler density c^b t^(b-1) E_{b,b}(-(ct)^b)
                            and CDF 1 - E_b(-(ct)^b).

Also prints a handful of spot values that are frozen directly into unit
tests. Deterministic: fixed RNG seed, fixed stratification. Requires mpmath.
"""

import json
import math
import os
import random

from mpmath import mp, mpf, exp, erfc, expm1, gamma, rgamma, sqrt, pi, isnan

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "data")

# Series cancellation headroom grows like X = |z|^(1/a) decimal digits; above
# this X the oracle switches to the asymptotic expansion, whose optimal
# truncation error ~exp(-X) is then far below any f64 comparison tolerance.
SERIES_X_LIMIT = 300.0


def ml_series(a, b, z, extra_dps):
    """Power series sum(z^n / Gamma(a n + b)) at adaptive precision."""
    old = mp.dps
    try:
        mp.dps = int(35 + extra_dps)
        za, zb, zz = mpf(repr(a)), mpf(repr(b)), mpf(repr(z))
        total = mp.zero
        term_zn = mp.one
        below = 0
        for n in range(0, 200000):
            if n > 0:
                term_zn *= zz
            term = term_zn * rgamma(za * n + zb)
            total += term
            if abs(term) < mp.mpf(10) ** (-(mp.dps - 5)) * (abs(total) + mp.mpf(10) ** (-mp.dps)):
                below += 1
                if below > 40:
                    break
            else:
                below = 0
        else:
            raise RuntimeError(f"series did not converge for a={a} b={b} z={z}")
        return total
    finally:
        mp.dps = old


def ml_poincare(a, b, z):
    """Asymptotic expansion for |z|^(1/a) large.

    z < 0:  E ~ -sum_{k>=1} z^-k / Gamma(b - a k)
    z > 0:  E ~ (1/a) z^((1-b)/a) exp(z^(1/a)) - sum_{k>=1} z^-k / Gamma(b - a k)
    truncated at the smallest term.
    """
    old = mp.dps
    try:
        mp.dps = 60
        za, zb, zz = mpf(repr(a)), mpf(repr(b)), mpf(repr(z))
        total = mp.zero
        zinv = 1 / zz
        zk = mp.one
        env_prev = mp.inf
        for k in range(1, 4000):
            zk *= zinv
            x = zb - za * k
            # Truncate on the smooth envelope of |rgamma(x)| (reflection sine
            # replaced by 1): raw magnitudes dip to ~0 near the sine zeros,
            # and comparing them would truncate the series mid-way.
            if x >= mp.mpf("0.5"):
                env = abs(zk) / mp.gamma(x)
            else:
                env = abs(zk) * mp.gamma(1 - x) / mp.pi
            if env > env_prev:
                break
            env_prev = env
            total -= zk * rgamma(x)
            if env < mp.mpf(10) ** (-(mp.dps - 5)) * (abs(total) + mp.mpf(10) ** (-mp.dps)):
                break
        if zz > 0:
            x = zz ** (1 / za)
            total += exp(x) * (zz ** ((1 - zb) / za)) / za
        return total
    finally:
        mp.dps = old


def ml2(a, b, z):
    """Oracle E_{a,b}(z) for a, b in (0,1], real z."""
    if z == 0.0:
        return rgamma(mpf(repr(b)))
    x_of_z = abs(z) ** (1.0 / a)
    if x_of_z > SERIES_X_LIMIT:
        return ml_poincare(a, b, z)
    # Worst case (a near 1): max term ~ exp(X) while E ~ exp(-X), so the sum
    # cancels down by ~2X/ln(10) digits.
    extra = 0.9 * x_of_z + 10.0 if z < 0 else 0.0
    return ml_series(a, b, z, extra)


def self_check():
    """Verify the oracle against closed forms before trusting it."""
    mp.dps = 40
    checks = []
    for z in [-50.0, -37.2, -15.0, -8.0, -2.0, -1.0, -0.3, 0.7, 3.0, 5.0]:
        zz = mpf(repr(z))
        checks.append((ml2(1.0, 1.0, z), exp(zz)))
        checks.append((ml2(1.0, 2.0, z), expm1(zz) / zz))
        checks.append((ml2(0.5, 1.0, z), exp(zz * zz) * erfc(-zz)))
        checks.append((ml2(0.5, 0.5, z), 1 / sqrt(pi) + zz * exp(zz * zz) * erfc(-zz)))
    worst = 0.0
    for got, want in checks:
        rel = abs(got - want) / abs(want)
        worst = max(worst, float(rel))
    assert worst < 1e-25, f"oracle self-check failed: worst rel {worst}"
    print(f"oracle self-check: {len(checks)} identities, worst rel err {worst:.3e}")


def kernel_density(beta, c, t):
    """c^beta t^(beta-1) E_{beta,beta}(-(c t)^beta) at high precision."""
    old = mp.dps
    mp.dps = 50
    try:
        bb, cc, tt = mpf(repr(beta)), mpf(repr(c)), mpf(repr(t))
        x = cc * tt
        z = -(x ** bb)
        e = ml2(beta, beta, float(z)) if abs(z) < 1e15 else ml_poincare(beta, beta, float(z))
        # Recompute z in mp to keep the prefactor exact; E is already mp.
        return (cc ** bb) * (tt ** (bb - 1)) * e
    finally:
        mp.dps = old


def kernel_cdf(beta, c, t):
    old = mp.dps
    mp.dps = 50
    try:
        bb, cc, tt = mpf(repr(beta)), mpf(repr(c)), mpf(repr(t))
        z = -((cc * tt) ** bb)
        e = ml2(beta, 1.0, float(z)) if abs(z) < 1e15 else ml_poincare(beta, 1.0, float(z))
        return 1 - e
    finally:
        mp.dps = old


def fmt(v):
    return mp.nstr(v, 25)


def gen_grid(rng):
    rows = []

    def sample(n, a_rng, z_rng, log_z=False):
        out = []
        for _ in range(n):
            a = rng.uniform(*a_rng)
            b = rng.uniform(0.02, 1.0)
            if log_z:
                lo, hi = z_rng
                mag = math.exp(rng.uniform(math.log(lo), math.log(hi)))
                z = -mag
            else:
                z = rng.uniform(*z_rng)
            # Keep positive-z samples inside f64 range: E ~ exp(z^(1/a)).
            if z > 0 and z ** (1.0 / a) > 650.0:
                a = 1.0 - rng.uniform(0.0, 0.3)
            out.append((a, b, z))
        return out

    pts = []
    pts += sample(200, (0.02, 1.0), (-1.0, 1.0))            # series region
    pts += sample(250, (0.05, 1.0), (1.0, 15.0), log_z=True)  # contour heart
    pts += sample(120, (0.05, 1.0), (15.0, 37.0), log_z=True)
    pts += sample(120, (0.05, 1.0), (37.0, 50.0), log_z=True)
    pts += sample(160, (0.93, 1.0), (1.0, 40.0), log_z=True)  # near a = 1
    pts += sample(50, (0.3, 1.0), (0.5, 5.0))               # positive z
    pts += sample(100, (0.02, 1.0), (-50.0, 5.0))           # free-for-all
    assert len(pts) == 1000

    for (a, b, z) in pts:
        v = ml2(a, b, z)
        rows.append({"a": repr(a), "b": repr(b), "z": repr(z), "e": fmt(v)})
    return rows


def gen_kernel_grid(rng):
    rows = []
    for _ in range(220):
        beta = rng.uniform(0.05, 1.0)
        c = math.exp(rng.uniform(math.log(1e-3), math.log(1e3)))
        t = math.exp(rng.uniform(math.log(1e-9), math.log(1e4)))
        d = kernel_density(beta, c, t)
        f = kernel_cdf(beta, c, t)
        rows.append({
            "beta": repr(beta), "c": repr(c), "t": repr(t),
            "density": fmt(d), "cdf": fmt(f),
        })
    return rows


def spot_values():
    print("spot values for unit tests (25 significant digits):")
    mp.dps = 40
    named = {
        "E(0.5,0.5,-2.0)": ml2(0.5, 0.5, -2.0),
        "E(0.5,0.5,-1.0)": ml2(0.5, 0.5, -1.0),
        "E(0.5,1.0,-1.0) = e*erfc(1)": ml2(0.5, 1.0, -1.0),
        "E(0.7,0.7,0) = 1/Gamma(0.7)": rgamma(mpf("0.7")),
        "E(0.3,1.0,-7.5)": ml2(0.3, 1.0, -7.5),
        "E(0.97,0.31,-22.0)": ml2(0.97, 0.31, -22.0),
        "E(0.6,0.6,-3.7)": ml2(0.6, 0.6, -3.7),
        "density(0.5,1.0,1.0)": kernel_density(0.5, 1.0, 1.0),
        "density(0.6,3.0,1e-8)": kernel_density(0.6, 3.0, 1e-8),
        "density(0.9,2.0,0.5)": kernel_density(0.9, 2.0, 0.5),
        "cdf(0.5,1.0,4.0)": kernel_cdf(0.5, 1.0, 4.0),
        "cdf(0.7,0.25,2.0)": kernel_cdf(0.7, 0.25, 2.0),
        "cdf(0.98,1.5,3.0)": kernel_cdf(0.98, 1.5, 3.0),
    }
    for k, v in named.items():
        print(f"  {k:34s} {fmt(v)}")


def main():
    self_check()
    rng = random.Random(20240917)
    os.makedirs(OUT_DIR, exist_ok=True)

    grid = gen_grid(rng)
    with open(os.path.join(OUT_DIR, "mlf_oracle_grid.json"), "w") as f:
        json.dump(grid, f, indent=0)
    print(f"wrote mlf_oracle_grid.json with {len(grid)} rows")

    kern = gen_kernel_grid(rng)
    with open(os.path.join(OUT_DIR, "ml_kernel_grid.json"), "w") as f:
        json.dump(kern, f, indent=0)
    print(f"wrote ml_kernel_grid.json with {len(kern)} rows")

    spot_values()


if __name__ == "__main__":
    main()
