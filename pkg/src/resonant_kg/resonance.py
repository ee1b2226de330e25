"""Non-resonance conditions, admissible amplitude sets, and measure estimation.

With omega(eps) = sqrt(1 + eps), an amplitude eps is admissible at stage
truncation L when the shifted and plain Melnikov quantities

    f = |omega(eps) l - omega_j - eps M / (2 omega_j)|,    g = |omega(eps) l - omega_j|

stay above gamma / (l + omega_j)^tau for every pair with 1/(3 eps) <= l <= L,
omega_j <= 2 L, l != omega_j.  The limit set uses the doubled threshold
2 gamma / (l + omega_j)^tau with no stage cap; M is the spatial mean of the
time-averaged derivative of the nonlinearity along the solution branch.

The measure scanner estimates how much of (0, eta] the conditions exclude,
both by an exact union of per-pair excluded intervals (each f is strictly
monotone in eps, slope >= l/4) and by Monte Carlo sampling of the same
condition set.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .bifurcation import KernelField
from .field_algebra import CoeffField, field_multiply
from .spherical_basis import mean_integral

__all__ = [
    "ResonanceParams",
    "ConditionRecord",
    "mean_potential",
    "check_stage_conditions",
    "check_limit_conditions",
    "strong_diophantine_check",
    "DiophantineResult",
    "MeasureReport",
    "measure_scan",
    "fit_excluded_exponent",
    "records_to_csv",
]


@dataclass(frozen=True)
class ResonanceParams:
    """Melnikov parameters; gamma in (0, 1/6), tau in (1, 2)."""

    gamma: float
    tau: float
    eps0: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0 / 6.0:
            raise ValueError("gamma must lie in (0, 1/6)")
        if not 1.0 < self.tau < 2.0:
            raise ValueError("tau must lie in (1, 2)")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")


@dataclass(frozen=True)
class ConditionRecord:
    """One (l, j) pair with both Melnikov left-hand sides and the threshold."""

    ell: int
    j: int
    lhs_shifted: float
    lhs_plain: float
    threshold: float
    ok: bool


def mean_potential(w: CoeffField, v: KernelField,
                   normalization: str = "half_period") -> float:
    """Spatial mean of the time average of 3 (w + v)^2.

    'half_period' is (1/pi) * int_0^pi b0 dx (the version entering the
    small-divisor analysis); 'normalized' uses the (2/pi) dx measure instead
    and is exactly twice as large.  Exposed for sensitivity studies.
    """
    u = v.embed(L=max(w.L, v.J + 1), J=max(w.J, v.J)) + w
    q = field_multiply(u, u)
    m = 3.0 * mean_integral(q.u[0])
    if normalization == "half_period":
        return float(m)
    if normalization == "normalized":
        return float(2.0 * m)
    raise ValueError(f"unknown normalization {normalization!r}")


def _condition_failures(eps: float, mean_value: float, gamma: float, tau: float,
                        ell_max: int, omega_j_max: int, factor: float,
                        strict: bool) -> list[ConditionRecord]:
    """Pairs in [1/(3 eps), ell_max] x [1, omega_j_max] violating the conditions."""
    if eps <= 0.0:
        return []
    ell_lo = int(np.ceil(1.0 / (3.0 * eps)))
    if ell_lo > ell_max:
        return []
    omega = np.sqrt(1.0 + eps)
    ells = np.arange(ell_lo, ell_max + 1)
    wjs = np.arange(1, omega_j_max + 1)
    E, W = np.meshgrid(ells.astype(float), wjs.astype(float), indexing="ij")
    lhs_plain = np.abs(omega * E - W)
    lhs_shift = np.abs(omega * E - W - eps * mean_value / (2.0 * W))
    thr = factor * gamma / (E + W) ** tau
    if strict:
        bad = (lhs_plain <= thr) | (lhs_shift <= thr)
    else:
        bad = (lhs_plain < thr) | (lhs_shift < thr)
    bad &= E != W  # l = omega_j pairs are excluded from the conditions
    out = []
    for i, k in zip(*np.nonzero(bad)):
        out.append(ConditionRecord(ell=int(ells[i]), j=int(wjs[k]) - 1,
                                   lhs_shifted=float(lhs_shift[i, k]),
                                   lhs_plain=float(lhs_plain[i, k]),
                                   threshold=float(thr[i, k]),
                                   ok=False))
    return out


def check_stage_conditions(eps: float, w: CoeffField, v: KernelField,
                           params: ResonanceParams, L_n: int,
                           normalization: str = "half_period"):
    """Stage admissibility: thresholds gamma/(l+omega_j)^tau over l <= L_n, omega_j <= 2 L_n.

    Returns (ok, failures); vacuously true when 1/(3 eps) > L_n.
    """
    m = mean_potential(w, v, normalization)
    failures = _condition_failures(eps, m, params.gamma, params.tau,
                                   L_n, 2 * L_n, factor=1.0, strict=True)
    return len(failures) == 0, failures


def check_limit_conditions(eps: float, w: CoeffField, v: KernelField,
                           params: ResonanceParams, L_max: int,
                           normalization: str = "half_period"):
    """Limit-set membership up to l <= L_max with the doubled threshold.

    For l > L_max the conditions follow from the distance of omega(eps) l to
    the integers at this eps window; the cutoff is the caller's to report.
    """
    m = mean_potential(w, v, normalization)
    failures = _condition_failures(eps, m, params.gamma, params.tau,
                                   L_max, 2 * L_max, factor=2.0, strict=False)
    return len(failures) == 0, failures


@dataclass(frozen=True)
class DiophantineResult:
    ok: bool
    ell_max: int
    worst_ell: int
    worst_margin: float

    def __bool__(self) -> bool:
        return self.ok


def strong_diophantine_check(omega: float, gamma: float,
                             ell_max: int = 1000) -> DiophantineResult:
    """Membership in the strongly Diophantine set: |omega l - omega_j| >= gamma/<l>.

    Checked for l <= ell_max; only the integer nearest omega*l can violate,
    since |omega l - omega_j| >= dist(omega l, Z) for all other omega_j.
    gamma = 0 is vacuously true.
    """
    if not 0.5 <= omega <= 2.0:
        raise ValueError("omega must lie in [1/2, 2]")
    worst_ell, worst_margin = 0, np.inf
    ok = True
    for ell in range(1, ell_max + 1):
        x = omega * ell
        cands = {int(np.floor(x)), int(np.ceil(x))}
        dists = [abs(x - n) for n in cands if n >= 1 and n != ell]
        if not dists:
            # nearest integers are excluded or below 1; next admissible is >= 1 away
            continue
        margin = min(dists) - gamma / max(1, ell)
        if margin < worst_margin:
            worst_margin, worst_ell = margin, ell
        if margin < 0:
            ok = False
    return DiophantineResult(ok=ok, ell_max=ell_max, worst_ell=worst_ell,
                             worst_margin=float(worst_margin))


# -- measure of the excluded amplitude set ------------------------------------


@dataclass
class MeasureReport:
    """Interval-union and Monte Carlo estimates of the admissible fraction of (0, eta]."""

    eta: float
    gamma: float
    tau: float
    fraction_interval: float
    fraction_mc: float
    mc_stderr: float
    excluded_mass: float
    excluded_intervals: list
    paper_bound_scale: float      # gamma * eta^((tau+1)/2)
    implied_constant: float       # excluded_mass / paper_bound_scale
    tail_mass_bound: float
    ell_max: int
    n_pairs: int
    samples: int

    def to_json(self, path=None) -> str:
        payload = {k: v for k, v in asdict(self).items()}
        payload["excluded_intervals"] = [
            {"lo": lo, "hi": hi, "ell": ell, "j": j} for (lo, hi, ell, j) in self.excluded_intervals
        ]
        text = json.dumps(payload, indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _pair_arrays(eta: float, ell_max: int):
    """Binding pairs (l, d): omega_j = l + d, 1 <= d <= floor(4 eta l) + 2."""
    ells, ds = [], []
    ell_lo = max(int(np.ceil(1.0 / (3.0 * eta))), 1)
    for ell in range(ell_lo, ell_max + 1):
        dmax = int(np.floor(4.0 * eta * ell)) + 2
        for d in range(1, dmax + 1):
            ells.append(ell)
            ds.append(d)
    return np.array(ells, dtype=float), np.array(ds, dtype=float)


def _melnikov_values(e, ells, wjs, m_of_eps, shifted: bool):
    v = np.sqrt(1.0 + e) * ells - wjs
    if shifted:
        v = v - e * m_of_eps(e) / (2.0 * wjs)
    return v


def measure_scan(eta: float, samples: int, params: ResonanceParams, m_of_eps,
                 ell_max_factor: float = 64.0, rng_seed: int = 0,
                 mc_chunk: int = 256) -> MeasureReport:
    """Estimate |admissible set in (0, eta]| / eta.

    (a) Exact union of per-pair excluded intervals, found by vectorized
        bisection of the monotone condition functions; (b) Monte Carlo over
        uniform samples of the same condition set.  Both use the identical
        binding-pair enumeration (l <= ell_max ~ ell_max_factor/eta, the
        reported tail bound covers the rest).
    """
    if eta > params.eps0:
        raise ValueError("eta must not exceed eps0")
    gamma, tau = params.gamma, params.tau
    ell_max = int(np.ceil(ell_max_factor / eta))
    ells, ds = _pair_arrays(eta, ell_max)
    wjs = ells + ds
    thr = 2.0 * gamma / (ells + wjs) ** tau
    lo = 1.0 / (3.0 * ells)
    hi = np.full_like(ells, eta)

    intervals = []
    total_mass = 0.0
    merged: list[tuple[float, float]] = []
    for shifted in (True, False):
        def f(e, mask=None):
            if mask is None:
                return _melnikov_values(e, ells, wjs, m_of_eps, shifted)
            return _melnikov_values(e, ells[mask], wjs[mask], m_of_eps, shifted)

        flo, fhi = f(lo), f(hi)
        active = (flo < thr) & (fhi > -thr)
        if not np.any(active):
            continue
        a_lo, a_hi, t = lo[active], hi[active], thr[active]

        def bisect(sign):
            a, b = a_lo.copy(), a_hi.copy()
            for _ in range(60):
                mid = 0.5 * (a + b)
                above = f(mid, active) > sign * t
                b = np.where(above, mid, b)
                a = np.where(above, a, mid)
            return 0.5 * (a + b)

        left = np.where(flo[active] >= -t, a_lo, bisect(-1.0))
        right = np.where(fhi[active] <= t, a_hi, bisect(+1.0))
        good = right > left
        for L, R, el, d in zip(left[good], right[good], ells[active][good], ds[active][good]):
            intervals.append((float(L), float(R), int(el), int(el + d) - 1))

    intervals.sort()
    for L, R, _, _ in intervals:
        if merged and L <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], R))
        else:
            merged.append((L, R))
    total_mass = float(sum(R - L for L, R in merged))
    fraction_interval = 1.0 - total_mass / eta

    # Monte Carlo over the identical condition set.  Only the integer nearest
    # omega(eps) l can violate either condition: thresholds and the Melnikov
    # shift together stay far below 1/2, so farther integers are safe.  A
    # cheap distance pre-filter keeps the full evaluation sparse.
    rng = np.random.default_rng(rng_seed)
    e_samples = rng.uniform(0.0, eta, size=samples)
    excluded = np.zeros(samples, dtype=bool)
    ell_grid = np.arange(max(int(np.ceil(1.0 / (3.0 * eta))), 1), ell_max + 1, dtype=float)
    dwin = np.floor(4.0 * eta * ell_grid) + 2.0
    shift_cap = eta * float(np.max(np.abs(m_of_eps(np.linspace(0, eta, 64)))) + 1.0)
    cut = 2.0 * gamma / (2.0 * ell_grid) ** tau + shift_cap / (2.0 * ell_grid)
    if float(cut.max()) >= 0.4:
        raise ValueError("threshold + shift too close to 1/2: nearest-integer "
                         "reduction invalid at these parameters")
    for start in range(0, samples, mc_chunk):
        e = e_samples[start : start + mc_chunk][:, None]
        x = np.sqrt(1.0 + e) * ell_grid[None, :]
        n = np.round(x)
        near = np.abs(x - n) < cut[None, :]
        rows, cols = np.nonzero(near)
        if len(rows) == 0:
            continue
        ev = e[rows, 0]
        ells_c = ell_grid[cols]
        nv = n[rows, cols]
        d = nv - ells_c
        valid = (ells_c >= 1.0 / (3.0 * ev)) & (d >= 1.0) & (d <= dwin[cols])
        th = 2.0 * gamma / (ells_c + nv) ** tau
        me = np.asarray(m_of_eps(ev))
        plain = np.abs(x[rows, cols] - nv) < th
        shiftc = np.abs(x[rows, cols] - nv - ev * me / (2.0 * nv)) < th
        bad = valid & (plain | shiftc)
        if bad.any():
            idx = start + rows[bad]
            excluded[np.unique(idx)] = True
    fraction_mc = 1.0 - float(np.mean(excluded))
    mc_stderr = float(np.std(excluded) / np.sqrt(samples))

    # analytic tail bound beyond ell_max: both families; per pair the width is
    # at most 2 * (2 gamma / (2l)^tau) * (4/l), and only resonances with
    # d <= eta*l/2 + 2 can land inside the window
    tail = (32.0 * gamma / 2.0 ** tau) * (
        0.5 * eta * ell_max ** (1.0 - tau) / (tau - 1.0)
        + 2.0 * ell_max ** (-tau) / tau)
    scale = gamma * eta ** ((tau + 1.0) / 2.0)
    return MeasureReport(eta=eta, gamma=gamma, tau=tau,
                         fraction_interval=fraction_interval,
                         fraction_mc=fraction_mc, mc_stderr=mc_stderr,
                         excluded_mass=total_mass,
                         excluded_intervals=intervals,
                         paper_bound_scale=scale,
                         implied_constant=total_mass / scale if scale > 0 else np.inf,
                         tail_mass_bound=float(tail),
                         ell_max=ell_max, n_pairs=len(ells), samples=samples)


def fit_excluded_exponent(reports: list[MeasureReport]) -> float:
    """Least-squares slope of log(excluded fraction) against log(eta)."""
    eta = np.array([r.eta for r in reports])
    frac = np.array([max(1.0 - r.fraction_interval, 1e-300) for r in reports])
    return float(np.polyfit(np.log(eta), np.log(frac), 1)[0])


def records_to_csv(records: list[ConditionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "j", "lhs_shifted", "lhs_plain", "threshold", "ok"])
        for r in sorted(records, key=lambda r: (r.ell, r.j)):
            w.writerow([r.ell, r.j, repr(r.lhs_shifted), repr(r.lhs_plain),
                        repr(r.threshold), int(r.ok)])
