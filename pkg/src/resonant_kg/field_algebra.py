"""Space-time coefficient fields, norms, products and projectors.

A field stores the coefficients of an even, real, 2*pi time-periodic function
with values in the spherically symmetric sector of the sphere:

    u(t, x) = u[0] + 2 * sum_{l >= 1} cos(l t) u_l(x),
    u_l(x)  = sum_j u[l, j] e_j(x),

one row per time frequency l = 0..L ("cos-halfline" convention: the stored
row l stands for both exponential frequencies +l and -l, so the l = 0 row is
counted once and every l >= 1 row twice).  The weighted norm

    ||u||_{sigma,s,r}^2 = sum_l m_l e^(2 sigma l) <l>^(2s) sum_j u[l,j]^2 omega_j^(2r)

(m_0 = 1, m_l = 2 for l >= 1, <l> = max(1, l)) measures analyticity in time
(sigma), time Sobolev regularity (s) and space Sobolev regularity (r).

Products are exact coefficient-space convolutions: cosine convolution in time
composed with the eigenbasis product rule in space.  No transforms are used,
so coefficients far below machine epsilon relative to the field's largest
entry remain meaningful.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import spherical_basis as sb

__all__ = [
    "NormParams",
    "CoeffField",
    "CheckResult",
    "field_multiply",
    "project_kernel",
    "project_range",
    "time_cutoff",
    "zero_resonant_mode",
    "smoothing_bound_check",
    "sobolev_trade_check",
    "save_field",
    "load_field",
    "field_to_csv",
]

_MAGIC = b"RKGF"


@dataclass(frozen=True)
class NormParams:
    """Norm indices (sigma, s, r); the default r = 2 is the working space."""

    sigma: float
    s: float
    r: float = 2.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("analyticity width sigma must be >= 0")


class CoeffField:
    """Dense (L+1, J+1) array of cosine-in-time x e_j-in-space coefficients."""

    __slots__ = ("u",)

    def __init__(self, u: np.ndarray):
        u = np.asarray(u, dtype=float)
        if u.ndim != 2:
            raise ValueError("coefficient array must be 2-D (time x space)")
        self.u = u

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, L: int, J: int) -> "CoeffField":
        return cls(np.zeros((L + 1, J + 1)))

    @classmethod
    def from_mode(cls, ell: int, j: int, value: float = 1.0,
                  L: int | None = None, J: int | None = None) -> "CoeffField":
        L = ell if L is None else L
        J = j if J is None else J
        f = cls.zeros(L, J)
        f.u[ell, j] = value
        return f

    # -- shape bookkeeping ---------------------------------------------------

    @property
    def L(self) -> int:
        return self.u.shape[0] - 1

    @property
    def J(self) -> int:
        return self.u.shape[1] - 1

    def copy(self) -> "CoeffField":
        return CoeffField(self.u.copy())

    def padded(self, L: int, J: int) -> "CoeffField":
        """Zero-pad (never truncates) to at least (L+1, J+1)."""
        L = max(L, self.L)
        J = max(J, self.J)
        out = np.zeros((L + 1, J + 1))
        out[: self.L + 1, : self.J + 1] = self.u
        return CoeffField(out)

    def truncate(self, L: int, J: int, params: NormParams):
        """Truncate to (L, J); returns (field, norm of the discarded part)."""
        keep = self.u[: L + 1, : J + 1].copy()
        rest = self.u.copy()
        rest[: L + 1, : J + 1] = 0.0
        return CoeffField(keep), CoeffField(rest).norm(params)

    # -- algebra -------------------------------------------------------------

    def __add__(self, other: "CoeffField") -> "CoeffField":
        L, J = max(self.L, other.L), max(self.J, other.J)
        return CoeffField(self.padded(L, J).u + other.padded(L, J).u)

    def __sub__(self, other: "CoeffField") -> "CoeffField":
        L, J = max(self.L, other.L), max(self.J, other.J)
        return CoeffField(self.padded(L, J).u - other.padded(L, J).u)

    def __mul__(self, scalar: float) -> "CoeffField":
        return CoeffField(self.u * float(scalar))

    __rmul__ = __mul__

    def multiply(self, other: "CoeffField") -> "CoeffField":
        return field_multiply(self, other)

    # -- norms ---------------------------------------------------------------

    def _log_time_weights(self, params: NormParams):
        """log of the squared time weights m_l e^(2 sigma l) <l>^(2s)."""
        ell = np.arange(self.L + 1, dtype=float)
        logw = 2.0 * params.sigma * ell + 2.0 * params.s * np.log(np.maximum(ell, 1.0))
        logw += np.where(ell == 0, 0.0, np.log(2.0))
        return logw

    def norm(self, params: NormParams) -> float:
        """Weighted norm, accumulated in log space.

        The time weights e^(2 sigma l) overflow double precision well before
        the weighted coefficients do (deep truncations carry rows far below
        1e-300), so each row's contribution is combined as
        exp(log weight + log row sum).
        """
        wj = (np.arange(self.J + 1, dtype=float) + 1.0) ** (2.0 * params.r)
        rmax = np.max(np.abs(self.u), axis=1)
        mask = rmax > 0.0
        if not mask.any():
            return 0.0
        scaled = self.u[mask] / rmax[mask, None]  # rescale so squaring cannot underflow
        row_sq = (scaled * scaled) @ wj
        t = (self._log_time_weights(params)[mask] + 2.0 * np.log(rmax[mask])
             + np.log(row_sq))
        peak = float(t.max())
        return float(np.exp(0.5 * (peak + np.log(np.sum(np.exp(t - peak))))))

    def inner(self, other: "CoeffField", params: NormParams) -> float:
        L, J = max(self.L, other.L), max(self.J, other.J)
        a, b = self.padded(L, J), other.padded(L, J)
        wj = (np.arange(J + 1, dtype=float) + 1.0) ** (2.0 * params.r)
        rows = (a.u * b.u) @ wj
        mask = rows != 0.0
        if not mask.any():
            return 0.0
        return float(np.sum(np.exp(a._log_time_weights(params)[mask]) * rows[mask]))

    # -- diagonal symbols ----------------------------------------------------

    def dtt(self) -> "CoeffField":
        """Second time derivative: entry (l, j) multiplied by -l^2."""
        ell2 = np.arange(self.L + 1, dtype=float) ** 2
        return CoeffField(-ell2[:, None] * self.u)

    def apply_A(self) -> "CoeffField":
        """-Laplacian + 1: entry (l, j) multiplied by omega_j^2."""
        wj2 = (np.arange(self.J + 1, dtype=float) + 1.0) ** 2
        return CoeffField(wj2[None, :] * self.u)

    def apply_wave_symbol(self, omega: float) -> "CoeffField":
        """-omega^2 d_tt - A: entry (l, j) multiplied by omega^2 l^2 - omega_j^2."""
        ell2 = np.arange(self.L + 1, dtype=float) ** 2
        wj2 = (np.arange(self.J + 1, dtype=float) + 1.0) ** 2
        return CoeffField((omega * omega * ell2[:, None] - wj2[None, :]) * self.u)

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Pointwise values on the tensor grid, shape (len(t), len(x))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        doubling = np.where(np.arange(self.L + 1) == 0, 1.0, 2.0)
        T = np.cos(np.outer(np.arange(self.L + 1), t))  # (L+1, nt)
        E = sb.evaluate_basis(self.J, x)                # (J+1, nx)
        return T.T @ (doubling[:, None] * self.u) @ E

    def sup_estimate(self, n_grid: int = 2048, margin: float = 1.05) -> float:
        """Grid sup-norm estimate with a safety margin (admissibility checks)."""
        t = np.linspace(0.0, 2.0 * np.pi, max(4 * (self.L + 1), 64), endpoint=False)
        x = np.linspace(0.0, np.pi, n_grid)
        return margin * float(np.max(np.abs(self.evaluate(t, x))))


def field_multiply(a: CoeffField, b: CoeffField) -> CoeffField:
    """Exact pointwise product; result truncations L_a + L_b, J_a + J_b.

    Time direction: convolution of the mirrored (exponential) coefficient
    arrays.  Space direction: direct accumulation over the eigenbasis product
    rule.  The inner time convolution runs as one small matmul per output
    frequency; the space scatter adds each pair block along its admissible
    mode range.
    """
    La, Ja, Lb, Jb = a.L, a.J, b.L, b.J
    Lout, Jout = La + Lb, Ja + Jb
    afull = a.u[np.abs(np.arange(-La, La + 1))]  # (2La+1, Ja+1)
    bfull = b.u[np.abs(np.arange(-Lb, Lb + 1))]  # (2Lb+1, Jb+1)
    pair = np.empty((Lout + 1, Ja + 1, Jb + 1))
    for m in range(Lout + 1):
        plo, phi = max(-La, m - Lb), min(La, m + Lb)
        arows = afull[plo + La : phi + La + 1]
        brows = bfull[m - phi + Lb : m - plo + Lb + 1][::-1]
        pair[m] = arows.T @ brows
    out = np.zeros((Lout + 1, Jout + 1))
    for j in range(Ja + 1):
        for k in range(Jb + 1):
            out[:, abs(j - k) : j + k + 1 : 2] += pair[:, j, k][:, None]
    return CoeffField(out)


# -- Lyapunov-Schmidt projectors ---------------------------------------------


def _kernel_mask(L: int, J: int) -> np.ndarray:
    """Boolean mask of the resonant diagonal l = omega_j = j + 1."""
    ell = np.arange(L + 1)[:, None]
    j = np.arange(J + 1)[None, :]
    return ell == j + 1


def project_kernel(f: CoeffField) -> CoeffField:
    """Keep exactly the entries with l = omega_j (kernel of -d_tt - A)."""
    out = np.where(_kernel_mask(f.L, f.J), f.u, 0.0)
    return CoeffField(out)


def project_range(f: CoeffField) -> CoeffField:
    """Zero the resonant diagonal l = omega_j (range of -d_tt - A)."""
    out = np.where(_kernel_mask(f.L, f.J), 0.0, f.u)
    return CoeffField(out)


def time_cutoff(f: CoeffField, L_n: int) -> CoeffField:
    """Zero all rows with l > L_n (same shape)."""
    out = f.u.copy()
    out[L_n + 1 :, :] = 0.0
    return CoeffField(out)


def zero_resonant_mode(p: np.ndarray, ell: int) -> np.ndarray:
    """Projector onto the complement of e_{|ell|-1}; identity for ell = 0."""
    p = np.asarray(p, dtype=float).copy()
    ell = abs(int(ell))
    if ell >= 1 and ell - 1 < len(p):
        p[ell - 1] = 0.0
    return p


# -- inequality checks --------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    """Outcome of a bound verification: lhs <= rhs (with the two sides)."""

    ok: bool
    lhs: float
    rhs: float

    def __bool__(self) -> bool:
        return self.ok


_REL_SLACK = 1e-12  # floating-point rounding guard for exact-equality cases


def smoothing_bound_check(f: CoeffField, sigma: float, sigma_prime: float,
                          L_n: int, s: float = 1.0, r: float = 2.0) -> CheckResult:
    """Check ||f||_{sigma',s} <= exp(-L_n (sigma - sigma')) ||f||_{sigma,s}.

    Requires f supported on time frequencies l > L_n.
    """
    if not (0.0 <= sigma_prime <= sigma):
        raise ValueError("need 0 <= sigma' <= sigma")
    if np.any(f.u[: min(L_n, f.L) + 1, :] != 0.0):
        raise ValueError(f"field has support at time frequencies <= {L_n}")
    lhs = f.norm(NormParams(sigma_prime, s, r))
    rhs = float(np.exp(-L_n * (sigma - sigma_prime))) * f.norm(NormParams(sigma, s, r))
    return CheckResult(lhs <= rhs * (1.0 + _REL_SLACK), lhs, rhs)


def trade_bound_constant(alpha: float, beta: float) -> float:
    """sup_{x>=0} exp(-alpha x) <x>^beta <= max(1, exp(-beta) (beta/alpha)^beta)."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha, beta must be >= 0")
    if beta == 0.0:
        return 1.0
    if alpha == 0.0:
        return np.inf
    return max(1.0, float(np.exp(-beta) * (beta / alpha) ** beta))


def sobolev_trade_check(f: CoeffField, alpha: float, beta: float,
                        sigma: float, s: float, r: float = 2.0) -> CheckResult:
    """Check ||f||_{sigma-alpha, s+beta} <= max(1, e^-beta (beta/alpha)^beta) ||f||_{sigma,s}."""
    if alpha > sigma:
        raise ValueError("alpha must not exceed sigma")
    lhs = f.norm(NormParams(sigma - alpha, s + beta, r))
    rhs = trade_bound_constant(alpha, beta) * f.norm(NormParams(sigma, s, r))
    return CheckResult(lhs <= rhs * (1.0 + _REL_SLACK), lhs, rhs)


# -- serialization -------------------------------------------------------------


def save_field(f: CoeffField, path) -> None:
    """Self-describing columnar format: magic, JSON header, row-major f64."""
    header = json.dumps(
        {"L": f.L, "J": f.J, "convention": "cos-halfline", "dtype": "<f8"},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        fh.write(np.ascontiguousarray(f.u, dtype="<f8").tobytes())


def load_field(path) -> CoeffField:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a coefficient-field file")
        (n,) = np.frombuffer(fh.read(4), dtype=np.uint32)
        header = json.loads(fh.read(int(n)).decode())
        if header.get("convention") != "cos-halfline":
            raise ValueError(f"{path}: unknown convention {header.get('convention')!r}")
        L, J = int(header["L"]), int(header["J"])
        data = np.frombuffer(fh.read(8 * (L + 1) * (J + 1)), dtype="<f8")
    return CoeffField(data.reshape(L + 1, J + 1).copy())


def field_to_csv(f: CoeffField, path) -> None:
    """(l, j, value) rows for plotting; zeros are skipped."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "j", "value"])
        for ell in range(f.L + 1):
            for j in range(f.J + 1):
                if f.u[ell, j] != 0.0:
                    w.writerow([ell, j, repr(float(f.u[ell, j]))])
