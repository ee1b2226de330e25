"""Kernel (bifurcation) equation: A v = Pi_V (v + w)^3.

The kernel of -d_tt - A consists of the resonant modes cos(omega_j t) e_j(x);
a kernel field is the coefficient vector v_j of that basis.  For w = 0 the
equation has the explicit one-mode solutions

    v_m = alpha_m cos(omega_m t) e_m(x),   alpha_m = +/- sqrt(4 omega_m / 3),

which are nondegenerate: the linearization at (v_m, 0) decomposes into the
eigenvalue -2 omega_m^2 on the m-th mode, eigenvalues omega_j^2 - 2 omega_m^2
for j > 2m, and 2x2 blocks coupling modes (j, 2m-j) for j < m whose
determinant -omega_j (omega_m - omega_j)^2 (4 omega_m - omega_j) never
vanishes.  That nondegeneracy is what lets a damped Newton iteration from the
one-mode solution converge to v(w) for every small range component w.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spherical_basis as sb
from .field_algebra import CoeffField, NormParams, field_multiply, project_kernel

__all__ = [
    "KernelField",
    "one_mode_solution",
    "kernel_residual",
    "bif_block",
    "block_determinant",
    "linearize_kernel",
    "solve_kernel",
    "kernel_derivative",
    "kernel_derivative_matrix",
    "KernelSolveResult",
    "KernelSolveError",
]


class KernelSolveError(RuntimeError):
    """Newton iteration for the kernel equation failed to converge."""


@dataclass
class KernelField:
    """Coefficients v_j of cos(omega_j t) e_j(x), j = 0..J_V."""

    v: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)

    @property
    def J(self) -> int:
        return len(self.v) - 1

    def embed(self, L: int | None = None, J: int | None = None) -> CoeffField:
        """CoeffField supported on the resonant diagonal (stored value v_j / 2)."""
        need_L = self.J + 1
        L = need_L if L is None else max(L, need_L)
        J = self.J if J is None else max(J, self.J)
        f = CoeffField.zeros(L, J)
        js = np.arange(self.J + 1)
        f.u[js + 1, js] = self.v / 2.0
        return f

    def norm(self, params: NormParams) -> float:
        wj = np.arange(self.J + 1, dtype=float) + 1.0
        w = 0.5 * np.exp(2.0 * params.sigma * wj) * wj ** (2.0 * (params.s + params.r))
        return float(np.sqrt(np.sum(w * self.v * self.v)))

    def copy(self) -> "KernelField":
        return KernelField(self.v.copy())


def extract_kernel(f: CoeffField, J_V: int) -> KernelField:
    """Kernel coefficients of a field: v_j = 2 * f[omega_j, j]."""
    v = np.zeros(J_V + 1)
    top = min(J_V, f.J, f.L - 1)
    js = np.arange(top + 1)
    v[: top + 1] = 2.0 * f.u[js + 1, js]
    return KernelField(v)


def one_mode_solution(m: int, sign: int = +1, J_V: int | None = None) -> KernelField:
    """The explicit solution alpha_m cos(omega_m t) e_m with alpha_m = sign*sqrt(4 omega_m/3)."""
    if m < 0:
        raise ValueError("mode m must be nonnegative")
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    J_V = m if J_V is None else max(J_V, m)
    v = np.zeros(J_V + 1)
    v[m] = sign * np.sqrt(4.0 * (m + 1) / 3.0)
    return KernelField(v)


def _check_in_range(w: CoeffField):
    if np.any(project_kernel(w).u != 0.0):
        raise ValueError("w must lie in the range (no resonant-diagonal entries)")


def _total(v: KernelField, w: CoeffField) -> CoeffField:
    return v.embed(L=max(w.L, v.J + 1), J=max(w.J, v.J)) + w


def kernel_residual(v: KernelField, w: CoeffField) -> KernelField:
    """A v - Pi_V (v + w)^3, exactly in coefficient space."""
    _check_in_range(w)
    u = _total(v, w)
    cube = field_multiply(field_multiply(u, u), u)
    res = (np.arange(v.J + 1, dtype=float) + 1.0) ** 2 * v.v
    res -= extract_kernel(cube, v.J).v
    return KernelField(res)


def bif_block(m: int, j: int) -> np.ndarray:
    """2x2 coupling block between kernel modes j and 2m - j (0 <= j <= m-1)."""
    if not 0 <= j <= m - 1:
        raise ValueError("need 0 <= j <= m-1")
    wm, wj, wc = m + 1, j + 1, 2 * m - j + 1
    return np.array([[wj * wj - 2 * wm * wj, -wm * wj],
                     [-wm * wj, wc * wc - 2 * wm * wm]], dtype=float)


def block_determinant(m: int, j: int) -> int:
    """det of bif_block in closed form: -omega_j (omega_m-omega_j)^2 (4 omega_m - omega_j)."""
    wm, wj = m + 1, j + 1
    return -wj * (wm - wj) ** 2 * (4 * wm - wj)


def _mult_matrix_stack(q: CoeffField, size: int, dmax: int) -> np.ndarray:
    """Spatial multiplication matrices S_d of the time rows of q, d = 0..dmax."""
    stack = np.zeros((dmax + 1, size, size))
    top = min(dmax, q.L)
    for d in range(top + 1):
        row = q.u[d]
        if np.any(row != 0.0):
            stack[d] = sb.multiplication_matrix(row, size)
    return stack


def linearize_kernel(v: KernelField, w: CoeffField) -> np.ndarray:
    """Dense matrix of h -> A h - 3 Pi_V((v+w)^2 h) on the truncated kernel.

    Entry [j, j'] couples kernel modes through the time frequencies
    |omega_j - omega_j'| and omega_j + omega_j' of b/3 = (v+w)^2.
    """
    u = _total(v, w)
    q = field_multiply(u, u)
    n = v.J + 1
    wj = np.arange(n) + 1
    stack = _mult_matrix_stack(q, n, 2 * n)
    jj, kk = np.meshgrid(wj, wj, indexing="ij")
    mat = np.diag(wj.astype(float) ** 2)
    idx_diff = np.abs(jj - kk)
    idx_sum = np.minimum(jj + kk, 2 * n)  # rows beyond q's truncation are zero
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    mat = mat - 3.0 * (stack[idx_diff, rows, cols] + stack[idx_sum, rows, cols])
    return mat


@dataclass
class KernelSolveResult:
    """Converged kernel solution with the empirical Newton record."""

    kernel: KernelField
    residual_norms: list = field(default_factory=list)
    iterations: int = 0

    @property
    def v(self) -> np.ndarray:
        return self.kernel.v


def solve_kernel(w: CoeffField, m: int, tol: float = 1e-12, sign: int = +1,
                 J_V: int | None = None, params: NormParams | None = None,
                 start: KernelField | None = None,
                 max_iter: int = 40) -> KernelSolveResult:
    """Damped Newton from the one-mode solution; converges to v(w).

    The empirical Newton basin replaces any a-priori radius: failure to
    contract within `max_iter` raises KernelSolveError.
    """
    _check_in_range(w)
    params = params or NormParams(0.0, 1.0, 2.0)
    if J_V is None:
        J_V = max(m, w.J)
    v = start.copy() if start is not None else one_mode_solution(m, sign, J_V)
    if v.J < J_V:
        vv = np.zeros(J_V + 1)
        vv[: v.J + 1] = v.v
        v = KernelField(vv)
    res = kernel_residual(v, w)
    rnorm = res.norm(params)
    history = [rnorm]
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            return KernelSolveResult(v, history, it - 1)
        mat = linearize_kernel(v, w)
        try:
            delta = np.linalg.solve(mat, -res.v)
        except np.linalg.LinAlgError as exc:
            raise KernelSolveError(f"singular kernel linearization at iteration {it}") from exc
        step = 1.0
        for _ in range(8):
            cand = KernelField(v.v + step * delta)
            cres = kernel_residual(cand, w)
            cnorm = cres.norm(params)
            if cnorm < rnorm:
                break
            step *= 0.5
        else:
            # no decrease possible: either at the rounding floor or outside the basin
            floor = 1e-13 * max(1.0, KernelField(
                (np.arange(v.J + 1, dtype=float) + 1.0) ** 2 * v.v).norm(params))
            if rnorm <= floor:
                return KernelSolveResult(v, history, it)
            raise KernelSolveError(
                f"kernel Newton stalled at residual {rnorm:.3e} (w outside the empirical basin)")
        v, res, rnorm = cand, cres, cnorm
        history.append(rnorm)
    if rnorm <= tol:
        return KernelSolveResult(v, history, max_iter)
    raise KernelSolveError(
        f"kernel Newton did not reach tol={tol:.1e} in {max_iter} iterations "
        f"(residual {rnorm:.3e})")


def kernel_derivative(v: KernelField, w: CoeffField, h: CoeffField) -> KernelField:
    """Directional derivative d_w v(w)[h] of the implicit kernel solution.

    Solves linearize_kernel(v, w)[dv] = 3 Pi_V((v+w)^2 h) for h in the range.
    """
    _check_in_range(h)
    u = _total(v, w)
    q = field_multiply(u, u)
    rhs = extract_kernel(field_multiply(q, h), v.J).v * 3.0
    mat = linearize_kernel(v, w)
    return KernelField(np.linalg.solve(mat, rhs))


def kernel_derivative_matrix(v: KernelField, w: CoeffField,
                             ells: np.ndarray, js: np.ndarray) -> np.ndarray:
    """Matrix of h -> d_w v(w)[h] from stored range coefficients to kernel coefficients.

    Columns are indexed by the lattice points (ells[c], js[c]) of the range
    truncation; row j'' is the kernel coefficient of mode j''.
    """
    u = _total(v, w)
    q = field_multiply(u, u)
    n = v.J + 1
    size = int(max(js.max(initial=0) + 1, n))
    dmax = int((np.arange(n) + 1).max() + ells.max(initial=0))
    stack = _mult_matrix_stack(q, size, dmax)
    wj = np.arange(n) + 1  # kernel time frequencies
    rhs = np.zeros((n, len(ells)))
    for c, (k, jc) in enumerate(zip(ells, js)):
        blocks = stack[np.abs(wj - k), np.arange(n), jc]
        if k >= 1:
            blocks = blocks + stack[wj + k, np.arange(n), jc]
        rhs[:, c] = 6.0 * blocks
    mat = linearize_kernel(v, w)
    return np.linalg.solve(mat, rhs)
