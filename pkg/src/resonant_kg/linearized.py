"""Linearized range operator: assembly, block spectra, small divisors, inversion.

On the range truncation (time frequencies l <= L_n, space modes j <= J_max,
excluding the resonant pairs j = l - 1) the linearization of the range
equation around w is

    Lop h = (-omega^2 d_tt - A) h - eps P_n Pi_W (b h) - eps P_n Pi_W (b dv[h]),
    b = 3 (v(w) + w)^2,

with dv the derivative of the kernel solution.  Splitting b into its time
mean b0 and the oscillating part gives the diagonal family

    D_l = omega^2 l^2 - A - eps pi_l (b0 .) pi_l

whose spectra (a Sturm-Liouville perturbation of omega_j^2) control the small
divisors alpha_l = min_j |omega^2 l^2 - lambda_{l,j}(eps)|.  The production
inverse is a dense LU factorization on the truncation; the sign/half-power
preconditioner splitting and the Neumann series are kept as diagnostics that
certify the expected bounds.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import spherical_basis as sb
from .bifurcation import (KernelField, KernelSolveResult, kernel_derivative_matrix,
                          solve_kernel, _mult_matrix_stack)
from .field_algebra import CoeffField, NormParams, field_multiply

__all__ = [
    "WLattice",
    "LinearizedOperator",
    "assemble_linearized",
    "split_diagonal",
    "SpectralBlock",
    "diagonalize_block",
    "DivisorReport",
    "small_divisors",
    "divisor_table",
    "pairwise_divisor_constant",
    "preconditioned_split_check",
    "PrecondReport",
    "ResonantSolveError",
]


class ResonantSolveError(RuntimeError):
    """Dense factorization failed or is effectively singular."""


@dataclass(frozen=True)
class WLattice:
    """Index bookkeeping for the range truncation (l <= L, j <= J, j != l-1)."""

    L: int
    J: int
    ells: np.ndarray = field(init=False, repr=False)
    js: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ll, jj = np.meshgrid(np.arange(self.L + 1), np.arange(self.J + 1), indexing="ij")
        keep = (jj != ll - 1).ravel()
        object.__setattr__(self, "ells", ll.ravel()[keep].copy())
        object.__setattr__(self, "js", jj.ravel()[keep].copy())

    @property
    def size(self) -> int:
        return len(self.ells)

    def flat_kept(self) -> np.ndarray:
        """Positions of kept lattice points inside the full (L+1)x(J+1) grid."""
        return self.ells * (self.J + 1) + self.js

    def to_vector(self, f: CoeffField) -> np.ndarray:
        g = f.padded(self.L, self.J)
        return g.u[self.ells, self.js].copy()

    def to_field(self, vec: np.ndarray) -> CoeffField:
        f = CoeffField.zeros(self.L, self.J)
        f.u[self.ells, self.js] = vec
        return f

    def weights(self, params: NormParams) -> np.ndarray:
        """Per-coefficient norm weights: ||f||^2 = sum (w_i c_i)^2 on the lattice."""
        ell = self.ells.astype(float)
        wj = (self.js + 1).astype(float)
        mult = np.where(self.ells == 0, 1.0, 2.0)
        return np.sqrt(mult) * np.exp(params.sigma * ell) * \
            np.maximum(ell, 1.0) ** params.s * wj ** params.r

    def in_lattice_support(self, f: CoeffField) -> bool:
        """True if every nonzero entry of f sits on a lattice point."""
        g = f.u.copy()
        top_l = min(self.L, f.L)
        top_j = min(self.J, f.J)
        sub = g[: top_l + 1, : top_j + 1]
        ll, jj = np.meshgrid(np.arange(top_l + 1), np.arange(top_j + 1), indexing="ij")
        sub = np.where(jj == ll - 1, sub, 0.0)
        outside = float(np.abs(sub).max(initial=0.0))
        g[: top_l + 1, : top_j + 1] = 0.0
        outside = max(outside, float(np.abs(g).max(initial=0.0)))
        return outside == 0.0


def _convolution_matrix(stack: np.ndarray, lattice: WLattice) -> np.ndarray:
    """Dense matrix of h -> product-by-b on the lattice from the S_d stack.

    Block (l, k) of the stored-coefficient action is S_|l-k| + S_{l+k} (the
    second term only for k >= 1; it is the fold of the negative exponential
    frequencies onto the cosine half-line).
    """
    Lp1 = lattice.L + 1
    Jp1 = lattice.J + 1
    dmax = len(stack) - 1
    full = np.zeros((Lp1, Jp1, Lp1, Jp1))
    ks = np.arange(Lp1)
    for ell in range(Lp1):
        blocks = stack[np.abs(ell - ks)]                       # (Lp1, Jp1, Jp1)
        idx = np.minimum(ell + ks, dmax)
        wsum = stack[idx]
        wsum = np.where(((ell + ks) <= dmax)[:, None, None], wsum, 0.0)
        wsum[0] = 0.0                                          # no fold for k = 0
        full[ell] = np.moveaxis(blocks + wsum, 0, 1)           # -> (Jp1, Lp1, Jp1)
    mat = full.reshape(Lp1 * Jp1, Lp1 * Jp1)
    kept = lattice.flat_kept()
    return mat[np.ix_(kept, kept)]


@dataclass
class LinearizedOperator:
    """Assembled dense operator with its building blocks."""

    eps: float
    omega: float
    lattice: WLattice
    matrix: np.ndarray
    b: CoeffField
    b0: np.ndarray
    kernel: KernelField
    dv_matrix: np.ndarray
    mult_matrix: np.ndarray
    m2_matrix: np.ndarray
    _lu: tuple | None = None

    @property
    def L(self) -> int:
        return self.lattice.L

    @property
    def J(self) -> int:
        return self.lattice.J

    def symbol_diagonal(self) -> np.ndarray:
        ell = self.lattice.ells.astype(float)
        wj = (self.lattice.js + 1).astype(float)
        return self.omega ** 2 * ell ** 2 - wj ** 2

    def factorize(self):
        if self._lu is None:
            try:
                with warnings.catch_warnings():
                    # exact singularity is detected below and raised as an error
                    warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                    self._lu = scipy.linalg.lu_factor(self.matrix)
            except scipy.linalg.LinAlgError as exc:
                raise ResonantSolveError("linearized operator is singular") from exc
            u_diag = np.abs(np.diag(self._lu[0]))
            if u_diag.min() == 0.0 or u_diag.min() < 1e-300 * max(u_diag.max(), 1.0):
                raise ResonantSolveError(
                    "linearized operator is numerically singular "
                    "(amplitude effectively resonant)")
        return self._lu

    def apply(self, f: CoeffField) -> CoeffField:
        return self.lattice.to_field(self.matrix @ self.lattice.to_vector(f))

    def solve(self, rhs: CoeffField, check_support: bool = True) -> CoeffField:
        if check_support and not self.lattice.in_lattice_support(rhs):
            raise ValueError("right-hand side has support outside the range truncation")
        lu = self.factorize()
        return self.lattice.to_field(scipy.linalg.lu_solve(lu, self.lattice.to_vector(rhs)))

    def inverse_norm(self, params: NormParams, exact_threshold: int = 1600,
                     power_iterations: int = 40) -> float:
        """Operator norm of the inverse on the weighted (sigma, s, r) metric.

        Exact spectral norm up to `exact_threshold` unknowns, deterministic
        power iteration on B^T B (B the weighted inverse) above it.
        """
        w = self.lattice.weights(params)
        n = self.lattice.size
        lu = self.factorize()
        if n <= exact_threshold:
            inv = scipy.linalg.lu_solve(lu, np.eye(n))
            return float(np.linalg.norm(w[:, None] * inv / w[None, :], 2))
        x = np.ones(n) / np.sqrt(n)
        est = 0.0
        for _ in range(power_iterations):
            y = w * scipy.linalg.lu_solve(lu, x / w)               # B x
            z = scipy.linalg.lu_solve(lu, w * y, trans=1) / w      # B^T y
            nz = float(np.linalg.norm(z))
            if nz == 0.0:
                return 0.0
            est = np.sqrt(nz)
            x = z / nz
        return float(est)


def assemble_linearized(eps: float, w: CoeffField, m: int, L_n: int, J_max: int,
                        kernel: KernelSolveResult | KernelField | None = None,
                        kernel_tol: float = 1e-12,
                        params: NormParams | None = None) -> LinearizedOperator:
    """Build the dense linearized operator at (eps, w) on the (L_n, J_max) lattice."""
    omega = float(np.sqrt(1.0 + eps))
    if kernel is None:
        kernel = solve_kernel(w, m, tol=kernel_tol, J_V=J_max, params=params)
    kf = kernel.kernel if isinstance(kernel, KernelSolveResult) else kernel
    lattice = WLattice(L_n, J_max)
    u = kf.embed(L=max(w.L, kf.J + 1), J=max(w.J, kf.J)) + w
    q = field_multiply(u, u)
    b = 3.0 * q
    n_k = kf.J + 1
    size = max(J_max + 1, n_k)
    stack = _mult_matrix_stack(b, size, max(2 * L_n, L_n + n_k))
    mult = _convolution_matrix(stack[:, : J_max + 1, : J_max + 1], lattice)
    dv = kernel_derivative_matrix(kf, w, lattice.ells, lattice.js)
    # b * embedded kernel correction: column c gets sum_j'' S-blocks * dv[j'', c]/2
    wjk = np.arange(n_k) + 1  # kernel time frequencies
    gath = np.zeros((lattice.size, n_k))
    cols = np.arange(n_k)
    for ell in range(L_n + 1):
        rows = np.where(lattice.ells == ell)[0]
        js = lattice.js[rows]
        da = np.abs(ell - wjk)
        ds = np.minimum(ell + wjk, len(stack) - 1)
        blocks = stack[da, :, cols] + stack[ds, :, cols]   # (n_k, size): [j'', j]
        gath[rows, :] = blocks.T[js, :]
    m2 = gath @ (0.5 * dv)
    ell = lattice.ells.astype(float)
    wj = (lattice.js + 1).astype(float)
    matrix = np.diag(omega ** 2 * ell ** 2 - wj ** 2) - eps * mult - eps * m2
    return LinearizedOperator(eps=eps, omega=omega, lattice=lattice, matrix=matrix,
                              b=b, b0=b.u[0].copy(), kernel=kf, dv_matrix=dv,
                              mult_matrix=mult, m2_matrix=m2)


@dataclass
class SplitParts:
    """Diagonal / off-diagonal decomposition Lop = D - eps M1 - eps M2."""

    D: np.ndarray
    M1: np.ndarray
    M2: np.ndarray

    def reassemble(self, eps: float) -> np.ndarray:
        return self.D - eps * self.M1 - eps * self.M2


def split_diagonal(op: LinearizedOperator) -> SplitParts:
    """Split into D (time-mean potential on each l block), M1 (zero-mean part), M2."""
    lattice = op.lattice
    stack0 = np.zeros((1, op.J + 1, op.J + 1))
    if np.any(op.b0 != 0.0):
        stack0[0] = sb.multiplication_matrix(op.b0, op.J + 1)
    same = lattice.ells[:, None] == lattice.ells[None, :]
    bd = np.where(same, stack0[0][np.ix_(lattice.js, lattice.js)], 0.0)
    D = np.diag(op.symbol_diagonal()) - op.eps * bd
    M1 = op.mult_matrix - bd
    return SplitParts(D=D, M1=M1, M2=op.m2_matrix.copy())


@dataclass
class SpectralBlock:
    """Eigenpairs of S_l(eps) = A + eps pi_l b0 pi_l on the complement of e_{l-1}."""

    ell: int
    eps: float
    js: np.ndarray              # retained mode labels
    lam: np.ndarray             # eigenvalues, in label order
    vectors: np.ndarray | None  # columns in full-j coordinates (or None)
    J_max: int


def _restricted_potential(ell: int, eps: float, b0: np.ndarray, J_max: int):
    size = J_max + 1
    kept = np.array([j for j in range(size) if j != abs(ell) - 1])
    B = sb.multiplication_matrix(np.asarray(b0, dtype=float), size)
    wj2 = (np.arange(size, dtype=float) + 1.0) ** 2
    S = np.diag(wj2) + eps * B
    return S[np.ix_(kept, kept)], kept


def diagonalize_block(ell: int, eps: float, b0: np.ndarray, J_max: int,
                      want_vectors: bool = True) -> SpectralBlock:
    """Dense symmetric eigensolve of one l-block, labeled by overlap with e_j.

    The eigenvalue-only path uses the banded solver (the potential couples
    modes only within the spatial support of b0), which keeps large J_max
    cheap.  Requires |eps| below the Neumann threshold 1 / sup|b0|.
    """
    b0 = np.asarray(b0, dtype=float)
    if eps != 0.0 and np.any(b0 != 0.0):
        # 5% safety margin on the grid sup estimate
        sup = 1.05 * float(np.max(np.abs(sb.evaluate_profile(b0, np.linspace(0, np.pi, 2048)))))
        if abs(eps) * sup >= 1.0:
            raise ValueError(
                f"|eps| = {abs(eps)} beyond the Neumann threshold 1/sup|b0| = {1.0 / sup:.3e}")
    Sk, kept = _restricted_potential(ell, eps, b0, J_max)
    if not want_vectors:
        bw = 0
        if np.any(b0 != 0.0):
            bw = min(int(np.nonzero(b0)[0][-1]), Sk.shape[0] - 1)
        bands = np.zeros((bw + 1, Sk.shape[0]))
        for d in range(bw + 1):
            diag = np.diagonal(Sk, offset=d)
            bands[bw - d, d:] = diag  # "upper" banded storage for eig_banded
        try:
            lam = scipy.linalg.eigvals_banded(bands, lower=False)
        except scipy.linalg.LinAlgError as exc:
            raise ResonantSolveError(f"banded eigensolve failed at l={ell}") from exc
        # small eps: eigenvalues stay in label order (gaps omega^2 ~ 2 j dominate)
        return SpectralBlock(ell=ell, eps=eps, js=kept, lam=lam, vectors=None, J_max=J_max)
    try:
        lam, vec = scipy.linalg.eigh(Sk)
    except scipy.linalg.LinAlgError as exc:
        raise ResonantSolveError(f"dense eigensolve failed at l={ell}") from exc
    # continuation labeling: match each eigenvector to the eps=0 mode it overlaps most
    perm = np.empty(len(lam), dtype=int)
    taken = np.zeros(len(lam), dtype=bool)
    for col in np.argsort(-np.max(np.abs(vec), axis=0)):
        cand = np.argsort(-np.abs(vec[:, col]))
        for row in cand:
            if not taken[row]:
                perm[row] = col
                taken[row] = True
                break
    lam = lam[perm]
    vec = vec[:, perm]
    full = np.zeros((J_max + 1, len(kept)))
    full[kept, :] = vec
    return SpectralBlock(ell=ell, eps=eps, js=kept, lam=lam, vectors=full, J_max=J_max)


@dataclass
class DivisorReport:
    """Small-divisor table alpha_l with minimizing labels and the admissibility floor."""

    eps: float
    gamma: float
    tau: float
    ells: np.ndarray
    alpha: np.ndarray
    j_min: np.ndarray
    floor: np.ndarray
    ok: np.ndarray

    @property
    def all_ok(self) -> bool:
        return bool(np.all(self.ok))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "alpha", "j_min", "floor", "ok"])
            for i in range(len(self.ells)):
                w.writerow([int(self.ells[i]), repr(float(self.alpha[i])),
                            int(self.j_min[i]), repr(float(self.floor[i])),
                            int(self.ok[i])])


def small_divisors(eps: float, blocks: list[SpectralBlock], gamma: float,
                   tau: float) -> DivisorReport:
    """alpha_l = min_j |omega^2 l^2 - lambda_{l,j}(eps)| with argmin, per block."""
    omega2 = 1.0 + eps
    ells, alphas, jmins = [], [], []
    for blk in blocks:
        divisors = np.abs(omega2 * blk.ell ** 2 - blk.lam)
        k = int(np.argmin(divisors))
        ells.append(blk.ell)
        alphas.append(float(divisors[k]))
        jmins.append(int(blk.js[k]))
    ells = np.array(ells)
    alphas = np.array(alphas)
    floor = gamma / (20.0 * np.maximum(np.abs(ells), 1) ** (tau - 1.0))
    return DivisorReport(eps=eps, gamma=gamma, tau=tau, ells=ells, alpha=alphas,
                         j_min=np.array(jmins), floor=floor, ok=alphas >= floor)


def divisor_table(eps: float, b0: np.ndarray, L_n: int, J_max: int, gamma: float,
                  tau: float) -> DivisorReport:
    """Divisor report over l = 0..L_n via eigenvalue-only banded solves.

    The multiplication matrix of b0 is built once; each block only deletes
    its resonant row/column.  Deleting an index never widens the band, so
    the banded solver sees at most the spatial support of b0.
    """
    b0 = np.asarray(b0, dtype=float)
    size = J_max + 1
    omega2 = 1.0 + eps
    wj2 = (np.arange(size, dtype=float) + 1.0) ** 2
    bw = 0
    B = None
    if eps != 0.0 and np.any(b0 != 0.0):
        bw = min(int(np.nonzero(b0)[0][-1]), size - 1)
        B = sb.multiplication_matrix(b0, size)
    ells = np.arange(L_n + 1)
    alphas = np.empty(L_n + 1)
    jmins = np.empty(L_n + 1, dtype=int)
    for ell in ells:
        kept = np.delete(np.arange(size), ell - 1) if 1 <= ell <= size else np.arange(size)
        n = len(kept)
        if B is None:
            lam = wj2[kept]
        elif bw == 0:
            lam = wj2[kept] + eps * B[kept, kept]
        else:
            bands = np.zeros((bw + 1, n))
            bands[bw] = wj2[kept] + eps * B[kept, kept]
            for d in range(1, bw + 1):
                bands[bw - d, d:] = eps * B[kept[: n - d], kept[d:]]
            try:
                lam = scipy.linalg.eigvals_banded(bands, lower=False)
            except scipy.linalg.LinAlgError as exc:
                raise ResonantSolveError(f"banded eigensolve failed at l={ell}") from exc
        divisors = np.abs(omega2 * ell ** 2 - lam)
        k = int(np.argmin(divisors))
        alphas[ell] = divisors[k]
        jmins[ell] = kept[k]  # ascending eigenvalues match ascending labels at small eps
    floor = gamma / (20.0 * np.maximum(np.abs(ells), 1) ** (tau - 1.0))
    return DivisorReport(eps=eps, gamma=gamma, tau=tau, ells=ells, alpha=alphas,
                         j_min=jmins, floor=floor, ok=alphas >= floor)


def pairwise_divisor_constant(report: DivisorReport) -> float:
    """Empirical constant C in 1/(alpha_l alpha_k) <= C |k-l|^(2(tau-1)/beta) / (gamma^2 eps^(tau-1)).

    beta = (2 - tau)/tau.  Returns the supremum over all pairs l != k of the
    report (a finite value verifies the product bound at this truncation).
    """
    tau, gamma, eps = report.tau, report.gamma, report.eps
    beta = (2.0 - tau) / tau
    a = report.alpha
    l = report.ells.astype(float)
    inv = 1.0 / np.outer(a, a)
    dist = np.abs(l[:, None] - l[None, :])
    with np.errstate(divide="ignore"):
        bound_shape = dist ** (2.0 * (tau - 1.0) / beta) / (gamma ** 2 * max(eps, 1e-300) ** (tau - 1.0))
    mask = dist > 0
    return float(np.max(inv[mask] / bound_shape[mask]))


@dataclass
class PrecondReport:
    """Diagnostics of the sign/half-power preconditioner splitting."""

    u_norm: float
    u_ok: bool
    dhalf_norm: float
    dhalf_bound: float
    dhalf_ok: bool
    r1_norm: float
    r1_constant: float
    r2_norm: float
    r2_constant: float
    factorization_error: float
    neumann_converged: bool
    neumann_vs_dense: float


def preconditioned_split_check(op: LinearizedOperator, params: NormParams,
                               gamma: float, tau: float,
                               neumann_tol: float = 1e-14,
                               neumann_max_terms: int = 400) -> PrecondReport:
    """Form U = sgn(D), R_i = |D|^(-1/2) M_i |D|^(-1/2) and verify the bounds.

    Cross-validates the dense inverse against the Neumann series for
    (1 - eps U R1 - eps U R2)^(-1); divergence with an admissible eps is
    reported, never absorbed.
    """
    lattice = op.lattice
    parts = split_diagonal(op)
    n = lattice.size
    U = np.zeros((n, n))
    Dm = np.zeros((n, n))   # |D|^(-1/2)
    Dp = np.zeros((n, n))   # |D|^(+1/2)
    for ell in range(op.L + 1):
        rows = np.where(lattice.ells == ell)[0]
        blk = diagonalize_block(ell, op.eps, op.b0, op.J, want_vectors=True)
        # align block modes with lattice rows (same kept j order)
        phi = blk.vectors[lattice.js[rows], :]
        d = (1.0 + op.eps) * ell ** 2 - blk.lam
        if np.any(d == 0.0):
            raise ResonantSolveError(f"vanishing divisor in block l={ell}")
        U[np.ix_(rows, rows)] = phi @ np.diag(np.sign(d)) @ phi.T
        Dm[np.ix_(rows, rows)] = phi @ np.diag(np.abs(d) ** -0.5) @ phi.T
        Dp[np.ix_(rows, rows)] = phi @ np.diag(np.abs(d) ** +0.5) @ phi.T
    R1 = Dm @ parts.M1 @ Dm
    R2 = Dm @ parts.M2 @ Dm
    recon = Dp @ (U - op.eps * R1 - op.eps * R2) @ Dp
    scale = max(np.abs(op.matrix).max(), 1.0)
    fact_err = float(np.abs(recon - op.matrix).max() / scale)

    w_s = lattice.weights(params)
    shifted = NormParams(params.sigma, params.s + (tau - 1.0) / 2.0, params.r)
    w_sh = lattice.weights(shifted)

    def opnorm(M, w_out, w_in):
        return float(np.linalg.norm(w_out[:, None] * M / w_in[None, :], 2))

    u_norm = opnorm(U, w_s, w_s)
    dhalf_norm = opnorm(Dm, w_s, w_sh)
    dhalf_bound = 9.0 / np.sqrt(gamma)
    r1_norm = opnorm(R1, w_sh, w_sh)
    r2_norm = opnorm(R2, w_sh, w_sh)
    r1_constant = r1_norm * gamma * max(op.eps, 1e-300) ** ((tau - 1.0) / 2.0)
    r2_constant = r2_norm * gamma

    T = op.eps * (U @ (R1 + R2))
    term = np.eye(n)
    acc = np.eye(n)
    converged = False
    for _ in range(neumann_max_terms):
        term = term @ T
        tn = np.abs(term).max()
        acc += term
        if tn < neumann_tol:
            converged = True
            break
        if not np.isfinite(tn) or tn > 1e12:
            break
    neumann_vs_dense = np.inf
    if converged:
        inv_neumann = Dm @ acc @ U @ Dm
        inv_dense = scipy.linalg.lu_solve(op.factorize(), np.eye(n))
        neumann_vs_dense = float(np.abs(inv_neumann - inv_dense).max()
                                 / max(np.abs(inv_dense).max(), 1e-300))
    return PrecondReport(u_norm=u_norm, u_ok=u_norm <= 4.0 + 1e-9,
                         dhalf_norm=dhalf_norm, dhalf_bound=dhalf_bound,
                         dhalf_ok=dhalf_norm <= dhalf_bound * (1 + 1e-9),
                         r1_norm=r1_norm, r1_constant=r1_constant,
                         r2_norm=r2_norm, r2_constant=r2_constant,
                         factorization_error=fact_err,
                         neumann_converged=converged,
                         neumann_vs_dense=neumann_vs_dense)


def spectrum_to_csv(blocks: list[SpectralBlock], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "j", "lambda"])
        for blk in blocks:
            for j, lam in zip(blk.js, blk.lam):
                w.writerow([blk.ell, int(j), repr(float(lam))])
