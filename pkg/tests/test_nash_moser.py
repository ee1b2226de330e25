import numpy as np
import pytest

from resonant_kg import (CoeffField, NormParams, field_multiply, project_kernel,
                         project_range)
from resonant_kg.bifurcation import one_mode_solution
from resonant_kg.nash_moser import (ContractionError, MelnikovExcludedError,
                                    SolverConfig, SolveTrace, run, solve_stage0,
                                    verify_solution)


def small_config(**kw):
    base = dict(eps=1e-3, m=0, n_max=3, divisor_diagnostics=False)
    base.update(kw)
    return SolverConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eps=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(eps=1e-3, gamma=0.3)
    with pytest.raises(ValueError):
        SolverConfig(eps=1e-3, tau=2.4)
    with pytest.raises(ValueError):
        SolverConfig(eps=1e-3, s=0.4)
    with pytest.raises(ValueError):
        SolverConfig(eps=1e-3, theta=0.5)  # pi^2 theta/6 >= sigma_bar/2
    with pytest.raises(ValueError):
        SolverConfig(eps=1e-3, m=3, J_space=1)
    cfg = SolverConfig(eps=1e-3)
    assert cfg.sigma_inf > cfg.sigma_bar / 2.0
    sig = cfg.sigmas()
    assert sig[0] == cfg.sigma_bar
    assert abs(sig[1] - (cfg.sigma_bar - cfg.theta / 2.0)) < 1e-15
    assert all(s > cfg.sigma_bar / 2 for s in sig)
    assert cfg.mean_smoothness_flag  # s = 1 <= 3/2: flagged, still computed


def test_stage0_zero_amplitude():
    w, kernel, rec = solve_stage0(small_config(eps=0.0))
    assert np.abs(w.u).max() == 0.0
    assert rec.h_norm == 0.0
    assert abs(kernel.kernel.v[0] - np.sqrt(4.0 / 3.0)) < 1e-15


def test_stage0_properties():
    cfg = small_config()
    w, kernel, rec = solve_stage0(cfg)
    params = NormParams(cfg.sigma_bar, cfg.s)
    # O(eps) size and no kernel component
    assert 0.1 < rec.h_norm / cfg.eps < 100.0
    assert np.abs(project_kernel(w).u).max() == 0.0
    # fixed-point residual below the reported certificate
    assert rec.stage_residual < 1e-12
    assert rec.inverse_norm <= 2.0  # initialization symbol bound
    assert rec.contraction_ratio < 0.5


def test_stage0_precondition():
    with pytest.raises(ContractionError):
        solve_stage0(SolverConfig(eps=0.3, m=0, L0=8))


def test_run_certificates_and_bounds():
    cfg = small_config()
    res = run(cfg)
    assert len(res.trace.records) == cfg.n_max + 1
    chi = 1.5
    for rec in res.trace.records:
        assert rec.stage_residual <= cfg.stage_tol
        assert rec.melnikov_ok
        # superexponential decay bound (one-sided)
        assert cfg.gamma * rec.h_norm / cfg.eps <= np.exp(-chi ** rec.n) * (1 + 1e-12)
        if rec.n >= 1:
            assert rec.inverse_norm <= rec.inverse_bound
            # newly resolved band obeys the smoothing estimate
            assert rec.r_norm <= rec.r_smoothing_bound * (1 + 1e-12)
    assert res.residual.relative < 1e-10


def test_run_is_deterministic():
    a = run(small_config(n_max=2)).trace.to_jsonl()
    b = run(small_config(n_max=2)).trace.to_jsonl()
    assert a == b


def test_trace_roundtrip(tmp_path):
    res = run(small_config(n_max=1))
    path = tmp_path / "trace.jsonl"
    res.trace.to_jsonl(path)
    back = SolveTrace.from_jsonl(path)
    assert back.to_jsonl() == res.trace.to_jsonl()


def test_scaling_of_solution_with_eps():
    params = NormParams(0.5, 1.0)
    ratios = []
    for eps in (2e-4, 1e-3, 5e-3):
        res = run(small_config(eps=eps, n_max=2))
        ratios.append(res.w.norm(params) / eps)
    assert max(ratios) / min(ratios) < 1.5  # ||w|| / eps approximately constant


def test_solution_leading_shape():
    cfg = small_config()
    res = run(cfg)
    alpha = np.sqrt(4.0 / 3.0)
    assert abs(2 * res.u.u[1, 0] - alpha) < 0.01 * alpha
    rem = res.u.copy()
    rem.u[1, 0] = 0.0
    params = NormParams(cfg.sigma_bar / 2, cfg.s)
    assert rem.norm(params) < 50 * cfg.eps  # corrections are O(eps)


def test_branches_are_distinct():
    eps = 1e-3
    r0 = run(small_config(eps=eps, n_max=2))
    r1 = run(SolverConfig(eps=eps, m=1, n_max=2, divisor_diagnostics=False))
    params = NormParams(0.5, 1.0)
    diff = (r0.u - r1.u).norm(params)
    alpha0 = np.sqrt(4.0 / 3.0)
    assert diff >= 0.9 * alpha0


def test_melnikov_exclusion_raised():
    # omega(eps) * 100 = 101 exactly: stage with L_n >= 100 must exclude it
    eps = 101.0 ** 2 / 100.0 ** 2 - 1.0
    cfg = SolverConfig(eps=eps, m=0, n_max=4, divisor_diagnostics=False)
    with pytest.raises(MelnikovExcludedError) as ei:
        run(cfg)
    assert ei.value.stage == 4
    assert any(r.ell == 100 and r.j == 100 for r in ei.value.records)
    # earlier stages have no binding pair for this amplitude
    cfg_short = SolverConfig(eps=eps, m=0, n_max=3, divisor_diagnostics=False)
    assert all(r.melnikov_ok for r in run(cfg_short).trace.records)
    # with the check disabled the truncated solve can still proceed: the
    # resonant space mode j = 100 lies outside the m = 0 spatial truncation,
    # and the true divisor is shifted off zero by the potential mean
    cfg2 = SolverConfig(eps=eps, m=0, n_max=4, divisor_diagnostics=False,
                        check_melnikov=False)
    res = run(cfg2)
    assert res.residual.relative < 1e-10


def test_kernel_resolve_per_step_agrees():
    a = run(small_config(n_max=2))
    b = run(small_config(n_max=2, kernel_resolve_per_step=True))
    assert np.abs(a.u.padded(b.u.L, b.u.J).u - b.u.padded(a.u.L, a.u.J).u).max() < 1e-12


def test_verify_solution_identities():
    # zero field: zero residual
    z = verify_solution(CoeffField.zeros(4, 2), 1e-3)
    assert all(v == 0.0 for v in z.norms.values())
    # u = one-mode kernel solution: residual is exactly -eps * Pi_W(v^3)
    eps = 1e-2
    v = one_mode_solution(1, +1)
    u = v.embed()
    rep = verify_solution(u, eps)
    omega = np.sqrt(1 + eps)
    cube = field_multiply(field_multiply(u, u), u)
    expected = (u.padded(cube.L, cube.J).apply_wave_symbol(omega) - eps * cube)
    # kernel part of L_omega u is eps*A v which cancels eps*Pi_V(v^3)
    kernel_part = project_kernel(expected)
    assert np.abs(kernel_part.u).max() < 1e-13
    manual = -eps * project_range(cube)
    p = NormParams(0.0, 1.0)
    assert abs(expected.norm(p) - manual.norm(p)) < 1e-12 * manual.norm(p)
    assert abs(rep.norms["sigma=0,s=1,r=2"] - manual.norm(p)) < 1e-12 * manual.norm(p)


def test_verify_detects_tampering():
    res = run(small_config(n_max=2))
    clean = verify_solution(res.u, 1e-3).relative
    tampered = res.u.copy()
    tampered.u[3, 0] += 1e-6
    dirty = verify_solution(tampered, 1e-3).relative
    assert dirty > 1e3 * max(clean, 1e-300)


def test_spatial_decay_diagnostic():
    res = run(SolverConfig(eps=2e-3, m=1, n_max=2, divisor_diagnostics=False))
    assert res.residual.superpolynomial_ok
    profile = dict(res.residual.spectral_decay)
    assert profile[1] > 0.5          # leading mode
    assert profile[13] < 1e-10       # deep spatial tail


def test_late_stage_vanishes():
    # once the truncation resolves the solution, new bands are numerically zero
    res = run(small_config(n_max=3))
    assert res.trace.records[-1].h_norm < 1e-14
    assert res.trace.records[-1].picard_iters <= 2


def test_final_h_tol_stops_early():
    res = run(small_config(n_max=5, final_h_tol=1e-10))
    # stage 1 already drops below the tolerance at these defaults
    assert len(res.trace.records) < 6
    assert res.trace.records[-1].h_norm < 1e-10
    assert res.residual.relative < 1e-10


def test_other_branches_smoke():
    # negative-sign branch mirrors the leading coefficient
    rm = run(small_config(n_max=2, sign=-1))
    assert abs(2 * rm.u.u[1, 0] + np.sqrt(4.0 / 3.0)) < 0.01
    assert rm.residual.relative < 1e-10
    # m = 2: leading coefficient alpha_2 = 2, deeper spatial coupling
    r2 = run(SolverConfig(eps=1e-3, m=2, n_max=2, divisor_diagnostics=False))
    assert abs(2 * r2.u.u[3, 2] - 2.0) < 0.01
    assert r2.residual.relative < 1e-8


def test_stage0_only_run():
    res = run(small_config(n_max=0))
    assert len(res.trace.records) == 1
    assert res.residual.relative < 1e-9
