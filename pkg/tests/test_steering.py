import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from nodalsteer.errors import PatternMismatch, SteeringFailure
from nodalsteer.grid import Grid, GridFunction, l2_norm
from nodalsteer.nonlinearity import Nonlinearity
from nodalsteer.profiles import ProfileSpec, build
from nodalsteer.steering import amplification_check, execute, plan, ratio_profile, steer
from nodalsteer.tracker import extract_pattern
from oracles import matched_pair, smooth_residual

ZERO = Nonlinearity("zero")
G = Grid(400)


def sin_k(k, amp=1.0, grid=G):
    return grid.sample(lambda x: amp * np.sin(k * np.pi * x), dirichlet=True)


def test_constant_ratio_plan():
    pl = plan(sin_k(2), sin_k(2, 0.5), 0.05, ZERO)
    psi = pl.psi.values[np.isfinite(pl.psi.values)]
    assert np.allclose(psi, 0.5, atol=1e-12)
    assert pl.K == pytest.approx(1.5)
    ctrl = np.isfinite(pl.psi.values)
    assert np.allclose(pl.v0.values[ctrl], math.log(0.5 / 1.5), atol=1e-12)
    assert np.all(pl.v0.values[~ctrl] == 0)


def test_rate_from_K():
    pl = plan(sin_k(2), sin_k(2, 0.5), 0.05, ZERO, t1=0.01)
    assert pl.m == pytest.approx(40.546, abs=1e-3)
    assert pl.m * pl.t1 == pytest.approx(math.log(pl.K), abs=1e-12)


def test_mismatched_zeros_rejected():
    a = build(ProfileSpec.from_zeros([0.5]), G)
    b = build(ProfileSpec.from_zeros([0.6]), G)
    with pytest.raises(PatternMismatch):
        plan(a, b, 0.05, ZERO)
    with pytest.raises(PatternMismatch):
        plan(sin_k(2), -sin_k(2), 0.05, ZERO)


def test_fourier_oracle():
    u_in, u_bar = sin_k(1), sin_k(1, 0.5)
    for dur in (1e-3, 2e-4):
        pl = plan(u_in, u_bar, 0.02, ZERO, t1=dur, T_contract=dur)
        final, rep = execute(u_in, pl, ZERO)
        exact = 0.5 * (1 - math.exp(-math.pi**2 * 2 * dur)) / math.sqrt(2)
        assert rep.achieved_error == pytest.approx(exact, rel=0.02)
    _, rep, _ = steer(u_in, u_bar, 0.02, ZERO)
    assert rep.achieved_error <= 0.02 and rep.slack >= 0


def test_identity_target():
    u = sin_k(1)
    _, rep, pl = steer(u, u, 0.02, ZERO)
    assert pl.K == pytest.approx(2.0)
    assert rep.achieved_error <= 0.02


def test_residual_bound():
    u_in, u_bar = sin_k(1), sin_k(1, 0.5)
    r = sin_k(3, 0.01)
    assert l2_norm(r) == pytest.approx(0.01 / math.sqrt(2), rel=1e-6)
    nl = Nonlinearity("sinusoidal", 0.5)
    _, rep, pl = steer(u_in + r, u_bar, 0.02, nl, u_in=u_in)
    assert rep.r_in_norm == pytest.approx(l2_norm(r))
    assert rep.achieved_error <= 0.02 + pl.K * math.exp(0.5) * 0.01 * (1 + 1e-9)
    assert rep.bound == pytest.approx(0.02 + math.sqrt(2) * pl.K * math.exp(0.5) * l2_norm(r))


def test_amplification_single_mode():
    u_in = sin_k(1)
    pl = plan(u_in, sin_k(1, 0.5), 0.05, ZERO, t1=1e-3)
    chk = amplification_check(u_in, pl, ZERO)
    expected = 1.5 * (1 - math.exp(-math.pi**2 * 1e-3)) / math.sqrt(2)
    assert expected == pytest.approx(0.01042, abs=1e-5)
    assert chk.deviation == pytest.approx(expected, rel=0.05)
    assert chk.holds


def test_amplification_shrinks_with_t1():
    u_in = sin_k(1)
    devs = [amplification_check(u_in, plan(u_in, sin_k(1, 0.5), 0.05, ZERO, t1=t), ZERO).deviation
            for t in (1e-2, 1e-3, 1e-4)]
    assert devs[0] > devs[1] > devs[2]


def test_amplification_of_zero():
    pl = plan(sin_k(1), sin_k(1, 0.5), 0.05, ZERO, t1=1e-3)
    assert amplification_check(G.zeros(), pl, ZERO).deviation == 0.0


def test_spectral_bound_holds_for_many_modes():
    # the single-mode bound underestimates higher modes; the spectral one covers them
    u_in = build(ProfileSpec.from_zeros([0.4]), G)
    pl = plan(u_in, u_in * 0.7, 0.05, ZERO, t1=1e-3)
    chk = amplification_check(u_in, pl, ZERO)
    assert chk.deviation <= chk.spectral_bound * 1.05


def test_plan_invariants():
    u_in = build(ProfileSpec.from_zeros([0.3, 0.7]), G)
    u_bar = GridFunction(G, u_in.values * (0.5 + 0.4 * np.cos(3 * G.x) ** 2))
    pl = plan(u_in, u_bar, 0.05, ZERO)
    assert np.all(pl.v0.values <= 0)
    assert np.all(pl.v0.values >= -50)
    # nodes inside the cut band stay uncontrolled
    band = np.min(np.abs(G.x[:, None] - np.array([0, 0.3, 0.7, 1])[None, :]), axis=1) <= pl.rho_cut
    assert np.all(pl.v0.values[band] == 0)
    for a, b in pl.A_rho:
        assert a < b
    assert pl.K > np.nanmax(pl.psi.values)


def test_ratio_continued_through_zero():
    u_in = sin_k(2)
    u_bar = sin_k(2, 3.0)
    psi = ratio_profile(u_in, u_bar, (0.5,))
    assert np.all(np.isfinite(psi[1:-1]))
    assert np.allclose(psi[1:-1], 3.0)


def test_backoff_failure_carries_reports():
    u_in = build(ProfileSpec.from_zeros([0.5]), G)
    with pytest.raises(SteeringFailure) as info:
        steer(u_in, u_in * 0.5, 1e-9, ZERO, t_initial=1e-3, t_min=1e-4)
    assert len(info.value.reports) == 4


def test_accept_predicate_is_honoured():
    u = sin_k(1)
    calls = []
    _, rep, _ = steer(u, u * 0.5, 0.05, ZERO, accept=lambda s: calls.append(1) or len(calls) >= 3)
    assert len(calls) == 3 and rep.attempts >= 3


def test_report_json():
    _, rep, _ = steer(sin_k(1), sin_k(1, 0.5), 0.02, ZERO)
    import json
    d = json.loads(rep.to_json())
    for key in ("K", "m", "slack", "bound", "exp_L", "r_in_norm", "achieved_error"):
        assert key in d


@settings(max_examples=8)
@given(st.integers(0, 10_000), st.sampled_from(["zero", "sinusoidal"]))
@example(seed=703, kind="zero")  # two small lobes merged under an L2-accepted duration
def test_certificate_and_sign_preservation(seed, kind):
    g = Grid(200)
    nl = Nonlinearity(kind, 1.0)
    u_in, u_bar, rng = matched_pair(seed, g)
    r = smooth_residual(rng, g, 1e-3)
    final, rep, _ = steer(u_in + r, u_bar, 0.05, nl, u_in=u_in)
    assert rep.slack >= 0
    assert rep.phase_durations[0] >= 1e-6
    pf = extract_pattern(final, 1e-9 * final.sup())
    pb = extract_pattern(u_bar, 1e-9 * u_bar.sup())
    assert pf.n == pb.n and pf.lam == pb.lam


def test_determinism():
    u_in, u_bar, _ = matched_pair(11, G)
    a, ra, _ = steer(u_in, u_bar, 0.05, ZERO)
    b, rb, _ = steer(u_in, u_bar, 0.05, ZERO)
    assert a.values.tobytes() == b.values.tobytes()
    assert ra == rb


def test_coarse_profile_needs_short_durations():
    # the blend of a profile with rho = 0.047 on h = 0.005 is narrower than a cell;
    # its discrete Laplacian is large and the admissible duration falls below 1e-6
    g = Grid(200)
    u_in = build(ProfileSpec.from_zeros([0.42, 0.608, 0.797]), g)
    u_bar = u_in * 3.0
    with pytest.raises(SteeringFailure):
        steer(u_in, u_bar, 0.05, ZERO, t_min=1e-6)
    _, rep, _ = steer(u_in, u_bar, 0.05, ZERO, t_min=1e-8)
    assert rep.slack >= 0 and rep.phase_durations[0] < 1e-6
