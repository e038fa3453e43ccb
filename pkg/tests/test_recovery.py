import numpy as np
import pytest

from pmra.bench import generic_signal
from pmra.model import generate
from pmra.moments import MomentKind, debias, empirical_moments, population_moments, to_cosine
from pmra.recovery import (
    RecoveryError,
    RecoveryTrace,
    consistency_residual,
    extract_cosines,
    propagate_phases,
    reconstruct,
    recover_anchor,
    recover_magnitudes,
    recover_mean,
    resolve_sign_branch,
)
from pmra.signal import DihedralElement, SpectralForm, apply, dft, orbit_distance, reflect


def wrap(x):
    return np.angle(np.exp(1j * np.asarray(x)))


def phase_oracle(theta):
    h = dft(theta)
    q = (len(theta) - 1) // 2
    return np.abs(h[1 : q + 1]), np.angle(h[1 : q + 1])


def oriented_phases(theta):
    """Oracle phases in the orientation selected by the eps_1 = +1 normalization."""
    _, phi = phase_oracle(theta)
    return phi * np.sign(chain_angles(theta)[0])


def chain_angles(theta):
    """phi_1 + phi_j - phi_{j+1} for j < q and phi_1 + 2 phi_q, wrapped to (-pi, pi]."""
    _, phi = phase_oracle(theta)
    nxt = np.append(phi[1:], -phi[-1])
    return wrap(phi[0] + phi - nxt)


def true_branch(theta):
    s = np.sign(chain_angles(theta)).astype(int)
    return s * s[0]


def trace_for(theta):
    cm = to_cosine(population_moments(theta))
    return extract_cosines(cm, recover_magnitudes(cm))


def signal_from_phases(p, phases, magnitudes=None, mean=0.0):
    q = (p - 1) // 2
    r = np.ones(q) if magnitudes is None else magnitudes
    return SpectralForm(p, mean, r, np.mod(phases, 2 * np.pi)).to_signal().values


@pytest.fixture(scope="module")
def generic13():
    return generic_signal(13, np.random.default_rng(42)).values


def test_recover_mean():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(13)
    assert recover_mean(population_moments(theta)) == pytest.approx(dft(theta)[0].real, abs=1e-12)
    assert recover_mean(population_moments(np.full(7, 0.5))) == pytest.approx(0.5 * np.sqrt(7), abs=1e-12)
    assert recover_mean(population_moments(theta - theta.mean())) == pytest.approx(0.0, abs=1e-12)


def test_recover_magnitudes_population_and_constant():
    theta = np.random.default_rng(1).standard_normal(13)
    r, _ = phase_oracle(theta)
    assert np.max(np.abs(recover_magnitudes(to_cosine(population_moments(theta))) - r)) < 1e-12
    np.testing.assert_allclose(recover_magnitudes(to_cosine(population_moments(np.full(9, 2.0)))), 0.0, atol=1e-7)


def test_recover_magnitudes_consistent_in_n():
    theta = generic_signal(13, np.random.default_rng(2)).values
    r, _ = phase_oracle(theta)
    medians = []
    for n in (1_000, 10_000, 100_000):
        errs = []
        for seed in range(10):
            deb = debias(empirical_moments(generate(theta, n, 0.1, seed=seed)), 0.1)
            errs.append(np.max(np.abs(recover_magnitudes(to_cosine(deb)) - r)))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_chain_cosines_match_phase_oracle(generic13):
    trace = trace_for(generic13)
    assert np.max(np.abs(trace.c - np.cos(chain_angles(generic13)))) < 1e-12
    np.testing.assert_allclose(trace.beta, np.arccos(trace.c))
    _, phi = phase_oracle(generic13)
    assert trace.c[-1] == pytest.approx(np.cos(phi[0] + 2 * phi[-1]), abs=1e-12)
    d2 = np.cos(phi[1] + phi[1] - phi[3])
    assert trace.d_value(2) == pytest.approx(d2, abs=1e-12)
    assert trace.d_star == pytest.approx(np.cos(phi[1] + phi[4] + phi[5]), abs=1e-12)
    assert not trace.degenerate


def test_zero_phases_are_flagged():
    theta = signal_from_phases(13, np.zeros(6))
    trace = trace_for(theta)
    np.testing.assert_allclose(trace.c, 1.0, atol=1e-12)
    np.testing.assert_allclose(trace.beta, 0.0, atol=1e-5)
    assert trace.degenerate_flags.all()


def test_small_magnitude_error_names_frequency():
    r = np.ones(6)
    r[3] = 0.0
    theta = signal_from_phases(13, np.random.default_rng(3).uniform(0, 6, 6), r)
    with pytest.raises(RecoveryError, match="frequency 4"):
        reconstruct(population_moments(theta))


def test_reconstruct_rejects_raw_moments():
    raw = empirical_moments(generate(np.random.default_rng(4).standard_normal(7), 50, 0.1, seed=0))
    with pytest.raises(RecoveryError):
        reconstruct(raw)


def test_sign_branch_matches_true_branch(generic13):
    trace = trace_for(generic13)
    eps = resolve_sign_branch(trace)
    np.testing.assert_array_equal(eps, true_branch(generic13))
    for _, win, lose in trace.decisions:
        assert win < 1e-10
        assert lose > 1e-6


@pytest.mark.parametrize("p", [7, 9, 13, 21])
def test_reflection_gives_same_normalized_branch(p):
    theta = generic_signal(p, np.random.default_rng(p)).values
    e1 = resolve_sign_branch(trace_for(theta))
    e2 = resolve_sign_branch(trace_for(reflect(theta)))
    np.testing.assert_array_equal(e1, e2)


def test_branch_antisymmetry(generic13):
    trace = trace_for(generic13)
    eps = resolve_sign_branch(trace)
    q = trace.q
    for j in range(2, q):
        target = trace.d_star if j + 1 == q else trace.d_value(j)
        a = consistency_residual(trace, eps[0], eps[j - 1], eps[j], j, target)
        b = consistency_residual(trace, -eps[0], -eps[j - 1], -eps[j], j, target)
        assert a == pytest.approx(b, abs=1e-15)


def test_indistinguishable_base_pair_is_flagged():
    # beta_2 = beta_3 with opposite true signs makes (+,-) and (-,+) give the same base residual
    p = 13
    rng = np.random.default_rng(5)
    phi = rng.uniform(0, 2 * np.pi, 6)
    phi[3] = 2 * phi[0] + phi[1]
    trace = trace_for(signal_from_phases(p, phi))
    assert trace.beta[1] == pytest.approx(trace.beta[2], abs=1e-9)
    resolve_sign_branch(trace)
    assert trace.degenerate_flags[1] and trace.degenerate_flags[2]


def test_decision_count_is_linear():
    for p in (7, 9, 13, 21, 41):
        theta = generic_signal(p, np.random.default_rng(p)).values
        trace = trace_for(theta)
        resolve_sign_branch(trace)
        q = trace.q
        assert trace.quadruple_decisions == 1
        assert trace.binary_decisions == q - 3
        assert len(trace.decisions) == q - 2


def test_anchor_candidates(generic13):
    trace = trace_for(generic13)
    resolve_sign_branch(trace)
    cands = recover_anchor(trace, 13)
    assert len(cands) == 13
    spacing = np.diff(np.sort(cands))
    np.testing.assert_allclose(spacing, 2 * np.pi / 13, atol=1e-12)
    phi = oriented_phases(generic13)
    assert np.min(np.abs(wrap(cands - phi[0]))) < 1e-10


def test_anchor_with_zero_angles():
    trace = RecoveryTrace(q=3, c=np.ones(3), beta=np.zeros(3), d=np.zeros(0), d_star=1.0)
    trace.eps = np.ones(3, dtype=int)
    np.testing.assert_allclose(recover_anchor(trace, 7), 2 * np.pi * np.arange(7) / 7, atol=1e-15)


def test_anchor_requires_resolved_branch():
    trace = RecoveryTrace(q=3, c=np.ones(3), beta=np.zeros(3), d=np.zeros(0), d_star=1.0)
    with pytest.raises(RecoveryError):
        recover_anchor(trace, 7)
    with pytest.raises(RecoveryError):
        propagate_phases(0.0, trace)


def test_phase_propagation(generic13):
    trace = trace_for(generic13)
    eps = resolve_sign_branch(trace)
    alpha = 0.37
    phi = propagate_phases(alpha, trace)
    assert phi[0] == pytest.approx(alpha)
    assert wrap(phi[1] - (2 * alpha - eps[0] * trace.beta[0])) == pytest.approx(0.0, abs=1e-12)

    truth = oriented_phases(generic13)
    cands = recover_anchor(trace, 13)
    best = cands[np.argmin(np.abs(wrap(cands - truth[0])))]
    assert np.max(np.abs(wrap(propagate_phases(best, trace) - truth))) < 1e-10


@pytest.mark.parametrize("p", [7, 13, 21])
def test_reconstruct_population(p):
    theta = generic_signal(p, np.random.default_rng(100 + p)).values
    est, trace = reconstruct(population_moments(theta))
    assert orbit_distance(est, theta) < 1e-8
    assert not trace.degenerate
    assert trace.candidate_residuals.shape == (p,)
    assert np.max(trace.candidate_residuals) < 1e-10


def test_reconstruct_is_orbit_invariant():
    theta = generic_signal(7, np.random.default_rng(6)).values
    ref, _ = reconstruct(population_moments(theta))
    est, _ = reconstruct(population_moments(reflect(theta)))
    assert orbit_distance(est, ref) < 1e-8
    for ell in range(7):
        est, _ = reconstruct(population_moments(apply(DihedralElement(ell), theta)))
        assert orbit_distance(est, theta) < 1e-8


def test_reconstruct_many_random_signals():
    rng = np.random.default_rng(7)
    done = 0
    while done < 100:
        theta = rng.standard_normal(13)
        theta /= np.linalg.norm(theta)
        if np.min(np.abs(dft(theta)[1:7])) <= 0.01:
            continue
        est, trace = reconstruct(population_moments(theta))
        assert orbit_distance(est, theta) < 1e-8
        assert not trace.degenerate
        done += 1


def test_reconstruct_debiased_low_noise():
    theta = generic_signal(13, np.random.default_rng(8)).values
    deb = debias(empirical_moments(generate(theta, 20_000, 1e-3, seed=1)), 1e-3)
    assert deb.kind is MomentKind.DEBIASED
    est, _ = reconstruct(deb)
    assert orbit_distance(est, theta) < 1e-2
