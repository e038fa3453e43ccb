import numpy as np
import pytest

from pmra.bench import generic_signal
from pmra.estimators import (
    EMConfig,
    em_fit,
    em_normal_matrix,
    em_responsibilities,
    fit_M,
    fit_T,
    m_objective_fn,
    objective,
    random_starts,
    t_objective_fn,
)
from pmra.lm import OptConfig
from pmra.model import ObservationBatch, generate, projected_orbit
from pmra.moments import (
    MomentKind,
    MomentSet,
    cosine_matrix,
    debias,
    empirical_moments,
    population_moments,
)
from pmra.signal import apply, group_elements, orbit_distance, reflect


@pytest.fixture(scope="module")
def theta13():
    return generic_signal(13, np.random.default_rng(0)).values


def test_random_starts_unit_norm_and_seeded():
    a = random_starts(9, 5, seed=3)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0)
    np.testing.assert_array_equal(a, random_starts(9, 5, seed=3))


# --- EM --------------------------------------------------------------------


def test_em_near_noiseless(theta13):
    batch = generate(theta13, 100, 1e-3, seed=2)
    fit = em_fit(batch, 1e-3)
    assert orbit_distance(fit.estimate, theta13) < 1e-3


def test_em_single_shift_batch_fits_observed_projection(theta13):
    # one shift only determines the projection; the antisymmetric part is regularized away
    rng = np.random.default_rng(1)
    y = projected_orbit(theta13)[0] + 1e-3 * rng.standard_normal((100, 6))
    fit = em_fit(ObservationBatch(y, 1e-3, 0), 1e-3)
    fitted = projected_orbit(fit.estimate.values)
    assert np.min(np.linalg.norm(fitted - y.mean(axis=0), axis=1)) < 1e-3
    assert any("tikhonov" in note for note in fit.notes)


def test_uniform_responsibilities_for_constant_signal():
    batch = generate(np.random.default_rng(3).standard_normal(11), 200, 0.5, seed=4)
    w = em_responsibilities(batch, np.full(11, 0.3), 0.5)
    assert w.shape == (200, 11)
    np.testing.assert_allclose(w, 1 / 11, atol=1e-15)


@pytest.mark.parametrize("p", [7, 13])
def test_uniform_weight_normal_matrix(p):
    w = np.full((50, p), 1 / p)
    want = (1 - 2 / p) * np.eye(p) + np.ones((p, p)) / p
    np.testing.assert_allclose(em_normal_matrix(w, p), want, atol=1e-14)


@pytest.mark.parametrize("sigma", [0.01, 0.3, 2.0])
def test_responsibility_rows_sum_to_one(theta13, sigma):
    batch = generate(theta13, 500, sigma, seed=5)
    w = em_responsibilities(batch, np.random.default_rng(6).standard_normal(13), sigma)
    assert np.all(np.isfinite(w))
    assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-12


@pytest.mark.parametrize("sigma", [0.05, 0.3, 1.0])
def test_em_loglik_monotone(theta13, sigma):
    batch = generate(theta13, 2000, sigma, seed=7)
    fit = em_fit(batch, sigma, EMConfig(starts=3, max_iters=300, seed=1))
    assert len(fit.start_traces) == 3
    for trace in fit.start_traces:
        assert np.min(np.diff(trace)) >= -1e-10
    assert fit.objective == max(fit.start_objectives)


def test_em_rejects_zero_sigma(theta13):
    with pytest.raises(ValueError):
        em_fit(generate(theta13, 10, 0.0, seed=0), 0.0)


# --- moment fitting ----------------------------------------------------------


def test_fit_T_at_truth_is_exact(theta13):
    pop = population_moments(theta13)
    fit = fit_T(pop, cfg=OptConfig(starts=1), starts=theta13)
    assert fit.objective == 0.0
    assert fit.iterations == 0
    fit = fit_T(pop, cfg=OptConfig(starts=1), starts=reflect(theta13))
    assert fit.objective < 1e-24


def test_fit_M_at_truth_is_at_roundoff(theta13):
    # the target goes through the A^{-1} transfer, the model through direct enumeration
    pop = population_moments(theta13)
    for start in (theta13, reflect(theta13)):
        fit = fit_M(pop, cfg=OptConfig(starts=1), starts=start)
        assert fit.objective < 1e-24
        assert orbit_distance(fit.estimate, theta13) < 1e-12


@pytest.mark.parametrize("fitter", [fit_T, fit_M])
def test_fit_from_random_starts(theta13, fitter):
    fit = fitter(population_moments(theta13), cfg=OptConfig(starts=20, seed=3))
    assert orbit_distance(fit.estimate, theta13) < 1e-6
    assert fit.estimate.p == 13
    assert len(fit.start_objectives) == 20


def test_objectives_are_dihedral_invariant():
    rng = np.random.default_rng(8)
    moments = population_moments(rng.standard_normal(7))
    point = rng.standard_normal(7)
    for make in (t_objective_fn, m_objective_fn):
        residual, _ = make(moments)
        base = objective(residual, point)
        for g in group_elements(7):
            assert objective(residual, apply(g, point).values) == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_zero_norm_block_is_noted():
    q = 3
    m = MomentSet(np.zeros(q), np.eye(q), np.zeros((q, q, q)), MomentKind.DEBIASED)
    for make in (t_objective_fn, m_objective_fn):
        _, notes = make(m)
        assert any("block 1" in n for n in notes)
        assert any("block 3" in n for n in notes)


def test_fit_rejects_raw_moments(theta13):
    raw = empirical_moments(generate(theta13, 50, 0.1, seed=0))
    with pytest.raises(ValueError):
        fit_T(raw)
    with pytest.raises(ValueError):
        fit_M(raw, cosine_matrix(13))


def _orbit_errors(method, sigma, seeds, theta_seed=9):
    errs = []
    for seed in seeds:
        theta = generic_signal(13, np.random.default_rng(theta_seed + seed)).values
        batch = generate(theta, 20_000, sigma, seed=seed)
        deb = debias(empirical_moments(batch), sigma)
        if method == "em":
            est = em_fit(batch, sigma, EMConfig(seed=seed)).estimate
        elif method == "fit_T":
            est = fit_T(deb, OptConfig(seed=seed)).estimate
        else:
            est = fit_M(deb, cosine_matrix(13), OptConfig(seed=seed)).estimate
        errs.append(orbit_distance(est, theta))
    return np.median(errs)


@pytest.mark.slow
def test_em_beats_fit_M_at_low_noise():
    seeds = range(10)
    assert _orbit_errors("em", 0.1, seeds) < _orbit_errors("fit_M", 0.1, seeds)


@pytest.mark.slow
def test_fit_M_degrades_before_fit_T():
    seeds = range(10)
    assert _orbit_errors("fit_M", 0.7, seeds) >= _orbit_errors("fit_T", 0.7, seeds)
