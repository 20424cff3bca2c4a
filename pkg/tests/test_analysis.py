import numpy as np
import pytest

from bcqq.analysis import (
    effective_dimension,
    eigen_spectrum,
    empirical_fim,
    fim_from_logits,
    fourier_spectrum,
    mlp_logit_jacobian,
    normalize_fims,
    quantum_fims,
    sample_states,
    write_deff_csv,
    write_histogram_csv,
)
from bcqq.ansatz import CircuitTemplate, QModel, init_qmodel, q_values
from bcqq.mlp import forward, init_mlp, mlp_sizes
from bcqq.qsim import Feature, Gate, Observable, Param
from oracles import central_diff


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def test_bernoulli_logit_fisher_closed_form():
    for theta in np.linspace(-4, 4, 17):
        logits = np.array([[theta / 2, -theta / 2]])
        jac = np.array([[[0.5], [-0.5]]])
        f = fim_from_logits(logits, jac)
        assert f[0, 0] == pytest.approx(0.25 / np.cosh(theta / 2) ** 2, abs=1e-12)
        assert f[0, 0] == pytest.approx(_sigmoid(theta) * (1 - _sigmoid(theta)), abs=1e-12)


def test_one_qubit_quantum_fisher_closed_form():
    t = CircuitTemplate(1, (Gate("RX", 0, source=Param(0)),), 0, 1)
    obs = (Observable([("Z", 1.0)]), Observable([("Z", -1.0)]))
    for theta in np.linspace(-3, 3, 13):
        m = QModel(t, np.array([theta]), np.ones(2), obs)
        f = empirical_fim(m, np.zeros((1, 0)))
        eta = 2 * np.cos(theta)
        p = _sigmoid(eta)
        assert f[0, 0] == pytest.approx(p * (1 - p) * 4 * np.sin(theta) ** 2, abs=1e-8)
        # output weight directions: logits (w0 cos, -w1 cos)
        assert f[1, 1] == pytest.approx(p * (1 - p) * np.cos(theta) ** 2, abs=1e-8)


def test_inert_parameter_gives_zero_row():
    # RZ on |0> only adds a global phase, so parameter 0 cannot change outputs
    gates = (
        Gate("RZ", 0, source=Param(0)),
        Gate("RX", 0, source=Feature(0)),
        Gate("RY", 0, source=Param(1)),
    )
    t = CircuitTemplate(1, gates, 1, 2)
    obs = (Observable([("Z", 1.0)]), Observable([("Z", -1.0)]))
    m = QModel(t, np.array([0.7, 0.3]), np.array([1.0, 2.0]), obs)
    f = empirical_fim(m, np.random.default_rng(0).uniform(-np.pi, np.pi, (20, 1)))
    assert np.max(np.abs(f[0])) < 1e-12 and np.max(np.abs(f[:, 0])) < 1e-12
    assert f[1, 1] > 0


def test_mlp_jacobian_matches_finite_differences(rng):
    m = init_mlp(mlp_sizes(5), rng)
    m.set_flat(m.get_flat() + rng.normal(scale=0.1, size=m.n_params))
    x = rng.uniform(-np.pi, np.pi, (3, 4))
    out, jac = mlp_logit_jacobian(m, x)
    np.testing.assert_allclose(out, forward(m, x), atol=1e-14)

    def f(flat):
        trial = m.copy()
        trial.set_flat(flat)
        return forward(trial, x)

    np.testing.assert_allclose(jac, central_diff(f, m.get_flat(), 1e-6), atol=1e-7)


def test_quantum_jacobian_matches_finite_differences(rng):
    from bcqq.analysis import quantum_logit_jacobian

    m = init_qmodel("cyclic", 2, rng)
    m.w = np.array([1.5, -0.5])
    x = rng.uniform(-np.pi, np.pi, (3, 4))
    out, jac = quantum_logit_jacobian(m, x)

    def f(flat):
        trial = m.copy()
        trial.set_flat(flat)
        return q_values(trial, x)

    np.testing.assert_allclose(out, q_values(m, x), atol=1e-14)
    np.testing.assert_allclose(jac, central_diff(f, m.get_flat(), 1e-5), atol=1e-8)


def test_fims_symmetric_and_psd(rng):
    states = sample_states(10, 0)
    for i in range(100):
        if i % 2:
            m = init_qmodel(("baseline", "dru", "cyclic")[i % 3], 5, rng)
            m.w = rng.uniform(-np.pi, np.pi, 2)
        else:
            m = init_mlp(mlp_sizes(int(rng.choice([4, 5, 18]))), rng)
        f = empirical_fim(m, states)
        assert np.max(np.abs(f - f.T)) < 1e-10
        assert np.linalg.eigvalsh(f).min() >= -1e-8


def test_spectrum_of_identity_is_one_bin():
    edges, density = eigen_spectrum([np.eye(5), np.eye(5)], bins=10)
    assert density.sum() == pytest.approx(1.0)
    (hit,) = np.flatnonzero(density)
    assert density[hit] == 1.0
    assert edges[hit] <= 1.0 <= edges[hit + 1]


def test_spectrum_of_zero_matrix_at_zero():
    edges, density = eigen_spectrum([np.zeros((4, 4))], bins=7)
    (hit,) = np.flatnonzero(density)
    assert edges[hit] <= 0.0 <= edges[hit + 1]


def test_spectrum_rejects_non_symmetric():
    with pytest.raises(ValueError):
        eigen_spectrum([np.array([[1.0, 2.0], [0.0, 1.0]])])


def test_wishart_spectrum_in_marchenko_pastur_support(rng):
    p, n = 50, 200
    mats = []
    for _ in range(20):
        x = rng.normal(size=(p, n))
        mats.append(x @ x.T / n)
    edges, density = eigen_spectrum(mats, bins=30)
    q = p / n
    lo, hi = (1 - np.sqrt(q)) ** 2, (1 + np.sqrt(q)) ** 2
    assert edges[0] > 0.8 * lo and edges[-1] < 1.15 * hi
    # bulk is skewed: the mode sits below the mean eigenvalue of 1
    centers = 0.5 * (edges[:-1] + edges[1:])
    assert centers[np.argmax(density)] < 1.0


def test_effective_dimension_of_zero_fisher():
    assert np.all(effective_dimension([np.zeros((6, 6))] * 3, [1e3, 1e4]) == 0.0)


def test_effective_dimension_of_identity_closed_form():
    d = 42
    n = 1e4
    kappa = n / (2 * np.pi * np.log(n))
    value = effective_dimension([np.eye(d)] * 4, [n])[0]
    assert value == pytest.approx(d * np.log1p(kappa) / np.log(kappa), rel=1e-12)
    # the +1 inside the determinant lifts the value slightly above d
    assert d < value < 1.002 * d


def test_effective_dimension_rejects_non_psd():
    with pytest.raises(ValueError):
        effective_dimension([np.diag([1.0, -0.5])], [1e4])


def test_effective_dimension_rejects_small_n():
    with pytest.raises(ValueError):
        effective_dimension([np.eye(2)], [1])


def test_effective_dimension_scale_invariant(rng):
    a = rng.normal(size=(8, 8))
    fims = [a @ a.T, np.diag(rng.uniform(0, 1, 8))]
    base = effective_dimension(fims, [1e4, 1e6])
    scaled = effective_dimension([5 * f for f in fims], [1e4, 1e6])
    np.testing.assert_allclose(base, scaled, rtol=1e-12)
    np.testing.assert_allclose(
        effective_dimension(normalize_fims(fims), [1e4, 1e6], normalized=True), base, rtol=1e-12
    )


def test_normalized_mean_trace_equals_d(rng):
    fims = [np.diag(rng.uniform(0, 3, 5)) for _ in range(4)]
    norm = normalize_fims(fims)
    assert np.mean(np.trace(norm, axis1=1, axis2=2)) == pytest.approx(5.0)


def test_effective_dimension_monotone_in_n(rng):
    states = sample_states(100, 1)
    for strategy in ("baseline", "cyclic"):
        fims = quantum_fims(strategy, states, 5, rng)
        values = effective_dimension(fims, [1e3, 1e4, 1e5, 1e6])
        assert np.all(np.diff(values) >= 0)
        assert 0 < values[-1] <= 42 * 1.01


def test_fourier_single_rx():
    t = CircuitTemplate(1, (Gate("RX", 0, source=Feature(0)),), 1, 0)
    m = QModel(t, np.zeros(0), np.ones(1), (Observable([("Z", 1.0)]),))
    spec = fourier_spectrum(lambda x: q_values(m, x)[:, 0], 0, 16, n_features=1)
    assert spec.out_of_band(1) < 1e-20
    np.testing.assert_allclose(spec.power[np.abs(spec.frequencies) == 1], [0.25, 0.25], atol=1e-15)
    assert spec.cutoff() == 1
    assert np.all(spec.power >= 0)


@pytest.mark.parametrize("strategy, cutoff", [("baseline", 1), ("dru", 5), ("cyclic", 5)])
def test_fourier_cutoffs_all_features(strategy, cutoff, rng):
    m = init_qmodel(strategy, 5, rng)
    base = rng.uniform(-np.pi, np.pi, 4)
    top = 0
    for feature in range(4):
        for a in range(2):
            spec = fourier_spectrum(lambda x: q_values(m, x)[:, a], feature, 64, base)
            assert spec.out_of_band(cutoff) < 1e-8
            top = max(top, spec.cutoff(1e-8))
    assert top == cutoff


def test_fourier_rejects_tiny_grid():
    with pytest.raises(ValueError):
        fourier_spectrum(lambda x: x[:, 0], 0, 2)


def test_csv_emitters(tmp_path):
    edges, density = eigen_spectrum([np.eye(3)], bins=3)
    write_histogram_csv(tmp_path / "h.csv", edges, density)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,density" and len(lines) == 4
    write_deff_csv(tmp_path / "d.csv", [1e4, 1e6], [3.5, 4.0])
    assert (tmp_path / "d.csv").read_text().splitlines() == ["n,d_eff", "10000.0,3.5", "1000000.0,4.0"]
