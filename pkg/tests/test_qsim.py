import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcqq.ansatz import build_template
from bcqq.qsim import (
    BindingError,
    Gate,
    GateError,
    Observable,
    Param,
    apply_gate,
    basis_state,
    expectation,
    run_circuit,
    sample_expectation,
    sample_expectations,
    zero_state,
)
from oracles import dense_observable, dense_run, random_template

ZZ01 = Observable.zz(0, 1, 2)


def test_rx_zero_is_identity(rng):
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    out = apply_gate(psi, Gate("RX", 2, source=Param(0)), 0.0)
    np.testing.assert_allclose(out, psi, atol=1e-15)


def test_rx_pi_flips_with_phase():
    out = apply_gate(basis_state("0"), Gate("RX", 0, source=Param(0)), np.pi)
    np.testing.assert_allclose(out, [0, -1j], atol=1e-15)


def test_cz_definition():
    g = Gate("CZ", 1, control=0)
    np.testing.assert_array_equal(apply_gate(basis_state("11"), g), -basis_state("11"))
    np.testing.assert_array_equal(apply_gate(basis_state("10"), g), basis_state("10"))


@pytest.mark.parametrize(
    "gate",
    [Gate("RX", 4, source=Param(0)), Gate("CZ", 1, control=1), Gate("CZ", 0, control=7), Gate("H", 0)],
)
def test_invalid_gates_rejected(gate):
    with pytest.raises(GateError):
        apply_gate(zero_state(4), gate, 0.1)


def test_apply_gate_does_not_mutate():
    psi = zero_state(2)
    apply_gate(psi, Gate("RY", 0, source=Param(0)), 1.0)
    np.testing.assert_array_equal(psi, basis_state("00"))


def test_baseline_all_zero_gives_ground_state():
    t = build_template("baseline", 5, 4)
    np.testing.assert_allclose(run_circuit(t, np.zeros(4), np.zeros(40)), basis_state("0000"), atol=1e-15)


def test_flipping_first_feature():
    t = build_template("baseline", 5, 4)
    psi = run_circuit(t, [np.pi, 0, 0, 0], np.zeros(40))
    probs = np.abs(psi) ** 2
    assert probs[0b1000] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(psi, dense_run(t, [np.pi, 0, 0, 0], np.zeros(40)), atol=1e-12)
    assert expectation(psi, Observable.zz(0, 1, 4)) == pytest.approx(-1.0, abs=1e-12)


def test_binding_errors():
    t = build_template("cyclic", 2, 4)
    with pytest.raises(BindingError):
        run_circuit(t, np.zeros(3), np.zeros(t.n_params))
    with pytest.raises(BindingError):
        run_circuit(t, np.zeros(4), np.zeros(t.n_params + 1))


def test_matches_dense_oracle_on_random_circuits(rng):
    for _ in range(100):
        t = random_template(rng, depth=int(rng.integers(1, 6)))
        x = rng.uniform(-np.pi, np.pi, 4)
        p = rng.uniform(-np.pi, np.pi, t.n_params)
        np.testing.assert_allclose(run_circuit(t, x, p), dense_run(t, x, p), atol=1e-9, rtol=0)


def test_batched_run_matches_rowwise(rng):
    t = build_template("dru", 3, 4)
    x = rng.uniform(-np.pi, np.pi, (7, 4))
    p = rng.uniform(-np.pi, np.pi, (7, t.n_params))
    batched = run_circuit(t, x, p)
    for i in range(7):
        np.testing.assert_array_equal(batched[i], run_circuit(t, x[i], p[i]))
    shared = run_circuit(t, x, p[0])
    np.testing.assert_allclose(shared[3], run_circuit(t, x[3], p[0]), atol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 8))
def test_unitarity(seed, depth):
    rng = np.random.default_rng(seed)
    t = random_template(rng, depth=depth)
    psi = run_circuit(t, rng.uniform(-10, 10, 4), rng.uniform(-10, 10, t.n_params))
    assert abs(np.linalg.norm(psi) - 1) < 1e-10


@pytest.mark.parametrize(
    "bits, obs, expected",
    [("01", ZZ01, -1.0), ("0000", Observable.zz(2, 3, 4), 1.0), ("11", ZZ01, 1.0)],
)
def test_expectation_eigenstates(bits, obs, expected):
    assert expectation(basis_state(bits), obs) == expected


def test_expectation_bell_state():
    bell = (basis_state("00") + basis_state("11")) / np.sqrt(2)
    assert expectation(bell, ZZ01) == pytest.approx(1.0, abs=1e-15)


def test_expectation_matches_dense_operator(rng):
    obs = Observable([("ZIZI", 0.3), ("IZZZ", -1.2)])
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    dense = 0.3 * dense_observable("ZIZI") - 1.2 * dense_observable("IZZZ")
    assert expectation(psi, obs) == pytest.approx(np.vdot(psi, dense @ psi).real, abs=1e-14)


def test_expectation_is_linear_in_terms(rng):
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    a = Observable([("ZZII", 0.7)])
    b = Observable([("IIZZ", -0.4)])
    assert expectation(psi, a + b) == expectation(psi, a) + expectation(psi, b)


def test_non_diagonal_observable_rejected():
    with pytest.raises(ValueError):
        Observable([("XZ", 1.0)])


def test_sampling_eigenstate_is_exact():
    gen = np.random.default_rng(0)
    for shots in (1, 7, 1000):
        assert sample_expectation(basis_state("01"), ZZ01, shots, gen) == -1.0


def test_sampling_large_shot_count():
    psi = (basis_state("00") + basis_state("01")) / np.sqrt(2)
    est = sample_expectation(psi, ZZ01, 10**6, np.random.default_rng(7))
    assert abs(est) < 3e-3


def test_sampling_deterministic_given_seed():
    psi = run_circuit(build_template("cyclic", 5, 4), np.ones(4), np.linspace(-3, 3, 40))
    obs = Observable.zz(0, 1, 4)
    a = sample_expectation(psi, obs, 128, np.random.default_rng(3))
    b = sample_expectation(psi, obs, 128, np.random.default_rng(3))
    assert a == b


def test_sampling_rejects_zero_shots():
    with pytest.raises(ValueError):
        sample_expectation(basis_state("00"), ZZ01, 0, np.random.default_rng(0))


def test_sampling_is_consistent(rng):
    obs = Observable.zz(0, 1, 4)
    for _ in range(5):
        psi = rng.normal(size=16) + 1j * rng.normal(size=16)
        psi /= np.linalg.norm(psi)
        batch = np.broadcast_to(psi, (1000, 16))
        est = sample_expectation(batch, obs, 128, rng)
        bound = 4 / np.sqrt(128 * 1000)
        assert abs(est.mean() - expectation(psi, obs)) < bound


def test_shared_samples_for_several_observables(rng):
    obs = (Observable.zz(0, 1, 4), Observable.zz(2, 3, 4))
    psi = basis_state("0111")
    est = sample_expectations(psi, obs, 64, rng)
    np.testing.assert_array_equal(est, [-1.0, 1.0])
