import numpy as np
import pytest

from bcqq.ansatz import (
    QModel,
    build_template,
    default_observables,
    gen_probs,
    init_qmodel,
    q_values,
    softmax,
)
from bcqq.qsim import Feature, Observable
from oracles import dense_observable, dense_run


def encoding_layout(template):
    """Per encoding block, the feature placed on each qubit."""
    blocks, current = [], {}
    for g in template.gates:
        if isinstance(g.source, Feature):
            current[g.target] = g.source.index
        elif current:
            blocks.append([current[q] for q in range(template.n_qubits)])
            current = {}
    return blocks


def test_cyclic_has_forty_angles_and_forty_two_trainables():
    t = build_template("cyclic", 5, 4)
    assert t.n_params == 40
    assert init_qmodel("cyclic", 5, np.random.default_rng(0)).n_trainable == 42


def test_cyclic_round_robin_layout():
    blocks = encoding_layout(build_template("cyclic", 5, 4))
    assert blocks[0] == [0, 1, 2, 3]
    assert blocks[1] == [1, 2, 3, 0]
    assert blocks[4] == [0, 1, 2, 3]
    for layer, block in enumerate(blocks):
        assert block == [(q + layer) % 4 for q in range(4)]


def test_dru_and_baseline_counts():
    base = build_template("baseline", 5, 4)
    dru = build_template("dru", 5, 4)
    assert base.n_params == dru.n_params == 40
    assert base.count("RX") == 4
    assert dru.count("RX") == 5 * base.count("RX")
    assert encoding_layout(dru) == [[0, 1, 2, 3]] * 5
    assert encoding_layout(base) == [[0, 1, 2, 3]]


def test_layer_gate_order():
    t = build_template("dru", 1, 4)
    kinds = [(g.kind, g.target) for g in t.gates]
    assert kinds == (
        [("RX", q) for q in range(4)]
        + [("RY", q) for q in range(4)]
        + [("RZ", q) for q in range(4)]
        + [("CZ", 1), ("CZ", 2), ("CZ", 3)]
    )
    assert [g.control for g in t.gates if g.kind == "CZ"] == [0, 1, 2]


@pytest.mark.parametrize("layers", [0, -1])
def test_layers_must_be_positive(layers):
    with pytest.raises(ValueError):
        build_template("cyclic", layers, 4)


def test_cyclic_coverage_audit():
    for layers in (4, 5, 7):
        t = build_template("cyclic", layers, 4)
        for feature in range(4):
            assert set(t.feature_qubits(feature)) == {0, 1, 2, 3}


def test_single_layer_strategies_coincide(rng):
    templates = [build_template(s, 1, 4) for s in ("baseline", "dru", "cyclic")]
    for _ in range(20):
        x = rng.uniform(-np.pi, np.pi, 4)
        p = rng.uniform(-np.pi, np.pi, 8)
        outs = [q_values(QModel(t, p, np.ones(2)), x) for t in templates]
        np.testing.assert_array_equal(outs[0], outs[1])
        np.testing.assert_array_equal(outs[0], outs[2])


def test_q_values_at_origin():
    m = QModel(build_template("cyclic", 5, 4), np.zeros(40), np.ones(2))
    np.testing.assert_allclose(q_values(m, np.zeros(4)), [1.0, 1.0], atol=1e-14)


def test_zero_weights_give_zero(rng):
    m = init_qmodel("cyclic", 5, rng)
    m.w = np.zeros(2)
    np.testing.assert_array_equal(q_values(m, rng.uniform(-np.pi, np.pi, (5, 4))), 0.0)


def test_q_values_match_dense_oracle(rng):
    m = init_qmodel("cyclic", 5, rng)
    m.w = np.array([2.5, -0.7])
    x = rng.uniform(-np.pi, np.pi, 4)
    psi = dense_run(m.template, x, m.theta)
    expected = [
        2.5 * np.vdot(psi, dense_observable("ZZII") @ psi).real,
        -0.7 * np.vdot(psi, dense_observable("IIZZ") @ psi).real,
    ]
    np.testing.assert_allclose(q_values(m, x), expected, atol=1e-12)


def test_normalized_q_within_zz_spectrum(rng):
    for _ in range(20):
        m = init_qmodel("cyclic", 5, rng)
        m.w = rng.uniform(0.5, 3, 2)
        q = q_values(m, rng.uniform(-np.pi, np.pi, (10, 4)))
        assert np.all(np.abs(q / m.w) <= 1 + 1e-12)


def test_observables_follow_action_order():
    obs = default_observables(4, 2)
    assert obs[0] == Observable([("ZZII", 1.0)])
    assert obs[1] == Observable([("IIZZ", 1.0)])


def test_gen_probs_equal_logits():
    m = QModel(build_template("cyclic", 5, 4), np.zeros(40), np.ones(2))
    np.testing.assert_allclose(gen_probs(m, np.zeros(4)), [0.5, 0.5])


def test_softmax_closed_form():
    p = softmax(np.array([5.0, -5.0]))
    expected = 1 / (1 + np.exp(-10))
    assert p[0] == pytest.approx(expected, rel=1e-14)
    assert p[0] == pytest.approx(0.99995, abs=1e-5)
    assert p[1] == pytest.approx(1 - expected, rel=1e-9)


def test_gen_probs_normalized(rng):
    for _ in range(100):
        m = init_qmodel(str(rng.choice(["baseline", "dru", "cyclic"])), 5, rng)
        m.w = rng.normal(scale=5, size=2)
        p = gen_probs(m, rng.uniform(-np.pi, np.pi, 4))
        assert np.all(p > 0)
        assert abs(p.sum() - 1) < 1e-12


def _out_of_band(values: np.ndarray, cutoff: int) -> float:
    coeffs = np.fft.fft(values) / len(values)
    freqs = np.fft.fftfreq(len(values), d=1 / len(values))
    power = np.abs(coeffs) ** 2
    return power[np.abs(freqs) > cutoff].sum() / power.sum()


@pytest.mark.parametrize("strategy, cutoff", [("baseline", 1), ("dru", 5), ("cyclic", 5)])
def test_fourier_cutoff(strategy, cutoff, rng):
    m = init_qmodel(strategy, 5, rng)
    grid = np.arange(64) * 2 * np.pi / 64
    top = 0.0
    for feature in range(4):
        x = np.tile(rng.uniform(-np.pi, np.pi, 4), (64, 1))
        x[:, feature] = grid
        q = q_values(m, x)
        for a in range(2):
            assert _out_of_band(q[:, a], cutoff) < 1e-8
            top = max(top, abs(np.fft.fft(q[:, a])[cutoff]) / 64)
    # the cutoff is tight for at least one feature
    assert top > 1e-6
