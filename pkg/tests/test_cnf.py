import math

import numpy as np
import pytest

from coevalign import cnf
from coevalign.cnf import CnfModel, ModelFormatError, ReferenceAlignment, TrainConfig
from coevalign.lattice import I_S, I_T, M, AlignmentPath, PathError

from helpers import random_features
from oracles import PathOracle, fd_gradient, loglik_objective, tm_objective
from oracles import transition_scores as oracle_scores


def zero_case(m=1, n=1, F=2):
    feats = random_features(np.random.default_rng(0), m, n, F)
    return CnfModel.zeros(F, H=2), feats


def random_model(rng, F, H=3, scale=0.8):
    return CnfModel.random(F, H, scale, rng)


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


# --- transition scores --------------------------------------------------------------------------


def test_transition_score_examples():
    feats = np.zeros((3, 2, 2, 2))
    feats[:, 1, 1] = [1.0, -2.0]
    assert cnf.transition_score(CnfModel.zeros(2, H=1), feats, (1, 1), M, M) == 0.0
    one = CnfModel(np.zeros((3, 3, 1, 2)), np.ones((3, 3, 1)))
    assert cnf.transition_score(one, feats, (1, 1), M, I_T) == 0.5
    W = np.zeros((3, 3, 2, 2))
    lam = np.zeros((3, 3, 2))
    W[I_T, M] = [[0.5, 0.1], [-1.0, 0.25]]
    lam[I_T, M] = [2.0, -3.0]
    two = CnfModel(W, lam)
    # activations 0.5 - 0.2 = 0.3 and -1 - 0.5 = -1.5
    want = 2.0 / (1 + math.exp(-0.3)) - 3.0 / (1 + math.exp(1.5))
    assert cnf.transition_score(two, feats, (1, 1), I_T, M) == pytest.approx(want, abs=1e-15)


def test_transition_tensor_matches_long_double_oracle(rng):
    feats = random_features(rng, 3, 4, 5)
    model = random_model(rng, 5)
    E = cnf.transition_scores(model, feats)
    np.testing.assert_allclose(E, oracle_scores(model.W, model.lam, feats).astype(float), atol=1e-13)


# --- forward / backward / marginals ----------------------------------------------------------------


def test_zero_model_on_one_by_one():
    model, feats = zero_case()
    F, logZ = cnf.forward(model, feats)
    assert logZ == pytest.approx(math.log(3), abs=1e-14)
    B, logZb = cnf.backward(model, feats)
    assert logZb == pytest.approx(math.log(3), abs=1e-14)
    assert cnf.marginals(model, feats)[0, 0] == pytest.approx(1 / 3, abs=1e-14)
    for states in ([M], [I_T, I_S], [I_S, I_T]):
        path = AlignmentPath.from_states(1, 1, states)
        assert cnf.loglik(model, feats, path) == pytest.approx(math.log(1 / 3), abs=1e-14)
    ref = ReferenceAlignment.uniform(AlignmentPath.from_states(1, 1, [M]))
    assert cnf.expected_tmscore(model, feats, ref) == pytest.approx(1 / 3, abs=1e-14)


def test_empty_lattice_rejected():
    model = CnfModel.zeros(2, H=1)
    with pytest.raises(ValueError):
        cnf.forward(model, np.zeros((3, 2, 1, 2)))


def test_logz_matches_enumeration(rng):
    for m, n in [(2, 2), (3, 2), (1, 4), (3, 3)]:
        feats = random_features(rng, m, n, 3)
        model = random_model(rng, 3)
        oracle = PathOracle(m, n)
        want = float(oracle.log_partition(cnf.transition_scores(model, feats)))
        assert cnf.forward(model, feats)[1] == pytest.approx(want, abs=1e-10)
        B, logZb = cnf.backward(model, feats)
        assert abs(logZb - cnf.forward(model, feats)[1]) < 1e-9
        assert np.all(B[m, n] == 0.0)


def test_cut_through_each_template_column(rng):
    # every path enters column x exactly once, through an M or I_T step
    feats = random_features(rng, 4, 5, 3)
    lat = cnf.Lattice(random_model(rng, 3), feats)
    for x in range(1, 5):
        cut = np.logaddexp.reduce((lat.F[x, :, [M, I_T]] + lat.B[x, :, [M, I_T]]).ravel())
        assert cut == pytest.approx(lat.logZ, abs=1e-9)


def test_marginals_match_enumeration_and_bounds(rng):
    for _ in range(5):
        m, n = rng.integers(1, 5, 2)
        feats = random_features(rng, m, n, 3)
        model = random_model(rng, 3)
        mag = cnf.marginals(model, feats)
        want = PathOracle(m, n).match_marginals(cnf.transition_scores(model, feats)).astype(float)
        np.testing.assert_allclose(mag, want, atol=1e-10)
        assert mag.min() >= 0 and mag.max() <= 1
        assert mag.sum() <= min(m, n) + 1e-9


def diagonal_model(F, strength):
    """Bias-driven model: large reward for M -> M, penalty for every gap transition."""
    W = np.zeros((3, 3, 1, F))
    W[..., 0] = 10.0  # saturate the hidden unit wherever the bias feature is on
    lam = np.full((3, 3, 1), -strength)
    lam[:, M] = strength
    return CnfModel(W, lam)


def bias_features(m, n, F=2):
    feats = np.zeros((3, m + 1, n + 1, F))
    feats[M, 1:, 1:, 0] = 1.0
    feats[I_T, 1:, :, 0] = 1.0
    feats[I_S, :, 1:, 0] = 1.0
    return feats


def test_strong_match_model_concentrates_on_diagonal():
    feats = bias_features(4, 4)
    prev = 0.0
    for s in (1.0, 4.0, 16.0, 32.0):
        diag = np.diag(cnf.marginals(diagonal_model(2, s), feats)).min()
        assert diag > prev
        prev = diag
    assert prev > 1 - 1e-9


def test_path_probabilities_sum_to_one(rng):
    feats = random_features(rng, 3, 2, 3)
    model = random_model(rng, 3)
    total = sum(math.exp(cnf.loglik(model, feats, p)) for p in
                (AlignmentPath.from_states(3, 2, s) for s in PathOracle(3, 2).paths))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_loglik_rejects_wrong_size_path(rng):
    model, feats = zero_case(2, 2)
    with pytest.raises(PathError):
        cnf.loglik(model, feats, AlignmentPath.from_states(1, 1, [M]))


def test_loglik_invariant_to_shifting_final_cell(rng):
    # A uniform shift of every score is not an invariance here: paths have
    # different numbers of scored steps. Every path does enter (m, n) exactly
    # once through a scored step, so shifting those scores cancels.
    m, n = 3, 2
    E = rng.normal(size=(3, 3, m + 1, n + 1))
    shifted = E.copy()
    shifted[:, :, m, n] += 2.7
    o = PathOracle(m, n)
    for states in o.paths[:5]:
        assert float(o.loglik(E, states)) == pytest.approx(float(o.loglik(shifted, states)), abs=1e-12)
    lat = cnf.Lattice(random_model(rng, 3), random_features(rng, m, n, 3))
    ref = ReferenceAlignment.uniform(AlignmentPath.from_states(m, n, [M, M, I_T]))
    _, dE = lat.expected_functional(cnf._tm_functional(lat, ref))
    assert abs(dE[:, :, m, n].sum()) < 1e-12


# --- expected TM-score ------------------------------------------------------------------------------


def test_expected_tm_examples(rng):
    model, feats = zero_case(3, 3)
    path = AlignmentPath.from_states(3, 3, [M, M, M])
    zero = ReferenceAlignment(path, (0.0, 0.0, 0.0))
    assert cnf.expected_tmscore(random_model(rng, 2), feats, zero) == 0.0
    ref = ReferenceAlignment.uniform(path)
    vals = [cnf.expected_tmscore(diagonal_model(2, s), bias_features(3, 3), ref) for s in (1, 4, 16, 32)]
    assert vals == sorted(vals) and vals[-1] == pytest.approx(1.0, abs=1e-9)


def test_reference_weights_validated():
    path = AlignmentPath.from_states(2, 2, [M, I_T, I_S])
    with pytest.raises(ValueError):
        ReferenceAlignment(path, (1.0, 0.5, 0.0))
    with pytest.raises(ValueError):
        ReferenceAlignment(path, (1.5, 0.0, 0.0))


def test_tm_weights_examples():
    d0 = cnf.tm_d0(100)
    assert d0 == pytest.approx(1.24 * 85 ** (1 / 3) - 1.8)
    assert cnf.tm_d0(16) == 0.5
    w = cnf.tm_weights([0.0, d0, np.inf, 1e6, 2.0], 100, states=[M, M, M, M, I_T])
    assert w[0] == 1.0 and w[1] == pytest.approx(0.5) and w[2] == 0.0
    assert w[3] < 1e-10 and w[4] == 0.0
    with pytest.raises(ValueError):
        cnf.tm_weights([-1.0], 50)


# --- gradients -----------------------------------------------------------------------------------


def test_expected_tm_gradient_matches_finite_differences(rng):
    m = n = 3
    feats = random_features(rng, m, n, 2)
    model = random_model(rng, 2, H=2)
    ref = ReferenceAlignment(AlignmentPath.from_states(m, n, [M, I_T, M, I_S]), (0.9, 0.0, 0.6, 0.0))
    fd, _ = fd_gradient(model.W, model.lam, feats, tm_objective(PathOracle(m, n), ref))
    got = cnf.grad_expected_tmscore(model, feats, ref)
    assert rel_err(got, fd).max() < 1e-4


def test_loglik_gradient_matches_finite_differences(rng):
    m = n = 2
    feats = random_features(rng, m, n, 2)
    model = random_model(rng, 2, H=2)
    states = (I_T, M, I_S)
    fd, _ = fd_gradient(model.W, model.lam, feats, loglik_objective(PathOracle(m, n), states))
    got = cnf.grad_loglik(model, feats, AlignmentPath.from_states(m, n, states))
    assert rel_err(got, fd).max() < 1e-4


def test_unused_feature_has_zero_gradient(rng):
    feats = random_features(rng, 3, 3, 3)
    feats[..., 1] = 0.0
    model = random_model(rng, 3)
    path = AlignmentPath.from_states(3, 3, [M, M, M])
    for g in (cnf.grad_expected_tmscore(model, feats, ReferenceAlignment.uniform(path)),
              cnf.grad_loglik(model, feats, path)):
        gW = g[:model.W.size].reshape(model.W.shape)
        assert np.all(gW[..., 1] == 0.0)


def test_loglik_gradient_shrinks_toward_the_delta_limit():
    feats = bias_features(3, 3)
    path = AlignmentPath.from_states(3, 3, [M, M, M])
    norms = [np.linalg.norm(cnf.grad_loglik(diagonal_model(2, s), feats, path)) for s in (1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_objective_and_grad_dispatch(rng):
    feats = random_features(rng, 2, 3, 2)
    model = random_model(rng, 2)
    ref = ReferenceAlignment.uniform(AlignmentPath.from_states(2, 3, [M, I_S, M]))
    v, g = cnf.objective_and_grad(model, feats, ref, "ml")
    assert v == pytest.approx(cnf.loglik(model, feats, ref.path))
    np.testing.assert_allclose(g, cnf.grad_loglik(model, feats, ref.path))
    v, g = cnf.objective_and_grad(model, feats, ref, "expected_tm")
    assert v == pytest.approx(cnf.expected_tmscore(model, feats, ref))
    with pytest.raises(ValueError):
        cnf.objective_and_grad(model, feats, ref, "map")


def test_large_weights_stay_finite(rng):
    feats = random_features(rng, 4, 4, 3)
    model = CnfModel.random(3, 4, 1e3, rng)
    lat = cnf.Lattice(model, feats)
    assert np.isfinite(lat.logZ) and np.isfinite(lat.marginals()).all()
    path = AlignmentPath.from_states(4, 4, [M] * 4)
    assert np.isfinite(cnf.grad_loglik(model, feats, path)).all()
    assert np.isfinite(cnf.grad_expected_tmscore(model, feats, ReferenceAlignment.uniform(path))).all()


# --- training --------------------------------------------------------------------------------------


def training_pair(rng, m=3, n=3):
    feats = random_features(rng, m, n, 3)
    feats[..., 0] = np.moveaxis(np.ones((m + 1, n + 1, 3)), 2, 0)
    ref = ReferenceAlignment.uniform(AlignmentPath.from_states(m, n, [M, I_T, M, I_S, M][: 0] or [M, M, M]))
    return feats, ref


@pytest.mark.parametrize("objective", ["ml", "expected_tm"])
def test_training_improves_objective(rng, objective):
    pairs = [training_pair(rng)]
    cfg = TrainConfig(l2=1e-3, restarts=2, budget=40, seed=1, H=2)
    model = cnf.train(pairs, objective, cfg)
    start_vals = []
    for r in range(cfg.restarts):
        theta0 = np.random.default_rng([cfg.seed, r]).normal(0, cfg.init_scale, model.params().size)
        start = model.with_params(theta0)
        start_vals.append(cnf.training_objective(start, pairs, objective, cfg.l2)[0])
    final = cnf.training_objective(model, pairs, objective, cfg.l2)[0]
    assert final > max(start_vals)


def test_training_is_deterministic_and_regularization_limit(rng):
    pairs = [training_pair(rng)]
    cfg = TrainConfig(restarts=2, budget=15, seed=3, H=2)
    assert cnf.train(pairs, "ml", cfg) == cnf.train(pairs, "ml", cfg)
    heavy = cnf.train(pairs, "ml", TrainConfig(l2=1e6, restarts=1, budget=30, H=2))
    assert np.abs(heavy.params()).max() < 1e-4
    with pytest.raises(ValueError):
        cnf.train([], "ml", cfg)


# --- decoding ---------------------------------------------------------------------------------------


def test_viterbi_examples(rng):
    feats = bias_features(4, 4)
    assert cnf.viterbi_decode(diagonal_model(2, 3.0), feats).states == (M,) * 4
    model, feats = zero_case(2, 3)
    a = cnf.viterbi_decode(model, feats)
    assert a == cnf.viterbi_decode(model, feats)
    for _ in range(10):
        feats = random_features(rng, 2, 2, 3)
        model = random_model(rng, 3)
        o = PathOracle(2, 2)
        scores = o.scores(cnf.transition_scores(model, feats))
        path = cnf.viterbi_decode(model, feats)
        assert cnf.path_score(cnf.transition_scores(model, feats), path) == pytest.approx(
            float(scores.max()), abs=1e-10)


def test_mea_matches_brute_force(rng):
    for _ in range(10):
        m, n = rng.integers(1, 4, 2)
        feats = random_features(rng, m, n, 3)
        model = random_model(rng, 3)
        mag = cnf.marginals(model, feats)
        best = max(sum(mag[x - 1, y - 1] for x, y, s in zip(p.xs, p.ys, p.states) if s == M)
                   for p in (AlignmentPath.from_states(m, n, s) for s in PathOracle(m, n).paths))
        path = cnf.mea_decode(model, feats)
        got = sum(mag[x - 1, y - 1] for x, y, s in zip(path.xs, path.ys, path.states) if s == M)
        assert got == pytest.approx(best, abs=1e-12)
    diag = cnf.mea_decode(diagonal_model(2, 5.0), bias_features(3, 3))
    assert diag.states == (M, M, M)


# --- persistence ------------------------------------------------------------------------------------


def test_model_json_round_trip(rng):
    model = CnfModel.random(4, 3, 0.5, rng, l2=0.01, schema="builtin-v1;T=0;S=0#abc")
    text = cnf.model_to_json(model, meta={"seed": "3"})
    assert cnf.model_from_json(text) == model
    with pytest.raises(ModelFormatError, match="checksum"):
        cnf.model_from_json(text.replace('"l2": 0.01', '"l2": 0.02'))
    with pytest.raises(ModelFormatError):
        cnf.model_from_json("{}")
    import json
    outer = json.loads(text)
    outer["model"]["version"] = [9, 0]
    payload = json.dumps(outer["model"], sort_keys=True, separators=(",", ":"))
    import hashlib
    outer["checksum"] = hashlib.sha256(payload.encode()).hexdigest()
    with pytest.raises(ModelFormatError, match="newer"):
        cnf.model_from_json(json.dumps(outer))


def test_model_validation():
    with pytest.raises(ValueError):
        CnfModel(np.zeros((3, 3, 2)), np.zeros((3, 3, 2)))
    with pytest.raises(ValueError):
        CnfModel(np.full((3, 3, 1, 2), np.nan), np.zeros((3, 3, 1)))
