"""Conditional neural field over alignment lattices.

Every one of the nine state transitions ``u -> v`` has its own
single-hidden-layer network scoring the features of the vertex being
entered::

    E[u, v, x, y] = sum_h lam[u, v, h] * sigmoid(W[u, v, h] . f_v(x, y))

Features are supplied as a ``(3, m+1, n+1, F)`` tensor indexed by the
entered state ``v`` (see :mod:`coevalign.features`). Steps leaving the
virtual origin are unscored, so an all-zero model puts equal mass on
every path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import dp
from .lattice import I_S, I_T, M, N_STATES, AlignmentPath, PathError

log = logging.getLogger(__name__)

MODEL_FORMAT = "coevalign-cnf"
MODEL_VERSION = (1, 0)


class ModelFormatError(ValueError):
    pass


@dataclass(eq=False)
class CnfModel:
    W: np.ndarray  # (3, 3, H, F)
    lam: np.ndarray  # (3, 3, H)
    l2: float = 0.0
    schema: str = "generic"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.W.ndim != 4 or self.W.shape[:2] != (3, 3):
            raise ValueError("W must have shape (3, 3, H, F)")
        if self.lam.shape != self.W.shape[:3]:
            raise ValueError("lam must have shape (3, 3, H)")
        if not (np.isfinite(self.W).all() and np.isfinite(self.lam).all()):
            raise ValueError("model weights must be finite")

    @property
    def H(self):
        return self.W.shape[2]

    @property
    def F(self):
        return self.W.shape[3]

    @classmethod
    def zeros(cls, F, H=12, **kw):
        return cls(np.zeros((3, 3, H, F)), np.zeros((3, 3, H)), **kw)

    @classmethod
    def random(cls, F, H=12, scale=0.5, rng=None, **kw):
        rng = np.random.default_rng(rng)
        return cls(rng.normal(0, scale, (3, 3, H, F)), rng.normal(0, scale, (3, 3, H)), **kw)

    def params(self):
        return np.concatenate([self.W.ravel(), self.lam.ravel()])

    def with_params(self, theta):
        nW = self.W.size
        return CnfModel(
            theta[:nW].reshape(self.W.shape).copy(),
            theta[nW:].reshape(self.lam.shape).copy(),
            self.l2,
            self.schema,
        )

    def __eq__(self, other):
        return (
            isinstance(other, CnfModel)
            and self.schema == other.schema
            and self.l2 == other.l2
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.lam, other.lam)
        )


@dataclass(frozen=True)
class ReferenceAlignment:
    """A reference path with one weight per position (0 off the match state)."""

    path: AlignmentPath
    weights: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.path):
            raise ValueError("one weight per path position required")
        for w, s in zip(self.weights, self.path.states):
            if not math.isfinite(w) or not 0 <= w <= 1:
                raise ValueError(f"weight {w} outside [0, 1]")
            if s != M and w != 0:
                raise ValueError("gap positions must carry weight 0")

    @classmethod
    def uniform(cls, path):
        return cls(path, tuple(1.0 if s == M else 0.0 for s in path.states))


# --- scores ---------------------------------------------------------------------


def _check_feats(model, feats):
    feats = np.asarray(feats, dtype=float)
    if feats.ndim != 4 or feats.shape[0] != N_STATES:
        raise ValueError("features must have shape (3, m+1, n+1, F)")
    if feats.shape[3] != model.F:
        raise ValueError(f"model expects F={model.F} features, got {feats.shape[3]}")
    m, n = feats.shape[1] - 1, feats.shape[2] - 1
    if m < 1 or n < 1:
        raise ValueError(f"lattice must be at least 1x1, got {m}x{n}")
    return feats


def hidden(model, feats):
    """Hidden activations ``(3, 3, m+1, n+1, H)``."""
    a = np.einsum("vxyf,uvhf->uvxyh", feats, model.W, optimize=True)
    return expit(a)


def transition_scores(model, feats, return_hidden=False):
    feats = _check_feats(model, feats)
    h = hidden(model, feats)
    E = np.einsum("uvxyh,uvh->uvxy", h, model.lam, optimize=True)
    E = np.ascontiguousarray(E)
    return (E, h) if return_hidden else E


def transition_score(model, feats, pos, u, v):
    """Score of entering vertex ``(x, y, v)`` from state ``u``."""
    x, y = pos
    f = np.asarray(feats, dtype=float)[v, x, y]
    return float(model.lam[u, v] @ expit(model.W[u, v] @ f))


def node_scores(E):
    """Vertex scores ``(m+1, n+1, 3)``: mean over incoming states of ``E``."""
    return np.moveaxis(E.mean(axis=0), 0, 2)


# --- lattice inference -------------------------------------------------------------


def _shift_to_pred(T, fill):
    """``out[u, v, x, y] = T[pred_v(x, y), u]`` for a ``(m+1, n+1, 3)`` table."""
    m1, n1, _ = T.shape
    out = np.full((3, 3, m1, n1), fill, dtype=float)
    Tu = np.moveaxis(T, 2, 0)
    out[:, M, 1:, 1:] = Tu[:, :-1, :-1]
    out[:, I_T, 1:, :] = Tu[:, :-1, :]
    out[:, I_S, :, 1:] = Tu[:, :, :-1]
    return out


class Lattice:
    """Forward-backward quantities for one (model, features) pair, computed lazily."""

    def __init__(self, model, feats):
        self.model = model
        self.feats = _check_feats(model, feats)
        self.m = self.feats.shape[1] - 1
        self.n = self.feats.shape[2] - 1
        self.E, self.hid = transition_scores(model, self.feats, return_hidden=True)
        self._F = self._B = None

    @property
    def F(self):
        if self._F is None:
            self._F = dp.forward(self.E)
        return self._F

    @property
    def B(self):
        if self._B is None:
            self._B = dp.backward(self.E)
        return self._B

    @property
    def logZ(self):
        return float(np.logaddexp.reduce(self.F[self.m, self.n]))

    @property
    def logZ_backward(self):
        B = self.B
        return float(np.logaddexp.reduce([B[1, 1, M], B[1, 0, I_T], B[0, 1, I_S]]))

    def marginals(self):
        """Match probabilities ``mag[x-1, y-1]`` for template x, target y."""
        F, B = self.F, self.B
        lm = F[1:, 1:, M] + B[1:, 1:, M] - self.logZ
        return np.exp(lm)

    def transition_posteriors(self):
        """``P[u, v, x, y]``: probability that a path uses transition ``u -> v`` into ``(x, y)``."""
        Fp = _shift_to_pred(self.F, -np.inf)
        Bv = np.moveaxis(self.B, 2, 0)[None]
        with np.errstate(invalid="ignore"):
            lp = Fp + self.E + Bv - self.logZ
        P = np.exp(lp)
        P[~np.isfinite(lp)] = 0.0
        return P

    def expected_functional(self, g):
        """Expectation of ``sum_{vertices on path} g`` and its gradient w.r.t. ``E``."""
        g = np.ascontiguousarray(g, dtype=float)
        GF = dp.expect_forward(self.E, self.F, g)
        GB = dp.expect_backward(self.E, self.B, g)
        Fend = self.F[self.m, self.n]
        q = float(np.sum(np.exp(Fend - self.logZ) * GF[self.m, self.n]))
        P = self.transition_posteriors()
        GFp = _shift_to_pred(GF, 0.0)
        inner = GFp + np.moveaxis(g + GB, 2, 0)[None] - q
        return q, P * inner

    def param_gradient(self, dE):
        """Chain a gradient over transition scores to the model parameters."""
        h = self.hid
        glam = np.einsum("uvxy,uvxyh->uvh", dE, h, optimize=True)
        dA = dE[..., None] * h * (1.0 - h) * self.model.lam[:, :, None, None, :]
        gW = np.einsum("uvxyh,vxyf->uvhf", dA, self.feats, optimize=True)
        return np.concatenate([gW.ravel(), glam.ravel()])


def forward(model, feats):
    lat = Lattice(model, feats)
    return lat.F, lat.logZ


def backward(model, feats):
    lat = Lattice(model, feats)
    return lat.B, lat.logZ_backward


def marginals(model, feats):
    return Lattice(model, feats).marginals()


# --- objectives -----------------------------------------------------------------------


def _path_transitions(path):
    """Scored transitions of a path as index arrays ``(u, v, x, y)``."""
    s = np.asarray(path.states)
    return s[:-1], s[1:], np.asarray(path.xs)[1:], np.asarray(path.ys)[1:]


def path_score(E, path):
    u, v, x, y = _path_transitions(path)
    return float(E[u, v, x, y].sum())


def _check_path(lat, path):
    if (path.m, path.n) != (lat.m, lat.n):
        raise PathError(f"path is {path.m}x{path.n}, lattice is {lat.m}x{lat.n}")


def loglik(model, feats, path):
    lat = Lattice(model, feats)
    _check_path(lat, path)
    return path_score(lat.E, path) - lat.logZ


def grad_loglik(model, feats, path):
    lat = Lattice(model, feats)
    _check_path(lat, path)
    dE = -lat.transition_posteriors()
    u, v, x, y = _path_transitions(path)
    np.add.at(dE, (u, v, x, y), 1.0)
    return lat.param_gradient(dE)


def _tm_functional(lat, ref):
    g = np.zeros((lat.m + 1, lat.n + 1, N_STATES))
    norm = min(lat.m, lat.n)
    for x, y, s, w in zip(ref.path.xs, ref.path.ys, ref.path.states, ref.weights):
        if s == M and w:
            g[x, y, M] += w / norm
    return g


def expected_tmscore(model, feats, ref):
    lat = Lattice(model, feats)
    _check_path(lat, ref.path)
    mag = lat.marginals()
    norm = min(lat.m, lat.n)
    total = 0.0
    for x, y, s, w in zip(ref.path.xs, ref.path.ys, ref.path.states, ref.weights):
        if s == M:
            total += w * mag[x - 1, y - 1]
    return total / norm


def grad_expected_tmscore(model, feats, ref):
    lat = Lattice(model, feats)
    _check_path(lat, ref.path)
    _, dE = lat.expected_functional(_tm_functional(lat, ref))
    return lat.param_gradient(dE)


def objective_and_grad(model, feats, ref, objective):
    """Value and parameter gradient of one training pair's objective."""
    lat = Lattice(model, feats)
    _check_path(lat, ref.path)
    if objective == "ml":
        dE = -lat.transition_posteriors()
        u, v, x, y = _path_transitions(ref.path)
        np.add.at(dE, (u, v, x, y), 1.0)
        val = path_score(lat.E, ref.path) - lat.logZ
    elif objective == "expected_tm":
        val, dE = lat.expected_functional(_tm_functional(lat, ref))
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return val, lat.param_gradient(dE)


def tm_d0(L):
    return max(0.5, 1.24 * np.cbrt(L - 15) - 1.8)


def tm_weights(distances, L_target, states=None):
    """Local TM-score weights ``1 / (1 + (d / d0)^2)``.

    ``distances`` gives one deviation per position; positions whose state
    (when ``states`` is supplied) is not a match get weight 0.
    """
    d = np.asarray(distances, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    d0 = tm_d0(L_target)
    with np.errstate(over="ignore"):
        w = 1.0 / (1.0 + (d / d0) ** 2)
    w = np.where(np.isinf(d), 0.0, w)
    if states is not None:
        w = np.where(np.asarray(states) == M, w, 0.0)
    return w


# --- training ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-3
    restarts: int = 3
    budget: int = 200
    seed: int = 0
    H: int = 12
    init_scale: float = 0.1


def training_objective(model, pairs, objective, l2):
    total = 0.0
    grad = np.zeros(model.params().size)
    for feats, ref in pairs:
        v, g = objective_and_grad(model, feats, ref, objective)
        total += v
        grad += g
    theta = model.params()
    return total - l2 * theta @ theta, grad - 2 * l2 * theta


def train(pairs, objective="expected_tm", cfg=TrainConfig(), schema="generic"):
    """Maximize the regularized objective from several random starts.

    Returns the best model found; its objective is never below the
    value at any restart's starting point.
    """
    if not pairs:
        raise ValueError("empty training set")
    F = np.asarray(pairs[0][0]).shape[3]
    template = CnfModel.zeros(F, cfg.H, l2=cfg.l2, schema=schema)
    best_val, best_theta = -np.inf, None

    def fun(theta):
        try:
            val, g = training_objective(template.with_params(theta), pairs, objective, cfg.l2)
        except (FloatingPointError, ValueError):
            return np.inf, np.zeros_like(theta)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(theta)
        return -val, -g

    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        theta0 = rng.normal(0.0, cfg.init_scale, template.params().size)
        f0, _ = fun(theta0)
        res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.budget, "gtol": 1e-9})
        theta, val = (res.x, -res.fun) if res.fun <= f0 else (theta0, -f0)
        log.info("restart %d: start %.6g -> %.6g (%s)", r, -f0, val, res.message)
        if val > best_val:
            best_val, best_theta = val, theta
    return template.with_params(best_theta)


# --- decoding ---------------------------------------------------------------------------


def viterbi_decode(model, feats):
    E = transition_scores(model, feats)
    m, n = E.shape[2] - 1, E.shape[3] - 1
    states, _ = dp.viterbi(E)
    return AlignmentPath.from_states(m, n, states)


def mea_decode(model, feats):
    """Path maximizing the summed match marginals of its match vertices."""
    lat = Lattice(model, feats)
    scores = np.zeros((lat.m + 1, lat.n + 1, N_STATES))
    scores[1:, 1:, M] = lat.marginals()
    return dp.dp_align(scores)


# --- persistence --------------------------------------------------------------------------


def _floats(a):
    return [float(v) for v in np.asarray(a).ravel()]


def model_to_json(model, meta=None):
    body = {
        "format": MODEL_FORMAT,
        "version": list(MODEL_VERSION),
        "schema": model.schema,
        "H": model.H,
        "F": model.F,
        "l2": model.l2,
        "W": _floats(model.W),
        "lam": _floats(model.lam),
        "meta": meta or {},
    }
    payload = json.dumps(body, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(payload.encode()).hexdigest()
    return json.dumps({"checksum": digest, "model": body}, sort_keys=True, indent=1) + "\n"


def model_from_json(text):
    try:
        outer = json.loads(text)
        body = outer["model"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"not a model file: {exc}") from None
    payload = json.dumps(body, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(payload.encode()).hexdigest() != outer.get("checksum"):
        raise ModelFormatError("model checksum mismatch")
    if body.get("format") != MODEL_FORMAT:
        raise ModelFormatError("unknown model format")
    major = body["version"][0]
    if major > MODEL_VERSION[0]:
        raise ModelFormatError(f"model format version {major} is newer than supported")
    H, F = body["H"], body["F"]
    W = np.array(body["W"], dtype=float).reshape(3, 3, H, F)
    lam = np.array(body["lam"], dtype=float).reshape(3, 3, H)
    return CnfModel(W, lam, body["l2"], body["schema"])
