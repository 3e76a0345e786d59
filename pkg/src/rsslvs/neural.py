"""Single-hidden-layer MLP verifier trained with Levenberg-Marquardt.

Parameters are flattened in a fixed order: ``w1`` (row-major), ``b1``,
``w2``, ``b2``. Training minimises the sum of squared errors against
{0, 1} targets; a score >= 0.5 decides "malicious".
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .scenario import H0, H1, Scenario

TRACE_HEADER = ("epoch", "train_sse", "val_sse", "lambda", "val_failures")


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-score; ``source`` is the digest of the rows it was fitted on."""

    mean: np.ndarray
    scale: np.ndarray
    source: str = ""

    @classmethod
    def identity(cls, n: int) -> "Standardizer":
        return cls(np.zeros(n), np.ones(n), "identity")

    @classmethod
    def fit(cls, raw: np.ndarray) -> "Standardizer":
        raw = np.asarray(raw, dtype=float)
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        # constant columns (RSU coordinates) would divide by zero
        scale = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        return cls(mean, scale, array_digest(raw))

    def apply(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.scale


def raw_features(scenario: Scenario, obs, claimed) -> np.ndarray:
    """Rows of ``[rss_1..rss_N, claim_x, claim_y, rsu_1_x, rsu_1_y, ..]``, unscaled."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    claimed = np.atleast_2d(np.asarray(claimed, dtype=float))
    n_rsu = scenario.n_rsus
    if obs.shape[1] != n_rsu:
        raise ValueError(f"observation has {obs.shape[1]} entries, expected {n_rsu}")
    if claimed.shape != (obs.shape[0], 2):
        raise ValueError("need one claimed location per observation")
    rsu = np.broadcast_to(scenario.rsu_array.ravel(), (obs.shape[0], 2 * n_rsu))
    return np.hstack([obs, claimed, rsu])


def assemble_features(scenario: Scenario, obs, claimed, standardizer: Standardizer) -> np.ndarray:
    raw = raw_features(scenario, obs, claimed)
    out = standardizer.apply(raw)
    return out[0] if np.ndim(obs) == 1 else out


@dataclass
class MlpModel:
    w1: np.ndarray  # (hidden, inputs)
    b1: np.ndarray
    w2: np.ndarray  # (hidden,)
    b2: float
    standardizer: Standardizer | None = None
    hidden_transfer: str = "tansig"
    output_transfer: str = "purelin"

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        h, d = self.w1.shape
        return h * d + 2 * h + 1

    @classmethod
    def zeros(cls, n_inputs: int, hidden_size: int = 10) -> "MlpModel":
        return cls(np.zeros((hidden_size, n_inputs)), np.zeros(hidden_size), np.zeros(hidden_size), 0.0)

    @classmethod
    def init(cls, n_inputs: int, hidden_size: int, rng: np.random.Generator) -> "MlpModel":
        s = 1.0 / math.sqrt(n_inputs)
        w1 = rng.uniform(-0.5, 0.5, (hidden_size, n_inputs)) * s
        b1 = rng.uniform(-0.5, 0.5, hidden_size) * s
        s2 = 1.0 / math.sqrt(hidden_size)
        w2 = rng.uniform(-0.5, 0.5, hidden_size) * s2
        b2 = float(rng.uniform(-0.5, 0.5) * s2)
        return cls(w1, b1, w2, b2)

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def with_params(self, theta) -> "MlpModel":
        h, d = self.w1.shape
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        w1 = theta[: h * d].reshape(h, d).copy()
        b1 = theta[h * d : h * d + h].copy()
        w2 = theta[h * d + h : h * d + 2 * h].copy()
        return MlpModel(w1, b1, w2, float(theta[-1]), self.standardizer, self.hidden_transfer, self.output_transfer)

    def to_dict(self) -> dict:
        d = {
            "layer_sizes": [self.n_inputs, self.hidden_size, 1],
            "transfers": [self.hidden_transfer, self.output_transfer],
            "w1": self.w1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }
        if self.standardizer is not None:
            d["standardizer"] = {
                "mean": self.standardizer.mean.tolist(),
                "scale": self.standardizer.scale.tolist(),
                "source": self.standardizer.source,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        n_in, h, _ = d["layer_sizes"]
        st = d.get("standardizer")
        std = Standardizer(np.array(st["mean"]), np.array(st["scale"]), st.get("source", "")) if st else None
        return cls(
            np.array(d["w1"], dtype=float).reshape(h, n_in),
            np.array(d["b1"], dtype=float),
            np.array(d["w2"], dtype=float),
            float(d["b2"]),
            std,
            *d.get("transfers", ["tansig", "purelin"]),
        )


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_inputs:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.n_inputs}")
    if model.hidden_transfer != "tansig" or model.output_transfer != "purelin":
        raise ValueError("only tansig hidden / purelin output layers are implemented")
    return x


def forward(model: MlpModel, x) -> float | np.ndarray:
    """Linear-output score ``w2 . tanh(w1 x + b1) + b2``; ``x`` may be a batch."""
    x = _check_input(model, x)
    a = np.tanh(x @ model.w1.T + model.b1)
    return a @ model.w2 + model.b2


def jacobian(model: MlpModel, x) -> np.ndarray:
    """d score / d theta in the flattened parameter order; (P,) or (n, P) for a batch."""
    x = _check_input(model, x)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    a = np.tanh(x @ model.w1.T + model.b1)
    delta = (1.0 - a**2) * model.w2  # d score / d hidden pre-activation
    n, h = a.shape
    j_w1 = (delta[:, :, None] * x[:, None, :]).reshape(n, -1)
    J = np.hstack([j_w1, delta, a, np.ones((n, 1))])
    return J[0] if single else J


def classify(model: MlpModel, features) -> tuple[np.ndarray | int, np.ndarray | float]:
    """Decision (1 = malicious when score >= 0.5) and the raw score."""
    s = forward(model, features)
    dec = np.where(s >= 0.5, H1, H0)
    if np.ndim(s) == 0:
        return int(dec), float(s)
    return dec, s


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 10
    max_validation_failures: int = 6
    max_epochs: int = 1000
    lm_lambda_init: float = 1e-3
    lm_lambda_up: float = 10.0
    lm_lambda_down: float = 10.0
    lm_lambda_max: float = 1e10
    min_grad: float = 1e-10
    goal: float = 0.0
    damping: str = "marquardt"
    validation_fraction: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.max_validation_failures < 1:
            raise ValueError("max_validation_failures must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        for name in ("lm_lambda_init", "lm_lambda_up", "lm_lambda_down", "lm_lambda_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5]")
        if self.damping not in ("marquardt", "levenberg"):
            raise ValueError("damping must be 'marquardt' or 'levenberg'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainTrace:
    epochs: list[tuple[int, float, float, float, int]] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    best_val_sse: float = math.inf
    val_indices: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for ep, tr, va, lam, fails in self.epochs:
            w.writerow([ep, repr(tr), repr(va), repr(lam), fails])
        return buf.getvalue()


def lm_step(J: np.ndarray, e: np.ndarray, lam: float, damping: str = "marquardt") -> np.ndarray:
    """Solve (J'J + lam D) delta = J'e, D = diag(J'J) (Marquardt) or I (Levenberg)."""
    jtj = J.T @ J
    g = J.T @ e
    if damping == "marquardt":
        d = np.maximum(np.diag(jtj), 1e-12)
    else:
        d = np.ones(jtj.shape[0])
    A = jtj + lam * np.diag(d)
    try:
        return np.linalg.solve(A, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, g, rcond=None)[0]


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(kept, held-out) index arrays; each class contributes ``round(fraction * count)``, at least one."""
    labels = np.asarray(labels)
    keep, held = [], []
    for cls in (H0, H1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        k = max(1, int(round(fraction * idx.size))) if idx.size > 1 else 0
        held.append(idx[:k])
        keep.append(idx[k:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(held))


def _sse(model: MlpModel, x, t) -> float:
    r = t - forward(model, x)
    return float(r @ r)


def train(raw_x, labels, config: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainTrace]:
    """Fit an MLP to {0, 1} labels with LM and validation-failure early stopping.

    ``raw_x`` holds unscaled feature rows; the standardizer is fitted on the
    LM training portion only and stored on the returned model, which is the
    snapshot with the lowest validation SSE.
    """
    raw_x = np.asarray(raw_x, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if raw_x.ndim != 2 or raw_x.shape[0] != labels.size:
        raise ValueError("raw_x must be (n, d) with one label per row")
    if labels.size < 10:
        raise ValueError("need at least 10 training samples")
    if not np.all(np.isfinite(raw_x)):
        raise ValueError("training features must be finite")
    if not (np.any(labels == H0) and np.any(labels == H1)):
        raise ValueError("training data must contain both labels")

    rng = np.random.default_rng(config.rng_seed)
    tr_idx, va_idx = stratified_split(labels, config.validation_fraction, rng)
    std = Standardizer.fit(raw_x[tr_idx])
    x_tr, t_tr = std.apply(raw_x[tr_idx]), labels[tr_idx].astype(float)
    x_va, t_va = std.apply(raw_x[va_idx]), labels[va_idx].astype(float)

    model = MlpModel.init(raw_x.shape[1], config.hidden_size, rng)
    model.standardizer = std
    trace = TrainTrace(val_indices=va_idx)

    sse = _sse(model, x_tr, t_tr)
    best, best_val = model, _sse(model, x_va, t_va)
    trace.best_val_sse = best_val
    lam, fails = config.lm_lambda_init, 0
    trace.epochs.append((0, sse, best_val, lam, 0))

    for epoch in range(1, config.max_epochs + 1):
        J = jacobian(model, x_tr)
        e = t_tr - forward(model, x_tr)
        if np.linalg.norm(J.T @ e) < config.min_grad:
            trace.stop_reason = "min_grad"
            break
        theta = model.get_params()
        while True:
            cand = model.with_params(theta + lm_step(J, e, lam, config.damping))
            new_sse = _sse(cand, x_tr, t_tr)
            if not math.isfinite(new_sse):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch} (lambda={lam:g})")
            if new_sse < sse:
                break
            lam *= config.lm_lambda_up
            if lam > config.lm_lambda_max:
                break
        if lam > config.lm_lambda_max:
            trace.stop_reason = "lambda_max"
            break
        model, sse = cand, new_sse
        lam /= config.lm_lambda_down

        val = _sse(model, x_va, t_va)
        if val < best_val:
            best, best_val, fails = model, val, 0
            trace.best_epoch = epoch
        else:
            fails += 1
        trace.epochs.append((epoch, sse, val, lam, fails))
        if fails >= config.max_validation_failures:
            trace.stop_reason = "validation"
            break
        if sse <= config.goal:
            trace.stop_reason = "goal"
            break
    else:
        trace.stop_reason = "max_epochs"

    trace.best_val_sse = best_val
    return best, trace


def model_to_json_dict(model: MlpModel, config: TrainConfig) -> dict:
    d = model.to_dict()
    d["train_config"] = config.to_dict()
    d["seed"] = config.rng_seed
    return d
