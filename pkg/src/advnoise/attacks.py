"""White-box and black-box adversarial example generation.

White-box attacks (FGSM, PGD, C&W-L2) differentiate through the model;
black-box attacks see only input/score pairs (ZOO) or a surrogate model
(transfer). All attacks read model parameters without mutating them, keep
outputs inside the configured clip range, and are deterministic given the
model's rng state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import AttackError, ConfigError
from .rng import Rng
from .tensor import Tensor

_BOX_TOL = 1e-12


# --------------------------------------------------------------- configs

@dataclass
class AttackConfig:
    """Shared knobs of the sign-gradient attacks.

    ``step_size`` may be omitted for single-step attacks, in which case it
    defaults to ``epsilon``. ``with_pni_in_generation`` controls whether
    noise layers stay active inside the generation forward/backward passes;
    it only applies when the model itself has noise enabled (generation
    never injects into a noise-disabled model).
    """

    epsilon: float
    step_size: float | None = None
    n_step: int = 1
    with_pni_in_generation: bool = True
    random_start: bool = False
    clip_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not isinstance(self.n_step, int) or isinstance(self.n_step, bool) \
                or self.n_step < 1:
            raise ConfigError(f"n_step must be a positive integer, "
                              f"got {self.n_step!r}")
        if self.step_size is None:
            if self.n_step > 1:
                raise ConfigError("n_step > 1 requires an explicit step_size")
        elif self.step_size <= 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigError(f"clip_range must be (low, high) with "
                              f"low < high, got {self.clip_range!r}")
        self.clip_range = (float(lo), float(hi))

    @property
    def effective_step(self) -> float:
        return self.epsilon if self.step_size is None else self.step_size


@dataclass
class CwConfig:
    """C&W-L2 hyperparameters; the outer loop rescales the trade-off
    constant by 10 per search step (down after success, up after failure)."""

    initial_c: float = 0.01
    confidence: float = 0.0
    binary_search_steps: int = 9
    inner_iterations: int = 10
    learning_rate: float = 5e-4

    def __post_init__(self):
        if self.initial_c <= 0 or self.learning_rate <= 0:
            raise ConfigError("initial_c and learning_rate must be > 0")
        if self.confidence < 0:
            raise ConfigError(f"confidence must be >= 0, "
                              f"got {self.confidence}")
        if self.binary_search_steps < 1 or self.inner_iterations < 1:
            raise ConfigError("binary_search_steps and inner_iterations "
                              "must be >= 1")


@dataclass
class ZooConfig:
    """Zeroth-order coordinate-descent attack knobs."""

    iterations: int = 150
    coord_batch: int = 32
    h: float = 1e-4
    step_size: float = 0.2

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, "
                              f"got {self.iterations}")
        if self.coord_batch < 1:
            raise ConfigError(f"coord_batch must be >= 1, "
                              f"got {self.coord_batch}")
        if self.h <= 0 or self.step_size <= 0:
            raise ConfigError("h and step_size must be > 0")


# --------------------------------------------------------------- results

@dataclass
class AdversarialBatch:
    """Clean/perturbed pairs plus per-sample outcome bookkeeping.

    ``labels`` holds the labels the attack optimized against (ground truth
    at evaluation time, predicted labels inside the training loop);
    ``success`` means the model under attack disagrees with them.
    """

    x: np.ndarray
    x_adv: np.ndarray
    labels: np.ndarray
    success: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    queries: np.ndarray | None = None

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if self.success.size else 0.0

    @property
    def accuracy(self) -> float:
        """Fraction of samples on which the model still matches labels."""
        return 1.0 - self.success_rate

    def records(self) -> list:
        """One plain-typed dict per sample for line-delimited export."""
        out = []
        for i in range(len(self.x)):
            record = {
                "index": i,
                "success": bool(self.success[i]),
                "linf": float(self.linf[i]),
                "l2": float(self.l2[i]),
            }
            if self.queries is not None:
                record["queries"] = int(self.queries[i])
            out.append(record)
        return out


@dataclass
class TrialStats:
    """Mean and population std of a metric over repeated trials."""

    mean: float
    std: float
    values: tuple = field(default_factory=tuple)

    @classmethod
    def of(cls, values) -> "TrialStats":
        arr = np.asarray(list(values), dtype=np.float64)
        return cls(float(arr.mean()), float(arr.std()), tuple(arr.tolist()))


# --------------------------------------------------------------- helpers

def predict_label(model, x) -> np.ndarray:
    """Argmax class per sample, ties to the lowest index; noisy models get
    a single stochastic forward pass."""
    return np.argmax(model.predict_logits(x), axis=1)


def loss_gradient(model, x, labels, noise_enabled: bool | None = None
                  ) -> np.ndarray:
    """Gradient of the batch cross-entropy with respect to the input."""
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    logits = model.forward(xt, noise_enabled=noise_enabled)
    T.softmax_cross_entropy(logits, labels).backward()
    return xt.grad


def margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample score margin Z_label - max over other classes; positive
    while the model still prefers the label."""
    rows = np.arange(len(logits))
    target = logits[rows, labels]
    rest = logits.copy()
    rest[rows, labels] = -np.inf
    return target - rest.max(axis=1)


def margin_loss(logits: Tensor, labels, confidence: float = 0.0,
                weights: np.ndarray | None = None) -> Tensor:
    """Scalar sum of per-sample max(margin, -confidence), optionally
    weighted per sample; drives untargeted misclassification when
    minimized."""
    z = logits.data
    labels = np.asarray(labels)
    rows = np.arange(len(z))
    rest = z.copy()
    rest[rows, labels] = -np.inf
    runner_up = rest.argmax(axis=1)
    raw = z[rows, labels] - rest[rows, runner_up]
    w = np.ones(len(z)) if weights is None else np.asarray(weights,
                                                           dtype=np.float64)
    active = raw > -confidence
    value = (w * np.maximum(raw, -confidence)).sum()

    def backward(g):
        dz = np.zeros_like(z)
        contribution = g * w[active]
        dz[rows[active], labels[active]] += contribution
        dz[rows[active], runner_up[active]] -= contribution
        logits.grad += dz

    return Tensor(value, parents=(logits,), backward=backward)


def _require_inside(x: np.ndarray, clip_range, what: str) -> None:
    lo, hi = clip_range
    if x.min() < lo - _BOX_TOL or x.max() > hi + _BOX_TOL:
        raise AttackError(f"{what}: inputs must lie in [{lo}, {hi}], "
                          f"got range [{x.min():.6g}, {x.max():.6g}]")


def _require_finite(grad: np.ndarray, what: str) -> None:
    finite = np.isfinite(grad.reshape(len(grad), -1)).all(axis=1)
    if not finite.all():
        raise AttackError(f"{what}: non-finite gradient for sample "
                          f"{int(np.argmin(finite))}")


def _finish(model, x, x_adv, labels, queries=None) -> AdversarialBatch:
    delta = (x_adv - x).reshape(len(x), -1)
    return AdversarialBatch(
        x=x,
        x_adv=x_adv,
        labels=np.asarray(labels),
        success=predict_label(model, x_adv) != np.asarray(labels),
        l2=np.sqrt((delta ** 2).sum(axis=1)),
        linf=np.abs(delta).max(axis=1) if delta.size else np.zeros(len(x)),
        queries=queries,
    )


# ------------------------------------------------------------ sign-based

def fgsm(model, x, labels, config: AttackConfig) -> AdversarialBatch:
    """One epsilon-sized gradient-sign step, clipped to the valid range."""
    x = np.asarray(x, dtype=np.float64)
    _require_inside(x, config.clip_range, "fgsm")
    grad = loss_gradient(model, x, labels,
                         noise_enabled=(model.noise_enabled
                                        and config.with_pni_in_generation))
    _require_finite(grad, "fgsm")
    x_adv = np.clip(x + config.epsilon * np.sign(grad), *config.clip_range)
    return _finish(model, x, x_adv, labels)


def pgd(model, x, labels, config: AttackConfig,
        rng: Rng | None = None) -> AdversarialBatch:
    """Iterated gradient-sign ascent projected onto the epsilon box
    intersected with the clip range; starts from x unless random_start."""
    x = np.asarray(x, dtype=np.float64)
    _require_inside(x, config.clip_range, "pgd")
    lo = np.maximum(x - config.epsilon, config.clip_range[0])
    hi = np.minimum(x + config.epsilon, config.clip_range[1])
    if config.random_start:
        if rng is None:
            raise ConfigError("pgd: random_start requires an rng")
        jitter = config.epsilon * (
            2.0 * rng.uniform(x.size).reshape(x.shape) - 1.0)
        x_adv = np.clip(x + jitter, lo, hi)
    else:
        x_adv = x.copy()
    step = config.effective_step
    for _ in range(config.n_step):
        grad = loss_gradient(model, x_adv, labels,
                             noise_enabled=(model.noise_enabled
                                            and config.with_pni_in_generation))
        _require_finite(grad, "pgd")
        x_adv = np.clip(x_adv + step * np.sign(grad), lo, hi)
    return _finish(model, x, x_adv, labels)


# ------------------------------------------------------------------ C&W

def cw_l2(model, x, labels, config: CwConfig | None = None
          ) -> AdversarialBatch:
    """Untargeted C&W-L2: minimize ||delta||^2 + c * margin under a tanh
    box reparameterization, searching c per sample; returns the smallest-L2
    success per sample, or the closest-to-success attempt on failure."""
    config = config or CwConfig()
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    _require_inside(x, (0.0, 1.0), "cw_l2")
    n = len(x)
    squeeze = np.clip(x, 1e-6, 1.0 - 1e-6)
    w_origin = np.arctanh(2.0 * squeeze - 1.0)
    x_flat_dim = int(np.prod(x.shape[1:]))

    best_adv = x.copy()
    best_l2 = np.full(n, np.inf)
    found = predict_label(model, x) != labels
    best_l2[found] = 0.0  # pre-satisfied: delta = 0
    # closest-to-success fallback for samples that never flip
    best_margin = np.full(n, np.inf)
    fallback_adv = x.copy()

    c = np.full(n, config.initial_c)
    for _ in range(config.binary_search_steps):
        w = Tensor(w_origin.copy(), requires_grad=True)
        x_const = Tensor(x)
        adam_m = np.zeros_like(w_origin)
        adam_v = np.zeros_like(w_origin)
        succeeded_at_c = np.zeros(n, dtype=bool)
        for it in range(config.inner_iterations):
            x_adv = 0.5 * (T.tanh(w) + 1.0)
            delta = x_adv - x_const
            l2_term = T.sum_all(delta * delta)
            logits = model.forward(x_adv)
            loss = l2_term + margin_loss(logits, labels,
                                         confidence=config.confidence,
                                         weights=c)
            loss.backward()

            adv_now = x_adv.data
            l2_now = np.sqrt(((adv_now - x).reshape(n, -1) ** 2).sum(axis=1))
            pred = np.argmax(logits.data, axis=1)
            flipped = pred != labels
            succeeded_at_c |= flipped
            better = flipped & (l2_now < best_l2)
            best_adv[better] = adv_now[better]
            best_l2[better] = l2_now[better]
            found |= better
            margin_now = margins(logits.data, labels)
            closer = ~flipped & (margin_now < best_margin)
            fallback_adv[closer] = adv_now[closer]
            best_margin[closer] = margin_now[closer]

            grad = w.grad
            adam_m = 0.9 * adam_m + 0.1 * grad
            adam_v = 0.999 * adam_v + 0.001 * grad * grad
            m_hat = adam_m / (1.0 - 0.9 ** (it + 1))
            v_hat = adam_v / (1.0 - 0.999 ** (it + 1))
            w = Tensor(w.data - config.learning_rate * m_hat
                       / (np.sqrt(v_hat) + 1e-8), requires_grad=True)
        c = np.where(succeeded_at_c, c / 10.0, c * 10.0)

    x_adv_final = np.where(found.reshape((n,) + (1,) * (x.ndim - 1)),
                           best_adv, fallback_adv)
    delta = (x_adv_final - x).reshape(n, -1)
    return AdversarialBatch(
        x=x,
        x_adv=x_adv_final,
        labels=labels,
        success=found.copy(),
        l2=np.where(found, best_l2, np.sqrt((delta ** 2).sum(axis=1))),
        linf=np.abs(delta).max(axis=1) if x_flat_dim else np.zeros(n),
    )


# ------------------------------------------------------------------ ZOO

def zoo_coordinate_gradient(loss_fn, x: np.ndarray, coords, h: float
                            ) -> np.ndarray:
    """Symmetric finite-difference estimates of d loss / d x at the given
    flat coordinates; loss_fn maps a batch of inputs to per-sample
    losses."""
    coords = np.asarray(coords)
    probes = np.repeat(x.reshape(1, -1), 2 * len(coords), axis=0)
    rows = np.arange(len(coords))
    probes[2 * rows, coords] += h
    probes[2 * rows + 1, coords] -= h
    losses = np.asarray(loss_fn(probes.reshape((-1,) + x.shape)),
                        dtype=np.float64)
    if not np.isfinite(losses).all():
        raise AttackError("zoo: query returned non-finite scores")
    return (losses[0::2] - losses[1::2]) / (2.0 * h)


def zoo_attack(query_fn, x, labels, config: ZooConfig,
               rng: Rng) -> AdversarialBatch:
    """Score-only black-box attack: per sample, estimate margin-loss
    gradients on random coordinate batches and descend until the scores
    prefer another class or the budget runs out."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(x)
    dim = int(np.prod(x.shape[1:]))
    coord_batch = min(config.coord_batch, dim)

    x_adv = x.copy()
    success = np.zeros(n, dtype=bool)
    queries = np.zeros(n, dtype=np.int64)

    def scores_of(batch: np.ndarray) -> np.ndarray:
        z = np.asarray(query_fn(batch), dtype=np.float64)
        if not np.isfinite(z).all():
            raise AttackError("zoo: query returned non-finite scores")
        return z

    for i in range(n):
        xi = x[i].copy()
        label_i = labels[i:i + 1]

        def margin_of(batch: np.ndarray) -> np.ndarray:
            z = scores_of(batch)
            return margins(z, np.repeat(label_i, len(z)))

        queries[i] += 1
        if np.argmax(scores_of(xi[None])[0]) != labels[i]:
            success[i] = True
            x_adv[i] = xi
            continue
        for _ in range(config.iterations):
            coords = rng.permutation(dim)[:coord_batch]
            grad = zoo_coordinate_gradient(margin_of, xi, coords, config.h)
            queries[i] += 2 * coord_batch
            flat = xi.reshape(-1)
            flat[coords] -= config.step_size * grad
            np.clip(xi, 0.0, 1.0, out=xi)
            queries[i] += 1
            if np.argmax(scores_of(xi[None])[0]) != labels[i]:
                success[i] = True
                break
        x_adv[i] = xi

    delta = (x_adv - x).reshape(n, -1)
    return AdversarialBatch(
        x=x, x_adv=x_adv, labels=labels, success=success,
        l2=np.sqrt((delta ** 2).sum(axis=1)),
        linf=np.abs(delta).max(axis=1) if dim else np.zeros(n),
        queries=queries)


# ------------------------------------------------------------- transfer

def transfer_attack(source_model, target_model, x, labels,
                    config: AttackConfig, trials: int = 5) -> TrialStats:
    """Generate PGD examples on the source model and measure the target
    model's accuracy on them, repeated over trials (mean +/- std)."""
    if source_model.spec.input_shape != target_model.spec.input_shape \
            or source_model.spec.n_classes != target_model.spec.n_classes:
        raise ConfigError(
            f"transfer_attack: source {source_model.spec.input_shape}/"
            f"{source_model.spec.n_classes} classes and target "
            f"{target_model.spec.input_shape}/{target_model.spec.n_classes} "
            f"classes do not line up")
    labels = np.asarray(labels)
    accuracies = []
    for _ in range(trials):
        batch = pgd(source_model, x, labels, config)
        predictions = predict_label(target_model, batch.x_adv)
        accuracies.append(float((predictions == labels).mean()))
    return TrialStats.of(accuracies)
