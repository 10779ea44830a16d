"""Fully-connected CRF over an image.

Energy evaluation, mean-field inference unrolled for a fixed number of
iterations, reverse-mode gradients for the learnable parameters (kernel
weights and label compatibility), and small-scale gradient-descent training.

One mean-field iteration is the usual five-stage stack: per-kernel Gaussian
message passing (self-excluded, normalized per pixel), weighting, the
compatibility transform, adding the unary, and a softmax renormalization.
Message passing runs on a ``FilterPlan`` (exact or lattice backend); all
other stages are dense (N, L) array operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputError, NumericalError, SizeLimitError
from .filtering import FilterPlan, plan_filter

IGNORE_LABEL = 255
PROB_FLOOR = 1e-8  # probabilities clamped here before taking logs
BRUTE_FORCE_LIMIT = 2**20  # max number of labelings enumerated
ENERGY_PIXEL_LIMIT = 4096  # crf_energy materializes N x N kernels


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class LabelDistributionImage:
    """Per-pixel probability vectors over L labels, pixels in row-major order."""

    height: int
    width: int
    labels: int
    data: np.ndarray  # (height * width, labels) float64

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.labels <= 0:
            raise InputError(
                f"dimensions must be positive, got {self.height}x{self.width}x{self.labels}"
            )
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.shape != (self.height * self.width, self.labels):
            raise InputError(
                f"data shape {self.data.shape} != ({self.height * self.width}, {self.labels})"
            )

    def validate(self) -> "LabelDistributionImage":
        if np.any(self.data < 0):
            raise InputError("negative probability entry")
        sums = self.data.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise InputError(f"per-pixel sums deviate from 1 by {np.abs(sums - 1.0).max():.2e}")
        return self


@dataclass
class UnaryField:
    """Per-pixel log-potentials; exp + normalize recovers probabilities."""

    height: int
    width: int
    labels: int
    data: np.ndarray  # (height * width, labels) float64

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.labels <= 0:
            raise InputError(
                f"dimensions must be positive, got {self.height}x{self.width}x{self.labels}"
            )
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.shape != (self.height * self.width, self.labels):
            raise InputError(
                f"data shape {self.data.shape} != ({self.height * self.width}, {self.labels})"
            )
        if not np.all(np.isfinite(self.data)):
            raise InputError("non-finite unary potential")


@dataclass
class FeatureField:
    """Per-pixel, θ-scaled feature vectors for the M = 2 Gaussian kernels."""

    bilateral: np.ndarray  # (N, 5): x/θα, y/θα, R/θβ, G/θβ, B/θβ
    spatial: np.ndarray  # (N, 2): x/θγ, y/θγ

    def __post_init__(self):
        self.bilateral = np.ascontiguousarray(self.bilateral, dtype=np.float64)
        self.spatial = np.ascontiguousarray(self.spatial, dtype=np.float64)
        if self.bilateral.ndim != 2 or self.bilateral.shape[1] != 5:
            raise InputError(f"bilateral features must be (N, 5), got {self.bilateral.shape}")
        if self.spatial.shape != (self.bilateral.shape[0], 2):
            raise InputError(f"spatial features must be (N, 2), got {self.spatial.shape}")

    @property
    def num_points(self) -> int:
        return self.bilateral.shape[0]

    def per_kernel(self) -> tuple[np.ndarray, ...]:
        return (self.bilateral, self.spatial)


def potts_matrix(labels: int) -> np.ndarray:
    """Compatibility penalizing only differing labels: 0 diagonal, 1 elsewhere."""
    return np.ones((labels, labels)) - np.eye(labels)


@dataclass
class CrfParams:
    """Kernel weights, label compatibility, kernel scales and iteration count.

    ``compatibility=None`` stands for the Potts matrix of whatever label
    count the params are used with; θ values are fixed hyperparameters.
    """

    kernel_weights: np.ndarray = field(default_factory=lambda: np.array([5.0, 3.0]))
    compatibility: np.ndarray | None = None
    theta_alpha: float = 61.0
    theta_beta: float = 11.0
    theta_gamma: float = 3.0
    iterations: int = 5

    def __post_init__(self):
        self.kernel_weights = np.asarray(self.kernel_weights, dtype=np.float64)
        if self.kernel_weights.shape != (2,):
            raise ConfigError(f"expected 2 kernel weights, got {self.kernel_weights.shape}")
        if not np.all(np.isfinite(self.kernel_weights)) or np.any(self.kernel_weights < 0):
            raise ConfigError("kernel weights must be finite and >= 0")
        if self.compatibility is not None:
            self.compatibility = np.asarray(self.compatibility, dtype=np.float64)
            c = self.compatibility
            if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.all(np.isfinite(c)):
                raise ConfigError("compatibility must be a finite square matrix")
        for name in ("theta_alpha", "theta_beta", "theta_gamma"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        self.iterations = int(self.iterations)

    def compatibility_for(self, labels: int) -> np.ndarray:
        if self.compatibility is None:
            return potts_matrix(labels)
        if self.compatibility.shape != (labels, labels):
            raise ConfigError(
                f"compatibility is {self.compatibility.shape}, need ({labels}, {labels})"
            )
        return self.compatibility


@dataclass
class LabelImage:
    """Per-pixel label ids in [0, L), 255 = IGNORE, pixels row-major."""

    height: int
    width: int
    data: np.ndarray  # (height * width,) integer

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise InputError(f"dimensions must be positive, got {self.height}x{self.width}")
        self.data = np.ascontiguousarray(self.data, dtype=np.int64).reshape(-1)
        if self.data.shape != (self.height * self.width,):
            raise InputError(
                f"data length {self.data.shape[0]} != {self.height * self.width}"
            )

    def validate(self, labels: int) -> "LabelImage":
        bad = (self.data != IGNORE_LABEL) & ((self.data < 0) | (self.data >= labels))
        if np.any(bad):
            raise InputError(f"label id out of range [0, {labels}) at pixel {int(np.argmax(bad))}")
        return self


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_vjp(q: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of a row-wise softmax with output q."""
    return q * (grad - (grad * q).sum(axis=1, keepdims=True))


def unary_from_probabilities(probs: LabelDistributionImage) -> UnaryField:
    """Log-potentials U = log(clamped probabilities); softmax(U) recovers the input."""
    probs.validate()
    u = np.log(np.maximum(probs.data, PROB_FLOOR))
    return UnaryField(probs.height, probs.width, probs.labels, u)


def build_features(rgb: np.ndarray, params: CrfParams) -> FeatureField:
    """θ-scaled bilateral and spatial features from an (H, W, 3) color image.

    Pixel coordinates are (x, y) = (column, row) in pixels, colors 0-255.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputError(f"rgb must be (H, W, 3), got {rgb.shape}")
    h, w = rgb.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    color = rgb.reshape(-1, 3).astype(np.float64)
    x = xx.reshape(-1)
    y = yy.reshape(-1)
    bilateral = np.column_stack(
        [x / params.theta_alpha, y / params.theta_alpha, color / params.theta_beta]
    )
    spatial = np.column_stack([x / params.theta_gamma, y / params.theta_gamma])
    return FeatureField(bilateral, spatial)


def map_labeling(q: LabelDistributionImage) -> LabelImage:
    """Per-pixel argmax of the marginals, ties toward the smallest label id."""
    return LabelImage(q.height, q.width, np.argmax(q.data, axis=1))


# ---------------------------------------------------------------------------
# mean-field inference
# ---------------------------------------------------------------------------


@dataclass
class MeanFieldTrace:
    """Cached intermediates of an unrolled inference, consumed by backward."""

    plans: tuple[FilterPlan, ...]
    weights: np.ndarray
    compatibility: np.ndarray
    q_states: list[np.ndarray]  # T+1 entries; [0] is softmax(U)
    messages: list[list[np.ndarray]]  # per iteration, per kernel
    combined: list[np.ndarray]  # per iteration


def _check_finite(arr: np.ndarray, stage: str, iteration: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value in {stage} at iteration {iteration}")


def _step(
    q: np.ndarray,
    u: np.ndarray,
    plans: tuple[FilterPlan, ...],
    weights: np.ndarray,
    mu: np.ndarray,
    iteration: int = 0,
    trace: MeanFieldTrace | None = None,
) -> np.ndarray:
    msgs = [plan.apply(q) for plan in plans]
    for m, msg in enumerate(msgs):
        _check_finite(msg, f"message passing (kernel {m})", iteration)
    combined = sum(w * msg for w, msg in zip(weights, msgs))
    pairwise = combined @ mu.T
    _check_finite(pairwise, "compatibility transform", iteration)
    logits = u - pairwise
    q_new = softmax(logits)
    _check_finite(q_new, "normalization", iteration)
    if trace is not None:
        trace.messages.append(msgs)
        trace.combined.append(combined)
        trace.q_states.append(q_new)
    return q_new


def _build_plans(
    features: FeatureField, backend: str, dtype=np.float64
) -> tuple[FilterPlan, ...]:
    return tuple(plan_filter(f, backend, dtype) for f in features.per_kernel())


def _check_dims(u: UnaryField, features: FeatureField) -> None:
    if features.num_points != u.height * u.width:
        raise InputError(
            f"feature count {features.num_points} != pixel count {u.height * u.width}"
        )


def mean_field_step(
    q: LabelDistributionImage,
    u: UnaryField,
    features: FeatureField,
    params: CrfParams,
    backend: str = "exact",
    dtype=np.float64,
) -> LabelDistributionImage:
    """One five-stage mean-field iteration from marginals q."""
    if (q.height, q.width, q.labels) != (u.height, u.width, u.labels):
        raise InputError(
            f"Q is {q.height}x{q.width}x{q.labels}, unary is {u.height}x{u.width}x{u.labels}"
        )
    _check_dims(u, features)
    mu = params.compatibility_for(u.labels)
    plans = _build_plans(features, backend, dtype)
    out = _step(q.data.astype(dtype), u.data.astype(dtype), plans, params.kernel_weights, mu)
    return LabelDistributionImage(u.height, u.width, u.labels, out.astype(np.float64))


def mean_field_infer(
    u: UnaryField,
    features: FeatureField,
    params: CrfParams,
    backend: str = "exact",
    cache_gradients: bool = False,
    dtype=np.float64,
) -> tuple[LabelDistributionImage, MeanFieldTrace | None]:
    """Run T mean-field iterations from Q0 = softmax(U).

    With ``cache_gradients`` the returned trace retains every intermediate
    needed by :func:`mean_field_backward`.  Inference runs in double
    precision by default; ``dtype=np.float32`` opts into the faster
    single-precision mode.
    """
    _check_dims(u, features)
    mu = params.compatibility_for(u.labels)
    plans = _build_plans(features, backend, dtype)
    q = softmax(u.data.astype(dtype))
    _check_finite(q, "initialization", 0)
    trace = None
    if cache_gradients:
        trace = MeanFieldTrace(plans, params.kernel_weights.copy(), mu.copy(), [q], [], [])
    u_data = u.data.astype(dtype)
    for t in range(params.iterations):
        q = _step(q, u_data, plans, params.kernel_weights, mu, t, trace)
    q_img = LabelDistributionImage(u.height, u.width, u.labels, q.astype(np.float64))
    return q_img, trace


def mean_field_backward(
    trace: MeanFieldTrace, dloss_dq: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reverse-mode gradients (dU, dw, dμ) for a cached inference.

    The message-passing transpose reuses each plan's symmetric kernel with
    its normalizers held constant; gradients for the shared parameters
    accumulate across iterations.
    """
    if not trace.q_states or not trace.messages:
        raise InputError("trace was not recorded with cache_gradients=True")
    q_final = trace.q_states[-1]
    g = np.asarray(dloss_dq, dtype=np.float64)
    if g.shape != q_final.shape:
        raise InputError(f"loss gradient shape {g.shape} != Q shape {q_final.shape}")

    weights, mu = trace.weights, trace.compatibility
    num_iters = len(trace.messages)
    du = np.zeros_like(q_final)
    dw = np.zeros_like(weights)
    dmu = np.zeros_like(mu)

    for t in range(num_iters - 1, -1, -1):
        ds = _softmax_vjp(trace.q_states[t + 1], g)
        du += ds
        dp = -ds
        dmu += dp.T @ trace.combined[t]
        dc = dp @ mu
        for m, plan in enumerate(trace.plans):
            dw[m] += float((dc * trace.messages[t][m]).sum())
        g = sum(w * plan.apply_transpose(dc) for w, plan in zip(weights, trace.plans))
    du += _softmax_vjp(trace.q_states[0], g)
    return du, dw, dmu


# ---------------------------------------------------------------------------
# energy and exhaustive MAP
# ---------------------------------------------------------------------------


def _kernel_matrices(features: FeatureField) -> list[np.ndarray]:
    mats = []
    for f in features.per_kernel():
        diff = f[:, None, :] - f[None, :, :]
        k = np.exp(-0.5 * np.einsum("ijd,ijd->ij", diff, diff))
        np.fill_diagonal(k, 0.0)
        mats.append(k)
    return mats


def crf_energy(
    x: LabelImage, u: UnaryField, features: FeatureField, params: CrfParams
) -> float:
    """Exact O(N^2) Gibbs energy of a labeling: unary plus pairwise terms.

    Diagnostics only; refuses instances above ENERGY_PIXEL_LIMIT pixels.
    """
    if (x.height, x.width) != (u.height, u.width):
        raise InputError("labeling and unary dimensions differ")
    if np.any(x.data == IGNORE_LABEL):
        raise InputError("labeling contains IGNORE pixels")
    x.validate(u.labels)
    _check_dims(u, features)
    n = x.data.shape[0]
    if n > ENERGY_PIXEL_LIMIT:
        raise SizeLimitError(f"energy evaluation is O(N^2); {n} > {ENERGY_PIXEL_LIMIT} pixels")

    labels = x.data
    unary = -u.data[np.arange(n), labels].sum()
    mu = params.compatibility_for(u.labels)
    k_total = sum(
        w * k for w, k in zip(params.kernel_weights, _kernel_matrices(features))
    )
    mu_x = mu[labels[:, None], labels[None, :]]
    pairwise = float(np.triu(mu_x * k_total, k=1).sum())
    return float(unary) + pairwise


def brute_force_map(
    u: UnaryField, features: FeatureField, params: CrfParams
) -> LabelImage:
    """Exhaustive minimum-energy labeling; ties break to the lexicographically
    smallest labeling.  Requires L^N <= 2^20."""
    n = u.height * u.width
    num_labels = u.labels
    if float(num_labels) ** n > BRUTE_FORCE_LIMIT:
        raise SizeLimitError(
            f"{num_labels}^{n} labelings exceed the enumeration limit {BRUTE_FORCE_LIMIT}"
        )
    _check_dims(u, features)
    mu = params.compatibility_for(num_labels)
    k_total = sum(
        w * k for w, k in zip(params.kernel_weights, _kernel_matrices(features))
    )
    iu, ju = np.triu_indices(n, k=1)
    k_flat = k_total[iu, ju]

    best_energy = np.inf
    best = None
    chunk = 1 << 14
    total = num_labels**n
    # enumerate labelings in lexicographic order; argmin keeps the first optimum
    powers = num_labels ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        labs = (idx[:, None] // powers[None, :]) % num_labels
        unary = -u.data[np.arange(n)[None, :], labs].sum(axis=1)
        pair = (mu[labs[:, iu], labs[:, ju]] * k_flat[None, :]).sum(axis=1)
        energies = unary + pair
        j = int(np.argmin(energies))
        if energies[j] < best_energy:
            best_energy = float(energies[j])
            best = labs[j]
    return LabelImage(u.height, u.width, best)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _cross_entropy_and_grad(
    q: np.ndarray, truth: np.ndarray
) -> tuple[float, np.ndarray | None]:
    """Mean cross-entropy over non-IGNORE pixels and its gradient wrt q."""
    valid = truth != IGNORE_LABEL
    nv = int(valid.sum())
    if nv == 0:
        return 0.0, None
    rows = np.flatnonzero(valid)
    p = np.maximum(q[rows, truth[rows]], PROB_FLOOR)
    loss = float(-np.log(p).mean())
    grad = np.zeros_like(q)
    grad[rows, truth[rows]] = -1.0 / (nv * p)
    return loss, grad


def train_crf_params(
    dataset: list[tuple[np.ndarray, LabelDistributionImage, LabelImage]],
    learning_rate: float,
    epochs: int,
    seed: int = 0,
    params: CrfParams | None = None,
    backend: str = "exact",
) -> CrfParams:
    """Gradient descent on kernel weights and compatibility (θ held fixed).

    ``dataset`` holds (rgb, unary probabilities, ground-truth labels) per
    image; the loss is per-pixel cross-entropy of the final marginals with
    IGNORE pixels excluded.  Images are visited in a seed-shuffled order;
    the best parameters seen (by full-dataset loss) are returned, so the
    result never has higher training loss than the initial parameters.
    """
    if not dataset:
        raise ConfigError("empty training dataset")
    if learning_rate <= 0:
        raise ConfigError(f"learning rate must be positive, got {learning_rate}")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    labels = dataset[0][1].labels
    for rgb, probs, truth in dataset:
        if probs.labels != labels:
            raise ConfigError("all images must share the label count")
        truth.validate(labels)

    base = params if params is not None else CrfParams()
    w = base.kernel_weights.copy()
    mu = base.compatibility_for(labels).copy()

    prepared = []
    for rgb, probs, truth in dataset:
        u = unary_from_probabilities(probs)
        feats = build_features(rgb, base)
        prepared.append((u, feats, truth.data))

    def dataset_loss(w_cur: np.ndarray, mu_cur: np.ndarray) -> float:
        p = replace(base, kernel_weights=w_cur, compatibility=mu_cur)
        total = 0.0
        for u, feats, truth in prepared:
            qf, _ = mean_field_infer(u, feats, p, backend)
            loss, _ = _cross_entropy_and_grad(qf.data, truth)
            total += loss
        return total / len(prepared)

    best_w, best_mu = w.copy(), mu.copy()
    best_loss = dataset_loss(w, mu)
    rng = np.random.default_rng(seed)
    order = np.arange(len(prepared))
    for _ in range(int(epochs)):
        rng.shuffle(order)
        for i in order:
            u, feats, truth = prepared[i]
            p = replace(base, kernel_weights=w, compatibility=mu)
            qf, trace = mean_field_infer(u, feats, p, backend, cache_gradients=True)
            _, grad = _cross_entropy_and_grad(qf.data, truth)
            if grad is None:
                continue
            _, dw, dmu = mean_field_backward(trace, grad)
            w = np.maximum(w - learning_rate * dw, 0.0)
            mu = mu - learning_rate * dmu
        loss = dataset_loss(w, mu)
        if loss < best_loss:
            best_loss = loss
            best_w, best_mu = w.copy(), mu.copy()
    return replace(base, kernel_weights=best_w, compatibility=best_mu)
