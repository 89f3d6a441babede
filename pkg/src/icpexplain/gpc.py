"""Sparse variational multi-class GP classifier with Monte Carlo concept scores.

One latent function per concept shares a single kernel and a single set of
inducing inputs ``Z``; the variational posterior over each class's inducing
values is an independent Gaussian ``N(m_c, L_c L_c^T)``. Prediction draws M
logit samples from the (class-independent) marginals, pushes them through a
softmax and reports the sample mean and population variance of the resulting
probabilities.

Training optimizes a whitened parametrization (``m_c = L_K v_c``,
``L_c = L_K W_c`` with ``L_K = chol(K_ZZ)``) with Adam in torch; the stored
model always holds the unwhitened ``m_c`` and ``L_c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.linalg import cho_solve, solve_triangular
from sklearn.cluster import KMeans

from .features import Standardizer, as_matrix
from .perturb import ConceptLabel, Vocabulary

KERNEL_FAMILIES = ("rbf", "matern32", "polynomial")
VARIANCE_FLOOR = 1e-12
DEFAULT_JITTER = 1e-8


@dataclass
class KernelSpec:
    family: str = "rbf"
    lengthscale: float = 1.0
    variance: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        self.family = self.family.lower().replace("-", "").replace("_", "")
        aliases = {"matern": "matern32", "matern15": "matern32", "poly": "polynomial"}
        self.family = aliases.get(self.family, self.family)
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {KERNEL_FAMILIES}")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if self.offset < 0:
            raise ValueError("polynomial offset must be non-negative")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("polynomial degree must be a positive integer")
        self.degree = int(self.degree)

    def to_dict(self) -> dict:
        return {"family": self.family, "log_lengthscale": math.log(self.lengthscale),
                "log_variance": math.log(self.variance), "degree": self.degree,
                "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], math.exp(d["log_lengthscale"]), math.exp(d["log_variance"]),
                   d["degree"], d["offset"])


def _sqdist(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return (diff * diff).sum(-1)


def kernel_eval(spec: KernelSpec, A, B) -> np.ndarray:
    """Gram matrix ``k(A_i, B_j)`` for (n, d) and (m, d) inputs."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"input dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("kernel inputs must be finite")
    if spec.family == "polynomial":
        return spec.variance * (A @ B.T + spec.offset) ** spec.degree
    d2 = _sqdist(A, B)
    if spec.family == "rbf":
        return spec.variance * np.exp(-0.5 * d2 / spec.lengthscale**2)
    r = np.sqrt(3.0 * np.maximum(d2, 0.0)) / spec.lengthscale
    return spec.variance * (1.0 + r) * np.exp(-r)


def kernel_diag(spec: KernelSpec, A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, float))
    if spec.family == "polynomial":
        return spec.variance * ((A * A).sum(1) + spec.offset) ** spec.degree
    return np.full(len(A), spec.variance)


def _kernel_torch(family, log_ls, log_var, degree, offset, A, B):
    var = torch.exp(log_var)
    if family == "polynomial":
        return var * (A @ B.T + offset) ** degree
    d2 = _sqdist(A, B)
    if family == "rbf":
        return var * torch.exp(-0.5 * d2 / torch.exp(2.0 * log_ls))
    r = torch.sqrt(3.0 * torch.clamp(d2, min=1e-300)) / torch.exp(log_ls)
    return var * (1.0 + r) * torch.exp(-r)


def _kernel_diag_torch(family, log_var, degree, offset, X):
    var = torch.exp(log_var)
    if family == "polynomial":
        return var * ((X * X).sum(1) + offset) ** degree
    return var * torch.ones(X.shape[0], dtype=X.dtype)


@dataclass
class PredictConfig:
    mc_samples: int = 1000
    seed: int = 0
    score_threshold: float = 0.5
    variance_threshold: float = 0.05

    def __post_init__(self):
        if self.mc_samples < 2:
            raise ValueError("need at least two Monte Carlo samples")


@dataclass
class Attribution:
    scores: np.ndarray
    variances: np.ndarray
    decision: ConceptLabel
    defer: bool
    raw_sample_count: int
    # (M, C) per-sample class probabilities behind the scores
    probabilities: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self, vocabulary: Sequence[str]) -> dict:
        return {
            "scores": {c: float(s) for c, s in zip(vocabulary, self.scores)},
            "variances": {c: float(v) for c, v in zip(vocabulary, self.variances)},
            "decision": self.decision.name,
            "defer": bool(self.defer),
        }


@dataclass
class TrainOptions:
    learning_rate: float = 0.01
    iterations: int = 150
    # None -> full batch
    minibatch: Optional[int] = None
    seed: int = 0
    mc_samples: int = 16
    # "median" -> median pairwise distance of the standardized training inputs
    lengthscale_init: object = "median"
    warm_start: bool = True


@dataclass
class SvgpModel:
    vocabulary: Vocabulary = field(default_factory=Vocabulary)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    num_inducing: int = 32
    inducing: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    chol: Optional[np.ndarray] = None
    standardizer: Optional[Standardizer] = None
    jitter: float = DEFAULT_JITTER
    trained: bool = False
    # new classes were added since the last fit
    stale: bool = False
    metadata: dict = field(default_factory=dict)
    elbo_trace: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def prepare(self, H) -> np.ndarray:
        """Stack embeddings into a matrix and apply the stored standardizer."""
        X = as_matrix(H)
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        return X

    def kzz(self) -> np.ndarray:
        Z = self.inducing
        return kernel_eval(self.kernel, Z, Z) + self.jitter * np.eye(len(Z))

    def covariances(self) -> np.ndarray:
        return np.einsum("cij,ckj->cik", self.chol, self.chol)

    def copy(self) -> "SvgpModel":
        cp = lambda a: None if a is None else np.array(a, copy=True)
        return SvgpModel(
            Vocabulary(self.vocabulary.names), KernelSpec(**vars(self.kernel)), self.num_inducing,
            cp(self.inducing), cp(self.means), cp(self.chol), self.standardizer, self.jitter,
            self.trained, self.stale, dict(self.metadata), list(self.elbo_trace))


class UntrainedModelError(RuntimeError):
    pass


def _require_params(model: SvgpModel):
    if model.inducing is None or model.means is None or model.chol is None:
        raise UntrainedModelError("model is untrained")


# --------------------------------------------------------------------------
# prediction


def _latent_from_matrix(model: SvgpModel, X: np.ndarray):
    Z = model.inducing
    Lk = np.linalg.cholesky(model.kzz())
    Kzx = kernel_eval(model.kernel, Z, X)
    alpha = cho_solve((Lk, True), Kzx)  # K_ZZ^-1 k_Z(h), one column per input
    A = solve_triangular(Lk, Kzx, lower=True)
    mu = alpha.T @ model.means.T
    base = kernel_diag(model.kernel, X) - (A * A).sum(0)
    LtA = np.einsum("cji,jn->cin", model.chol, alpha)  # L_c^T alpha
    var = base[:, None] + (LtA * LtA).sum(1).T
    return mu, np.maximum(var, VARIANCE_FLOOR)


def predictive_latent(model: SvgpModel, h):
    """Per-class latent mean and variance under q for one or many embeddings.

    Returns ``(mu, var)`` with shape (C,) for a single embedding and (n, C)
    for a batch.
    """
    _require_params(model)
    single = _is_single(h)
    X = model.prepare([h] if single and not isinstance(h, np.ndarray) else h)
    mu, var = _latent_from_matrix(model, X)
    if single:
        return mu[0], var[0]
    return mu, var


def _is_single(h) -> bool:
    if isinstance(h, np.ndarray):
        return h.ndim == 1
    return hasattr(h, "values")


def _logit_samples(mu, var, M, rng):
    eps = rng.standard_normal((mu.shape[0], M, mu.shape[1]))
    return mu[:, None, :] + np.sqrt(var)[:, None, :] * eps


def sample_logits(model: SvgpModel, h, cfg: Optional[PredictConfig] = None) -> np.ndarray:
    """(M, C) logit draws for one embedding, or (n, M, C) for a batch."""
    cfg = cfg or PredictConfig()
    single = _is_single(h)
    mu, var = predictive_latent(model, h)
    mu, var = np.atleast_2d(mu), np.atleast_2d(var)
    f = _logit_samples(mu, var, cfg.mc_samples, np.random.default_rng(cfg.seed))
    return f[0] if single else f


def softmax(f: np.ndarray) -> np.ndarray:
    z = f - f.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def summarize_samples(probs: np.ndarray):
    """Sample mean and population variance over the sample axis (-2)."""
    scores = probs.mean(axis=-2)
    variances = ((probs - np.expand_dims(scores, -2)) ** 2).mean(axis=-2)
    return scores, variances


def _attribution(vocabulary, probs, scores, variances, cfg) -> Attribution:
    c = int(np.argmax(scores))  # first maximum -> lowest vocabulary index
    defer = bool(scores[c] < cfg.score_threshold or variances[c] > cfg.variance_threshold)
    return Attribution(scores, variances, vocabulary.label(vocabulary.names[c]), defer,
                       probs.shape[-2], probs)


def attribution_from_logits(vocabulary: Vocabulary, logits: np.ndarray,
                            cfg: Optional[PredictConfig] = None) -> Attribution:
    cfg = cfg or PredictConfig()
    probs = softmax(np.asarray(logits, float))
    scores, variances = summarize_samples(probs)
    return _attribution(vocabulary, probs, scores, variances, cfg)


def attribute(model: SvgpModel, h, cfg: Optional[PredictConfig] = None) -> Attribution:
    """Concept scores, epistemic variances, decision and defer flag for ``h``."""
    cfg = cfg or PredictConfig()
    return attribution_from_logits(model.vocabulary, sample_logits(model, h, cfg), cfg)


def attribute_batch(model: SvgpModel, H, cfg: Optional[PredictConfig] = None) -> list[Attribution]:
    cfg = cfg or PredictConfig()
    scores, variances, probs = predict_proba(model, H, cfg)
    return [_attribution(model.vocabulary, probs[i], scores[i], variances[i], cfg)
            for i in range(len(scores))]


def predict_proba(model: SvgpModel, H, cfg: Optional[PredictConfig] = None):
    """Batch ``(scores, variances, probabilities)`` arrays of shape (n, C), (n, C), (n, M, C)."""
    cfg = cfg or PredictConfig()
    _require_params(model)
    mu, var = _latent_from_matrix(model, model.prepare(H))
    probs = softmax(_logit_samples(mu, var, cfg.mc_samples, np.random.default_rng(cfg.seed)))
    scores, variances = summarize_samples(probs)
    return scores, variances, probs


def predict(model: SvgpModel, H, cfg: Optional[PredictConfig] = None) -> np.ndarray:
    scores, _, _ = predict_proba(model, H, cfg)
    return np.argmax(scores, axis=1)


# --------------------------------------------------------------------------
# objective


def gaussian_prior_kl(means, chol, Kzz) -> np.ndarray:
    """Per-class KL(N(m_c, L_c L_c^T) || N(0, K_ZZ)), closed form."""
    Lk = np.linalg.cholesky(Kzz)
    n = Kzz.shape[0]
    logdet_k = 2.0 * np.sum(np.log(np.diag(Lk)))
    out = []
    for m, L in zip(means, chol):
        W = solve_triangular(Lk, L, lower=True)
        v = solve_triangular(Lk, m, lower=True)
        logdet_s = 2.0 * np.sum(np.log(np.abs(np.diag(L))))
        out.append(0.5 * (np.sum(W * W) + v @ v - n + logdet_k - logdet_s))
    return np.array(out)


def _labels_to_index(model: SvgpModel, y) -> np.ndarray:
    idx = []
    for lab in y:
        if isinstance(lab, ConceptLabel):
            lab = lab.name
        if isinstance(lab, str):
            if lab not in model.vocabulary:
                raise ValueError(f"label {lab!r} outside vocabulary {model.vocabulary.names}")
            idx.append(model.vocabulary.names.index(lab))
        else:
            k = int(lab)
            if not 0 <= k < model.num_classes:
                raise ValueError(f"label index {k} outside vocabulary of size {model.num_classes}")
            idx.append(k)
    return np.array(idx, dtype=int)


def elbo_noise(n: int, C: int, mc: int, seed) -> np.ndarray:
    """Reparameterization draws shared by the numpy and torch objectives."""
    return np.random.default_rng(seed).standard_normal((mc, n, C))


def elbo(model: SvgpModel, H, y, mc: int = 16, seed=0, eps: Optional[np.ndarray] = None) -> float:
    """Monte Carlo expected log-likelihood minus the closed-form KL to the prior."""
    _require_params(model)
    X = model.prepare(H)
    yi = _labels_to_index(model, y)
    if len(yi) == 0:
        raise ValueError("elbo needs at least one labelled point")
    mu, var = _latent_from_matrix(model, X)
    if eps is None:
        eps = elbo_noise(len(yi), model.num_classes, mc, seed)
    f = mu[None] + np.sqrt(var)[None] * eps
    logp = f - _logsumexp(f)
    ell = logp[:, np.arange(len(yi)), yi].mean(axis=0).sum()
    return float(ell - gaussian_prior_kl(model.means, model.chol, model.kzz()).sum())


def _logsumexp(f):
    fmax = f.max(axis=-1, keepdims=True)
    return fmax + np.log(np.exp(f - fmax).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# training


class _TorchObjective:
    """Whitened SVGP objective over a flat set of torch leaf tensors."""

    def __init__(self, kernel: KernelSpec, jitter: float):
        self.family = kernel.family
        self.degree = kernel.degree
        self.offset = kernel.offset
        self.jitter = jitter

    def __call__(self, params, X, y, eps, scale):
        log_ls, log_var, Z, V, Wraw = params
        nz = Z.shape[0]
        W = torch.tril(Wraw)
        Kzz = _kernel_torch(self.family, log_ls, log_var, self.degree, self.offset, Z, Z)
        Kzz = Kzz + self.jitter * torch.eye(nz, dtype=Z.dtype)
        Lk = torch.linalg.cholesky(Kzz)
        Kzx = _kernel_torch(self.family, log_ls, log_var, self.degree, self.offset, Z, X)
        A = torch.linalg.solve_triangular(Lk, Kzx, upper=False)
        mu = A.T @ V.T
        WtA = torch.einsum("cji,jn->cin", W, A)
        var = (_kernel_diag_torch(self.family, log_var, self.degree, self.offset, X)
               - (A * A).sum(0))[:, None] + (WtA * WtA).sum(1).T
        var = torch.clamp(var, min=VARIANCE_FLOOR)
        f = mu[None] + torch.sqrt(var)[None] * eps
        logp = torch.log_softmax(f, dim=-1)
        ell = logp[:, torch.arange(len(y)), y].mean(0).sum() * scale
        diag = torch.diagonal(W, dim1=-2, dim2=-1)
        kl = 0.5 * ((W * W).sum() + (V * V).sum() - V.shape[0] * nz
                    - 2.0 * torch.log(torch.abs(diag)).sum())
        return ell - kl


def _median_distance(X: np.ndarray, rng) -> float:
    if len(X) > 500:
        X = X[rng.choice(len(X), 500, replace=False)]
    d = np.sqrt(_sqdist(X, X)[np.triu_indices(len(X), 1)])
    med = float(np.median(d)) if d.size else 1.0
    return med if med > 0 else 1.0


def init_inducing(X: np.ndarray, num_inducing: int, seed: int) -> np.ndarray:
    """k-means centroids of the (standardized) inputs, one per inducing point."""
    distinct = np.unique(X, axis=0)
    k = min(num_inducing, len(distinct))
    if k == len(distinct):
        return distinct.copy()
    km = KMeans(n_clusters=k, init="k-means++", n_init=4, max_iter=100, random_state=seed)
    return km.fit(X).cluster_centers_


def whiten(model: SvgpModel):
    """Return (V, W) with m_c = L_K v_c and L_c = L_K W_c."""
    Lk = np.linalg.cholesky(model.kzz())
    V = solve_triangular(Lk, model.means.T, lower=True).T
    W = np.stack([solve_triangular(Lk, L, lower=True) for L in model.chol])
    return V, W


def unwhiten(model: SvgpModel, V: np.ndarray, W: np.ndarray) -> None:
    Lk = np.linalg.cholesky(model.kzz())
    W = np.tril(W)
    # flip column signs so every diagonal entry is positive; S_c is unchanged
    signs = np.where(np.diagonal(W, axis1=1, axis2=2) < 0, -1.0, 1.0)
    W = W * signs[:, None, :]
    # contiguous layout keeps BLAS results identical to a reloaded copy
    model.means = np.ascontiguousarray((Lk @ V.T).T)
    model.chol = np.einsum("ij,cjk->cik", Lk, W)


def flat_parameters(model: SvgpModel) -> np.ndarray:
    """Unconstrained parameter vector: log ls, log var, Z, v, tril(W)."""
    V, W = whiten(model)
    ti = np.tril_indices(model.inducing.shape[0])
    return np.concatenate([[math.log(model.kernel.lengthscale), math.log(model.kernel.variance)],
                           model.inducing.ravel(), V.ravel(),
                           np.concatenate([w[ti] for w in W])])


def set_flat_parameters(model: SvgpModel, theta: np.ndarray) -> SvgpModel:
    """Copy of ``model`` with parameters taken from a flat vector."""
    out = model.copy()
    nz, d = model.inducing.shape
    C = model.num_classes
    ntri = nz * (nz + 1) // 2
    ls, var = math.exp(theta[0]), math.exp(theta[1])
    out.kernel = KernelSpec(model.kernel.family, ls, var, model.kernel.degree, model.kernel.offset)
    pos = 2
    out.inducing = theta[pos:pos + nz * d].reshape(nz, d)
    pos += nz * d
    V = theta[pos:pos + C * nz].reshape(C, nz)
    pos += C * nz
    W = np.zeros((C, nz, nz))
    ti = np.tril_indices(nz)
    for c in range(C):
        W[c][ti] = theta[pos + c * ntri:pos + (c + 1) * ntri]
    unwhiten(out, V, W)
    return out


def elbo_gradient(model: SvgpModel, H, y, eps: np.ndarray):
    """ELBO value and autodiff gradient w.r.t. :func:`flat_parameters`."""
    theta = torch.tensor(flat_parameters(model), dtype=torch.float64, requires_grad=True)
    nz, d = model.inducing.shape
    C = model.num_classes
    ntri = nz * (nz + 1) // 2
    pos = 2 + nz * d
    Z = theta[2:pos].reshape(nz, d)
    V = theta[pos:pos + C * nz].reshape(C, nz)
    pos += C * nz
    rows, cols = np.tril_indices(nz)
    W = torch.zeros((C, nz, nz), dtype=torch.float64)
    for c in range(C):
        W = W.index_put((torch.full((ntri,), c), torch.as_tensor(rows), torch.as_tensor(cols)),
                        theta[pos + c * ntri:pos + (c + 1) * ntri])
    X = torch.as_tensor(model.prepare(H))
    yt = torch.as_tensor(_labels_to_index(model, y))
    obj = _TorchObjective(model.kernel, model.jitter)
    value = obj((theta[0], theta[1], Z, V, W), X, yt, torch.as_tensor(eps), 1.0)
    value.backward()
    return float(value.detach()), theta.grad.numpy().copy()


def train(model: SvgpModel, H, y, opt: Optional[TrainOptions] = None) -> SvgpModel:
    """Maximize the ELBO over kernel hyperparameters, Z and the variational posterior.

    A fresh model gets Z from k-means, ``m_c = 0`` and ``L_c = chol(K_ZZ)``;
    a model that already has parameters continues from them when
    ``opt.warm_start`` is set. Returns a new trained model.
    """
    opt = opt or TrainOptions()
    X = model.prepare(H)
    yi = _labels_to_index(model, y)
    if len(np.unique(yi)) < 2:
        raise ValueError("degenerate training set: need examples of at least two classes")
    n, d = X.shape
    C = model.num_classes
    out = model.copy()
    rng = np.random.default_rng(opt.seed)
    fresh = out.inducing is None or not opt.warm_start or out.inducing.shape[1] != d
    if fresh:
        if out.num_inducing < C:
            raise ValueError(f"need at least {C} inducing points, got {out.num_inducing}")
        if out.num_inducing > n:
            raise ValueError(f"num_inducing={out.num_inducing} exceeds {n} training points")
        if opt.lengthscale_init == "median":
            ls = _median_distance(X, rng)
        else:
            ls = float(opt.lengthscale_init or out.kernel.lengthscale)
        out.kernel = KernelSpec(out.kernel.family, ls, out.kernel.variance,
                                out.kernel.degree, out.kernel.offset)
        out.inducing = init_inducing(X, out.num_inducing, opt.seed)
        nz = len(out.inducing)
        V = np.zeros((C, nz))
        W = np.tile(np.eye(nz), (C, 1, 1))
    else:
        V, W = whiten(out)
        nz = len(out.inducing)

    dt = torch.float64
    log_ls = torch.tensor(math.log(out.kernel.lengthscale), dtype=dt, requires_grad=True)
    log_var = torch.tensor(math.log(out.kernel.variance), dtype=dt, requires_grad=True)
    Zt = torch.tensor(out.inducing, dtype=dt, requires_grad=True)
    Vt = torch.tensor(V, dtype=dt, requires_grad=True)
    Wt = torch.tensor(np.tril(W), dtype=dt, requires_grad=True)
    params = [log_ls, log_var, Zt, Vt, Wt]
    trainable = params if out.kernel.family != "polynomial" else params[1:]
    adam = torch.optim.Adam(trainable, lr=opt.learning_rate)
    objective = _TorchObjective(out.kernel, out.jitter)
    Xt = torch.as_tensor(X, dtype=dt)
    yt = torch.as_tensor(yi)
    batch = n if opt.minibatch is None else min(opt.minibatch, n)
    scale = n / batch

    trace = []
    for it in range(opt.iterations):
        step_rng = np.random.default_rng([opt.seed, it])
        rows = np.arange(n) if batch == n else np.sort(step_rng.choice(n, batch, replace=False))
        eps = torch.as_tensor(step_rng.standard_normal((opt.mc_samples, batch, C)), dtype=dt)
        adam.zero_grad()
        value = objective(params, Xt[rows], yt[rows], eps, scale)
        (-value).backward()
        adam.step()
        trace.append(float(value.detach()))

    with torch.no_grad():
        out.kernel = KernelSpec(out.kernel.family, float(torch.exp(log_ls)), float(torch.exp(log_var)),
                                out.kernel.degree, out.kernel.offset)
        out.inducing = Zt.numpy().copy()
        unwhiten(out, Vt.numpy().copy(), Wt.numpy().copy())
    final = elbo(out, H, yi, mc=opt.mc_samples, seed=[opt.seed, opt.iterations])
    out.num_inducing = nz
    out.trained = True
    out.stale = False
    out.elbo_trace = (list(model.elbo_trace) if not fresh else []) + trace + [final]
    previous = 0 if fresh else int(model.metadata.get("iterations", 0))
    out.metadata = {
        "seed": opt.seed,
        "iterations": previous + opt.iterations,
        "learning_rate": opt.learning_rate,
        "final_elbo": final,
        "num_train": int(n),
    }
    return out


def add_class(model: SvgpModel, new_label) -> SvgpModel:
    """Append a latent function initialized at the prior; the model turns stale."""
    name = new_label.name if isinstance(new_label, ConceptLabel) else str(new_label)
    if name in model.vocabulary:
        raise ValueError(f"concept {name!r} already in vocabulary")
    out = model.copy()
    out.vocabulary = model.vocabulary.extended(name)
    if out.inducing is not None:
        nz = len(out.inducing)
        Lk = np.linalg.cholesky(out.kzz())
        out.means = np.vstack([out.means, np.zeros((1, nz))])
        out.chol = np.concatenate([out.chol, Lk[None]], axis=0)
    out.stale = True
    return out


def accuracy(model: SvgpModel, H, y, cfg: Optional[PredictConfig] = None) -> float:
    return float(np.mean(predict(model, H, cfg) == _labels_to_index(model, y)))
