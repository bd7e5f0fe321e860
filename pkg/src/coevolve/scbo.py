"""Short-cut Bayesian optimization of the fusion ratio.

Each evaluation of s(alpha) fuses the inherited and fresh parameters, trains
for only ``T_BO`` epochs and scores the result.  A GP with an RBF kernel
models s over [0, 1]; Expected Improvement on a uniform grid picks the
next alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .dsl import RewardProgram
from .policy import ParamVector, fuse

DEFAULT_INITIAL_ALPHAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
LENGTH_SCALE = 0.2
NOISE_RATIO = 1e-4
MIN_SIGNAL_VAR = 1e-6
JITTER = 1e-9
JITTER_RETRIES = 3


class SingularKernel(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Kernel:
    signal_var: float
    length_scale: float
    noise_var: float

    def __call__(self, a, b) -> np.ndarray:
        d = np.subtract.outer(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
        return self.signal_var * np.exp(-0.5 * (d / self.length_scale) ** 2)


@dataclass(frozen=True)
class BoConfig:
    initial_alphas: tuple = DEFAULT_INITIAL_ALPHAS
    J: int = 12
    T_BO: int = 200
    ei_xi: float = 0.01
    grid_size: int = 101

    def __post_init__(self):
        object.__setattr__(self, "initial_alphas", tuple(float(a) for a in self.initial_alphas))
        if not self.initial_alphas:
            raise ValueError("initial_alphas must not be empty")
        if any(not 0.0 <= a <= 1.0 for a in self.initial_alphas):
            raise ValueError("initial alphas must lie in [0, 1]")
        if self.J < len(self.initial_alphas):
            raise ValueError("J must be >= len(initial_alphas)")
        if self.T_BO < 0:
            raise ValueError("T_BO must be >= 0")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.ei_xi < 0:
            raise ValueError("ei_xi must be non-negative")

    @property
    def n_acquisitions(self) -> int:
        return self.J - len(self.initial_alphas)

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_size)


class GpState:
    """GP regression over (alpha, score) pairs with a cached Cholesky factor.

    ``GpState.fit`` standardizes the scores and sets the kernel from the
    data; passing an explicit ``kernel`` uses it on the raw scores with a
    zero prior mean.
    """

    def __init__(self, data: Sequence[tuple], kernel: Optional[Kernel] = None,
                 length_scale: float = LENGTH_SCALE, noise_ratio: float = NOISE_RATIO):
        pts = [(float(a), float(s)) for a, s in data]
        if not pts:
            raise ValueError("GP needs at least one data point")
        if any(not 0.0 <= a <= 1.0 for a, _ in pts):
            raise ValueError("data alphas must lie in [0, 1]")
        if any(not math.isfinite(s) for _, s in pts):
            raise ValueError("GP scores must be finite")
        self.data = pts
        self.alphas = np.array([a for a, _ in pts])
        scores = np.array([s for _, s in pts])
        if kernel is None:
            var = float(np.var(scores))
            self.offset = float(np.mean(scores))
            self.scale = math.sqrt(var) if var > 1e-12 else 1.0
            z = (scores - self.offset) / self.scale
            sig = max(float(np.var(z)), MIN_SIGNAL_VAR)
            kernel = Kernel(sig, length_scale, noise_ratio * sig)
        else:
            self.offset, self.scale = 0.0, 1.0
            z = scores
        self.kernel = kernel
        self._z = z
        self._chol, self.jitter = self._factor()
        self._weights = cho_solve((self._chol, True), z)

    @classmethod
    def fit(cls, data, **kw) -> "GpState":
        return cls(data, **kw)

    def _factor(self):
        K = self.kernel(self.alphas, self.alphas) + self.kernel.noise_var * np.eye(len(self.alphas))
        jitter = 0.0
        for _ in range(JITTER_RETRIES + 1):
            try:
                return np.linalg.cholesky(K + jitter * np.eye(len(K))), jitter
            except np.linalg.LinAlgError:
                jitter += JITTER
        raise SingularKernel(f"kernel matrix not positive definite after {JITTER_RETRIES} jitter retries")

    def posterior(self, query):
        q = np.atleast_1d(np.asarray(query, dtype=np.float64))
        ks = self.kernel(q, self.alphas)
        mean = ks @ self._weights
        v = solve_triangular(self._chol, ks.T, lower=True)
        var = self.kernel.signal_var - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        return self.offset + self.scale * mean, self.scale ** 2 * var


def gp_posterior(state: GpState, query):
    """Posterior ``(mean, variance)`` at ``query`` (scalar or array)."""
    mean, var = state.posterior(query)
    if np.ndim(query) == 0:
        return float(mean[0]), float(var[0])
    return mean, var


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def ei_closed_form(mu, sigma, s_best: float, xi: float):
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    gap = mu - s_best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gap / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, gap * ndtr(z) + sigma * _norm_pdf(z), np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(state: GpState, query, s_best: float, xi: float):
    """E[max(0, s - s_best - xi)] under the posterior at ``query``."""
    mean, var = state.posterior(query)
    ei = ei_closed_form(mean, np.sqrt(var), s_best, xi)
    return float(ei[0]) if np.ndim(query) == 0 else ei


@dataclass
class BoEvaluation:
    iteration: int
    alpha: float
    score: float
    epochs: int
    payload: Any = None
    error: Optional[str] = None
    acquired: bool = False

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class BoResult:
    alpha_star: float
    gp: Optional[GpState]
    evaluations: list = field(default_factory=list)

    @property
    def epochs_charged(self) -> int:
        return sum(e.epochs for e in self.evaluations)

    @property
    def best(self) -> BoEvaluation:
        return _best(self.evaluations)

    def __iter__(self):
        return iter((self.alpha_star, self.gp, self.evaluations))


def _best(evals) -> BoEvaluation:
    # first evaluation wins ties, so the result is order-stable
    best = evals[0]
    for e in evals[1:]:
        if e.score > best.score:
            best = e
    return best


def _fit(evals) -> Optional[GpState]:
    ok = [(e.alpha, e.score) for e in evals if math.isfinite(e.score)]
    return GpState.fit(ok) if ok else None


def next_alpha(gp: Optional[GpState], cfg: BoConfig, evaluated: Sequence[float]) -> float:
    """Argmax of EI on the grid, ties going to the smallest alpha."""
    grid = cfg.grid()
    if gp is None:
        seen = set(evaluated)
        fresh = [a for a in grid if float(a) not in seen]
        return float(fresh[0] if fresh else grid[0])
    s_best = float(max(s for _, s in gp.data))
    ei = expected_improvement(gp, grid, s_best, cfg.ei_xi * gp.scale)
    return float(grid[int(np.argmax(ei))])


TrainFn = Callable[..., Any]


def sc_bo_search(reward: RewardProgram, theta_best: Optional[ParamVector], theta_0: Optional[ParamVector],
                 cfg: BoConfig, train_fn: TrainFn, seed, events: Optional[list] = None,
                 tags: Optional[dict] = None) -> BoResult:
    """Search the fusion ratio with ``cfg.J`` short training runs.

    ``train_fn(reward=, params=, epochs=, seed=, alpha=)`` returns either a
    score or a ``(score, payload)`` pair; the payload of each evaluation is
    kept (the caller continues training from the winner's payload).  An
    exception scores -inf and the search goes on.  The fused parameters are
    None when either input vector is None, which lets stub objectives run
    without a network.
    """
    key = seed if isinstance(seed, tuple) else (seed,)
    evals: list[BoEvaluation] = []
    gp: Optional[GpState] = None
    for j in range(cfg.J):
        acquired = j >= len(cfg.initial_alphas)
        if acquired:
            alpha = next_alpha(gp, cfg, [e.alpha for e in evals])
        else:
            alpha = cfg.initial_alphas[j]
        params = fuse(theta_best, theta_0, alpha) if theta_best is not None and theta_0 is not None else None
        try:
            out = train_fn(reward=reward, params=params, epochs=cfg.T_BO, seed=(*key, "bo", j), alpha=alpha)
            score, payload = out if isinstance(out, tuple) else (out, None)
            score = float(score)
            if math.isnan(score):
                raise ValueError("score is NaN")
            ev = BoEvaluation(j, alpha, score, cfg.T_BO, payload, acquired=acquired)
        except Exception as exc:  # a failed evaluation never aborts the search
            ev = BoEvaluation(j, alpha, -math.inf, cfg.T_BO, None, f"{type(exc).__name__}: {exc}", acquired)
        evals.append(ev)
        if events is not None:
            rec = {"event": "bo_eval", **(tags or {}), "iteration": j, "alpha": alpha,
                   "score": ev.score}
            if ev.error:
                rec["error"] = ev.error
            events.append(rec)
        gp = _fit(evals)
    return BoResult(_best(evals).alpha, gp, evals)
