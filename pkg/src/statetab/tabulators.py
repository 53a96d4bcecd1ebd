"""Observation-to-state tabulators.

Every tabulator is a scikit-learn transformer: ``fit`` sets up the mapping
from the shape of ``X`` (rows are flattened observation windows) and
``transform`` returns one uint64 state code per row. ``encode`` is the
single-window fast path used inside the agent loop.

``generation_`` counts changes of the mapping. Fixed tabulators never bump
it; the learned one bumps it after every optimiser step.
"""

from __future__ import annotations

from collections import deque
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .variational import (VariationalConfig, VariationalModel, heaviside_bits, load_params,
                          pack_bits, save_params)


class ObservationHistory:
    """The last ``k + 1`` frames, zero-filled before the episode start."""

    def __init__(self, k: int, obs_dim: int):
        self.k = k
        self.obs_dim = obs_dim
        self.frames: deque = deque(maxlen=k + 1)
        self.reset()

    def reset(self) -> None:
        self.frames.clear()
        for _ in range(self.k + 1):
            self.frames.append(np.zeros(self.obs_dim))

    def push(self, obs) -> None:
        self.frames.append(np.asarray(obs, dtype=float))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.frames)


class BaseTabulator(TransformerMixin, BaseEstimator):
    d: int

    @property
    def generation_(self) -> int:
        return getattr(self, "_generation", 0)

    def _validate(self, X, reset: bool):
        X = check_array(X, dtype=np.float64)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, tabulator was fitted with {self.n_features_in_}")
        return X

    def encode(self, window) -> int:
        return int(self.transform(np.asarray(window, dtype=float).reshape(1, -1))[0])


class GridTabulator(BaseTabulator):
    """Rounds each feature to a cell index and bit-packs the indices.

    Feature ``j`` maps to ``floor((x_j - lows[j]) / cell_sizes[j])``,
    wrapped modulo ``periods[j]`` when given, clamped to
    ``[0, 2**bits[j] - 1]``. Feature 0 occupies the lowest bits.
    """

    def __init__(self, cell_sizes: Sequence[float] = (1.0, 1.0), bits: Sequence[int] = (8, 8),
                 lows: Optional[Sequence[float]] = None, periods: Optional[Sequence[Optional[float]]] = None):
        self.cell_sizes = cell_sizes
        self.bits = bits
        self.lows = lows
        self.periods = periods

    def fit(self, X=None, y=None):
        n = len(self.cell_sizes)
        if len(self.bits) != n:
            raise ValueError("cell_sizes and bits must have the same length")
        if sum(self.bits) > 64 or min(self.bits) < 1:
            raise ValueError("bit allocation must be positive and total at most 64")
        if X is not None:
            X = self._validate(X, reset=True)
            if X.shape[1] != n:
                raise ValueError(f"X has {X.shape[1]} features but {n} cell sizes were given")
        self.n_features_in_ = n
        self.d = int(sum(self.bits))
        self.cell_sizes_ = np.asarray(self.cell_sizes, dtype=float)
        self.lows_ = np.zeros(n) if self.lows is None else np.asarray(self.lows, dtype=float)
        per = [None] * n if self.periods is None else list(self.periods)
        self.wrap_ = np.array([p is not None for p in per])
        self.periods_ = np.array([p if p is not None else 1.0 for p in per], dtype=float)
        self.max_index_ = (np.uint64(1) << np.asarray(self.bits, dtype=np.uint64)) - np.uint64(1)
        self.shifts_ = np.concatenate([[0], np.cumsum(self.bits)[:-1]]).astype(np.uint64)
        return self

    def cell_indices(self, X) -> np.ndarray:
        check_is_fitted(self, "cell_sizes_")
        X = self._validate(X, reset=False)
        v = X - self.lows_
        v = np.where(self.wrap_, np.mod(v, self.periods_), v)
        idx = np.floor(v / self.cell_sizes_)
        return np.clip(idx, 0, self.max_index_.astype(float)).astype(np.uint64)

    def transform(self, X):
        idx = self.cell_indices(X)
        return np.bitwise_or.reduce(idx << self.shifts_, axis=1).astype(np.uint64)


class LSHTabulator(BaseTabulator):
    """Sign of ``d`` fixed Gaussian random projections; bit ``i`` is ``v_i . o > 0``."""

    def __init__(self, d: int = 64, seed: int = 0):
        self.d = d
        self.seed = seed

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        if not 1 <= self.d <= 64:
            raise ValueError("d must be in [1, 64]")
        rng = np.random.default_rng(self.seed)
        self.projections_ = rng.standard_normal((self.d, X.shape[1]))
        self.projections_.setflags(write=False)
        return self

    def transform(self, X):
        check_is_fitted(self, "projections_")
        X = self._validate(X, reset=False)
        return pack_bits(heaviside_bits(X @ self.projections_.T))


class LearnedTabulator(BaseTabulator):
    """Bernoulli mode of the variational encoder.

    ``fit`` only initialises the model for the observed feature count;
    training is driven online through :meth:`train_step`.
    """

    def __init__(self, d: int = 8, k: int = 0, obs_dim: int = 2, n_actions: int = 4,
                 hidden: Sequence[int] = (16, 16), lr: float = 1e-3, batch_size: int = 128,
                 lambda_post: float = 2.0 / 3.0, lambda_prior: float = 0.5, seed: int = 0):
        self.d = d
        self.k = k
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.lambda_post = lambda_post
        self.lambda_prior = lambda_prior
        self.seed = seed

    def _config(self) -> VariationalConfig:
        return VariationalConfig(d=self.d, k=self.k, obs_dim=self.obs_dim, n_actions=self.n_actions,
                                 hidden=tuple(self.hidden), lr=self.lr, batch_size=self.batch_size,
                                 lambda_post=self.lambda_post, lambda_prior=self.lambda_prior, seed=self.seed)

    def fit(self, X=None, y=None):
        config = self._config()
        if X is not None:
            X = self._validate(X, reset=True)
            if X.shape[1] != config.n_in:
                raise ValueError(f"X has {X.shape[1]} features, expected (k+1)*obs_dim = {config.n_in}")
        self.n_features_in_ = config.n_in
        self.model_ = VariationalModel(config)
        self._generation = 0
        return self

    def logits(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.logits(np.atleast_2d(np.asarray(X, dtype=float)))

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = self._validate(X, reset=False)
        return self.model_.mode_codes(X)

    def encode(self, window) -> int:
        # hot path in the agent loop; skips sklearn validation
        return int(self.model_.mode_codes(np.asarray(window, dtype=float).reshape(1, -1))[0])

    def train_step(self, replay):
        fe, requests = self.model_.train_step(replay)
        self._generation += 1
        return fe, requests

    def save(self, fh) -> None:
        save_params(self.model_.params, fh)

    def load(self, fh) -> "LearnedTabulator":
        if not hasattr(self, "model_"):
            self.fit()
        params = load_params(fh)
        current = self.model_.params
        if set(params) != set(current) or any(params[k].shape != current[k].shape for k in current):
            raise ValueError("checkpoint parameters do not match this architecture")
        self.model_.params = params
        self._generation += 1
        return self
