"""Estimator-style front end to the SELEX fit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .energy import best_site_energies, canonical_consensus
from .fit import FitConfig, SelexLikelihood, multi_start_fit
from .seqcore import encode_many
from .thermo import log_round_probs
from .validation import check_is_fitted, check_round_counts, check_seed, check_sequences


class SelexEnergyModel(BaseEstimator, TransformerMixin):
    """Fit an energy matrix and per-round concentrations to multi-round read counts.

    ``fit`` takes a :class:`RoundCounts`, a rounds-table path or
    ``(sequence, count, round)`` records. ``transform`` maps sequences to
    best-site energies and ``predict_proba`` to per-round binding
    probabilities.

    Parameters
    ----------
    l : int
        Binding-site length.
    restarts : int
        Number of random simplex starts.
    seed : int
        Seed for restarts and the Monte Carlo reference sample.
    """

    def __init__(self, l=10, restarts=50, fit_log_tf=True, log_tf=None, fit_junk=False,
                 c_junk=0.0, ftol=1e-8, xtol=1e-6, max_iter=50_000, adaptive=True,
                 polish_rounds=0, polish_iter=20_000, mc_sample_size=100_000,
                 denominator="mc", seed=0, n_jobs=1):
        self.l = l
        self.restarts = restarts
        self.fit_log_tf = fit_log_tf
        self.log_tf = log_tf
        self.fit_junk = fit_junk
        self.c_junk = c_junk
        self.ftol = ftol
        self.xtol = xtol
        self.max_iter = max_iter
        self.adaptive = adaptive
        self.polish_rounds = polish_rounds
        self.polish_iter = polish_iter
        self.mc_sample_size = mc_sample_size
        self.denominator = denominator
        self.seed = seed
        self.n_jobs = n_jobs

    def _config(self) -> FitConfig:
        params = self.get_params()
        params["seed"] = check_seed(params["seed"])
        if params["log_tf"] is not None:
            params["log_tf"] = tuple(float(x) for x in params["log_tf"])
        return FitConfig(**params)

    def fit(self, X, y=None):
        data = check_round_counts(X)
        config = self._config()
        result = multi_start_fit(data, config)
        if not result.success:
            raise RuntimeError("every restart diverged; see result_.traces")
        self.result_ = result
        self.model_ = result.model
        self.matrix_ = result.matrix
        self.log_tf_ = np.asarray(result.log_tf)
        self.c_junk_ = result.c_junk
        self.log_likelihood_ = result.log_likelihood
        self.consensus_ = canonical_consensus(result.matrix)
        self.n_rounds_ = data.R
        self.k_ = data.k
        return self

    def transform(self, X) -> np.ndarray:
        """Best-site energies as an ``(n, 1)`` column."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X)
        if len(seqs[0]) < self.l:
            raise ValueError(f"sequences shorter than site length {self.l}")
        return best_site_energies(self.matrix_, encode_many(seqs))[:, None]

    def predict_proba(self, X) -> np.ndarray:
        """``(n, R)`` per-round binding probabilities."""
        e = self.transform(X)[:, 0]
        return np.exp(log_round_probs(self.log_tf_, self.c_junk_, e))

    def score(self, X, y=None) -> float:
        """Log-likelihood of a rounds dataset under the fitted model."""
        check_is_fitted(self, "model_")
        data = check_round_counts(X)
        lik = SelexLikelihood(data, self.l, self.denominator, self.mc_sample_size,
                              check_seed(self.seed))
        return float(lik(self.model_))
