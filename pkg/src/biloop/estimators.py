"""Estimator-style wrappers around :func:`run_aid` and :func:`run_itd`.

The "data" passed to ``fit`` is a :class:`BilevelOracle` rather than an
array, so only the parameter handling and fitted-attribute conventions of
scikit-learn carry over.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .aid import LoopConfig, run_aid
from .analysis import RateConstants, SchemeId, default_hyperparams, exact_hypergradient
from .exceptions import ParameterError
from .itd import ItdConfig, run_itd
from .problems import BilevelOracle


def _check_oracle(oracle):
    if not isinstance(oracle, BilevelOracle):
        raise ParameterError(f"expected a BilevelOracle, got {type(oracle).__name__}")
    return oracle


class _BilevelEstimator(BaseEstimator):
    _algorithm = None

    def _resolved(self, oracle):
        scheme = SchemeId.parse(self.scheme, self._algorithm)
        defaults = default_hyperparams(scheme, RateConstants.from_oracle(oracle), eps=self.eps,
                                       c_beta=self.c_beta)
        return {k: (getattr(self, k) if getattr(self, k, None) is not None else v)
                for k, v in defaults.items()}

    def _store(self, trace):
        self.trace_ = trace
        self.x_ = trace.x_final
        self.counters_ = trace.counters
        self.n_iter_ = len(trace)
        return self

    def score(self, oracle):
        """Negative squared hypergradient norm at the fitted point (higher is better)."""
        check_is_fitted(self, "x_")
        g = exact_hypergradient(_check_oracle(oracle), self.x_)
        return -float(g @ g)


class AIDBiO(_BilevelEstimator):
    """Approximate implicit differentiation with N inner and Q linear-system steps.

    Any of ``N, Q, alpha, eta, beta`` left as None is filled in from ``scheme``.
    """

    _algorithm = "aid"

    def __init__(self, scheme="N_LOOP", *, N=None, Q=None, alpha=None, eta=None, beta=None, K=100,
                 eps=None, c_beta=0.5, warm_start_y=True, warm_start_v=True, trace_stride=1):
        self.scheme = scheme
        self.N = N
        self.Q = Q
        self.alpha = alpha
        self.eta = eta
        self.beta = beta
        self.K = K
        self.eps = eps
        self.c_beta = c_beta
        self.warm_start_y = warm_start_y
        self.warm_start_v = warm_start_v
        self.trace_stride = trace_stride

    def fit(self, oracle, x0=None, y0=None):
        oracle = _check_oracle(oracle)
        hp = self._resolved(oracle)
        cfg = LoopConfig(N=hp["N"], Q=hp["Q"], alpha=hp["alpha"], eta=hp["eta"], beta=hp["beta"],
                         K=self.K, warm_start_y=self.warm_start_y, warm_start_v=self.warm_start_v,
                         x0=None if x0 is None else np.asarray(x0, dtype=np.float64), y0=y0)
        return self._store(run_aid(oracle, cfg, trace_stride=self.trace_stride))


class ITDBiO(_BilevelEstimator):
    """Iterative differentiation through N unrolled inner steps."""

    _algorithm = "itd"

    def __init__(self, scheme="NN_LOOP", *, N=None, alpha=None, beta=None, K=100, eps=1e-4, c_beta=0.5,
                 warm_start_y=True, trace_stride=1):
        self.scheme = scheme
        self.N = N
        self.alpha = alpha
        self.beta = beta
        self.K = K
        self.eps = eps
        self.c_beta = c_beta
        self.warm_start_y = warm_start_y
        self.trace_stride = trace_stride

    def fit(self, oracle, x0=None, y0=None):
        oracle = _check_oracle(oracle)
        hp = self._resolved(oracle)
        cfg = ItdConfig(N=hp["N"], alpha=hp["alpha"], beta=hp["beta"], K=self.K,
                        warm_start_y=self.warm_start_y,
                        x0=None if x0 is None else np.asarray(x0, dtype=np.float64), y0=y0)
        return self._store(run_itd(oracle, cfg, trace_stride=self.trace_stride))
