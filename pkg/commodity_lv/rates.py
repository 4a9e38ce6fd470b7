"""
G1++ short rate

    r(t) = x(t) + phi(t),  dx = -a x dt + sigma dW_r,  x(0) = 0

The shift phi(t) = f(0, t) + sigma^2 / (2 a^2) (1 - e^{-a t})^2 makes
E[exp(-int_0^t r)] = P(0, t). The factor and its time integral are sampled
jointly from their exact Gaussian transition.
"""
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from commodity_lv.exceptions import SimulationError
from commodity_lv.market_data import DiscountCurve
from commodity_lv.models import G1ppParams, IntegralScheme

SERIES_CUTOFF = 1e-2
# Taylor coefficients of a int_0^t (1 - e^{-a u})^2 du in x = a t, orders 3..9
_J_SERIES = tuple((-1) ** (n + 1) * (2 ** (n - 1) - 2) / math.factorial(n) for n in range(3, 10))


def _one_minus_exp(x):
    """1 - e^{-x}"""
    return -np.expm1(-np.asarray(x, dtype=float))


@dataclass
class RateState:
    """Per-path factor x, accumulated int_0^t r and the current time"""
    x: np.ndarray
    int_r: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, n_paths: int) -> "RateState":
        return cls(x=np.zeros(n_paths), int_r=np.zeros(n_paths), t=0.0)

    @property
    def discount(self) -> np.ndarray:
        """D(t) = exp(-int_0^t r)"""
        return np.exp(-self.int_r)


@dataclass(frozen=True)
class G1ppModel:
    """G1++ parameters bound to the discount curve they fit"""
    params: G1ppParams
    curve: DiscountCurve

    @classmethod
    def deterministic(cls, curve: DiscountCurve) -> "G1ppModel":
        """sigma = 0: r(t) = f(0, t)"""
        return cls(G1ppParams(a=1.0, sigma=0.0), curve)

    @property
    def is_deterministic(self) -> bool:
        return self.params.sigma == 0.0

    def _convexity_scale(self) -> float:
        a, s = self.params.a, self.params.sigma
        return s * s / (2.0 * a * a)

    def _j(self, t):
        """int_0^t (1 - e^{-a u})^2 du"""
        a = self.params.a
        t = np.asarray(t, dtype=float)
        x = a * t
        closed = t - 2.0 * _one_minus_exp(x) / a + _one_minus_exp(2.0 * x) / (2.0 * a)
        # the closed form cancels catastrophically for small a t
        series = sum(c * x ** n for n, c in enumerate(_J_SERIES, start=3)) / a
        return np.where(x < SERIES_CUTOFF, series, closed)

    def phi(self, t):
        """Deterministic shift phi(t)"""
        a = self.params.a
        return self.curve.instantaneous_forward(t) + self._convexity_scale() * _one_minus_exp(a * np.asarray(t)) ** 2

    def integrated_phi(self, t1, t2):
        """int_{t1}^{t2} phi(u) du in closed form"""
        return self.curve.integrated_forward(t1, t2) + self._convexity_scale() * (self._j(t2) - self._j(t1))

    def discount(self, t):
        """P(0, t) of the fitted curve"""
        return self.curve.discount(t)

    def short_rate(self, x, t):
        return np.asarray(x) + self.phi(t)

    def x_variance(self, t):
        """Var[x(t)] = sigma^2 (1 - e^{-2 a t}) / (2 a)"""
        a, s = self.params.a, self.params.sigma
        return s * s * _one_minus_exp(2.0 * a * np.asarray(t, dtype=float)) / (2.0 * a)

    def ou_covariance(self, dt: float) -> np.ndarray:
        """
        Covariance of the innovations (eps_x, eps_I) over a step dt

        Returns:
            2x2 matrix [[Var eps_x, Cov], [Cov, Var eps_I]]
        """
        if dt <= 0.0:
            raise SimulationError(f"time step must be positive, got {dt}")
        a, s = self.params.a, self.params.sigma
        var_x = self.x_variance(dt)
        var_i = s * s / (a * a) * self._j(dt)
        cov = self._convexity_scale() * _one_minus_exp(a * dt) ** 2
        return np.array([[var_x, cov], [cov, var_i]], dtype=float)

    def step_rate(
        self,
        state: RateState,
        dt: float,
        z_x: np.ndarray,
        z_i: np.ndarray,
        scheme: IntegralScheme = IntegralScheme.EXACT,
    ) -> RateState:
        """
        Advance (x, int r) over [t, t + dt]

        Args:
            state: Current state
            dt: Step size, > 0
            z_x: Standard normals driving x (already correlated with the curve factors)
            z_i: Independent standard normals for the integral innovation
            scheme: exact joint sampling, or trapezoid accumulation of int x

        Returns:
            New RateState at t + dt
        """
        if dt <= 0.0:
            raise SimulationError(f"time step must be positive, got {dt}")
        a = self.params.a
        decay = np.exp(-a * dt)
        drift_i = state.x * _one_minus_exp(a * dt) / a
        int_phi = float(self.integrated_phi(state.t, state.t + dt))

        if self.is_deterministic:
            return RateState(x=state.x * decay, int_r=state.int_r + drift_i + int_phi, t=state.t + dt)

        cov = self.ou_covariance(dt)
        sd_x = np.sqrt(cov[0, 0])
        eps_x = sd_x * z_x
        x_new = state.x * decay + eps_x
        if IntegralScheme(scheme) == IntegralScheme.TRAPEZOID:
            int_x = 0.5 * (state.x + x_new) * dt
        else:
            beta = cov[0, 1] / sd_x
            resid = np.sqrt(max(cov[1, 1] - beta * beta, 0.0))
            int_x = drift_i + beta * z_x + resid * z_i
        return RateState(x=x_new, int_r=state.int_r + int_x + int_phi, t=state.t + dt)


def fit_shift(params: G1ppParams, curve: DiscountCurve) -> Callable:
    """
    Shift function reproducing the discount curve

    Returns:
        phi(t) = f(0, t) + sigma^2 / (2 a^2) (1 - e^{-a t})^2, evaluated on demand
    """
    return G1ppModel(params, curve).phi
