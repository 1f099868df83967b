"""Noise schedule and deterministic probability-flow solvers.

Two update rules are provided, both usable in either direction along the
inference grid:

* ``ddim``: first order, epsilon parameterisation (eta = 0).
* ``dpmpp2m``: second order multistep DPM-Solver++ in data-prediction form.

Inversion reuses exactly the same update with ``t_next > t``.
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGridError, ScheduleConfigError, SolverError

SOLVER_KINDS = ("ddim", "dpmpp2m")
DIRECTIONS = ("denoise", "invert")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T_train: int
    betas: np.ndarray
    alpha_bar: np.ndarray
    timesteps: np.ndarray  # increasing inference grid

    @property
    def num_steps(self):
        return len(self.timesteps)

    def alpha(self, t):
        return float(np.sqrt(self.alpha_bar[int(t)]))

    def sigma(self, t):
        return float(np.sqrt(1.0 - self.alpha_bar[int(t)]))

    def lam(self, t):
        """Half log-SNR, ``log(alpha_t / sigma_t)``."""
        t = int(t)
        return float(0.5 * (np.log(self.alpha_bar[t]) - np.log1p(-self.alpha_bar[t])))

    def check_on_grid(self, t):
        t = int(t)
        if t not in self._grid_set:
            raise SolverError(f"timestep {t} is not on the inference grid")
        return t

    @property
    def _grid_set(self):
        cached = self.__dict__.get("_grid_cache")
        if cached is None:
            cached = frozenset(int(s) for s in self.timesteps)
            object.__setattr__(self, "_grid_cache", cached)
        return cached


def make_schedule(T_train=1000, beta_start=1e-4, beta_end=0.02, N=50):
    """Linear-beta schedule with an ``N``-point inference grid spanning ``[0, T_train-1]``."""
    if not (isinstance(T_train, (int, np.integer)) and isinstance(N, (int, np.integer))):
        raise ScheduleConfigError("T_train and N must be integers")
    if not T_train >= N >= 2:
        raise ScheduleConfigError(f"need T_train >= N >= 2, got T_train={T_train}, N={N}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T_train, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    timesteps = np.round(np.linspace(0, T_train - 1, N)).astype(np.int64)
    return NoiseSchedule(int(T_train), betas, alpha_bar, timesteps)


@dataclass
class SolverState:
    """Per-trajectory multistep memory. Never share one between trajectories."""

    kind: str = "dpmpp2m"
    direction: str = None
    history: deque = field(default_factory=lambda: deque(maxlen=2))
    last_t: int = None  # timestep the previous step landed on

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise SolverError(f"unknown solver kind {self.kind!r}")

    def reset(self):
        self.history.clear()
        self.direction = None
        self.last_t = None

    def _sync(self, t, t_next):
        direction = "invert" if t_next > t else "denoise"
        if direction != self.direction or (self.last_t is not None and self.last_t != t):
            self.history.clear()
        self.direction = direction


def ddim_step(z_t, eps_pred, t, t_next, sched):
    t = sched.check_on_grid(t)
    t_next = sched.check_on_grid(t_next)
    if t == t_next:
        return z_t
    a, s = sched.alpha(t), sched.sigma(t)
    a_n, s_n = sched.alpha(t_next), sched.sigma(t_next)
    x0 = (z_t - s * eps_pred) / a
    return a_n * x0 + s_n * eps_pred


def data_prediction(z_t, eps_pred, t, sched):
    return (z_t - sched.sigma(t) * eps_pred) / sched.alpha(t)


def dpmpp_2m_step(z, x_pred, state, t, t_next, sched):
    """One DPM-Solver++(2M) update from ``t`` to ``t_next``.

    ``x_pred`` is the data prediction at ``t``. Falls back to the first
    order update when ``state`` holds no usable prior prediction. The
    state is updated in place.
    """
    t = sched.check_on_grid(t)
    t_next = sched.check_on_grid(t_next)
    if t == t_next:
        return z
    state._sync(t, t_next)
    lam_t, lam_n = sched.lam(t), sched.lam(t_next)
    h = lam_n - lam_t
    if h == 0.0:
        raise SolverError(f"zero log-SNR step between t={t} and t={t_next}")
    s_t, s_n, a_n = sched.sigma(t), sched.sigma(t_next), sched.alpha(t_next)
    phi = np.expm1(-h)
    if state.history:
        x_prev, lam_prev = state.history[-1]
        r = (lam_t - lam_prev) / h
        if abs(r) < 1e-12:
            raise DegenerateGridError(f"step ratio r={r!r} at t={t}")
        c = 1.0 / (2.0 * r)
        d = (1.0 + c) * x_pred - c * x_prev
    else:
        d = x_pred
    z_next = (s_n / s_t) * z - a_n * phi * d
    state.history.append((x_pred, lam_t))
    state.last_t = t_next
    return z_next


def solver_step(kind, z, eps_pred, state, t, t_next, sched):
    """Dispatch a single update of either solver from an epsilon prediction."""
    if kind == "ddim":
        return ddim_step(z, eps_pred, t, t_next, sched)
    if kind == "dpmpp2m":
        x_pred = data_prediction(z, eps_pred, sched.check_on_grid(t), sched)
        return dpmpp_2m_step(z, x_pred, state, t, t_next, sched)
    raise SolverError(f"unknown solver kind {kind!r}")


class Solver:
    """One trajectory's solver: kind, schedule and private multistep state."""

    def __init__(self, kind, sched):
        if kind not in SOLVER_KINDS:
            raise SolverError(f"unknown solver kind {kind!r}")
        self.kind = kind
        self.sched = sched
        self.state = SolverState(kind)

    def step(self, z, eps_pred, t, t_next):
        return solver_step(self.kind, z, eps_pred, self.state, t, t_next, self.sched)


def grid_pairs(sched, direction):
    """Consecutive ``(t, t_next)`` pairs along the grid in the given direction."""
    ts = [int(s) for s in sched.timesteps]
    if direction == "denoise":
        ts = ts[::-1]
    elif direction != "invert":
        raise SolverError(f"unknown direction {direction!r}")
    return list(zip(ts[:-1], ts[1:]))


def run_trajectory(z_start, prompt, denoiser, sched, kind="dpmpp2m", direction="denoise"):
    """Integrate the probability-flow ODE across the full grid.

    ``denoiser.forward(z, t, prompt)`` must return ``(eps, taps)``; taps
    are ignored here.
    """
    solver = Solver(kind, sched)
    z = z_start
    for t, t_next in grid_pairs(sched, direction):
        eps, _ = denoiser.forward(z, t, prompt)
        z = solver.step(z, eps, t, t_next)
    return z


class ZeroDenoiser:
    """Predicts zero noise everywhere; every solver step is then a pure rescale."""

    def forward(self, z, t, prompt=None, plan=None):
        return np.zeros_like(z), {}


class LinearDenoiser:
    """``eps(z, t) = k * z``, for which the flow ODE has a closed form."""

    def __init__(self, k):
        self.k = float(k)

    def forward(self, z, t, prompt=None, plan=None):
        return self.k * z, {}

    def exact(self, z, t_from, t_to, sched):
        # With y = z/alpha and s = sigma/alpha: dy/ds = k*y/sqrt(1+s^2),
        # so y scales by exp(k * (asinh(s_to) - asinh(s_from))).
        def s_of(t):
            return sched.sigma(t) / sched.alpha(t)

        gain = np.exp(self.k * (np.arcsinh(s_of(t_to)) - np.arcsinh(s_of(t_from))))
        return z * gain * sched.alpha(t_to) / sched.alpha(t_from)
