"""Impact kernels, sign-correlation matrices and theoretical responses.

Responses per share are linear in the impact kernel::

    R(tau) = sum_{tau'=1..T_cut} A(tau, tau') G(tau')

with ``A`` built from sign correlators. Inverting ``A`` turns an empirical
response into an empirical kernel. Theoretical diffusion functions are
quadratic forms of two kernels in the same correlators.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Mapping, Union

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
from scipy.linalg import lapack

from .core import LagCurve
from .estimators import VolumeImpactConstants, VolumeProducts
from .fits import PowerLawFit

T_CUT = 3000
MAX_CONDITION = 1e12

MATRIX_KINDS = ("passive-I", "active-I", "self-II", "avg-self-II")


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, condition: float):
        super().__init__(f"sign matrix is ill-conditioned (condition ~ {condition:.3g})")
        self.condition = condition


@dataclass(frozen=True)
class KernelParams:
    """``G(tau) = gamma_temp / (1 + (tau/tau0)^2)^(beta/2) + gamma_perm``."""

    gamma_perm: float
    gamma_temp: float
    tau0: float
    beta: float

    def __post_init__(self):
        if not self.tau0 > 0:
            raise ValueError(f"tau0 must be positive, got {self.tau0}")
        for k in ("gamma_perm", "gamma_temp", "beta"):
            if not math.isfinite(getattr(self, k)):
                raise ValueError(f"{k} must be finite")

    def __call__(self, tau):
        return kernel_eval(self, tau)

    def scaled(self, w: float) -> "KernelParams":
        """Kernel multiplied by ``w`` (both impact components)."""
        return KernelParams(w * self.gamma_perm, w * self.gamma_temp, self.tau0, self.beta)

    def to_json(self) -> dict:
        return {"gamma_perm": self.gamma_perm, "gamma_temp": self.gamma_temp,
                "tau0_s": self.tau0, "beta": self.beta}

    @classmethod
    def from_json(cls, d: Mapping) -> "KernelParams":
        return cls(float(d["gamma_perm"]), float(d["gamma_temp"]),
                   float(d["tau0_s"]), float(d["beta"]))


def kernel_eval(p: KernelParams, tau):
    """Evaluate the impact kernel; scalar in, scalar out."""
    t = np.abs(np.asarray(tau, dtype=float)) / p.tau0
    # log(1 + t^2) without overflowing for huge t
    with np.errstate(divide="ignore"):
        big = t > 1e100
        log1p_t2 = np.where(big, 2.0 * np.log(np.where(big, t, 1.0)),
                            np.log1p(np.where(big, 0.0, t) ** 2))
    val = p.gamma_temp * np.exp(-0.5 * p.beta * log1p_t2) + p.gamma_perm
    return float(val) if np.ndim(val) == 0 else val


KernelLike = Union[KernelParams, LagCurve]


def kernel_values(kernel: KernelLike, lags) -> np.ndarray:
    lags = np.asarray(lags)
    if isinstance(kernel, KernelParams):
        return np.asarray(kernel_eval(kernel, lags), dtype=float)
    return np.asarray(kernel(lags), dtype=float)


def correlator_table(curve: LagCurve | None, fit: PowerLawFit | None, max_lag: int,
                     mode: str = "fit") -> LagCurve:
    """Correlator values on lags ``0..max_lag`` for building matrices.

    ``raw`` uses the empirical curve, ``fit`` the power law for every lag
    >= 1 (lag 0 stays empirical), ``hybrid`` the empirical curve below the
    fit range and the power law from there on.
    """
    if mode == "raw":
        if curve is None or not curve.covers(0, max_lag):
            raise ValueError(f"raw correlator must cover lags 0..{max_lag}")
        return curve.restrict(0, max_lag)
    if fit is None or curve is None:
        raise ValueError("fitted correlators need both the curve and its fit")
    lags = np.arange(max_lag + 1)
    vals = np.empty(max_lag + 1)
    vals[0] = curve(0)
    vals[1:] = fit(lags[1:])
    if mode == "hybrid":
        hi = min(int(fit.fit_range[0]) - 1, curve.max_lag, max_lag)
        if hi >= 1:
            vals[1: hi + 1] = curve.values[1 - curve.min_lag: hi + 1 - curve.min_lag]
    elif mode != "fit":
        raise ValueError(f"unknown correlator mode {mode!r}")
    return LagCurve(0, vals)


@dataclass(frozen=True, eq=False)
class SignMatrix:
    """Dense entries plus, when built here, the Toeplitz-minus-rank-one parts.

    ``A = toeplitz(col, row) - 1 q^T``; the parts allow O(n log n) products.
    """

    entries: np.ndarray
    kind: str
    col: np.ndarray | None = field(default=None, repr=False)
    row: np.ndarray | None = field(default=None, repr=False)
    q: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("sign matrix must be square")
        if self.kind not in MATRIX_KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        object.__setattr__(self, "entries", e)

    @property
    def t_cut(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def _lu(self):
        lu, piv, info = lapack.dgetrf(self.entries)
        if info > 0:
            raise SingularMatrixError(math.inf)
        anorm = np.linalg.norm(self.entries, 1)
        rcond, _ = lapack.dgecon(lu, anorm, norm="1")
        return lu, piv, (math.inf if rcond == 0 else 1.0 / rcond)

    @property
    def condition(self) -> float:
        """1-norm condition number estimate."""
        return self._lu[2]

    def scale(self, c: float) -> "SignMatrix":
        if self.col is None:
            return SignMatrix(self.entries * c, self.kind)
        return SignMatrix(self.entries * c, self.kind, self.col * c, self.row * c, self.q * c)

    @cached_property
    def _circulant(self):
        n = self.t_cut
        v = np.concatenate((self.col, [0.0], self.row[:0:-1]))
        return sfft.rfft(v), 2 * n

    def fast_matvec(self, x: np.ndarray) -> np.ndarray:
        """``A @ x`` through the circulant embedding (falls back to dense)."""
        if self.col is None:
            return self.entries @ x
        spec, m = self._circulant
        n = self.t_cut
        tx = sfft.irfft(spec * sfft.rfft(x, m), m)[:n]
        return tx - np.dot(self.q, x)


def _table(theta, n: int) -> np.ndarray:
    if isinstance(theta, LagCurve):
        if not theta.covers(0, n):
            raise ValueError(f"correlator must cover lags 0..{n}, has {theta.min_lag}..{theta.max_lag}")
        return theta.values[-theta.min_lag: n + 1 - theta.min_lag]
    arr = np.asarray(theta, dtype=float)
    if arr.size < n + 1:
        raise ValueError(f"correlator must cover lags 0..{n}")
    return arr[: n + 1]


def build_sign_matrix(theta_p, theta_a=None, T_cut: int = T_CUT,
                      kind: str = "passive-I") -> SignMatrix:
    """Matrix A linking a kernel on lags 1..T_cut to a response on 1..T_cut.

    With ``P`` the correlator read forward and ``Q`` the one read backward::

        A(tau, tau') = P(tau - tau') - Q(tau')   for tau' <= tau
        A(tau, tau') = Q(tau' - tau) - Q(tau')   for tau' >  tau

    ``passive-I``: P = Theta^(p), Q = Theta^(a). ``active-I``: the reverse.
    ``self-II``/``avg-self-II``: P = Q = the (averaged) self-correlator,
    passed as ``theta_p``.
    """
    if kind in ("self-II", "avg-self-II"):
        P = Q = _table(theta_p, T_cut)
    elif kind == "passive-I":
        P, Q = _table(theta_p, T_cut), _table(theta_a, T_cut)
    elif kind == "active-I":
        P, Q = _table(theta_a, T_cut), _table(theta_p, T_cut)
    else:
        raise ValueError(f"unknown matrix kind {kind!r}")
    col = P[:T_cut]
    row = np.concatenate(([P[0]], Q[1:T_cut]))
    q = Q[1: T_cut + 1]
    A = sla.toeplitz(col, row)
    A -= q[None, :]
    return SignMatrix(A, kind, col.copy(), row, q.copy())


def theo_response(matrix: SignMatrix, kernel: KernelLike) -> LagCurve:
    """Response per share on lags 1..T_cut for the given kernel."""
    n = matrix.t_cut
    if isinstance(kernel, LagCurve):
        if kernel.min_lag != 1 or kernel.max_lag != n:
            raise ValueError(f"kernel must cover lags 1..{n}")
        g = kernel.values
    else:
        g = kernel_values(kernel, np.arange(1, n + 1))
    return LagCurve(1, matrix.entries @ g)


def invert_response(matrix: SignMatrix, per_share_response: LagCurve,
                    max_condition: float = MAX_CONDITION) -> LagCurve:
    """Empirical kernel solving ``A G = R`` by LU with partial pivoting."""
    n = matrix.t_cut
    if per_share_response.min_lag != 1 or per_share_response.max_lag < n:
        raise ValueError(f"response must cover lags 1..{n}")
    lu, piv, cond = matrix._lu
    if not cond <= max_condition:
        raise SingularMatrixError(cond)
    rhs = per_share_response.values[:n]
    g, info = lapack.dgetrs(lu, piv, rhs)
    if info != 0:
        raise SingularMatrixError(cond)
    return LagCurve(1, g)


# ---------------------------------------------------------------------------
# Scenario III
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioIIIConfig:
    """Interpolation between a fixed Scenario I curve and a Scenario II kernel.

    ``scenario1[mode]`` is the Scenario I theoretical response per share,
    ``scenario2_matrices[mode]`` the self-correlator matrix the Scenario II
    kernel ``scenario2_kernels[mode]`` acts on.
    """

    weight: float
    constants: VolumeImpactConstants
    scenario1: Mapping[str, LagCurve]
    scenario2_kernels: Mapping[str, KernelParams]
    scenario2_matrices: Mapping[str, SignMatrix]

    def __post_init__(self):
        if not 0 < self.weight < 1:
            raise ValueError(f"weight must lie in (0, 1), got {self.weight}")

    def with_kernel(self, mode: str, kernel: KernelParams) -> "ScenarioIIIConfig":
        kernels = dict(self.scenario2_kernels)
        kernels[mode] = kernel
        return ScenarioIIIConfig(self.weight, self.constants, self.scenario1, kernels,
                                 self.scenario2_matrices)


def volume_constants_for(constants: VolumeImpactConstants, mode: str) -> tuple[float, float]:
    if mode == "passive":
        return constants.f_self_passive, constants.g_cross_passive
    if mode == "active":
        return constants.f_self_active, constants.g_cross_active
    raise ValueError(f"mode must be passive or active, got {mode!r}")


def scenario3_response(cfg: ScenarioIIIConfig, mode: str) -> LagCurve:
    """``w * R_I * <f> + R_II(kernel) * <g>`` (not per share)."""
    f, g = volume_constants_for(cfg.constants, mode)
    r1 = cfg.scenario1[mode]
    r2 = theo_response(cfg.scenario2_matrices[mode], cfg.scenario2_kernels[mode])
    n = min(r1.max_lag, r2.max_lag)
    vals = cfg.weight * r1.restrict(1, n).values * f + r2.restrict(1, n).values * g
    return LagCurve(1, vals)


# ---------------------------------------------------------------------------
# diffusion
# ---------------------------------------------------------------------------

COMPONENTS = ("LL", "II", "LI", "IL")


@dataclass(frozen=True, eq=False)
class DiffusionComponentSpec:
    kernel1: KernelLike
    kernel2: KernelLike
    theta1: LagCurve
    theta2: LagCurve
    V: float
    noise: float = 0.0
    t_cut: int = T_CUT


def _diffusion_weights(kernel: KernelLike, tau: int, t_cut: int) -> np.ndarray:
    """Kernel weight of a trade at time k in [-t_cut, tau) on r(0, tau)."""
    k = np.arange(-t_cut, tau)
    w = kernel_values(kernel, tau - k)
    past = k < 0
    w[past] -= kernel_values(kernel, -k[past])
    return w


def theo_diffusion_component(spec: DiffusionComponentSpec, T_max: int) -> LagCurve:
    """One diffusion component on lags 1..T_max.

    Equal-time terms, cross-time terms and the history terms are collected
    in a single quadratic form ``a^T C b``, where ``a``/``b`` are the kernel
    weights of every trade time and ``C`` is the Toeplitz matrix of sign
    correlators (``theta1`` for the first trade later, ``theta2`` for the
    second trade later, ``theta1(0)`` at equal times). History reaches back
    ``t_cut`` slots.
    """
    t_cut = spec.t_cut
    n_max = t_cut + T_max
    th1 = _table(spec.theta1, n_max - 1)
    th2 = _table(spec.theta2, n_max - 1)
    out = np.empty(T_max)
    for tau in range(1, T_max + 1):
        n = t_cut + tau
        a = _diffusion_weights(spec.kernel1, tau, t_cut)
        b = _diffusion_weights(spec.kernel2, tau, t_cut)
        col = th1[:n]
        row = np.concatenate(([th1[0]], th2[1:n]))
        if not (a.any() and b.any()):
            q = 0.0
        else:
            q = float(np.dot(a, sla.matmul_toeplitz((col, row), b)))
        out[tau - 1] = spec.V * q + tau * spec.noise
    return LagCurve(1, out)


@dataclass(frozen=True, eq=False)
class DiffusionInputs:
    """Kernels, correlators and volume products behind the four components.

    ``self_kernel``/``self_kernel_avg`` are G_ii and <G_jj>_j,
    ``passive_kernel``/``active_kernel`` the cross kernels G^(p), G^(a).
    Correlator curves must cover lags ``0..t_cut + T_max - 1``.
    """

    self_kernel: KernelLike
    self_kernel_avg: KernelLike
    passive_kernel: KernelLike
    active_kernel: KernelLike
    theta_passive: LagCurve
    theta_active: LagCurve
    theta_self: LagCurve
    theta_self_avg: LagCurve
    volume: VolumeProducts
    noise_total: float = 1e-8
    t_cut: int = T_CUT
    noise_split: Mapping[str, float] = field(default_factory=lambda: {"LL": 1.0})

    def component(self, name: str, noise: float = 0.0) -> DiffusionComponentSpec:
        V = getattr(self.volume, name)
        if name == "LL":
            k1, k2, t1, t2 = self.self_kernel, self.self_kernel_avg, self.theta_passive, self.theta_active
        elif name == "II":
            k1, k2, t1, t2 = self.passive_kernel, self.active_kernel, self.theta_active, self.theta_passive
        elif name == "LI":
            k1, k2, t1, t2 = self.self_kernel, self.active_kernel, self.theta_self, self.theta_self
        elif name == "IL":
            k1, k2, t1, t2 = self.passive_kernel, self.self_kernel_avg, self.theta_self_avg, self.theta_self_avg
        else:
            raise ValueError(f"unknown component {name!r}")
        return DiffusionComponentSpec(k1, k2, t1, t2, V, noise, self.t_cut)


SCENARIO_COMPONENTS = {"I": ("LL",), "II": ("II",), "III": COMPONENTS}


def theo_diffusion_components(scenario: str, params: DiffusionInputs,
                              T_max: int) -> dict[str, LagCurve]:
    try:
        names = SCENARIO_COMPONENTS[scenario]
    except KeyError:
        raise ValueError(f"scenario must be I, II or III, got {scenario!r}") from None
    if len(names) == 1:
        split = {names[0]: 1.0}
    else:
        split = dict(params.noise_split)
        if abs(sum(split.values()) - 1.0) > 1e-12 or not set(split) <= set(names):
            raise ValueError("noise_split must distribute the total over the components")
    return {
        n: theo_diffusion_component(params.component(n, params.noise_total * split.get(n, 0.0)), T_max)
        for n in names
    }


def theo_diffusion(scenario: str, params: DiffusionInputs, T_max: int) -> LagCurve:
    """Partner-averaged diffusion <D_i>(tau) on lags 1..T_max.

    Scenario I keeps only the (LL) component, Scenario II only (II),
    Scenario III sums all four.
    """
    comps = theo_diffusion_components(scenario, params, T_max)
    total = np.zeros(T_max)
    for n in SCENARIO_COMPONENTS[scenario]:
        total = total + comps[n].values
    return LagCurve(1, total)


def kernels_to_json(kernels: Mapping[str, KernelParams]) -> str:
    return json.dumps({k: v.to_json() for k, v in kernels.items()}, sort_keys=True)
