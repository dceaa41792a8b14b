"""
Foliation Module
Discrete family of time slices: monotone labels, physical times and the
quadrature weights that stand in for the four-volume integrals.

Propagation never reads `params`; only `times` and `weights` enter numerics.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..utils.exceptions import GridError

QUADRATURE_RULES = ("trapezoid", "midpoint")


def _strictly_increasing(values: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(values))) and bool(np.all(np.diff(values) > 0))


def _rule_weights(times: np.ndarray, rule: str) -> np.ndarray:
    steps = np.diff(times)
    if rule == "midpoint":
        return steps.copy()
    weights = np.zeros(len(times))
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps
    return weights


@dataclass(frozen=True, eq=False)
class Foliation:
    """Slices s_0 < ... < s_n with times t(s_k) and quadrature weights"""
    params: np.ndarray
    times: np.ndarray
    weights: np.ndarray
    quadrature: str = "trapezoid"

    def __post_init__(self):
        params = np.array(self.params, dtype=float)
        times = np.array(self.times, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if self.quadrature not in QUADRATURE_RULES:
            raise GridError(f"unknown quadrature '{self.quadrature}', expected one of {QUADRATURE_RULES}")
        if times.ndim != 1 or len(times) < 2:
            raise GridError("a foliation needs at least one interval")
        if params.shape != times.shape:
            raise GridError(f"{len(params)} labels for {len(times)} slices")
        if not _strictly_increasing(params):
            raise GridError("slice labels must be strictly increasing")
        if not _strictly_increasing(times):
            raise GridError("slice times must be strictly increasing")
        expected = len(times) if self.quadrature == "trapezoid" else len(times) - 1
        if weights.shape != (expected,) or np.any(weights < 0):
            raise GridError(f"{self.quadrature} weights must be {expected} non-negative numbers")
        if not np.allclose(weights, _rule_weights(times, self.quadrature), rtol=1e-13, atol=1e-15):
            raise GridError("weights are inconsistent with the time grid")
        for name, value in (("params", params), ("times", times), ("weights", weights)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_times(cls, times, params=None, quadrature: str = "trapezoid") -> "Foliation":
        times = np.asarray(times, dtype=float)
        if quadrature not in QUADRATURE_RULES:
            raise GridError(f"unknown quadrature '{quadrature}', expected one of {QUADRATURE_RULES}")
        if times.ndim != 1 or len(times) < 2:
            raise GridError("a foliation needs at least one interval")
        if not _strictly_increasing(times):
            raise GridError("slice times must be strictly increasing")
        params = times.copy() if params is None else np.asarray(params, dtype=float)
        return cls(params, times, _rule_weights(times, quadrature), quadrature)

    @property
    def n(self) -> int:
        """Number of intervals"""
        return len(self.times) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.times[:-1] + self.times[1:])

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])

    def check_index(self, k: int, name: str = "slice index") -> int:
        if not 0 <= k <= self.n:
            raise GridError(f"{name} {k} outside 0..{self.n}")
        return int(k)

    def nodes(self, rule: Optional[str] = None) -> np.ndarray:
        """Quadrature abscissas of the whole grid under `rule`"""
        rule = rule or self.quadrature
        return self.times.copy() if rule == "trapezoid" else self.midpoints

    def prefix_weight_matrix(self, rule: Optional[str] = None) -> np.ndarray:
        """
        Row k holds the weights of the integral over [t_0, t_k] on nodes(rule).
        Rows are nested: a trapezoid interval contributes half its width to
        both end slices, a midpoint interval its full width to its midpoint.
        """
        rule = rule or self.quadrature
        steps = self.steps
        if rule == "trapezoid":
            table = np.zeros((self.n + 1, self.n + 1))
            for k in range(1, self.n + 1):
                table[k] = table[k - 1]
                table[k, k - 1] += 0.5 * steps[k - 1]
                table[k, k] += 0.5 * steps[k - 1]
            return table
        if rule == "midpoint":
            return np.tril(np.tile(steps, (self.n + 1, 1)), k=-1)
        raise GridError(f"unknown quadrature '{rule}'")

    def same_slicing(self, other: "Foliation") -> bool:
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.weights, other.weights)
                and self.quadrature == other.quadrature)


def flat_foliation(t0: float, t1: float, n: int, quadrature: str = "trapezoid") -> Foliation:
    """Uniform hyperplane slicing t = const, labels equal to times"""
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise GridError(f"need n >= 1 intervals, got {n!r}")
    if not t1 > t0:
        raise GridError(f"need t1 > t0, got t0={t0}, t1={t1}")
    times = np.linspace(float(t0), float(t1), int(n) + 1)
    return Foliation.from_times(times, quadrature=quadrature)


def graded_foliation(t0: float, t1: float, n: int, warp: Callable[[np.ndarray], np.ndarray],
                     quadrature: str = "trapezoid") -> Foliation:
    """
    Non-uniform slicing t_k = t0 + (t1 - t0) * warp(k / n); warp must map
    [0, 1] monotonically onto [0, 1]. Labels stay uniform in k.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise GridError(f"need n >= 1 intervals, got {n!r}")
    if not t1 > t0:
        raise GridError(f"need t1 > t0, got t0={t0}, t1={t1}")
    u = np.linspace(0.0, 1.0, int(n) + 1)
    warped = np.asarray(warp(u), dtype=float)
    if abs(warped[0]) > 1e-12 or abs(warped[-1] - 1.0) > 1e-12:
        raise GridError("warp must fix both end points of [0, 1]")
    times = t0 + (t1 - t0) * warped
    times[0], times[-1] = t0, t1
    params = t0 + (t1 - t0) * u
    return Foliation.from_times(times, params=params, quadrature=quadrature)


def reparametrize(f: Foliation, mapping: Callable[[np.ndarray], np.ndarray]) -> Foliation:
    """Relabel the slices; times and weights are untouched"""
    params = np.asarray(mapping(np.array(f.params)), dtype=float)
    if params.shape != f.params.shape:
        raise GridError("relabeling must return one label per slice")
    if not _strictly_increasing(params):
        raise GridError("relabeling map is not strictly increasing on the slice labels")
    return Foliation(params, f.times, f.weights, f.quadrature)


RELABELINGS = {
    "identity": lambda s: s,
    "cubic": lambda s: s ** 3 + s,
    "exponential": lambda s: np.expm1(s),
}
