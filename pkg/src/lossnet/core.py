"""Scenario data model: request classes, service-time laws, scaling.

A single-resource stochastic knapsack is just a network with ``s = 1`` and
one allocation per class, so there is only one data model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


# --------------------------------------------------------------------------
# service-time models
# --------------------------------------------------------------------------


class ServiceModel:
    """Base class for service-time distributions.

    Subclasses provide ``mean``, ``tail`` (1 - G), ``eq_tail`` (tail of the
    stationary-excess law) and inverse-transform sampling.
    """

    kind = "abstract"

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def rate(self) -> float:
        return 1.0 / self.mean

    def cdf(self, t):
        return 1.0 - self.tail(t)

    def tail(self, t):
        raise NotImplementedError

    def eq_tail(self, t):
        raise NotImplementedError

    def residual_tail(self, age, s):
        """P(remaining service > s | already served ``age``)."""
        num = self.tail(np.add(age, s))
        den = self.tail(age)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(ServiceModel):
    mu: float
    kind = "exp"

    def __post_init__(self):
        if not self.mu > 0 or not math.isfinite(self.mu):
            raise ValueError(f"exponential rate must be positive, got {self.mu}")

    @property
    def mean(self) -> float:
        return 1.0 / self.mu

    @property
    def rate(self) -> float:
        return self.mu

    def tail(self, t):
        return np.exp(-self.mu * np.maximum(t, 0.0))

    def eq_tail(self, t):
        return self.tail(t)

    def sample(self, rng, size):
        return -np.log1p(-rng.random(size)) / self.mu

    def to_json(self):
        return {"type": "exp", "rate": self.mu}


@dataclass(frozen=True)
class HyperExponential(ServiceModel):
    probs: tuple[float, ...]
    rates: tuple[float, ...]
    kind = "hyperexp"

    def __post_init__(self):
        p = np.asarray(self.probs, float)
        r = np.asarray(self.rates, float)
        if p.shape != r.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("hyperexponential needs matching probs/rates")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("hyperexponential probs must be a distribution")
        if np.any(r <= 0):
            raise ValueError("hyperexponential rates must be positive")

    @property
    def mean(self) -> float:
        return float(sum(p / r for p, r in zip(self.probs, self.rates)))

    def tail(self, t):
        t = np.maximum(np.asarray(t, float), 0.0)
        return sum(p * np.exp(-r * t) for p, r in zip(self.probs, self.rates))

    def eq_tail(self, t):
        t = np.maximum(np.asarray(t, float), 0.0)
        acc = sum(p / r * np.exp(-r * t) for p, r in zip(self.probs, self.rates))
        return acc / self.mean

    def sample(self, rng, size):
        u_branch = rng.random(size)
        u_exp = rng.random(size)
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        branch = np.searchsorted(cum, u_branch, side="right")
        rates = np.asarray(self.rates)[branch]
        return -np.log1p(-u_exp) / rates

    def to_json(self):
        return {"type": "hyperexp", "probs": list(self.probs), "rates": list(self.rates)}


@dataclass(frozen=True)
class Deterministic(ServiceModel):
    d: float
    kind = "det"

    def __post_init__(self):
        if not self.d > 0 or not math.isfinite(self.d):
            raise ValueError(f"deterministic duration must be positive, got {self.d}")

    @property
    def mean(self) -> float:
        return self.d

    def tail(self, t):
        return np.where(np.asarray(t, float) < self.d, 1.0, 0.0)

    def eq_tail(self, t):
        t = np.maximum(np.asarray(t, float), 0.0)
        return np.maximum(0.0, 1.0 - t / self.d)

    def sample(self, rng, size):
        return np.full(size, self.d)

    def to_json(self):
        return {"type": "det", "d": self.d}


@dataclass(frozen=True)
class HeavyTail(ServiceModel):
    """G(s) = 1 - 1/(1+s)^2 on s >= 0: unit mean, infinite variance."""

    kind = "heavytail"

    @property
    def mean(self) -> float:
        return 1.0

    def tail(self, t):
        t = np.maximum(np.asarray(t, float), 0.0)
        return 1.0 / (1.0 + t) ** 2

    def eq_tail(self, t):
        t = np.maximum(np.asarray(t, float), 0.0)
        return 1.0 / (1.0 + t)

    def sample(self, rng, size):
        return 1.0 / np.sqrt(1.0 - rng.random(size)) - 1.0

    def to_json(self):
        return {"type": "heavytail"}


def service_from_json(obj: dict) -> ServiceModel:
    kind = obj.get("type")
    allowed = {
        "exp": {"type", "rate"},
        "hyperexp": {"type", "probs", "rates"},
        "det": {"type", "d"},
        "heavytail": {"type"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown service type {kind!r}")
    extra = set(obj) - allowed[kind]
    if extra:
        raise ValueError(f"unknown keys in {kind} service: {sorted(extra)}")
    if kind == "exp":
        return Exponential(float(obj["rate"]))
    if kind == "hyperexp":
        return HyperExponential(tuple(map(float, obj["probs"])), tuple(map(float, obj["rates"])))
    if kind == "det":
        return Deterministic(float(obj["d"]))
    return HeavyTail()


# --------------------------------------------------------------------------
# scenario
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RequestClass:
    arrival_rate: float
    service: ServiceModel
    reward: float
    allocations: tuple[tuple[float, ...], ...]

    @property
    def mean_service(self) -> float:
        return self.service.mean

    @property
    def mu(self) -> float:
        return self.service.rate

    @property
    def load(self) -> float:
        return self.arrival_rate * self.service.mean


@dataclass(frozen=True)
class Scenario:
    classes: tuple[RequestClass, ...]
    capacity: tuple[float, ...]
    name: str = field(default="", compare=False)

    @property
    def m(self) -> int:
        return len(self.classes)

    @property
    def s(self) -> int:
        return len(self.capacity)

    @property
    def lam(self) -> np.ndarray:
        return np.array([c.arrival_rate for c in self.classes])

    @property
    def mu(self) -> np.ndarray:
        return np.array([c.mu for c in self.classes])

    @property
    def rho(self) -> np.ndarray:
        return offered_loads(self)

    @property
    def reward(self) -> np.ndarray:
        return np.array([c.reward for c in self.classes])

    @property
    def cap(self) -> np.ndarray:
        return np.array(self.capacity, dtype=float)

    @property
    def max_alloc(self) -> int:
        return max(len(c.allocations) for c in self.classes)

    @property
    def single_resource(self) -> bool:
        return self.s == 1 and all(len(c.allocations) == 1 for c in self.classes)

    def sizes(self) -> np.ndarray:
        """Request sizes b_i for single-resource scenarios."""
        if not self.single_resource:
            raise ValueError("sizes() only defined for single-resource scenarios")
        return np.array([c.allocations[0][0] for c in self.classes])

    def alloc_array(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded allocation tensor (m, L, s) and per-class allocation counts."""
        L = self.max_alloc
        out = np.zeros((self.m, L, self.s))
        n = np.zeros(self.m, dtype=np.int64)
        for i, c in enumerate(self.classes):
            n[i] = len(c.allocations)
            for j, a in enumerate(c.allocations):
                out[i, j, :] = a
        return out, n

    def to_json(self) -> dict:
        return {
            "capacity": list(self.capacity),
            "classes": [
                {
                    "lambda": c.arrival_rate,
                    "service": c.service.to_json(),
                    "reward": c.reward,
                    "allocations": [list(a) for a in c.allocations],
                }
                for c in self.classes
            ],
        }


def knapsack(lam, mu, reward, sizes, capacity, name="") -> Scenario:
    """Build a single-resource scenario with exponential service."""
    classes = tuple(
        RequestClass(float(l), Exponential(float(u)), float(r), ((float(b),),))
        for l, u, r, b in zip(lam, mu, reward, sizes)
    )
    return Scenario(classes, (float(capacity),), name)


def scenario_from_json(obj: dict, name: str = "") -> Scenario:
    extra = set(obj) - {"capacity", "classes"}
    if extra:
        raise ValueError(f"unknown scenario keys: {sorted(extra)}")
    classes = []
    for k, c in enumerate(obj["classes"]):
        extra = set(c) - {"lambda", "service", "reward", "allocations"}
        if extra:
            raise ValueError(f"class {k}: unknown keys {sorted(extra)}")
        allocs = tuple(tuple(float(v) for v in a) for a in c["allocations"])
        classes.append(
            RequestClass(float(c["lambda"]), service_from_json(c["service"]), float(c["reward"]), allocs)
        )
    return Scenario(tuple(classes), tuple(float(v) for v in obj["capacity"]), name)


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return scenario_from_json(json.load(fh), name=path)


def validate_scenario(sc: Scenario) -> list[str]:
    """Return every violated invariant; an empty list means valid."""
    out = []
    if sc.s < 1:
        out.append("no resources (s must be >= 1)")
    if sc.m < 1:
        out.append("no request classes (m must be >= 1)")
    cap = np.asarray(sc.capacity, float)
    for k, v in enumerate(cap):
        if not v >= 0:
            out.append(f"resource {k}: capacity negative")
    for i, c in enumerate(sc.classes):
        if not c.arrival_rate > 0 or not math.isfinite(c.arrival_rate):
            out.append(f"class {i}: arrival rate nonpositive")
        mean = c.service.mean
        if not (mean > 0 and math.isfinite(mean)):
            out.append(f"class {i}: mean service time not finite and positive")
        if c.reward < 0:
            out.append(f"class {i}: reward negative")
        if not c.allocations:
            out.append(f"class {i}: empty allocation set")
        fits = False
        for j, a in enumerate(c.allocations):
            a = np.asarray(a, float)
            if a.shape != (sc.s,):
                out.append(f"class {i} allocation {j}: dimension {a.size} != {sc.s}")
                continue
            if np.any(a < 0):
                out.append(f"class {i} allocation {j}: negative component")
            if not np.any(a > 0):
                out.append(f"class {i} allocation {j}: no positive component")
            if np.all(a <= cap):
                fits = True
        if c.allocations and not fits:
            out.append(f"class {i}: no fitting allocation")
    return out


def offered_loads(sc: Scenario) -> np.ndarray:
    return np.array([c.arrival_rate * c.service.mean for c in sc.classes])


def scale_scenario(sc: Scenario, n: float, rescale_reward: bool = True) -> Scenario:
    """Halfin-Whitt scaling: arrivals x n, request sizes / n, capacity fixed."""
    if not n > 0:
        raise ValueError(f"scale must be positive, got {n}")
    classes = tuple(
        replace(
            c,
            arrival_rate=c.arrival_rate * n,
            reward=c.reward / n if rescale_reward else c.reward,
            allocations=tuple(tuple(v / n for v in a) for a in c.allocations),
        )
        for c in sc.classes
    )
    return Scenario(classes, sc.capacity, sc.name)


def load_balancing_alphas(sc: Scenario, fractions: Sequence[float]) -> np.ndarray:
    """Acceptance fractions giving steady class-i load ``f_i * b``."""
    if not sc.single_resource:
        raise ValueError("load balancing targets need a single-resource scenario")
    f = np.asarray(fractions, float)
    if f.shape != (sc.m,):
        raise ValueError("one target fraction per class required")
    if np.any(f < 0) or f.sum() > 1 + 1e-12:
        raise ValueError("target fractions must be nonnegative and sum to <= 1")
    alpha = sc.cap[0] * f / (sc.sizes() * sc.rho)
    bad = np.nonzero(alpha > 1 + 1e-12)[0]
    if bad.size:
        raise ValueError(f"infeasible target fraction for class {int(bad[0])}: alpha={alpha[bad[0]]:.6g} > 1")
    return np.minimum(alpha, 1.0)


# --------------------------------------------------------------------------
# built-in scenarios
# --------------------------------------------------------------------------


def _builtins() -> dict[str, tuple[Scenario, str]]:
    return {
        "eq52": (
            knapsack([40, 80, 60], [0.5, 2.0, 0.3], [1.00, 0.25, 0.75], [0.10, 0.15, 0.55], 100, "eq52"),
            "three-class knapsack used for the analytic bound table",
        ),
        "s1": (
            knapsack([4, 8, 6], [0.5, 2, 0.3], [1, 0.25, 0.75], [0.1, 0.015, 0.055], 1, "s1"),
            "reward maximization scenario 1",
        ),
        "s2": (
            knapsack([4, 8, 6], [1, 2, 0.3], [1, 0.25, 0.75], [0.01, 0.015, 0.055], 1, "s2"),
            "reward maximization scenario 2",
        ),
        "s3": (
            knapsack(
                [4, 8, 6, 4], [0.5, 2, 0.3, 0.2], [1, 0.25, 0.75, 0.67], [0.02, 0.015, 0.055, 0.045], 1, "s3"
            ),
            "reward maximization scenario 3",
        ),
        "s4": (
            knapsack([1000, 1000], [10, 10], [1, 1], [1, 1], 100, "s4"),
            "load balancing, equal service rates, target alpha=(0.1, 0.9)",
        ),
        "s5": (
            knapsack([100, 100], [0.1, 1], [1, 1], [1, 1], 190, "s5"),
            "load balancing, mu2 = 10 mu1, target alpha=(0.1, 0.9)",
        ),
    }


BUILTIN_NAMES = ("eq52", "s1", "s2", "s3", "s4", "s5")

# load-balancing target fractions f (class load f_i * b)
LOAD_TARGETS = {
    "s4": (0.1, 0.9),
    "s5": (100 / 190, 90 / 190),
}


def builtin(name: str) -> Scenario:
    table = _builtins()
    if name not in table:
        raise KeyError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    return table[name][0]


def builtin_description(name: str) -> str:
    return _builtins()[name][1]
