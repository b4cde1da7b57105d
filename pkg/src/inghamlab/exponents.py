"""Exponent families on a finite index window.

Construction and measurement of real exponent sequences: strict and
M-step (weakened) gap conditions, decomposition into close-exponent
chains, the sliding-window counting function, upper-density estimation
by slope fitting, and periodic sharpness partitions into direction
classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "ExponentFamily",
    "GapReport",
    "Chain",
    "ChainDecomposition",
    "DensityEstimate",
    "Partition",
    "validate_gaps",
    "detect_chains",
    "counting_function",
    "estimate_density",
    "build_sharpness_partition",
    "generate_family",
    "family_to_record",
    "family_from_record",
    "generate_from_record",
]


@dataclass
class ExponentFamily:
    """A finite, sorted window of real exponents indexed by consecutive integers."""

    exponents: np.ndarray
    label: str = ""
    first_index: int = 0

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.exponents, dtype=float))
        if x.ndim != 1 or x.size == 0:
            raise ValueError("exponent window must be a nonempty 1-D sequence")
        if np.any(np.diff(x) < 0):
            raise ValueError("exponents must be nondecreasing")
        x = x.copy()
        x.setflags(write=False)
        self.exponents = x

    def __len__(self) -> int:
        return self.exponents.size

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.first_index, self.first_index + len(self))

    @property
    def span(self) -> float:
        return float(self.exponents[-1] - self.exponents[0])

    def position(self, index: int) -> int:
        """Array position of an index label."""
        pos = index - self.first_index
        if not 0 <= pos < len(self):
            raise IndexError(f"index {index} outside window {self.first_index}..{self.first_index + len(self) - 1}")
        return pos

    def value(self, index: int) -> float:
        return float(self.exponents[self.position(index)])

    def slice_positions(self, lo: int, hi: int) -> "ExponentFamily":
        """Subfamily over array positions lo..hi (inclusive), index labels preserved."""
        if not (0 <= lo <= hi < len(self)):
            raise IndexError("slice outside window")
        return ExponentFamily(
            np.array(self.exponents[lo : hi + 1]),
            label=self.label,
            first_index=self.first_index + lo,
        )

    def subfamily(self, indices) -> "ExponentFamily":
        """Subfamily over arbitrary index labels (loses index contiguity with the parent)."""
        idx = sorted(int(i) for i in indices)
        if not idx:
            raise ValueError("empty subfamily")
        vals = [self.value(i) for i in idx]
        return ExponentFamily(np.array(vals), label=self.label)


@dataclass
class GapReport:
    """Result of gap validation over a finite window.

    ``gamma`` is the exact infimum of consecutive differences (``inf`` for a
    single-exponent window); ``gamma_prime`` is the best M-step constant
    min_k (w_{k+M} - w_k)/M, or ``None`` when the window is shorter than
    M+1 elements (``weak_gap_insufficient_data`` is then set).
    """

    gamma: float
    satisfies_strict_gap: bool
    gamma_prime: float | None
    M: int
    satisfies_weak_gap: bool | None
    degenerate: bool = False
    weak_gap_insufficient_data: bool = False

    def weak_gap_holds_at(self, threshold: float) -> bool:
        """Whether w_{k+M} - w_k >= M*threshold for all in-window k."""
        if self.gamma_prime is None:
            raise ValueError("insufficient data for weak gap check")
        return self.gamma_prime >= threshold


def validate_gaps(family: ExponentFamily, M: int) -> GapReport:
    """Exact strict-gap and M-step gap infima over the finite window."""
    if M < 1:
        raise ValueError("M must be a positive integer")
    x = family.exponents
    n = x.size
    if n == 1:
        # no pairs: strict gap vacuously true under the gamma = +inf convention
        return GapReport(
            gamma=math.inf,
            satisfies_strict_gap=True,
            gamma_prime=None,
            M=M,
            satisfies_weak_gap=None,
            degenerate=True,
            weak_gap_insufficient_data=True,
        )
    gamma = float(np.min(np.diff(x)))
    if n < M + 1:
        return GapReport(
            gamma=gamma,
            satisfies_strict_gap=gamma > 0.0,
            gamma_prime=None,
            M=M,
            satisfies_weak_gap=None,
            weak_gap_insufficient_data=True,
        )
    gamma_prime = float(np.min(x[M:] - x[:-M]) / M)
    return GapReport(
        gamma=gamma,
        satisfies_strict_gap=gamma > 0.0,
        gamma_prime=gamma_prime,
        M=M,
        satisfies_weak_gap=gamma_prime > 0.0,
    )


@dataclass
class Chain:
    """Index range [start, stop] (inclusive) of one close-exponent chain."""

    start: int
    stop: int
    boundary_incomplete: bool = False

    @property
    def length(self) -> int:
        return self.stop - self.start + 1


@dataclass
class ChainDecomposition:
    chains: list[Chain]
    gamma_prime: float
    M: int

    def chain_of(self, index: int) -> Chain:
        for c in self.chains:
            if c.start <= index <= c.stop:
                return c
        raise IndexError(f"index {index} not covered by any chain")

    def covered_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(c.start, c.stop + 1) for c in self.chains])


def detect_chains(family: ExponentFamily, gamma_prime: float, M: int) -> ChainDecomposition:
    """Unique maximal decomposition into chains with consecutive gaps < gamma_prime.

    Splits exactly at consecutive differences >= gamma_prime.  The missing
    neighbor condition at the two window edges is treated as satisfied and
    the edge chains are flagged boundary-incomplete.
    """
    if gamma_prime <= 0:
        raise ValueError("gamma_prime must be positive")
    if M < 1:
        raise ValueError("M must be a positive integer")
    x = family.exponents
    idx = family.indices
    breaks = np.flatnonzero(np.diff(x) >= gamma_prime)  # break after position b
    starts = np.concatenate(([0], breaks + 1))
    stops = np.concatenate((breaks, [x.size - 1]))
    chains = []
    for s, e in zip(starts, stops):
        length = e - s + 1
        if length > M:
            raise ValueError(
                f"weak gap violated: chain of length {length} > M={M} "
                f"at indices {idx[s]}..{idx[e]}"
            )
        chains.append(Chain(start=int(idx[s]), stop=int(idx[e])))
    chains[0].boundary_incomplete = True
    chains[-1].boundary_incomplete = True
    return ChainDecomposition(chains=chains, gamma_prime=float(gamma_prime), M=M)


def counting_function(family: ExponentFamily, r: float) -> int:
    """Largest number of exponents in any closed window of length r.

    The supremum over window positions is attained with the left endpoint at
    an exponent, so the computation is exact over the finite window.
    """
    if r <= 0:
        raise ValueError("window length r must be positive")
    x = family.exponents
    counts = np.searchsorted(x, x + r, side="right") - np.arange(x.size)
    return int(counts.max())


@dataclass
class DensityEstimate:
    radii: np.ndarray
    counts: np.ndarray
    dplus_estimate: float
    fit_window: tuple[int, int]  # half-open position range of radii used in the fit
    residual: float
    intercept: float = 0.0


def estimate_density(family: ExponentFamily, r_grid) -> DensityEstimate:
    """Upper-density estimate: least-squares slope of the counting function.

    Fits count(r) ~ slope*r + b over the upper half of the radius grid; the
    intercept absorbs the O(1) boundary bias of the finite window.
    """
    r = np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("r_grid must be a nonempty 1-D sequence")
    if np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    if r[0] <= 0:
        raise ValueError("r_grid values must be positive")
    if family.span > 0 and r[-1] > family.span:
        raise ValueError("r_grid values must not exceed the family's window span")
    counts = np.array([counting_function(family, ri) for ri in r], dtype=float)
    lo = r.size // 2
    if r.size - lo < 3:
        raise ValueError("fewer than 3 grid points in fit window")
    slope, intercept = np.polyfit(r[lo:], counts[lo:], 1)
    resid = counts[lo:] - (slope * r[lo:] + intercept)
    return DensityEstimate(
        radii=r,
        counts=counts.astype(int),
        dplus_estimate=float(slope),
        fit_window=(lo, r.size),
        residual=float(np.sqrt(np.mean(resid**2))),
        intercept=float(intercept),
    )


@dataclass
class Partition:
    """Assignment of every in-window index to one of d direction classes."""

    class_of: dict[int, int]
    d: int
    target_alpha: float
    period_exponent_count: int
    family: ExponentFamily

    def class_indices(self, j: int) -> list[int]:
        if not 1 <= j <= self.d:
            raise ValueError(f"class label must be in 1..{self.d}")
        return [k for k, c in self.class_of.items() if c == j]

    def class_sizes(self) -> list[int]:
        return [len(self.class_indices(j)) for j in range(1, self.d + 1)]

    def class_family(self, j: int) -> ExponentFamily | None:
        """Subfamily of class j, or None when the class is empty."""
        idx = self.class_indices(j)
        if not idx:
            return None
        return self.family.subfamily(idx)


def _difference_pattern_period(diffs: np.ndarray) -> int | None:
    """Smallest p with diffs[i + p] == diffs[i] for all i, needing >= 2 repeats."""
    m = diffs.size
    scale = max(1.0, float(np.max(np.abs(diffs))))
    for p in range(1, m // 2 + 1):
        if np.all(np.abs(diffs[p:] - diffs[:-p]) <= 1e-9 * scale):
            return p
    return None


def build_sharpness_partition(
    family: ExponentFamily, d: int, alpha: float, period_count: int | None = None
) -> Partition:
    """Periodic block partition whose largest class density equals alpha.

    Per period of ``m`` exponents, a run of round(alpha/D * m) consecutive
    exponents goes to class 1 and the remainder is distributed round-robin
    over classes 2..d (restarting each period, so every class is periodic).
    Only defined for families whose consecutive-difference pattern is
    periodic; D is the family's exact density, period count / period length.
    """
    if d < 1:
        raise ValueError("d must be a positive integer")
    x = family.exponents
    if x.size < 4:
        raise ValueError("construction requires periodic family (window too short)")
    diffs = np.diff(x)
    p = _difference_pattern_period(diffs)
    if p is None:
        raise ValueError("construction requires periodic family")
    period_length = float(np.sum(diffs[:p]))
    if period_length <= 0:
        raise ValueError("construction requires periodic family with positive period")
    dplus = p / period_length
    tol = 1e-9 * max(1.0, dplus)
    if not (dplus / d - tol <= alpha <= dplus + tol):
        raise ValueError(
            f"alpha={alpha} outside [D+/d, D+] = [{dplus / d:.6g}, {dplus:.6g}]"
        )
    beta = min(max(alpha / dplus, 1.0 / d), 1.0)  # class-1 share of each period
    if period_count is None:
        denom = Fraction(beta).limit_denominator(64).denominator
        m = math.lcm(p, denom)
    else:
        m = int(period_count)
        if m < p or m % p != 0:
            raise ValueError(f"period_count must be a positive multiple of the pattern period {p}")
    run = round(beta * m)
    run = min(max(run, math.ceil(m / d)), m)  # keep classes 2..d no denser than class 1
    class_of: dict[int, int] = {}
    for pos, index in enumerate(family.indices):
        offset = pos % m
        if offset < run or d == 1:
            class_of[int(index)] = 1
        else:
            class_of[int(index)] = 2 + (offset - run) % (d - 1)
    return Partition(
        class_of=class_of,
        d=d,
        target_alpha=float(alpha),
        period_exponent_count=m,
        family=family,
    )


def _lattice_values(spacing: float, window) -> np.ndarray:
    lo, hi = float(window[0]), float(window[1])
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if hi < lo:
        raise ValueError("window must satisfy lo <= hi")
    count = int(math.floor((hi - lo) / spacing + 1e-9)) + 1
    return lo + spacing * np.arange(count)


def generate_family(kind: str, **params) -> ExponentFamily:
    """Deterministic family generators: lattice, perturbed-lattice, clustered-pairs, explicit."""
    if kind == "lattice":
        spacing = float(params.pop("spacing", 1.0))
        window = params.pop("window")
        _reject_extra(kind, params)
        vals = _lattice_values(spacing, window)
        return ExponentFamily(vals, label=f"lattice(spacing={spacing}, window={list(window)})")
    if kind == "perturbed-lattice":
        spacing = float(params.pop("spacing", 1.0))
        window = params.pop("window")
        maxpert = float(params.pop("max_perturbation"))
        seed = int(params.pop("seed", 0))
        _reject_extra(kind, params)
        if maxpert < 0:
            raise ValueError("max_perturbation must be nonnegative")
        base = _lattice_values(spacing, window)
        rng = np.random.default_rng(seed)
        vals = np.sort(base + rng.uniform(-maxpert, maxpert, size=base.size))
        return ExponentFamily(
            vals,
            label=f"perturbed-lattice(spacing={spacing}, maxpert={maxpert}, seed={seed})",
        )
    if kind == "clustered-pairs":
        spacing = float(params.pop("spacing", 1.0))
        window = params.pop("window")
        delta = float(params.pop("delta"))
        _reject_extra(kind, params)
        if not 0 < delta < spacing:
            raise ValueError("cluster offset delta must satisfy 0 < delta < spacing")
        base = _lattice_values(spacing, window)
        vals = np.sort(np.concatenate([base, base + delta]))
        return ExponentFamily(
            vals, label=f"clustered-pairs(spacing={spacing}, delta={delta})"
        )
    if kind == "explicit":
        exps = params.pop("exponents")
        label = str(params.pop("label", "explicit"))
        _reject_extra(kind, params)
        return ExponentFamily(np.sort(np.asarray(exps, dtype=float)), label=label)
    raise ValueError(f"unknown family kind {kind!r}")


def _reject_extra(kind: str, params: dict) -> None:
    if params:
        raise ValueError(f"unexpected parameters for kind {kind!r}: {sorted(params)}")


def family_to_record(family: ExponentFamily) -> dict:
    return {
        "label": family.label,
        "first_index": family.first_index,
        "exponents": [float(v) for v in family.exponents],
    }


def family_from_record(record: dict) -> ExponentFamily:
    return ExponentFamily(
        np.asarray(record["exponents"], dtype=float),
        label=str(record.get("label", "")),
        first_index=int(record.get("first_index", 0)),
    )


def generate_from_record(record: dict) -> ExponentFamily:
    """Build a family from a generator description {kind, params, seed}."""
    kind = record["kind"]
    params = dict(record.get("params", {}))
    if "seed" in record and kind == "perturbed-lattice":
        params.setdefault("seed", record["seed"])
    return generate_family(kind, **params)


def family_to_json(family: ExponentFamily) -> str:
    return json.dumps(family_to_record(family), sort_keys=True)


def family_from_json(text: str) -> ExponentFamily:
    return family_from_record(json.loads(text))
