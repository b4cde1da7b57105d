"""Spectral experiments: frame bounds, threshold sweeps, trace arguments, decay fits.

The estimates being probed are two-sided L2-energy equivalences for
exponential (or divided-difference) sums over a bounded interval, viewed
through finite sections: their constants are the extreme eigenvalues of the
truncated Gram matrix, and their failure shows up as the smallest eigenvalue
degenerating as the truncation grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .basisfuncs import DirectionAssignment, DividedDifferenceBasis, eval_divided_difference
from .exponents import ExponentFamily, detect_chains, generate_family
from .gram import (
    DEFAULT_PANEL_ORDER,
    DividedDifferenceSystem,
    ExponentialSystem,
    FourierGrid,
    GramMatrix,
    IntervalSpec,
    NearSingularGramError,
    assemble_gram,
    cross_inner_matrix,
    oscillation_panel_rule,
    projection_defect_norms,
)

__all__ = [
    "FrameBoundReport",
    "TraceExperiment",
    "SweepResult",
    "DefectDecayFit",
    "DensityChainReport",
    "GridPointFailure",
    "extreme_eigenvalues",
    "frame_bound_sequence",
    "threshold_sweep",
    "run_trace_experiment",
    "defect_decay_fit",
    "defect_majorant",
    "dd_threshold_check",
    "conditioning_comparison",
    "density_chain_check",
    "default_trace_geometry",
]

HERMITICITY_RTOL = 1e-10
EIGEN_RESIDUAL_RTOL = 1e-8
# computed eigenvalues at or below this fraction of the spectral norm are
# indistinguishable from zero in double precision
EIGEN_FLOOR_RTOL = 1e-12
STABLE_RATIO = 0.95  # lambda_min retention over the trailing doublings
DEGENERATING_RATIO = 0.80


class GridPointFailure(ArithmeticError):
    """Numerical failure at one point of a sweep, annotated with the point."""


def extreme_eigenvalues(G) -> tuple[float, float]:
    """Extreme eigenvalues of a Hermitian Gram matrix, residual-verified.

    Uses the dense symmetric eigensolver; both extreme eigenpairs are checked
    against the residual contract ||G v - lambda v|| <= 1e-8 ||G||.
    """
    A = G.entries if isinstance(G, GramMatrix) else np.asarray(G, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(A))))
    herm = float(np.max(np.abs(A - A.conj().T)))
    if herm > HERMITICITY_RTOL * scale:
        raise ValueError(f"matrix is not Hermitian within tolerance (residual {herm:.3e})")
    vals, vecs = eigh(A)
    gnorm = max(abs(vals[0]), abs(vals[-1]))
    for pos in (0, -1):
        residual = np.linalg.norm(A @ vecs[:, pos] - vals[pos] * vecs[:, pos])
        if residual > EIGEN_RESIDUAL_RTOL * max(gnorm, 1e-300):
            raise ArithmeticError(
                f"eigenpair residual {residual:.3e} exceeds contract {EIGEN_RESIDUAL_RTOL:.0e}*||G||"
            )
    return float(vals[0]), float(vals[-1])


@dataclass
class FrameBoundReport:
    """Extreme Gram eigenvalues against truncation size, with a stability verdict."""

    sizes: list[int]
    lambda_min: list[float]
    lambda_max: list[float]
    interval_length: float
    verdict: str = "indeterminate"

    def floor(self) -> float:
        return EIGEN_FLOOR_RTOL * max(self.lambda_max)

    def to_rows(self) -> list[dict]:
        return [
            {
                "interval_length": self.interval_length,
                "N": N,
                "lambda_min": lo,
                "lambda_max": hi,
                "verdict": self.verdict,
            }
            for N, lo, hi in zip(self.sizes, self.lambda_min, self.lambda_max)
        ]


def _stability_verdict(sizes, lmins, lmaxs) -> str:
    """Classify the lambda_min trend over the trailing truncation doublings.

    stable: retention >= 95% over the last two doublings (from N/4 to N; from
    N/2 when the grid is too short); degenerating: retention <= 80% or
    lambda_min at the numerical floor; indeterminate otherwise.  For the
    nonincreasing lambda_min sequences interlacing guarantees, the
    two-doubling criterion implies the one-doubling one.
    """
    floor = EIGEN_FLOOR_RTOL * max(lmaxs)
    last = lmins[-1]
    if last <= floor:
        return "degenerating"
    ref_idx = None
    for quarter in (4.0, 2.0):
        for i in range(len(sizes) - 1):
            if sizes[i] <= sizes[-1] / quarter + 1e-9:
                ref_idx = i
        if ref_idx is not None:
            break
    if ref_idx is None:
        return "indeterminate"
    ref = max(lmins[ref_idx], floor)
    ratio = last / ref
    if ratio >= STABLE_RATIO:
        return "stable"
    if ratio <= DEGENERATING_RATIO:
        return "degenerating"
    return "indeterminate"


def _centered_slice(family: ExponentFamily, N: int) -> ExponentFamily:
    n = len(family)
    if 2 * N + 1 > n:
        raise ValueError(f"family window of {n} exponents cannot supply 2N+1 = {2 * N + 1}")
    mid = n // 2
    return family.slice_positions(mid - N, mid + N)


def frame_bound_sequence(
    family: ExponentFamily,
    directions_rule,
    interval: IntervalSpec,
    N_grid,
) -> FrameBoundReport:
    """Extreme Gram eigenvalues of the 2N+1 centered functions for each N.

    ``directions_rule`` maps a subfamily to its DirectionAssignment (for
    example ``lambda fam: DirectionAssignment.constant(fam, 1)``).
    """
    sizes = [int(N) for N in N_grid]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("N_grid must be strictly increasing")
    lmins, lmaxs = [], []
    for N in sizes:
        try:
            sub = _centered_slice(family, N)
            system = ExponentialSystem(sub, directions_rule(sub))
            lo, hi = extreme_eigenvalues(assemble_gram(system, interval))
        except (ValueError, ArithmeticError) as exc:
            raise GridPointFailure(f"at N={N}: {exc}") from exc
        lmins.append(lo)
        lmaxs.append(hi)
    return FrameBoundReport(
        sizes=sizes,
        lambda_min=lmins,
        lambda_max=lmaxs,
        interval_length=interval.length,
        verdict=_stability_verdict(sizes, lmins, lmaxs),
    )


@dataclass
class SweepResult:
    """One experiment value per point of a strictly increasing grid."""

    parameter: str
    grid: list
    results: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        g = list(self.grid)
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("sweep grid must be strictly increasing")

    def to_rows(self) -> list[dict]:
        rows = []
        for value, result in zip(self.grid, self.results):
            if hasattr(result, "to_rows"):
                rows.extend(result.to_rows())
            elif isinstance(result, dict):
                rows.append({self.parameter: value, **{k: v for k, v in result.items() if k != self.parameter}})
            else:
                rows.append({self.parameter: value, "value": result})
        return rows


def _run_grid(jobs, threads: int):
    """Evaluate per-point closures, optionally on a thread pool, in grid order."""
    if threads <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def threshold_sweep(
    family: ExponentFamily,
    directions_rule,
    lengths,
    N_max: int = 128,
    start: float = 0.0,
    threads: int = 1,
) -> SweepResult:
    """Frame-bound reports across interval lengths; brackets the transition.

    Truncations double up to N_max.  The metadata records the transition
    bracket (last degenerating length, first stable length) when the sweep
    crosses one.  Grid points are independent; results are assembled in grid
    order regardless of the worker count.
    """
    lengths = [float(v) for v in lengths]
    N_grid = []
    N = max(4, N_max // 8)
    while N < N_max:
        N_grid.append(N)
        N *= 2
    N_grid.append(N_max)

    def job_for(L):
        def job():
            try:
                return frame_bound_sequence(
                    family, directions_rule, IntervalSpec.of_length(L, start), N_grid
                )
            except GridPointFailure as exc:
                raise GridPointFailure(f"at interval_length={L:.6g}: {exc}") from exc

        return job

    reports = _run_grid([job_for(L) for L in lengths], threads)
    verdicts = [rep.verdict for rep in reports]
    bracket = None
    degens = [i for i, v in enumerate(verdicts) if v == "degenerating"]
    stables = [i for i, v in enumerate(verdicts) if v == "stable"]
    if degens and stables and degens[-1] < stables[0]:
        bracket = (lengths[degens[-1]], lengths[stables[0]])
    return SweepResult(
        parameter="interval_length",
        grid=lengths,
        results=reports,
        metadata={"N_grid": N_grid, "transition_bracket": bracket, "family": family.label},
    )


@dataclass
class TraceExperiment:
    """Composition of the exponential-span and grid-span projections on V_r."""

    y: float
    r: float
    R: float
    d: int
    card_omega_r: int
    card_gamma: int
    trace_S: complex
    trace_decomposed: complex
    defect_norms: np.ndarray
    lemma2_bound: float

    @property
    def lemma2_holds(self) -> bool:
        return abs(self.trace_S) <= self.lemma2_bound + 1e-6

    @property
    def trace_agreement(self) -> float:
        return abs(self.trace_S - self.trace_decomposed)

    def to_row(self) -> dict:
        return {
            "y": self.y,
            "r": self.r,
            "R": self.R,
            "d": self.d,
            "card_omega_r": self.card_omega_r,
            "card_gamma": self.card_gamma,
            "trace_re": self.trace_S.real,
            "trace_im": self.trace_S.imag,
            "abs_trace": abs(self.trace_S),
            "lemma2_bound": self.lemma2_bound,
            "lemma2_pass": self.lemma2_holds,
            "trace_agreement": self.trace_agreement,
            "max_defect": float(np.max(self.defect_norms)),
        }


def default_trace_geometry(family: ExponentFamily, margin: int = 1) -> tuple[float, float]:
    """Window-center y and an r that keeps ``margin`` exponents off each edge."""
    if margin < 1:
        raise ValueError("margin must be at least 1")
    x = family.exponents
    if x.size < 2 * margin + 3:
        raise ValueError("family too small for the requested edge margin")
    y = 0.5 * (x[0] + x[-1])
    r = min(y - x[margin - 1], x[-margin] - y) * (1.0 - 1e-12)
    return float(y), float(r)


def run_trace_experiment(
    family: ExponentFamily,
    directions: DirectionAssignment,
    interval: IntervalSpec,
    y: float,
    r: float,
    R: float,
) -> TraceExperiment:
    """Trace of P_r Q_{r+R} restricted to the exponential span, two ways.

    Route one is the matrix trace of the composition in V_r coordinates;
    route two is the biorthogonal decomposition
    Card + sum of ((Q - Id) e_k, phi_k).  Their agreement and the bound
    |trace| <= d * Card(grid) are the measured quantities.
    """
    if r <= 0 or R <= 0:
        raise ValueError("r and R must be positive")
    x = family.exponents
    inside = np.flatnonzero(np.abs(x - y) < r)
    if inside.size == 0:
        raise ValueError("no exponents inside the window: V_r is empty")
    sub = family.slice_positions(int(inside[0]), int(inside[-1]))
    sdirs = directions.subset(sub.indices)
    grid = FourierGrid.centered(interval, directions.d, y, r + R)
    GV = assemble_gram(ExponentialSystem(sub, sdirs), interval)
    evals = np.linalg.eigvalsh(GV.entries)
    if evals[0] <= 1e-10 * max(abs(evals[0]), abs(evals[-1])):
        raise NearSingularGramError(min_eigenvalue=float(evals[0]), norm=float(abs(evals[-1])))
    X = cross_inner_matrix(sub, sdirs, grid)
    B = (X @ X.conj().T).T  # B[m, k] = (Q e_k, e_m)
    cho = cho_factor(GV.entries, lower=False)
    S = cho_solve(cho, B)
    trace_direct = complex(np.trace(S))
    C = cho_solve(cho, np.eye(GV.n, dtype=complex))
    Y = X.T @ C  # Y[alpha, k] = (phi_k, f_alpha)
    corrections = np.einsum("ka,ak->k", X, Y.conj()) - 1.0
    trace_decomposed = complex(len(sub) + np.sum(corrections))
    return TraceExperiment(
        y=float(y),
        r=float(r),
        R=float(R),
        d=directions.d,
        card_omega_r=len(sub),
        card_gamma=int(grid.n_values.size),
        trace_S=trace_direct,
        trace_decomposed=trace_decomposed,
        defect_norms=projection_defect_norms(sub, sdirs, grid),
        lemma2_bound=float(directions.d * grid.n_values.size),
    )


@dataclass
class DefectDecayFit:
    R_grid: np.ndarray
    max_defects: np.ndarray
    slope: float
    intercept: float
    degenerate_zero_defect: bool = False

    def to_rows(self) -> list[dict]:
        return [
            {"R": float(R), "max_defect": float(v), "defect_squared": float(v**2)}
            for R, v in zip(self.R_grid, self.max_defects)
        ]


def defect_decay_fit(
    family: ExponentFamily,
    directions: DirectionAssignment,
    interval: IntervalSpec,
    y: float,
    r: float,
    R_grid,
) -> DefectDecayFit:
    """Log-log fit of the worst grid-projection defect against R.

    The fitted quantity is max over k in the window of ||(Q_{r+R} - Id) e_k||;
    exactly representable families (defect at rounding level) short-circuit
    to the degenerate-zero-defect flag instead of fitting noise.
    """
    Rs = np.asarray(R_grid, dtype=float)
    if Rs.size < 4:
        raise ValueError("R grid must contain at least 4 points")
    if np.any(np.diff(Rs) <= 0):
        raise ValueError("R grid must be strictly increasing")
    x = family.exponents
    inside = np.flatnonzero(np.abs(x - y) < r)
    if inside.size == 0:
        raise ValueError("no exponents inside the window")
    sub = family.slice_positions(int(inside[0]), int(inside[-1]))
    sdirs = directions.subset(sub.indices)
    maxima = np.empty(Rs.size)
    for i, R in enumerate(Rs):
        try:
            grid = FourierGrid.centered(interval, directions.d, y, r + R)
            maxima[i] = projection_defect_norms(sub, sdirs, grid).max()
        except ValueError as exc:
            raise GridPointFailure(f"at R={R:.6g}: {exc}") from exc
    if np.all(maxima <= 1e-7 * math.sqrt(interval.length)):
        return DefectDecayFit(R_grid=Rs, max_defects=maxima, slope=float("nan"),
                              intercept=float("nan"), degenerate_zero_defect=True)
    slope, intercept = np.polyfit(np.log(Rs), np.log(maxima), 1)
    return DefectDecayFit(R_grid=Rs, max_defects=maxima, slope=float(slope), intercept=float(intercept))


def defect_majorant(d: int, interval: IntervalSpec, R: float, n_terms: int = 10**6) -> float:
    """Explicit series bound for the squared defect: 8 d |I|^-1 sum (2 pi n / |I| + R)^-2.

    Evaluated with ``n_terms`` explicit terms plus the exact integral tail.
    """
    a = 2.0 * math.pi / interval.length
    n = np.arange(n_terms, dtype=float)
    series = float(np.sum(1.0 / (a * n + R) ** 2))
    tail = 1.0 / (a * (a * n_terms + R))
    return 8.0 * d / interval.length * (series + tail)


@dataclass
class ThresholdCheckReport:
    empirical_C: float
    pairs_evaluated: int
    max_by_separation_decade: dict
    gamma_sample: np.ndarray


def dd_threshold_check(
    ddbasis: DividedDifferenceBasis,
    interval: IntervalSpec,
    gamma_sample,
    quad_order: int = DEFAULT_PANEL_ORDER,
) -> ThresholdCheckReport:
    """Empirical constant of the decay bound for divided-difference coefficients.

    Measures max over (k, n) of |integral of f_k(t) exp(-i gamma_n t)| times
    |w_k - gamma_n| and summarizes it by separation decade so any blow-up
    with tightening clusters or growing separation is visible.
    """
    gammas = np.asarray(gamma_sample, dtype=float)
    rate = ddbasis.max_abs_node() + float(np.max(np.abs(gammas)))
    t, w = oscillation_panel_rule(interval, rate, quad_order)
    F = np.stack([eval_divided_difference(desc.nodes, t) for desc in ddbasis.descriptors])
    E = np.exp(-1j * np.outer(t, gammas))
    A = (F * w) @ E
    omegas = np.array([ddbasis.family.value(desc.index) for desc in ddbasis.descriptors])
    sep = np.abs(omegas[:, None] - gammas[None, :])
    prod = np.abs(A) * sep
    by_decade: dict[int, float] = {}
    nonzero = sep > 0
    decades = np.floor(np.log10(sep, where=nonzero, out=np.zeros_like(sep))).astype(int)
    for dec in np.unique(decades[nonzero]):
        sel = nonzero & (decades == dec)
        by_decade[int(dec)] = float(prod[sel].max())
    return ThresholdCheckReport(
        empirical_C=float(prod.max()),
        pairs_evaluated=int(prod.size),
        max_by_separation_decade=by_decade,
        gamma_sample=gammas,
    )


def conditioning_comparison(
    interval: IntervalSpec,
    delta_grid,
    spacing: float = 2.0,
    window=(0.0, 8.0),
    gamma_prime: float = 0.5,
    M: int = 2,
    normalize_dd: bool = True,
    quad_order: int = DEFAULT_PANEL_ORDER,
    threads: int = 1,
) -> SweepResult:
    """Condition numbers of raw-exponential vs divided-difference Grams per delta.

    The raw system on a clustered-pairs family degenerates like delta^-2;
    the divided-difference system stays bounded.  A raw smallest eigenvalue
    at the double-precision floor is reported as "overflow" rather than a
    meaningless quotient.
    """
    deltas = [float(v) for v in delta_grid]

    def job_for(delta):
        def job():
            try:
                fam = generate_family(
                    "clustered-pairs", spacing=spacing, delta=delta, window=list(window)
                )
                dirs = DirectionAssignment.constant(fam, 1)
                lo, hi = extreme_eigenvalues(assemble_gram(ExponentialSystem(fam, dirs), interval))
                if lo <= EIGEN_FLOOR_RTOL * hi:
                    cond_raw = "overflow"
                else:
                    cond_raw = hi / lo
                chains = detect_chains(fam, gamma_prime, M)
                basis = DividedDifferenceBasis.from_chains(fam, chains)
                dd_system = DividedDifferenceSystem(basis, dirs, normalize=normalize_dd)
                lo_dd, hi_dd = extreme_eigenvalues(assemble_gram(dd_system, interval, quad_order))
            except (ValueError, ArithmeticError) as exc:
                raise GridPointFailure(f"at delta={delta:.6g}: {exc}") from exc
            return {
                "delta": delta,
                "cond_raw": cond_raw,
                "cond_dd": hi_dd / lo_dd,
                "raw_lambda_min": lo,
                "raw_lambda_max": hi,
            }

        return job

    rows = _run_grid([job_for(d) for d in deltas], threads)
    return SweepResult(
        parameter="delta",
        grid=deltas,
        results=rows,
        metadata={"spacing": spacing, "window": list(window), "normalized_dd": normalize_dd},
    )


@dataclass
class DensityChainReport:
    rows: list
    all_hold: bool
    d: int
    R: float

    def to_rows(self) -> list[dict]:
        return [dict(row) for row in self.rows]


def density_chain_check(
    family: ExponentFamily,
    d: int,
    interval: IntervalSpec,
    r_grid,
    R: float,
    y: float | None = None,
    directions: DirectionAssignment | None = None,
) -> DensityChainReport:
    """Counting inequality Card(window set) <= (d + eps(R)) Card(grid set).

    eps(R) is instantiated from the measured defects: the correction term of
    the trace decomposition is bounded by sum_k defect_k * ||phi_k||, so
    eps(R) = that bound divided by Card(grid).  Also reports the implied
    lower bound on the interval length per grid radius.
    """
    if directions is None:
        directions = DirectionAssignment.constant(family, d)
    if directions.d != d:
        raise ValueError("directions dimension does not match d")
    if y is None:
        y = 0.5 * (family.exponents[0] + family.exponents[-1])
    from .gram import dual_family

    rows = []
    all_hold = True
    for r in [float(v) for v in r_grid]:
        try:
            exp = run_trace_experiment(family, directions, interval, y, r, R)
            inside = np.flatnonzero(np.abs(family.exponents - y) < r)
            sub = family.slice_positions(int(inside[0]), int(inside[-1]))
            GV = assemble_gram(ExponentialSystem(sub, directions.subset(sub.indices)), interval)
            duals = dual_family(GV)
        except (ValueError, ArithmeticError) as exc:
            raise GridPointFailure(f"at r={r:.6g}: {exc}") from exc
        correction_bound = float(np.sum(exp.defect_norms * duals.norms))
        eps_R = correction_bound / exp.card_gamma
        lhs = exp.card_omega_r
        rhs = (d + eps_R) * exp.card_gamma
        holds = lhs <= rhs + 1e-9
        all_hold = all_hold and holds
        implied_length = (
            math.pi * (exp.card_omega_r / (d + eps_R) - 1.0) / (r + R)
        )
        rows.append(
            {
                "r": r,
                "card_omega_r": exp.card_omega_r,
                "card_gamma": exp.card_gamma,
                "eps_R": eps_R,
                "holds": holds,
                "ratio": lhs / exp.card_gamma,
                "implied_length_lower": implied_length,
            }
        )
    return DensityChainReport(rows=rows, all_hold=all_hold, d=d, R=float(R))
