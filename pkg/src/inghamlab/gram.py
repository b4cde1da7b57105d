"""Inner products over a bounded interval and Gram machinery.

All system functions handled here are of the form (scalar profile) x (fixed
unit vector): plain exponentials, divided differences of exponentials, and
the orthonormal Fourier-grid functions.  Exponential inner products use a
cancellation-free closed form; divided-difference inner products use
composite Gauss-Legendre panels sized against the fastest oscillation.

Gram entries follow the quadratic-form convention
``entries[j, k] = (f_k, f_j)`` (second argument conjugated), so
``coef.conj() @ G @ coef`` is the squared L2(I, H) norm of ``sum_k coef_k f_k``
and the dual (biorthogonal) coefficients are exactly the inverse Gram.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh

from .basisfuncs import DirectionAssignment, DividedDifferenceBasis, eval_divided_difference
from .exponents import ExponentFamily

__all__ = [
    "IntervalSpec",
    "FourierGrid",
    "GramMatrix",
    "BiorthogonalFamily",
    "NearSingularGramError",
    "ExponentialSystem",
    "DividedDifferenceSystem",
    "exp_inner_closed_form",
    "vector_inner",
    "dd_inner_quadrature",
    "assemble_gram",
    "fourier_gram",
    "cross_inner_matrix",
    "projection_defect_norms",
    "energy_quadratic_form",
    "dual_family",
    "project_coefficients",
    "oscillation_panel_rule",
    "gram_to_record",
    "gram_from_record",
]

SMALL_PHASE = 1e-8  # |theta| * |I| at or below this switches to the Taylor form
NEAR_SINGULAR_RTOL = 1e-10
PANEL_PHASE_SPAN = math.pi / 4  # max radians of the fastest phase per quadrature panel
DEFAULT_PANEL_ORDER = 16


@dataclass(frozen=True)
class IntervalSpec:
    """The bounded observation interval (a, b)."""

    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"interval must satisfy b > a, got ({self.a}, {self.b})")

    @property
    def length(self) -> float:
        return self.b - self.a

    @classmethod
    def of_length(cls, length: float, start: float = 0.0) -> "IntervalSpec":
        return cls(start, start + length)


class NearSingularGramError(ValueError):
    """Raised when a Gram matrix is too close to singular to invert reliably."""

    def __init__(self, min_eigenvalue: float, norm: float):
        self.min_eigenvalue = min_eigenvalue
        self.norm = norm
        super().__init__(
            f"near-singular Gram: min eigenvalue {min_eigenvalue:.3e} "
            f"(threshold {NEAR_SINGULAR_RTOL:.0e} * norm {norm:.3e})"
        )


def exp_inner_closed_form(theta, interval: IntervalSpec):
    """Integral of exp(i*theta*t) over the interval, cancellation-free.

    Uses exp(i*theta*a) * (sin(x) + 2i*sin(x/2)^2) / theta with x = theta*|I|,
    which is exact to machine precision for all phase sizes; below the
    SMALL_PHASE switch the first-order Taylor form |I|*(1 + i*theta*(a+b)/2)
    takes over to avoid the 0/0 lane.
    """
    th = np.asarray(theta, dtype=float)
    L = interval.length
    x = th * L
    small = np.abs(x) <= SMALL_PHASE
    th_safe = np.where(small, 1.0, th)
    general = np.exp(1j * th * interval.a) * (np.sin(x) + 2j * np.sin(0.5 * x) ** 2) / th_safe
    taylor = L * (1.0 + 0.5j * th * (interval.a + interval.b))
    out = np.where(small, taylor, general)
    return complex(out) if np.isscalar(theta) else out


def vector_inner(
    k: int,
    n: int,
    family: ExponentFamily,
    directions: DirectionAssignment,
    interval: IntervalSpec,
) -> complex:
    """(e_k, e_n) = (U_k, U_n)_H * integral of exp(i*(w_k - w_n)*t) over I."""
    wk = family.value(k)
    wn = family.value(n)
    Uk = directions.direction(k)
    Un = directions.direction(n)
    return complex(np.vdot(Un, Uk) * exp_inner_closed_form(wk - wn, interval))


@dataclass
class FourierGrid:
    """Frequencies 2*pi*n/|I| tensored with the coordinate directions E_1..E_d.

    The functions |I|^(-1/2) E_j exp(i*gamma_n*t) are an orthonormal family
    in L2(I, C^d); a full integer range of n is an orthonormal basis.
    """

    interval: IntervalSpec
    d: int
    n_values: np.ndarray

    def __post_init__(self):
        self.n_values = np.asarray(self.n_values, dtype=int)
        if self.n_values.size == 0:
            raise ValueError("Fourier grid must contain at least one frequency")
        if self.d < 1:
            raise ValueError("direction dimension d must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        return 2.0 * math.pi * self.n_values / self.interval.length

    @property
    def size(self) -> int:
        """Number of functions (frequencies times directions)."""
        return self.n_values.size * self.d

    @classmethod
    def centered(cls, interval: IntervalSpec, d: int, y: float, radius: float) -> "FourierGrid":
        """All n with |gamma_n - y| < radius, strict inequality (ties excluded)."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        L = interval.length
        lo = (y - radius) * L / (2.0 * math.pi)
        hi = (y + radius) * L / (2.0 * math.pi)
        candidates = np.arange(math.floor(lo) - 1, math.ceil(hi) + 2)
        gamma = 2.0 * math.pi * candidates / L
        keep = np.abs(gamma - y) < radius
        if not np.any(keep):
            raise ValueError("no grid frequencies inside the window")
        return cls(interval=interval, d=d, n_values=candidates[keep])


@dataclass
class GramMatrix:
    """Hermitian matrix of pairwise inner products of system functions."""

    entries: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        G = np.asarray(self.entries, dtype=complex)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("Gram entries must form a square matrix")
        self.entries = G

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def spectral_norm_bound(self) -> float:
        return float(np.linalg.norm(self.entries, 2))


@dataclass
class ExponentialSystem:
    """The vector exponentials U_k exp(i*w_k*t) over a family window."""

    family: ExponentFamily
    directions: DirectionAssignment

    def __post_init__(self):
        if not np.array_equal(self.directions.indices, self.family.indices):
            raise ValueError("direction index set does not match the family window")

    @property
    def size(self) -> int:
        return len(self.family)


@dataclass
class DividedDifferenceSystem:
    """Divided-difference profiles with one unit direction per index.

    ``normalize=True`` rescales each profile to unit L2(I) norm; the raw
    (unnormalized) profiles are the default.
    """

    basis: DividedDifferenceBasis
    directions: DirectionAssignment
    normalize: bool = False

    def __post_init__(self):
        if not np.array_equal(self.directions.indices, self.basis.indices):
            raise ValueError("direction index set does not match the basis index set")

    @property
    def size(self) -> int:
        return len(self.basis)


def oscillation_panel_rule(interval: IntervalSpec, rate: float, order: int = DEFAULT_PANEL_ORDER):
    """Composite Gauss-Legendre nodes/weights with <= pi/4 phase per panel."""
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    L = interval.length
    n_panels = max(2, math.ceil(L * max(rate, 0.0) / PANEL_PHASE_SPAN))
    u, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(interval.a, interval.b, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * u[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return t, weights


def _dd_profile_matrix(basis: DividedDifferenceBasis, t: np.ndarray) -> np.ndarray:
    """Rows are the divided-difference profiles evaluated on the t grid."""
    return np.stack([eval_divided_difference(desc.nodes, t) for desc in basis.descriptors])


def dd_inner_quadrature(
    k: int,
    n: int,
    ddbasis: DividedDifferenceBasis,
    directions: DirectionAssignment,
    interval: IntervalSpec,
    quad_order: int = DEFAULT_PANEL_ORDER,
) -> complex:
    """(U_k f_k, U_n f_n) over I by oscillation-adjusted panel quadrature."""
    nodes_k = ddbasis.nodes_for(k)
    nodes_n = ddbasis.nodes_for(n)
    rate = float(np.max(np.abs(nodes_k)) + np.max(np.abs(nodes_n)))
    t, w = oscillation_panel_rule(interval, rate, quad_order)
    fk = eval_divided_difference(nodes_k, t)
    fn = eval_divided_difference(nodes_n, t)
    scalar = np.sum(w * fk * np.conj(fn))
    return complex(np.vdot(directions.direction(n), directions.direction(k)) * scalar)


def _exponential_gram_entries(system: ExponentialSystem, interval: IntervalSpec) -> np.ndarray:
    w = system.family.exponents
    U = system.directions.matrix
    theta = w[None, :] - w[:, None]  # theta[j, k] = w_k - w_j
    C = exp_inner_closed_form(theta, interval)
    overlap = U @ U.conj().T  # overlap[k, j] = (U_k, U_j)_H
    return overlap.T * C


def _dd_gram_entries(
    system: DividedDifferenceSystem, interval: IntervalSpec, quad_order: int
) -> np.ndarray:
    basis = system.basis
    rate = 2.0 * basis.max_abs_node()
    t, w = oscillation_panel_rule(interval, rate, quad_order)
    F = _dd_profile_matrix(basis, t)
    M = (F * w) @ F.conj().T  # M[k, j] = integral of f_k * conj(f_j)
    U = system.directions.matrix
    G = ((U @ U.conj().T) * M).T
    if system.normalize:
        scale = 1.0 / np.sqrt(np.real(np.diag(G)))
        G = G * scale[:, None] * scale[None, :]
    return G


def assemble_gram(system, interval: IntervalSpec, quad_order: int = DEFAULT_PANEL_ORDER) -> GramMatrix:
    """Gram matrix of an exponential or divided-difference system over I.

    Exponential systems use the closed form; divided-difference systems use
    panel quadrature on a grid shared by all entries (deterministic and
    independent of evaluation order).
    """
    if isinstance(system, ExponentialSystem):
        if system.size < 1:
            raise ValueError("system must contain at least one function")
        G = _exponential_gram_entries(system, interval)
        descriptor = {
            "system": "exponential",
            "n": system.size,
            "d": system.directions.d,
            "interval": [interval.a, interval.b],
            "label": system.family.label,
        }
    elif isinstance(system, DividedDifferenceSystem):
        if system.size < 1:
            raise ValueError("system must contain at least one function")
        G = _dd_gram_entries(system, interval, quad_order)
        descriptor = {
            "system": "divided-difference",
            "n": system.size,
            "d": system.directions.d,
            "interval": [interval.a, interval.b],
            "normalized": system.normalize,
            "label": system.basis.family.label,
        }
    else:
        raise TypeError(f"unsupported system descriptor {type(system).__name__}")
    return GramMatrix(entries=G, descriptor=descriptor)


def fourier_gram(grid: FourierGrid) -> GramMatrix:
    """Gram of the grid functions; identity up to machine rounding."""
    L = grid.interval.length
    gamma = grid.frequencies
    theta = gamma[None, :] - gamma[:, None]
    C = exp_inner_closed_form(theta, grid.interval) / L
    G = np.kron(C, np.eye(grid.d))
    return GramMatrix(entries=G, descriptor={"system": "fourier-grid", "n": grid.size})


def cross_inner_matrix(
    family: ExponentFamily,
    directions: DirectionAssignment,
    grid: FourierGrid,
) -> np.ndarray:
    """X[k, (n, j)] = (e_k, f_{n,j}), flattened n-major then direction index."""
    L = grid.interval.length
    theta = family.exponents[:, None] - grid.frequencies[None, :]
    C = exp_inner_closed_form(theta, grid.interval)  # (nk, nn)
    X = C[:, :, None] * directions.matrix[:, None, :] / math.sqrt(L)
    return X.reshape(len(family), grid.size)


def projection_defect_norms(
    family: ExponentFamily,
    directions: DirectionAssignment,
    grid: FourierGrid,
) -> np.ndarray:
    """Per-index norm of (Q - Id) e_k for Q the grid projection.

    Parseval on the full grid gives ||e_k||^2 = |I|, so the defect is the
    complement of the captured coefficient energy.
    """
    X = cross_inner_matrix(family, directions, grid)
    captured = np.sum(np.abs(X) ** 2, axis=1)
    return np.sqrt(np.clip(grid.interval.length - captured, 0.0, None))


def energy_quadratic_form(G: GramMatrix, coeffs) -> float:
    """The quadratic form coef^H G coef (the L2(I, H) energy of the sum)."""
    values = np.asarray(getattr(coeffs, "values", coeffs), dtype=complex)
    if values.shape != (G.n,):
        raise ValueError(f"coefficient vector of length {values.size} does not match Gram of size {G.n}")
    q = values.conj() @ G.entries @ values
    return float(np.real(q))


@dataclass
class BiorthogonalFamily:
    """Dual basis within the span: phi_k = sum_j coefficients[j, k] e_j."""

    coefficients: np.ndarray
    norms: np.ndarray

    @property
    def n(self) -> int:
        return self.coefficients.shape[0]


def _spectral_gate(G: GramMatrix) -> tuple[float, float]:
    evals = eigvalsh(G.entries)
    gnorm = float(np.max(np.abs(evals)))
    emin = float(evals[0])
    if emin <= NEAR_SINGULAR_RTOL * gnorm:
        raise NearSingularGramError(min_eigenvalue=emin, norm=gnorm)
    return emin, gnorm


def dual_family(G: GramMatrix) -> BiorthogonalFamily:
    """Biorthogonal coefficients: the inverse Gram, after a spectral gate.

    Raises NearSingularGramError (carrying the offending eigenvalue) when the
    smallest eigenvalue is at or below 1e-10 times the spectral norm; that
    failure mode is itself the measurement of a degenerating system.
    """
    _spectral_gate(G)
    cho = cho_factor(G.entries, lower=False)
    C = cho_solve(cho, np.eye(G.n, dtype=complex))
    C = 0.5 * (C + C.conj().T)
    return BiorthogonalFamily(coefficients=C, norms=np.sqrt(np.real(np.diag(C))))


def biorthogonality_residual(G: GramMatrix, dual: BiorthogonalFamily) -> float:
    """max |(e_j, phi_k) - delta_jk| over the span."""
    R = G.entries @ dual.coefficients - np.eye(G.n)
    return float(np.max(np.abs(R)))


def project_coefficients(target, sources, interval: IntervalSpec, quad_order: int = DEFAULT_PANEL_ORDER) -> np.ndarray:
    """Coefficients of the orthogonal projection of each source function.

    Returns ``coef`` with ``coef[alpha, s]`` the coefficient of target
    function alpha in the projection of source function s: plain inner
    products for an orthonormal target (a FourierGrid), Gram-inverse-weighted
    inner products otherwise.
    """
    B = _cross_general(sources, target, interval, quad_order)
    if isinstance(target, FourierGrid):
        return B
    Gt = assemble_gram(target, interval, quad_order)
    _spectral_gate(Gt)
    cho = cho_factor(Gt.entries, lower=False)
    return cho_solve(cho, B)


def _profiles_and_vectors(system, interval: IntervalSpec):
    """Unify systems as (list of node arrays, scale array, vector matrix)."""
    if isinstance(system, ExponentialSystem):
        nodes = [np.array([v]) for v in system.family.exponents]
        scales = np.ones(len(nodes))
        return nodes, scales, system.directions.matrix
    if isinstance(system, DividedDifferenceSystem):
        nodes = [desc.nodes for desc in system.basis.descriptors]
        scales = np.ones(len(nodes))
        if system.normalize:
            rate = 2.0 * system.basis.max_abs_node()
            t, w = oscillation_panel_rule(interval, rate, DEFAULT_PANEL_ORDER)
            F = _dd_profile_matrix(system.basis, t)
            scales = 1.0 / np.sqrt(np.real(np.sum(w * np.abs(F) ** 2, axis=1)))
        return nodes, scales, system.directions.matrix
    if isinstance(system, FourierGrid):
        freqs = system.frequencies
        nodes = []
        vectors = []
        for g in freqs:
            for j in range(system.d):
                nodes.append(np.array([g]))
                e = np.zeros(system.d, dtype=complex)
                e[j] = 1.0
                vectors.append(e)
        scale = np.full(len(nodes), 1.0 / math.sqrt(system.interval.length))
        return nodes, scale, np.stack(vectors)
    raise TypeError(f"unsupported system descriptor {type(system).__name__}")


def _cross_general(sources, target, interval: IntervalSpec, quad_order: int) -> np.ndarray:
    """B[alpha, s] = (source_s, target_alpha) in L2(I, H)."""
    s_nodes, s_scale, s_vec = _profiles_and_vectors(sources, interval)
    t_nodes, t_scale, t_vec = _profiles_and_vectors(target, interval)
    if s_vec.shape[1] != t_vec.shape[1]:
        raise ValueError("source and target systems live in different direction spaces")
    all_single = all(x.size == 1 for x in s_nodes) and all(x.size == 1 for x in t_nodes)
    if all_single:
        ws = np.array([x[0] for x in s_nodes])
        wt = np.array([x[0] for x in t_nodes])
        M = exp_inner_closed_form(ws[:, None] - wt[None, :], interval)  # (s, alpha)
    else:
        rate = float(
            max(np.max(np.abs(np.concatenate(s_nodes))), 0.0)
            + max(np.max(np.abs(np.concatenate(t_nodes))), 0.0)
        )
        t, w = oscillation_panel_rule(interval, rate, quad_order)
        Fs = np.stack([eval_divided_difference(x, t) for x in s_nodes])
        Ft = np.stack([eval_divided_difference(x, t) for x in t_nodes])
        M = (Fs * w) @ Ft.conj().T
    overlap = (s_vec @ t_vec.conj().T) * s_scale[:, None] * t_scale[None, :]
    return (overlap * M).T


def gram_to_record(G: GramMatrix) -> dict:
    """Structured-text export with complex entries as [re, im] pairs."""
    return {
        "descriptor": G.descriptor,
        "entries": [[[float(z.real), float(z.imag)] for z in row] for row in G.entries],
    }


def gram_from_record(record: dict) -> GramMatrix:
    entries = np.array(
        [[complex(re, im) for re, im in row] for row in record["entries"]], dtype=complex
    )
    return GramMatrix(entries=entries, descriptor=dict(record.get("descriptor", {})))


def gram_to_json(G: GramMatrix) -> str:
    return json.dumps(gram_to_record(G), sort_keys=True)


def gram_from_json(text: str) -> GramMatrix:
    return gram_from_record(json.loads(text))
