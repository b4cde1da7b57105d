import json
import math

import numpy as np
import pytest

from inghamlab.exponents import (
    ExponentFamily,
    build_sharpness_partition,
    counting_function,
    detect_chains,
    estimate_density,
    family_from_json,
    family_from_record,
    family_to_json,
    family_to_record,
    generate_family,
    generate_from_record,
    validate_gaps,
)

from oracles import brute_count


def integers(lo=-8, hi=8):
    return generate_family("lattice", spacing=1.0, window=[lo, hi])


class TestValidateGaps:
    def test_unit_lattice_strict_gap(self):
        rep = validate_gaps(integers(), M=1)
        assert rep.gamma == 1.0
        assert rep.satisfies_strict_gap
        assert rep.gamma_prime == pytest.approx(1.0)
        assert rep.satisfies_weak_gap

    def test_clustered_pairs_weak_gap_thresholds(self):
        # direct min over the window: pairwise 2-step gaps are
        # {1.0, 0.95, 1.0, 1.15} / 2, so gamma' = 0.475
        fam = ExponentFamily(np.array([0.0, 0.1, 1.0, 1.05, 2.0, 2.2]))
        rep = validate_gaps(fam, M=2)
        assert rep.gamma == pytest.approx(0.05)
        assert rep.satisfies_strict_gap
        assert rep.gamma_prime == pytest.approx(0.475)
        assert rep.weak_gap_holds_at(0.45)
        assert not rep.weak_gap_holds_at(0.5)

    def test_single_exponent_degenerate(self):
        rep = validate_gaps(ExponentFamily(np.array([0.0])), M=1)
        assert rep.gamma == math.inf
        assert rep.satisfies_strict_gap
        assert rep.degenerate
        assert rep.weak_gap_insufficient_data
        assert rep.gamma_prime is None

    def test_window_shorter_than_M_plus_one(self):
        rep = validate_gaps(ExponentFamily(np.array([0.0, 1.0])), M=3)
        assert rep.weak_gap_insufficient_data
        assert rep.satisfies_weak_gap is None
        assert rep.gamma == 1.0

    def test_gamma_prime_matches_direct_min(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = np.sort(rng.uniform(0, 10, size=12))
            M = int(rng.integers(1, 4))
            rep = validate_gaps(ExponentFamily(x), M)
            direct = min((x[k + M] - x[k]) / M for k in range(x.size - M))
            assert rep.gamma_prime == pytest.approx(direct, abs=1e-14)


class TestDetectChains:
    def test_integers_all_singletons(self):
        dec = detect_chains(integers(), gamma_prime=0.5, M=1)
        assert all(c.length == 1 for c in dec.chains)
        assert len(dec.chains) == 17

    def test_clustered_pairs(self):
        fam = generate_family("clustered-pairs", spacing=1.0, delta=1e-3, window=[0, 1])
        dec = detect_chains(fam, gamma_prime=0.5, M=2)
        assert [(c.start, c.stop) for c in dec.chains] == [(0, 1), (2, 3)]

    def test_leading_triple(self):
        fam = ExponentFamily(np.array([0.0, 0.1, 0.2, 1.0]))
        dec = detect_chains(fam, gamma_prime=0.5, M=3)
        assert [(c.start, c.stop) for c in dec.chains] == [(0, 2), (3, 3)]

    def test_chain_exceeding_M_rejected(self):
        fam = ExponentFamily(np.array([0.0, 0.1, 0.2, 1.0]))
        with pytest.raises(ValueError, match="weak gap violated"):
            detect_chains(fam, gamma_prime=0.5, M=2)

    def test_boundary_chains_flagged(self):
        fam = generate_family("clustered-pairs", spacing=1.0, delta=1e-3, window=[0, 2])
        dec = detect_chains(fam, gamma_prime=0.5, M=2)
        flags = [c.boundary_incomplete for c in dec.chains]
        assert flags[0] and flags[-1]
        assert not any(flags[1:-1])

    def test_concatenation_reproduces_window(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = np.sort(rng.uniform(0, 20, size=15))
            fam = ExponentFamily(x, first_index=int(rng.integers(-5, 5)))
            dec = detect_chains(fam, gamma_prime=0.3, M=15)
            assert np.array_equal(dec.covered_indices(), fam.indices)


class TestCountingFunction:
    def test_integers_examples(self):
        assert counting_function(integers(), 2.5) == 3
        assert counting_function(integers(), 2.0) == 3  # closed window
        evens = generate_family("lattice", spacing=2.0, window=[-8, 8])
        assert counting_function(evens, 5.0) == 3

    def test_against_brute_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            x = np.sort(rng.uniform(0, 30, size=20))
            fam = ExponentFamily(x)
            r = float(rng.uniform(0.5, 15))
            assert counting_function(fam, r) == brute_count(x, r)

    def test_monotone_and_subadditive(self):
        rng = np.random.default_rng(3)
        x = np.sort(rng.uniform(0, 40, size=30))
        fam = ExponentFamily(x)
        grid = np.linspace(0.5, 20, 40)
        counts = [counting_function(fam, r) for r in grid]
        assert all(b >= a for a, b in zip(counts, counts[1:]))
        for r in (0.7, 2.3, 5.1):
            for s in (0.9, 3.3, 8.2):
                assert counting_function(fam, r + s) <= (
                    counting_function(fam, r) + counting_function(fam, s) + 1
                )


class TestEstimateDensity:
    def test_integer_lattice_density_one(self):
        fam = integers(-64, 64)
        est = estimate_density(fam, np.arange(1.0, 65.0))
        assert est.dplus_estimate == pytest.approx(1.0, abs=0.05)

    def test_even_lattice_density_half(self):
        fam = generate_family("lattice", spacing=2.0, window=[-64, 64])
        est = estimate_density(fam, np.arange(1.0, 65.0))
        assert est.dplus_estimate == pytest.approx(0.5, abs=0.05)

    def test_three_quarter_periodic_pattern(self):
        vals = [4 * p + q for p in range(-24, 25) for q in (0, 1, 2)]
        fam = generate_family("explicit", exponents=vals)
        est = estimate_density(fam, np.arange(1.0, 49.0))
        assert est.dplus_estimate == pytest.approx(0.75, abs=0.05)

    def test_counts_nondecreasing_and_positive_slope(self):
        fam = integers(-64, 64)
        est = estimate_density(fam, np.arange(2.0, 50.0, 1.5))
        assert np.all(np.diff(est.counts) >= 0)
        assert est.dplus_estimate >= 0
        lo, hi = est.fit_window
        ratios = est.counts[lo:hi] / est.radii[lo:hi]
        assert np.all(ratios >= est.dplus_estimate - 0.05)

    def test_scale_invariance(self):
        fam = integers(-64, 64)
        c = 2.5
        scaled = ExponentFamily(fam.exponents * c)
        base = estimate_density(fam, np.arange(1.0, 65.0))
        resc = estimate_density(scaled, np.arange(1.0, 65.0) * c)
        assert resc.dplus_estimate == pytest.approx(base.dplus_estimate / c, abs=0.05 / c)

    def test_too_few_fit_points(self):
        with pytest.raises(ValueError, match="3 grid points"):
            estimate_density(integers(), np.array([1.0, 2.0, 3.0]))

    def test_r_beyond_span_rejected(self):
        with pytest.raises(ValueError, match="span"):
            estimate_density(integers(), np.linspace(1.0, 100.0, 12))


class TestSharpnessPartition:
    def test_even_odd_split(self):
        fam = integers(-64, 64)
        part = build_sharpness_partition(fam, d=2, alpha=0.5)
        classes = {j: part.class_indices(j) for j in (1, 2)}
        values1 = sorted(fam.value(i) for i in classes[1])
        assert all(v % 2 == 0 for v in values1)
        for j in (1, 2):
            sub = part.class_family(j)
            est = estimate_density(sub, np.arange(2.0, float(int(sub.span)), 2.0))
            assert est.dplus_estimate == pytest.approx(0.5, abs=0.05)

    def test_alpha_one_single_class(self):
        fam = integers(-16, 16)
        part = build_sharpness_partition(fam, d=2, alpha=1.0)
        assert len(part.class_indices(1)) == len(fam)
        assert part.class_family(2) is None

    def test_three_quarters_period_four(self):
        fam = integers(-32, 32)
        part = build_sharpness_partition(fam, d=2, alpha=0.75, period_count=4)
        first = part.class_family(1)
        offsets = sorted({(i - fam.first_index) % 4 for i in part.class_indices(1)})
        assert offsets == [0, 1, 2]
        est = estimate_density(first, np.arange(2.0, 40.0))
        assert est.dplus_estimate == pytest.approx(0.75, abs=0.05)

    def test_classes_cover_and_bounded_by_alpha(self):
        fam = integers(-40, 40)
        for alpha, d in ((0.6, 2), (0.5, 3), (0.4, 3)):
            part = build_sharpness_partition(fam, d=d, alpha=alpha)
            covered = sorted(i for j in range(1, d + 1) for i in part.class_indices(j))
            assert covered == list(fam.indices)
            for j in range(1, d + 1):
                sub = part.class_family(j)
                if sub is None or len(sub) < 8:
                    continue
                grid = np.arange(2.0, max(4.0, sub.span * 0.9), 2.0)
                est = estimate_density(sub, grid)
                assert est.dplus_estimate <= alpha + 0.05

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError, match="alpha"):
            build_sharpness_partition(integers(), d=2, alpha=0.2)

    def test_non_periodic_family_rejected(self):
        rng = np.random.default_rng(9)
        fam = ExponentFamily(np.sort(rng.uniform(0, 20, size=24)))
        with pytest.raises(ValueError, match="periodic"):
            build_sharpness_partition(fam, d=2, alpha=0.5)


class TestGenerateFamily:
    def test_lattice(self):
        fam = generate_family("lattice", spacing=1.0, window=[-8, 8])
        assert np.array_equal(fam.exponents, np.arange(-8.0, 9.0))

    def test_clustered_pairs(self):
        fam = generate_family("clustered-pairs", spacing=1.0, delta=1e-3, window=[0, 4])
        expected = sorted([k for k in range(5)] + [k + 1e-3 for k in range(5)])
        assert np.allclose(fam.exponents, expected)

    def test_perturbed_lattice_gaps(self):
        fam = generate_family(
            "perturbed-lattice", spacing=1.0, max_perturbation=0.2, window=[-32, 32], seed=7
        )
        assert np.all(np.diff(fam.exponents) >= 0.6 - 1e-12)
        again = generate_family(
            "perturbed-lattice", spacing=1.0, max_perturbation=0.2, window=[-32, 32], seed=7
        )
        assert np.array_equal(fam.exponents, again.exponents)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown family kind"):
            generate_family("fractal", window=[0, 1])

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            generate_family("lattice", spacing=-1.0, window=[0, 4])
        with pytest.raises(ValueError):
            generate_family("clustered-pairs", spacing=1.0, delta=2.0, window=[0, 4])


class TestSerialization:
    def test_record_round_trip(self):
        fam = generate_family("clustered-pairs", spacing=2.0, delta=1e-3, window=[0, 6])
        rec = family_to_record(fam)
        back = family_from_record(json.loads(json.dumps(rec)))
        assert np.array_equal(back.exponents, fam.exponents)
        assert back.label == fam.label
        assert back.first_index == fam.first_index

    def test_json_round_trip(self):
        fam = ExponentFamily(np.array([0.0, 0.25, 1.75]), label="probe", first_index=-1)
        back = family_from_json(family_to_json(fam))
        assert np.array_equal(back.exponents, fam.exponents)
        assert back.first_index == -1

    def test_generator_record(self):
        rec = {
            "kind": "perturbed-lattice",
            "params": {"spacing": 1.0, "max_perturbation": 0.1, "window": [-8, 8]},
            "seed": 3,
        }
        fam = generate_from_record(rec)
        assert len(fam) == 17
        assert np.array_equal(fam.exponents, generate_from_record(rec).exponents)


class TestFamilyInvariants:
    def test_sorted_required(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            ExponentFamily(np.array([1.0, 0.0]))

    def test_nonempty_required(self):
        with pytest.raises(ValueError):
            ExponentFamily(np.array([]))

    def test_slice_preserves_index_labels(self):
        fam = integers(-8, 8)
        sub = fam.slice_positions(3, 7)
        assert list(sub.indices) == [3, 4, 5, 6, 7]
        assert sub.value(3) == fam.value(3)
