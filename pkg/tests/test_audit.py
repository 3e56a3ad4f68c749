"""Audit engine: decomposition, theorem verification, tightness instance."""

import math

import numpy as np
import pytest

from amplipriv import (
    ComposedMechanism,
    CompleteDataset,
    DatasetMechanism,
    DimensionError,
    MarAnchoredPattern,
    McarPattern,
    MechanismConsistencyError,
    amplify_generic,
    calibrate_gaussian,
    calibrate_laplace,
    composed_output_mixture,
    hockey_stick_mixture_1d,
    is_neighbor,
    lipschitz_postprocess,
    make_standard_query,
    mixture_decomposition,
    tightness_counterexample,
    verify_amplification,
)
from amplipriv.noise import PrivacyBudget


def sum_query(n, d, B):
    base = make_standard_query("clipped_mean", n=n, d=d, clip=B)
    return lipschitz_postprocess(base, lambda v: np.array([v.sum()]), 1.0, output_dim=1)


def anchored_mechanism(n, d):
    return DatasetMechanism(
        MarAnchoredPattern(
            d=d,
            anchor=(0,),
            q_all=0.0,
            candidates=[(0, 1, 1, 1), (0, 0, 1, 1)],
            score=lambda av: (0.3, 0.7) if av[0] >= 0 else (0.8, 0.2),
        ),
        n=n,
    )


def neighbor_pair(B=0.5):
    left = CompleteDataset(
        ((0.3, -0.2, 0.5, -0.5), (-0.4, 0.1, 0.2, 0.3)), bound_B=B
    )
    right = left.substitute(0, (-0.3, 0.5, -0.1, 0.2))
    return is_neighbor(left, right)


class TestMixtureDecomposition:
    def test_mass_identity(self):
        mech = DatasetMechanism(
            McarPattern([((0, 0, 1, 1), 0.35), ((1, 1, 0, 0), 0.35), ((1, 1, 1, 1), 0.3)]),
            n=2,
        )
        dec = mixture_decomposition(mech, neighbor_pair())
        total = (1 - dec.p_star) * math.fsum(dec.w0.values()) + dec.p_star * math.fsum(
            dec.w1.values()
        )
        assert total == pytest.approx(1.0, abs=1e-12)
        assert math.fsum(dec.w0.values()) == pytest.approx(1.0, abs=1e-12)
        assert math.fsum(dec.w1.values()) == pytest.approx(1.0, abs=1e-12)
        assert math.fsum(dec.w1p.values()) == pytest.approx(1.0, abs=1e-12)

    def test_hidden_part_supported_on_fully_masked_row(self):
        mech = DatasetMechanism(
            McarPattern([((0, 0, 1, 1), 0.7), ((1, 1, 1, 1), 0.3)]), n=2
        )
        pair = neighbor_pair()
        dec = mixture_decomposition(mech, pair)
        assert dec.p_star == pytest.approx(0.7)
        i_star = pair.differing_index
        assert dec.w0 and all(key[i_star] == (1, 1, 1, 1) for key in dec.w0)
        assert all(key[i_star] != (1, 1, 1, 1) for key in dec.w1)

    def test_mar_hidden_tables_bit_exact_over_random_pairs(self):
        mech = DatasetMechanism(
            MarAnchoredPattern(
                d=4,
                anchor=(0,),
                q_all=0.25,
                candidates=[(0, 1, 1, 1), (0, 0, 1, 1)],
                score=lambda av: (0.3, 0.7) if av[0] >= 0 else (0.8, 0.2),
            ),
            n=2,
        )
        rng = np.random.default_rng(13)
        for _ in range(100):
            vals = rng.uniform(-0.5, 0.5, (2, 4))
            left = CompleteDataset(tuple(map(tuple, vals)))
            right = left.substitute(int(rng.integers(2)), rng.uniform(-0.5, 0.5, 4))
            pair = is_neighbor(left, right)
            # internal bit-exact comparison raises on any discrepancy
            dec = mixture_decomposition(mech, pair)
            assert abs(dec.p_star - 0.75) < 1e-15

    def test_p_star_one_has_empty_hidden_table(self):
        mech = anchored_mechanism(2, 4)
        dec = mixture_decomposition(mech, neighbor_pair())
        assert dec.p_star == 1.0 and dec.w0 == {}

    def test_broken_mar_detected(self):
        class LeakyPattern(McarPattern):
            def support(self, sample):
                # hidden-mask probability depends on an unobserved value
                shift = 0.05 if sample[0] > 0 else -0.05
                out = []
                for m, p in super().support(sample):
                    out.append((m, p + shift if m.is_all_missing() else p - shift))
                return out

        mech = DatasetMechanism(
            LeakyPattern([((0, 0, 1, 1), 0.5), ((1, 1, 1, 1), 0.5)]), n=2
        )
        with pytest.raises(MechanismConsistencyError):
            mixture_decomposition(mech, neighbor_pair())


class TestComposedOutputMixture:
    def test_weights_match_mask_law(self):
        B = 0.5
        q = sum_query(2, 4, B)
        mech = DatasetMechanism(
            McarPattern([((0, 0, 1, 1), 0.25), ((1, 1, 1, 1), 0.75)]), n=2
        )
        cm = ComposedMechanism(noise=calibrate_laplace(q, 1.0, B), missing=mech)
        z = CompleteDataset(((0.3, -0.2, 0.5, -0.5), (-0.4, 0.1, 0.2, 0.3)))
        mix = composed_output_mixture(cm, z)
        assert math.fsum(w for w, _, _, _ in mix.components) == pytest.approx(1.0)
        # four mask matrices, possibly fewer centers after merging
        assert 1 <= len(mix.components) <= 4

    def test_vector_output_rejected(self):
        B = 0.5
        q = make_standard_query("clipped_mean", n=2, d=4, clip=B)
        mech = DatasetMechanism(McarPattern([((0, 0, 1, 1), 1.0)]), n=2)
        cm = ComposedMechanism(noise=calibrate_laplace(q, 1.0, B), missing=mech)
        with pytest.raises(DimensionError):
            composed_output_mixture(cm, CompleteDataset(((0.0,) * 4, (0.0,) * 4)))


class TestVerifyAmplification:
    def test_point_mass_all_zero_equals_base(self):
        # composition with a never-masking mechanism is the base mechanism
        B = 0.5
        q = sum_query(2, 4, B)
        mech = DatasetMechanism(McarPattern([((0, 0, 0, 0), 1.0)]), n=2)
        noise = calibrate_gaussian(q, epsilon=0.5, delta=1e-4, B=B)
        cm = ComposedMechanism(noise=noise, missing=mech)
        pair = neighbor_pair()
        pm = composed_output_mixture(cm, pair.left)
        qm = composed_output_mixture(cm, pair.right)
        base_l = q(pair.left.as_incomplete())[0]
        base_r = q(pair.right.as_incomplete())[0]
        for eps in (0.1, 0.5):
            composed = hockey_stick_mixture_1d(pm, qm, eps, tol=1e-10)
            from amplipriv import MixtureSpec

            base = hockey_stick_mixture_1d(
                MixtureSpec(((1.0, "gaussian", base_l, noise.scale),)),
                MixtureSpec(((1.0, "gaussian", base_r, noise.scale),)),
                eps,
                tol=1e-10,
            )
            assert composed.value == pytest.approx(base.value, abs=1e-12)
        table = verify_amplification(cm, pair, [0.5], method="exact", tol=1e-9)
        assert table.passed
        assert table.rows[0].epsilon_eval == 0.5  # p* = 1, ratio = 1: no change

    def test_laplace_anchored_rho_half(self):
        B = 0.5
        q = sum_query(2, 4, B)
        cm = ComposedMechanism(
            noise=calibrate_laplace(q, epsilon=1.0, B=B),
            missing=anchored_mechanism(2, 4),
        )
        table = verify_amplification(
            cm, neighbor_pair(), [0.25, 0.5, 1.0], method="exact", tol=1e-7
        )
        assert table.passed
        for row in table.rows:
            assert row.epsilon_eval == pytest.approx(0.5 * row.epsilon_base)
            assert row.bound == 0.0
            assert row.empirical <= 1e-6

    def test_gaussian_mcar_half(self):
        B = 0.5
        q = sum_query(2, 4, B)
        mech = DatasetMechanism(
            McarPattern(
                [((1, 1, 1, 1), 0.5), ((0, 0, 1, 1), 0.25), ((1, 1, 0, 0), 0.25)]
            ),
            n=2,
        )
        noise = calibrate_gaussian(q, epsilon=1.0, delta=1e-4, B=B)
        cm = ComposedMechanism(noise=noise, missing=mech)
        table = verify_amplification(
            cm, neighbor_pair(), [0.5, 1.0], method="exact", tol=1e-7
        )
        assert table.passed
        for row in table.rows:
            assert row.bound == pytest.approx(0.5e-4)
            assert row.empirical <= row.bound + 1e-6

    def test_monte_carlo_route(self):
        B = 0.5
        q = sum_query(2, 4, B)
        cm = ComposedMechanism(
            noise=calibrate_laplace(q, epsilon=1.0, B=B),
            missing=anchored_mechanism(2, 4),
        )
        table = verify_amplification(
            cm, neighbor_pair(), [1.0], method="mc", n_samples=50_000, seed=2
        )
        assert table.rows[0].method == "monte_carlo"
        assert table.passed

    def test_vector_output_goes_through_monte_carlo(self):
        # k = 4 output: exact is rejected, the MC path audits it anyway
        B = 0.5
        q = make_standard_query("clipped_mean", n=2, d=4, clip=B)
        cm = ComposedMechanism(
            noise=calibrate_laplace(q, epsilon=1.0, B=B),
            missing=anchored_mechanism(2, 4),
        )
        pair = neighbor_pair()
        with pytest.raises(DimensionError):
            verify_amplification(cm, pair, [1.0], method="exact")
        table = verify_amplification(
            cm, pair, [1.0], method="mc", n_samples=50_000, seed=6
        )
        assert table.passed

    def test_vector_mc_matches_quadrature_on_scalar_query(self):
        from amplipriv import composed_vector_mixture, mc_delta_vector

        B = 0.5
        q = sum_query(2, 4, B)
        cm = ComposedMechanism(
            noise=calibrate_laplace(q, epsilon=1.0, B=B),
            missing=anchored_mechanism(2, 4),
        )
        pair = neighbor_pair()
        pv = composed_vector_mixture(cm, pair.left)
        qv = composed_vector_mixture(cm, pair.right)
        pm = composed_output_mixture(cm, pair.left)
        qm = composed_output_mixture(cm, pair.right)
        for eps in (0.0, 0.05):
            quad = hockey_stick_mixture_1d(pm, qm, eps, tol=1e-9)
            mc = mc_delta_vector(pv, qv, eps, n_samples=200_000, seed=5)
            half = (mc.ci[1] - mc.ci[0]) / 2
            assert abs(mc.value - quad.value) <= 3 * half + 1e-9

    def test_false_claim_fails(self):
        B = 0.5
        q = sum_query(2, 4, B)
        cm = ComposedMechanism(
            noise=calibrate_laplace(q, epsilon=1.0, B=B),
            missing=anchored_mechanism(2, 4),
        )
        table = verify_amplification(
            cm,
            neighbor_pair(),
            [1.0],
            method="exact",
            tol=1e-9,
            claim={"epsilon": 0.05, "delta": 0.0},
        )
        assert not table.passed
        assert table.rows[0].empirical > 0.0


class TestTightnessCounterexample:
    def test_gap_vanishes(self):
        for eps in (0.1, 0.5, 1.0):
            res = tightness_counterexample(eps, 1e-3)
            assert res.equality_gap <= 1e-9

    def test_p_star_is_one_exactly(self):
        res = tightness_counterexample(0.5, 1e-3)
        assert res.p_star == 1.0

    def test_generic_amplification_returns_unchanged_budget(self):
        res = tightness_counterexample(0.5, 1e-3)
        budget = PrivacyBudget(0.5, 1e-3)
        report = amplify_generic(budget, res.p_star)
        assert report.amplified == budget

    def test_masking_changes_data_but_not_output(self):
        res = tightness_counterexample(0.5, 1e-3)
        # the mechanism masks different features for the two datasets, yet the
        # query reads only the always-observed coordinate
        mixes = [
            composed_output_mixture(res.composed, ds)
            for ds in (res.pair.left, res.pair.right)
        ]
        for mix in mixes:
            assert len(mix.components) == 1

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            tightness_counterexample(1.5, 1e-3)
        with pytest.raises(ValueError):
            tightness_counterexample(0.5, 0.0)
