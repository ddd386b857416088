from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catlab import policies as pol
from catlab.policies import ClassKind, CoverKind, PolicyClass, UnsupportedClass


def grid_disagreement(p1, p2, n=20000) -> float:
    """Oracle: fraction of cell midpoints where two policies differ (scalar evaluation)."""
    xs = (np.arange(n) + 0.5) / n
    return float(np.mean([p1(x) != p2(x) for x in xs]))


class TestPolicyEvaluation:
    def test_threshold(self):
        p = pol.threshold(0.3)
        assert p(0.29) == 0 and p(0.3) == 1 and p(0.9) == 1
        q = pol.threshold(0.3, orientation=-1)
        assert q(0.29) == 1 and q(0.9) == 0

    def test_interval(self):
        p = pol.interval(0.2, 0.5)
        assert [p(x) for x in (0.1, 0.2, 0.4, 0.6)] == [0, 1, 1, 0]

    def test_ksegment(self):
        p = pol.ksegment([0.25, 0.5, 0.75], [1, 0, 0, 1])
        assert [p(x) for x in (0.1, 0.3, 0.6, 0.8)] == [1, 0, 0, 1]
        assert p.segment_count() == 3

    def test_ksegment_validation(self):
        with pytest.raises(ValueError):
            pol.ksegment([0.5, 0.5], [0, 1, 0])
        with pytest.raises(ValueError):
            pol.ksegment([0.5], [0, 1, 0])

    def test_explicit_nearest(self):
        p = pol.explicit(np.array([[0.1], [0.5], [0.9]]), np.array([0, 2, 1]))
        assert [p(x) for x in (0.0, 0.4, 0.95)] == [0, 2, 1]

    def test_explicit_2d(self):
        grid = np.array([[0.0, 0.0], [1.0, 1.0]])
        p = pol.explicit(grid, np.array([0, 1]))
        assert p(np.array([0.2, 0.1])) == 0 and p(np.array([0.8, 0.7])) == 1


class TestPolicyClass:
    def test_metadata(self):
        assert PolicyClass.thresholds().vc_dim == 1
        assert PolicyClass.intervals().vc_dim == 2
        assert PolicyClass.ksegments(4).max_segments == 4

    def test_finite_littlestone_ceiling(self):
        members = [pol.threshold(t) for t in (0.1, 0.2, 0.3, 0.4, 0.5)]
        cls = PolicyClass.finite(members)
        assert cls.littlestone_dim == 3 and cls.kind is ClassKind.FINITE_EXPLICIT

    def test_finite_nonempty(self):
        with pytest.raises(ValueError):
            PolicyClass.finite([])


class TestSmoothCover:
    def test_thresholds_eps_01(self):
        cover = pol.build_smooth_cover(PolicyClass.thresholds(), 0.1)
        thetas = [m.params[0] for m in cover.members]
        assert thetas == pytest.approx([i / 10 for i in range(11)])
        assert len(cover) <= 41 / 0.1

    def test_intervals_eps_02(self):
        cover = pol.build_smooth_cover(PolicyClass.intervals(), 0.2)
        # 11-point endpoint grid: C(11,2) + 11 ordered pairs
        assert len(cover) == math.comb(11, 2) + 11 == 66
        assert len(cover) <= (41 / 0.2) ** 2

    def test_finite_class_covers_itself(self):
        members = [pol.threshold(t) for t in np.linspace(0.1, 0.9, 5)]
        cover = pol.build_smooth_cover(PolicyClass.finite(members), 0.01)
        assert list(cover.members) == members

    @pytest.mark.parametrize("eps", [0.0, -0.1, 1.5])
    def test_eps_range(self, eps):
        with pytest.raises(ValueError):
            pol.build_smooth_cover(PolicyClass.thresholds(), eps)

    def test_ksegment_cover_passes_probes(self):
        cls = PolicyClass.ksegments(3)
        cover = pol.build_smooth_cover(cls, 0.2)
        probes = pol.probe_policies(cls, 0.2, 200, np.random.default_rng(1))
        report = pol.verify_smooth_cover(cover, probes)
        assert report.passed and not report.exact

    def test_actions_at_matches_members(self):
        cover = pol.build_smooth_cover(PolicyClass.intervals(), 0.2)
        for x in np.random.default_rng(0).random(50):
            assert list(cover.actions_at(x)) == [m(x) for m in cover.members]


class TestAdversarialCover:
    def test_finite(self):
        cls = pol.random_explicit_class(8, 16, 2, np.random.default_rng(0))
        cover = pol.build_adversarial_cover(cls)
        assert len(cover) == 8 and cover.kind is CoverKind.ADVERSARIAL

    def test_singleton(self):
        cls = PolicyClass.finite([pol.threshold(0.5)])
        assert len(pol.build_adversarial_cover(cls)) == 1

    def test_thresholds_unsupported(self):
        with pytest.raises(UnsupportedClass, match="smooth"):
            pol.build_adversarial_cover(PolicyClass.thresholds())


class TestDisagreement:
    def test_thresholds(self):
        assert pol.disagreement_uniform(pol.threshold(0.3), pol.threshold(0.45)) == pytest.approx(0.15)

    def test_identity(self):
        p = pol.ksegment([0.2, 0.7], [0, 1, 0])
        assert pol.disagreement_uniform(p, p) == 0.0

    def test_intervals(self):
        assert pol.disagreement_uniform(pol.interval(0.2, 0.5), pol.interval(0.3, 0.6)) == pytest.approx(0.2)

    def test_mixed_kinds(self):
        e = pol.explicit(np.array([[0.5]]), np.array([1]))
        with pytest.raises(ValueError):
            pol.disagreement_uniform(e, pol.threshold(0.5))

    def test_explicit_grid_fraction(self):
        grid = np.array([[0.1], [0.3], [0.5], [0.7]])
        a = pol.explicit(grid, np.array([0, 1, 1, 0]))
        b = pol.explicit(grid, np.array([0, 0, 1, 1]))
        assert pol.disagreement_uniform(a, b) == 0.5

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            b1 = np.sort(rng.random(3))
            b2 = np.sort(rng.random(2))
            p1 = pol.ksegment(b1, [0, 1, 0, 1])
            p2 = pol.ksegment(b2, [1, 0, 1])
            assert pol.disagreement_uniform(p1, p2) == pytest.approx(grid_disagreement(p1, p2), abs=2e-4)


class TestVerify:
    def test_probe_037(self):
        cover = pol.build_smooth_cover(PolicyClass.thresholds(), 0.1)
        report = pol.verify_smooth_cover(cover, [pol.threshold(0.37)])
        assert report.max_min_disagreement == pytest.approx(0.03)
        assert report.passed

    def test_members_probe_themselves(self):
        cover = pol.build_smooth_cover(PolicyClass.intervals(), 0.2)
        report = pol.verify_smooth_cover(cover, list(cover.members))
        assert report.max_min_disagreement == 0.0 and report.passed

    def test_coarse_grid_fails(self):
        members = [pol.threshold(t) for t in (0.0, 0.3, 0.6, 0.9, 1.0)]
        cover = pol.Cover(members, CoverKind.SMOOTH, PolicyClass.thresholds(), 0.1)
        report = pol.verify_smooth_cover(cover, [pol.threshold(0.15)])
        assert report.max_min_disagreement == pytest.approx(0.15)
        assert not report.passed

    def test_probe_grid_density(self):
        probes = pol.probe_policies(PolicyClass.thresholds(), 0.05, 0)
        assert len(probes) >= 10 / 0.05


class TestSmoothConcentrate:
    @pytest.mark.parametrize("eps,sigma,expected", [(0.1, 0.5, 0.2), (0.1, 1.0, 0.1), (0.05, 0.25, 0.2)])
    def test_examples(self, eps, sigma, expected):
        assert pol.smooth_concentrate_bound(eps, sigma) == pytest.approx(expected)

    def test_sigma_nonpositive(self):
        with pytest.raises(ValueError):
            pol.smooth_concentrate_bound(0.1, 0.0)

    def test_monte_carlo_under_smooth_density(self):
        from catlab.environments import SmoothDensity

        eps, sigma = 0.1, 0.25
        cover = pol.build_smooth_cover(PolicyClass.intervals(), eps)
        dens = SmoothDensity.slab(0.3, sigma)
        xs = dens.inverse_cdf(np.random.default_rng(2).random(4000))
        rng = np.random.default_rng(9)
        for _ in range(10):
            a, b = np.sort(rng.random(2))
            probe = pol.interval(a, b)
            best = int(np.argmin(pol.disagreement_many(probe, cover.members)))
            mean, se = pol.disagreement_mc(probe, cover.members[best], xs)
            assert mean <= pol.smooth_concentrate_bound(eps, sigma) + 3 * se


class TestOneVsRest:
    def test_labels(self):
        grid = (np.arange(3) + 0.5) / 3
        p = pol.explicit(grid[:, None], np.array([2, 0, 1]))
        cls = PolicyClass.finite([p], n_actions=3)
        tables = [pol.one_vs_rest(cls, y).members[0].table.tolist() for y in range(3)]
        assert tables == [[0, 1, 0], [0, 0, 1], [1, 0, 0]]


policy_strategy = st.builds(
    lambda bs, first: pol.ksegment(sorted(set(bs)), [(first + i) % 2 for i in range(len(set(bs)) + 1)]),
    st.lists(st.floats(0.0, 1.0), min_size=0, max_size=4),
    st.integers(0, 1),
)


class TestPseudometric:
    @settings(max_examples=150)
    @given(policy_strategy, policy_strategy, policy_strategy)
    def test_axioms(self, a, b, c):
        dab = pol.disagreement_uniform(a, b)
        assert 0.0 <= dab <= 1.0 + 1e-12
        assert dab == pytest.approx(pol.disagreement_uniform(b, a), abs=1e-12)
        assert pol.disagreement_uniform(a, a) == 0.0
        assert dab <= pol.disagreement_uniform(a, c) + pol.disagreement_uniform(c, b) + 1e-12
