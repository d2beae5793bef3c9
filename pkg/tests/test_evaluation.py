import numpy as np
import pytest

import latent_align as la
from latent_align.evaluation import (
    alignment_metrics,
    conversion_metrics,
    effort_and_levers,
    group_movement_report,
)
from latent_align.grouping import EmpiricalMeasure, GroupAssignment
from latent_align.surrogate import SurrogateModel
from latent_align.transport import TransportProblem, sinkhorn


def _prob_model():
    # identity margin on a single factor: codes are logits
    return SurrogateModel(beta=np.array([1.0]), bias=0.0)


def _logit(p):
    return np.log(p / (1 - p))


def _codes_for(probs):
    return _logit(np.asarray(probs))[:, None]


class TestConversion:
    def test_crossing_definition(self):
        m = conversion_metrics(_prob_model(), _codes_for([0.4, 0.6]), _codes_for([0.6, 0.7]), 0.5)
        assert m.n_conv == 1
        assert m.r_conv == 0.5
        assert m.mean_dp == pytest.approx(0.15)

    def test_no_change(self):
        m = conversion_metrics(_prob_model(), _codes_for([0.3, 0.4]), _codes_for([0.3, 0.4]), 0.5)
        assert m.n_conv == 0 and m.mean_dp == 0.0

    def test_boundary_inclusive(self):
        m = conversion_metrics(_prob_model(), _codes_for([0.49]), _codes_for([0.50]), 0.5)
        assert m.n_conv == 1

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        pre = rng.uniform(0.05, 0.95, size=40)
        post = np.clip(pre + rng.normal(scale=0.2, size=40), 0.05, 0.95)
        m = conversion_metrics(_prob_model(), _codes_for(pre), _codes_for(post), 0.5)
        naive = sum(1 for a, b in zip(pre, post) if a < 0.5 <= b + 1e-15)
        assert m.n_conv == naive

    def test_removing_converted_respondent(self):
        pre, post = np.array([0.3, 0.4, 0.6]), np.array([0.6, 0.45, 0.7])
        m_all = conversion_metrics(_prob_model(), _codes_for(pre), _codes_for(post), 0.5)
        m_drop = conversion_metrics(_prob_model(), _codes_for(pre[1:]), _codes_for(post[1:]), 0.5)
        assert m_all.n_conv - m_drop.n_conv == 1
        assert m_drop.r_conv == pytest.approx(m_drop.n_conv / 2)


class TestEffort:
    def test_zero_delta(self):
        effort, n_lever, _ = effort_and_levers(np.zeros((4, 3)), np.arange(3), 1e-6)
        assert effort == 0.0 and n_lever == 0

    def test_pythagorean_column(self):
        delta = np.array([[3.0], [4.0]])
        effort, n_lever, table = effort_and_levers(delta, np.array([0]), 1e-6)
        assert effort == 5.0 and n_lever == 1
        assert table == [(0, 5.0)]

    def test_threshold_semantics(self):
        delta = np.array([[2.0, 1e-9], [0.0, 0.0]])
        _, n_lever, _ = effort_and_levers(delta, np.array([0, 1]), 1e-6)
        assert n_lever == 1

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        delta = rng.normal(size=(10, 4))
        perm = rng.permutation(10)
        e1, _, _ = effort_and_levers(delta, np.arange(4), 1e-6)
        e2, _, _ = effort_and_levers(delta[perm], np.arange(4), 1e-6)
        assert e1 == pytest.approx(e2)


def _measure(points):
    pts = np.asarray(points, dtype=float)
    return EmpiricalMeasure(support=pts, weights=np.full(pts.shape[0], 1.0 / pts.shape[0]))


class TestAlignmentMetrics:
    def test_no_movement(self):
        rng = np.random.default_rng(2)
        pre = _measure(rng.dirichlet(np.ones(3), 5))
        ref = _measure(rng.dirichlet(np.ones(3), 4))
        m = alignment_metrics(pre, pre, ref, eta=0.2)
        assert m.dw == 0.0 and m.rho_reduction == 0.0 and not m.degenerate

    def test_perfect_alignment_limit(self):
        # separated corners; pre points each have a unique nearest corner so
        # tiny-eta transport stays well conditioned
        pts = np.eye(4) * 0.9 + 0.025
        pts /= pts.sum(axis=1, keepdims=True)
        blend = 0.7 * pts + 0.3 * np.roll(pts, 1, axis=0)
        blend /= blend.sum(axis=1, keepdims=True)
        pre = _measure(blend)
        ref = _measure(pts)
        post = _measure(pts)
        m = alignment_metrics(pre, post, ref, eta=1e-3)
        assert m.w_after < 1e-6
        assert m.rho_reduction == pytest.approx(1.0, abs=1e-4)

    def test_degenerate_zero_before(self):
        same = _measure(np.tile([0.5, 0.5], (3, 1)))
        m = alignment_metrics(same, same, same, eta=0.1)
        assert m.degenerate and m.rho_reduction == 0.0

    def test_dw_matches_independent_recomputation(self, fixture_arts):
        m = fixture_arts.metrics
        groups = fixture_arts.groups
        codes = fixture_arts.codes.codes
        post = la.normalize_rows(fixture_arts.result.u_star).codes
        eta = fixture_arts.problem.eta
        before = sinkhorn(
            TransportProblem.from_supports(codes[groups.i_target], codes[groups.i_reference], eta)
        ).transport_cost
        after = sinkhorn(
            TransportProblem.from_supports(post, codes[groups.i_reference], eta)
        ).transport_cost
        assert abs(m.dw - (before - after)) < 1e-8


class TestGroupMovement:
    def test_reference_row_zero_by_convention(self, fixture_arts):
        rows = {r.group: r for r in fixture_arts.metrics.group_movement}
        assert rows["reference"].centroid_distance == 0.0
        assert rows["reference"].ot_discrepancy == 0.0

    def test_post_strictly_closer_on_fixture(self, fixture_arts):
        rows = {r.group: r for r in fixture_arts.metrics.group_movement}
        assert rows["target_post"].centroid_distance < rows["target_pre"].centroid_distance
        assert rows["target_post"].ot_discrepancy < rows["target_pre"].ot_discrepancy
        assert rows["target_post"].mean_probability > rows["target_pre"].mean_probability

    def test_degenerate_identical_groups(self):
        point = np.array([0.5, 0.5])
        codes = np.tile(point, (6, 1))
        groups = GroupAssignment(
            labels=np.array([0, 0, 0, 1, 1, 1]),
            centroids=np.tile(point, (2, 1)),
            reference=1,
            target=0,
            cluster_means=np.array([0.0, 1.0]),
        )
        model = SurrogateModel(beta=np.array([1.0, -1.0]), bias=0.0)
        rows = group_movement_report(groups, model, codes, codes[:3], eta=0.1)
        pre, post = rows[1], rows[2]
        assert pre.centroid_distance == post.centroid_distance == 0.0
        assert pre.ot_discrepancy == pytest.approx(0.0, abs=1e-12)
        assert pre.mean_probability == post.mean_probability == rows[0].mean_probability


class TestMetricsReport:
    def test_fields_and_identities(self, fixture_arts):
        m = fixture_arts.metrics
        assert 0.0 <= m.r_conv <= 1.0
        assert m.n_lever <= fixture_arts.dataset.schema.s_ctrl.size
        assert m.dw == m.w_before - m.w_after
        assert m.rho_reduction == pytest.approx(m.dw / m.w_before)
        assert m.eff_conv == pytest.approx(m.n_conv / max(m.effort, 1e-12))
        assert m.n_target == fixture_arts.groups.i_target.size

    def test_json_and_csv_row(self, tmp_path, fixture_arts):
        m = fixture_arts.metrics
        m.to_json(tmp_path / "m.json")
        row = m.csv_row()
        assert set(row) == set(m.CSV_FIELDS)
        import json

        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["n_conv"] == m.n_conv
        assert "cross_check" in doc

    def test_cross_check_present(self, fixture_arts):
        check = fixture_arts.metrics.cross_check
        assert {"mean_prob_codes", "mean_prob_nnls", "gap", "flagged", "n_conv_nnls"} <= set(check)
