"""Metrics for intervention runs: conversion counts, effort and lever
sparsity, transport-discrepancy reduction, and the pre/post group-movement
table.

Conversion is evaluated on the optimizer's auxiliary codes (their normalized
form), with a cross-check that re-projects the post rows exactly and flags
mean-probability gaps above CROSS_CHECK_TOL.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .factorization import LatentModel, nnls_project_rows, normalize_rows
from .grouping import EmpiricalMeasure, GroupAssignment, empirical_measure
from .optimizer import InterventionResult
from .schema import SurveyDataset
from .surrogate import SurrogateModel
from . import transport

EFFORT_FLOOR = 1e-12
CROSS_CHECK_TOL = 1e-3


@dataclass(frozen=True)
class ConversionMetrics:
    n_conv: int
    r_conv: float
    mean_dp: float


@dataclass(frozen=True)
class AlignmentMetrics:
    w_before: float
    w_after: float
    dw: float
    rho_reduction: float
    degenerate: bool = False


@dataclass(frozen=True)
class GroupMovementRow:
    group: str
    size: int
    mean_probability: float
    centroid_distance: float
    ot_discrepancy: float

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "size": self.size,
            "mean_probability": self.mean_probability,
            "centroid_distance": self.centroid_distance,
            "ot_discrepancy": self.ot_discrepancy,
        }


@dataclass
class MetricsReport:
    n_conv: int
    r_conv: float
    mean_dp: float
    effort: float
    n_lever: int
    eff_conv: float
    w_before: float
    w_after: float
    dw: float
    rho_reduction: float
    degenerate_alignment: bool
    group_movement: tuple[GroupMovementRow, ...]
    cross_check: dict = field(default_factory=dict)
    n_target: int = 0

    def to_dict(self) -> dict:
        return {
            "n_conv": self.n_conv,
            "r_conv": self.r_conv,
            "mean_dp": self.mean_dp,
            "effort": self.effort,
            "n_lever": self.n_lever,
            "eff_conv": self.eff_conv,
            "w_before": self.w_before,
            "w_after": self.w_after,
            "dw": self.dw,
            "rho_reduction": self.rho_reduction,
            "degenerate_alignment": self.degenerate_alignment,
            "group_movement": [r.to_dict() for r in self.group_movement],
            "cross_check": self.cross_check,
            "n_target": self.n_target,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    CSV_FIELDS = (
        "n_conv",
        "r_conv",
        "mean_dp",
        "n_lever",
        "effort",
        "eff_conv",
        "w_before",
        "w_after",
        "dw",
        "rho_reduction",
        "n_target",
    )

    def csv_row(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in self.CSV_FIELDS}


def conversion_metrics(
    model: SurrogateModel,
    codes_pre: np.ndarray,
    codes_post: np.ndarray,
    tau_y: float,
) -> ConversionMetrics:
    """Count target respondents whose predicted score crosses tau_y upward.

    A respondent converts when the pre probability is strictly below tau_y
    and the post probability reaches it (>=).
    """
    if not 0.0 < tau_y < 1.0:
        raise ValueError(f"tau_y must lie in (0, 1), got {tau_y}")
    p_pre = model.predict_proba(codes_pre)
    p_post = model.predict_proba(codes_post)
    if p_pre.shape != p_post.shape:
        raise ValueError("pre and post code sets differ in length")
    converted = (p_pre < tau_y) & (p_post >= tau_y)
    n_conv = int(np.sum(converted))
    return ConversionMetrics(
        n_conv=n_conv,
        r_conv=n_conv / p_pre.shape[0],
        mean_dp=float(np.mean(p_post - p_pre)),
    )


def effort_and_levers(
    delta: np.ndarray,
    s_ctrl: np.ndarray,
    tau_delta: float,
) -> tuple[float, int, list[tuple[int, float]]]:
    """Total l2,1 magnitude over controllable columns, the count of active
    levers at the tau_delta threshold, and the per-column norm table."""
    if tau_delta < 0:
        raise ValueError("tau_delta must be >= 0")
    s_ctrl = np.asarray(s_ctrl, dtype=int)
    norms = np.linalg.norm(np.asarray(delta, dtype=float)[:, s_ctrl], axis=0)
    effort = float(np.sum(norms))
    n_lever = int(np.sum(norms > tau_delta))
    table = [(int(j), float(norms[c])) for c, j in enumerate(s_ctrl)]
    return effort, n_lever, table


def alignment_metrics(
    mu_pre: EmpiricalMeasure,
    mu_post: EmpiricalMeasure,
    mu_ref: EmpiricalMeasure,
    eta: float,
    max_iters: int = transport.DEFAULT_MAX_ITERS,
    tol: float = transport.DEFAULT_TOL,
) -> AlignmentMetrics:
    """Transport discrepancy to the reference before and after intervention.

    Uses the transport-cost convention. A zero before-value marks the
    reduction ratio degenerate and reports it as 0.
    """
    before = transport.sinkhorn(
        transport.TransportProblem.from_measures(mu_pre, mu_ref, eta), max_iters, tol
    ).transport_cost
    after = transport.sinkhorn(
        transport.TransportProblem.from_measures(mu_post, mu_ref, eta), max_iters, tol
    ).transport_cost
    dw = before - after
    if before > 0:
        return AlignmentMetrics(before, after, dw, dw / before)
    return AlignmentMetrics(before, after, dw, 0.0, degenerate=True)


def group_movement_report(
    groups: GroupAssignment,
    model: SurrogateModel,
    codes_pre: np.ndarray,
    codes_post_target: np.ndarray,
    eta: float,
    max_iters: int = transport.DEFAULT_MAX_ITERS,
    tol: float = transport.DEFAULT_TOL,
) -> tuple[GroupMovementRow, ...]:
    """Reference vs target-before vs target-after movement table.

    The reference row reports zero distance and zero discrepancy to itself by
    convention. Distances are between group centroids in normalized latent
    space; discrepancies are entropic transport costs to the reference.
    """
    i_a, i_b = groups.i_reference, groups.i_target
    ref = codes_pre[i_a]
    pre = codes_pre[i_b]
    post = np.asarray(codes_post_target, dtype=float)
    if post.shape != pre.shape:
        raise ValueError("post codes must cover exactly the target group")
    c_ref = ref.mean(axis=0)

    def ot_to_ref(supp):
        problem = transport.TransportProblem.from_supports(supp, ref, eta)
        return transport.sinkhorn(problem, max_iters, tol).transport_cost

    rows = [
        GroupMovementRow("reference", ref.shape[0], float(np.mean(model.predict_proba(ref))), 0.0, 0.0),
        GroupMovementRow(
            "target_pre",
            pre.shape[0],
            float(np.mean(model.predict_proba(pre))),
            float(np.linalg.norm(pre.mean(axis=0) - c_ref)),
            ot_to_ref(pre),
        ),
        GroupMovementRow(
            "target_post",
            post.shape[0],
            float(np.mean(model.predict_proba(post))),
            float(np.linalg.norm(post.mean(axis=0) - c_ref)),
            ot_to_ref(post),
        ),
    ]
    return tuple(rows)


def evaluate_intervention(
    dataset: SurveyDataset,
    latent: LatentModel,
    groups: GroupAssignment,
    model: SurrogateModel,
    result: InterventionResult,
    eta: float,
    tau_y: float = 0.5,
    tau_delta: float = 1e-6,
    cross_check: bool = True,
    sinkhorn_max_iters: int = transport.DEFAULT_MAX_ITERS,
    sinkhorn_tol: float = transport.DEFAULT_TOL,
) -> MetricsReport:
    """Standard metrics harness shared by the full method, baselines and
    ablations."""
    i_b = groups.i_target
    codes_all = normalize_rows(latent.W).codes
    codes_pre_b = codes_all[i_b]
    codes_post_b = normalize_rows(result.u_star).codes

    conv = conversion_metrics(model, codes_pre_b, codes_post_b, tau_y)
    effort, n_lever, _ = effort_and_levers(result.delta, dataset.schema.s_ctrl, tau_delta)
    eff_conv = conv.n_conv / max(effort, EFFORT_FLOOR)

    pre_codes = normalize_rows(latent.W)
    mu_pre = empirical_measure(pre_codes, i_b)
    mu_ref = empirical_measure(pre_codes, groups.i_reference)
    mu_post = EmpiricalMeasure(support=codes_post_b.copy(), weights=np.full(i_b.size, 1.0 / i_b.size))
    align = alignment_metrics(mu_pre, mu_post, mu_ref, eta, sinkhorn_max_iters, sinkhorn_tol)

    movement = group_movement_report(
        groups, model, codes_all, codes_post_b, eta, sinkhorn_max_iters, sinkhorn_tol
    )

    check: dict = {}
    if cross_check:
        post_rows = dataset.X[i_b] + result.delta[i_b]
        codes_nnls = normalize_rows(nnls_project_rows(post_rows, latent.H)).codes
        p_codes = float(np.mean(model.predict_proba(codes_post_b)))
        p_nnls = float(np.mean(model.predict_proba(codes_nnls)))
        conv_nnls = conversion_metrics(model, codes_pre_b, codes_nnls, tau_y)
        check = {
            "mean_prob_codes": p_codes,
            "mean_prob_nnls": p_nnls,
            "gap": abs(p_codes - p_nnls),
            "flagged": bool(abs(p_codes - p_nnls) > CROSS_CHECK_TOL),
            "n_conv_nnls": conv_nnls.n_conv,
        }

    return MetricsReport(
        n_conv=conv.n_conv,
        r_conv=conv.r_conv,
        mean_dp=conv.mean_dp,
        effort=effort,
        n_lever=n_lever,
        eff_conv=eff_conv,
        w_before=align.w_before,
        w_after=align.w_after,
        dw=align.dw,
        rho_reduction=align.rho_reduction,
        degenerate_alignment=align.degenerate,
        group_movement=movement,
        cross_check=check,
        n_target=int(i_b.size),
    )
