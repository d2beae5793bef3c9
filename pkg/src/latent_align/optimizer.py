"""Sparse feasible distributional intervention solver.

The nonconvex objective (entropic transport discrepancy of the post-change
target distribution, plus a weighted l2,1 lever penalty) is handled with an
auxiliary-variable relaxation: latent codes U are free nonnegative variables
tied to the feature-space change by a quadratic coupling penalty. Each outer
iteration alternates a projected gradient step on U with a projected
proximal-gradient step on the intervention matrix, and an iterate is accepted
only if the penalized objective strictly decreases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .factorization import LatentModel, nnls_project_rows, normalize_rows
from .grouping import GroupAssignment
from .schema import FeatureSchema, SurveyDataset, validate_row
from .surrogate import PriorityWeights, SurrogateModel
from . import transport

NORMALIZATION_FLOOR = 1e-12
DEFAULT_TAU_DELTA = 1e-6
MAX_HALVINGS = 20
# Auto coupling weight: scale / (n_target * median row mass squared). The
# alignment force on a target row is O(1/n_target) and acts on codes whose
# mass is the row's l1 norm, so a fixed O(1) coupling weight pins the codes
# to their projections and no descent direction can move them.
BETA_AUTO_SCALE = 300.0

STATUS_CONVERGED = "converged"
STATUS_MAX_OUTER = "max_outer"
STATUS_STALLED = "stalled_at_zero"
STATUS_PLATEAU = "plateau"

ALIGNMENT_OT = "ot"
ALIGNMENT_MEAN_MARGIN = "mean_margin"
ALIGNMENT_CENTROID = "centroid"


@dataclass
class InterventionProblem:
    """Inputs and knobs for one intervention solve.

    The surrogate rides along for trajectory logging (mean predicted gain per
    accepted iteration) and for the outcome-only alignment variant.
    beta_couple=None selects a data-scaled coupling weight.
    """

    dataset: SurveyDataset
    latent: LatentModel
    groups: GroupAssignment
    priorities: PriorityWeights
    surrogate: SurrogateModel
    eta: float = transport.DEFAULT_ETA
    sparsity_weight: float = 0.05
    beta_couple: float | None = None
    step_u: float = 0.1
    step_delta: float = 0.1
    max_outer: int = 200
    tol_obj: float = 1e-5
    alignment: str = ALIGNMENT_OT
    sinkhorn_max_iters: int = transport.DEFAULT_MAX_ITERS
    sinkhorn_tol: float = transport.DEFAULT_TOL
    tau_delta: float = DEFAULT_TAU_DELTA
    step_growth: float = 2.0

    def __post_init__(self):
        if self.sparsity_weight < 0:
            raise ValueError("sparsity_weight must be >= 0")
        if self.beta_couple is not None and not self.beta_couple > 0:
            raise ValueError("beta_couple must be positive (or None for auto)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.step_u <= 0 or self.step_delta <= 0:
            raise ValueError("step sizes must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.alignment not in (ALIGNMENT_OT, ALIGNMENT_MEAN_MARGIN, ALIGNMENT_CENTROID):
            raise ValueError(f"unknown alignment kind {self.alignment!r}")


@dataclass(frozen=True)
class TrajectoryRecord:
    iteration: int
    objective: float
    alignment: float
    coupling: float
    sparsity: float
    mean_gain: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "objective": self.objective,
            "alignment": self.alignment,
            "coupling": self.coupling,
            "sparsity": self.sparsity,
            "mean_gain": self.mean_gain,
        }


@dataclass(frozen=True)
class LeverActivation:
    feature: int
    name: str
    magnitude: float
    omega: float

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "name": self.name,
            "magnitude": self.magnitude,
            "omega": self.omega,
        }


@dataclass
class InterventionResult:
    delta: np.ndarray
    u_star: np.ndarray
    gamma: np.ndarray | None
    trajectory: tuple[TrajectoryRecord, ...]
    active_levers: tuple[LeverActivation, ...]
    rounded_delta: np.ndarray
    status: str
    n_sinkhorn_calls: int
    beta_used: float
    objective: float

    def __post_init__(self):
        self.delta.setflags(write=False)
        self.u_star.setflags(write=False)
        self.rounded_delta.setflags(write=False)

    def delta_triplets(self, rounded: bool = False) -> list[dict]:
        D = self.rounded_delta if rounded else self.delta
        rows, cols = np.nonzero(D)
        return [
            {"i": int(i), "j": int(j), "value": float(D[i, j])}
            for i, j in zip(rows.tolist(), cols.tolist())
        ]

    def to_dict(self) -> dict:
        return {
            "delta": self.delta_triplets(),
            "rounded_delta": self.delta_triplets(rounded=True),
            "active_levers": [a.to_dict() for a in self.active_levers],
            "trajectory": [r.to_dict() for r in self.trajectory],
            "status": self.status,
            "n_sinkhorn_calls": self.n_sinkhorn_calls,
            "beta_used": self.beta_used,
            "objective": self.objective,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    def trajectory_csv(self, path: str | Path) -> None:
        lines = ["iteration,objective,alignment,coupling,sparsity,mean_gain"]
        for r in self.trajectory:
            lines.append(
                f"{r.iteration},{r.objective!r},{r.alignment!r},{r.coupling!r},{r.sparsity!r},{r.mean_gain!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def project_feasible(
    delta: np.ndarray,
    X: np.ndarray,
    schema: FeatureSchema,
    i_target: np.ndarray,
) -> np.ndarray:
    """Project an intervention matrix onto the feasible set.

    Rows outside the target group and columns that are fixed or categorical
    become exact zeros; surviving entries are clipped so the post value stays
    inside the feature bounds. Idempotent.
    """
    delta = np.array(delta, dtype=float)
    n, d = X.shape
    if delta.shape != (n, d):
        raise ValueError(f"delta has shape {delta.shape}, expected {X.shape}")
    mask_rows = np.zeros(n, dtype=bool)
    mask_rows[np.asarray(i_target, dtype=int)] = True
    delta[~mask_rows, :] = 0.0
    blocked = np.concatenate([schema.s_fixed, schema.s_categorical])
    delta[:, np.unique(blocked)] = 0.0
    lo = schema.lowers[None, :] - X
    hi = schema.uppers[None, :] - X
    rows = np.flatnonzero(mask_rows)
    delta[rows, :] = np.clip(delta[rows, :], lo[rows, :], hi[rows, :])
    delta[:, np.unique(blocked)] = 0.0
    return delta


def prox_weighted_l21(block: np.ndarray, rho: np.ndarray, t_lambda: float) -> np.ndarray:
    """Columnwise group soft-threshold with per-column weights.

    Column j shrinks by max(0, 1 - t_lambda * rho_j / ||col_j||); zero
    columns stay zero, and t_lambda = 0 is the identity.
    """
    if t_lambda < 0:
        raise ValueError("t_lambda must be >= 0")
    block = np.asarray(block, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (block.shape[1],):
        raise ValueError("one rho per column required")
    if t_lambda == 0:
        return block.copy()
    norms = np.linalg.norm(block, axis=0)
    factor = np.zeros_like(norms)
    nz = norms > 0
    factor[nz] = np.maximum(0.0, 1.0 - t_lambda * rho[nz] / norms[nz])
    return block * factor[None, :]


def coupling_residual(delta_b: np.ndarray, U: np.ndarray, X_B: np.ndarray, H: np.ndarray) -> float:
    """Squared Frobenius mismatch between post rows and their latent image:
    sum_i ||x_i + delta_i - U_i H||^2 over the target block."""
    R = X_B + delta_b - U @ H
    return float(np.einsum("ij,ij->", R, R))


def coupling_grad_delta(delta_b: np.ndarray, U: np.ndarray, X_B: np.ndarray, H: np.ndarray) -> np.ndarray:
    return 2.0 * (X_B + delta_b - U @ H)


def coupling_grad_u(delta_b: np.ndarray, U: np.ndarray, X_B: np.ndarray, H: np.ndarray) -> np.ndarray:
    return -2.0 * (X_B + delta_b - U @ H) @ H.T


def _tilde(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Floor-guarded row l1 normalization and the scales used."""
    s = U.sum(axis=1) + NORMALIZATION_FLOOR
    return U / s[:, None], s


def _chain_through_normalization(g_tilde: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the normalized codes back to the raw codes.

    With u~ = U_p / (||U_p||_1 + floor), the Jacobian contracts to
    (g - (g . u~) 1) / s per row.
    """
    u_t, s = _tilde(U)
    radial = np.sum(g_tilde * u_t, axis=1, keepdims=True)
    return (g_tilde - radial) / s[:, None]


def ot_grad_wrt_U(U: np.ndarray, W_tilde_ref: np.ndarray, gamma: np.ndarray, eta: float) -> np.ndarray:
    """Gradient of the fixed-plan transport cost w.r.t. the raw codes.

    The plan is held fixed (envelope-style update), so the entropy term is
    constant and only sum_pq gamma_pq ||u~_p - w~_q||^2 varies; the gradient
    chains through the row normalization of U. eta is part of the problem
    signature but does not enter at a fixed plan.
    """
    del eta
    U = np.asarray(U, dtype=float)
    u_t, _ = _tilde(U)
    if gamma.shape != (U.shape[0], W_tilde_ref.shape[0]):
        raise ValueError("plan shape does not match the supports")
    row_mass = gamma.sum(axis=1)
    g_tilde = 2.0 * (row_mass[:, None] * u_t - gamma @ W_tilde_ref)
    return _chain_through_normalization(g_tilde, U)


class _OTAlignment:
    def __init__(self, w_ref: np.ndarray, eta: float, max_iters: int, tol: float):
        self.w_ref = w_ref
        self.eta = eta
        self.max_iters = max_iters
        self.tol = tol
        self.plan: np.ndarray | None = None
        self.n_calls = 0

    def refresh(self, u_tilde: np.ndarray) -> float:
        problem = transport.TransportProblem.from_supports(u_tilde, self.w_ref, self.eta)
        sol = transport.sinkhorn(problem, max_iters=self.max_iters, tol=self.tol)
        self.n_calls += 1
        self.plan = sol.gamma
        return sol.transport_cost

    def grad_u(self, U: np.ndarray) -> np.ndarray:
        return ot_grad_wrt_U(U, self.w_ref, self.plan, self.eta)


class _MeanMarginAlignment:
    """Outcome-only stand-in: minimize the negative mean surrogate margin."""

    def __init__(self, beta: np.ndarray, bias: float):
        self.beta = beta
        self.bias = bias
        self.plan = None
        self.n_calls = 0

    def refresh(self, u_tilde: np.ndarray) -> float:
        return -float(np.mean(u_tilde @ self.beta + self.bias))

    def grad_u(self, U: np.ndarray) -> np.ndarray:
        n_b = U.shape[0]
        g_tilde = np.tile(-self.beta / n_b, (n_b, 1))
        return _chain_through_normalization(g_tilde, U)


class _CentroidAlignment:
    """Distribution-free stand-in: squared distance between group mean codes."""

    def __init__(self, centroid_ref: np.ndarray):
        self.centroid_ref = centroid_ref
        self.plan = None
        self.n_calls = 0

    def refresh(self, u_tilde: np.ndarray) -> float:
        diff = u_tilde.mean(axis=0) - self.centroid_ref
        return float(diff @ diff)

    def grad_u(self, U: np.ndarray) -> np.ndarray:
        u_t, _ = _tilde(U)
        n_b = U.shape[0]
        diff = u_t.mean(axis=0) - self.centroid_ref
        g_tilde = np.tile(2.0 * diff / n_b, (n_b, 1))
        return _chain_through_normalization(g_tilde, U)


def _make_alignment(problem: InterventionProblem, w_ref: np.ndarray):
    if problem.alignment == ALIGNMENT_OT:
        return _OTAlignment(w_ref, problem.eta, problem.sinkhorn_max_iters, problem.sinkhorn_tol)
    if problem.alignment == ALIGNMENT_MEAN_MARGIN:
        return _MeanMarginAlignment(problem.surrogate.beta, problem.surrogate.bias)
    return _CentroidAlignment(w_ref.mean(axis=0))


def resolve_beta(problem: InterventionProblem, U0: np.ndarray) -> float:
    if problem.beta_couple is not None:
        return problem.beta_couple
    n_b = U0.shape[0]
    s_med = float(np.median(U0.sum(axis=1)))
    return BETA_AUTO_SCALE / (n_b * max(s_med, 1.0) ** 2)


def optimize(problem: InterventionProblem) -> InterventionResult:
    """Run the alternating solve and return the final feasible intervention.

    Each outer iteration refreshes the alignment term at the current codes,
    takes a projected gradient step on U (alignment pull plus coupling), then
    a proximal step on the lever block of the intervention (coupling gradient,
    weighted group soft-threshold, feasibility clip). A candidate is accepted
    only if the penalized objective strictly decreases; otherwise both steps
    halve and the iteration retries, up to MAX_HALVINGS times.
    """
    dataset, latent, groups = problem.dataset, problem.latent, problem.groups
    schema = dataset.schema
    levers = schema.policy_levers
    if levers.size == 0:
        raise ValueError("no controllable non-categorical features to intervene on")
    i_b = groups.i_target
    i_a = groups.i_reference
    X = dataset.X
    X_B = X[i_b]
    H = latent.H
    n_b = i_b.size

    codes_all = normalize_rows(latent.W).codes
    w_ref = codes_all[i_a]
    w_pre_b = codes_all[i_b]
    mean_prob_pre = float(np.mean(problem.surrogate.predict_proba(w_pre_b)))

    U = nnls_project_rows(X_B, H)
    D = np.zeros((n_b, levers.size))
    rho_lev = problem.priorities.rho_for(levers)
    beta = resolve_beta(problem, U)
    align = _make_alignment(problem, w_ref)

    lo = schema.lowers[levers][None, :] - X_B[:, levers]
    hi = schema.uppers[levers][None, :] - X_B[:, levers]

    lam = problem.sparsity_weight
    lam_h = float(np.max(np.linalg.eigvalsh(H @ H.T)))
    s_med = float(np.median(U.sum(axis=1)))
    curvature_u = 2.0 * beta * lam_h + 2.0 / (n_b * max(s_med, 1.0) ** 2)
    t_u = problem.step_u / curvature_u
    t_d = problem.step_delta / (2.0 * beta)

    def residual(U_, D_):
        R = X_B - U_ @ H
        R[:, levers] += D_
        return R

    def sparsity_value(D_):
        return float(np.sum(rho_lev * np.linalg.norm(D_, axis=0)))

    def mean_gain(u_tilde):
        return float(np.mean(problem.surrogate.predict_proba(u_tilde))) - mean_prob_pre

    u_t, _ = _tilde(U)
    align_val = align.refresh(u_t)
    R = residual(U, D)
    coup = float(np.einsum("ij,ij->", R, R))
    spars = sparsity_value(D)
    J = align_val + beta * coup + lam * spars
    trajectory = [TrajectoryRecord(0, J, align_val, coup, spars, mean_gain(u_t))]

    status = STATUS_MAX_OUTER
    accepted_any = False
    small_streak = 0
    for it in range(1, problem.max_outer + 1):
        g_u = align.grad_u(U) + beta * (-2.0 * R @ H.T)
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            U_c = np.maximum(U - t_u * g_u, 0.0)
            R_mid = residual(U_c, D)
            g_d = 2.0 * beta * R_mid[:, levers]
            D_c = prox_weighted_l21(D - t_d * g_d, rho_lev, t_d * lam)
            D_c = np.clip(D_c, lo, hi)

            u_tc, _ = _tilde(U_c)
            align_c = align.refresh(u_tc)
            R_c = residual(U_c, D_c)
            coup_c = float(np.einsum("ij,ij->", R_c, R_c))
            spars_c = sparsity_value(D_c)
            J_c = align_c + beta * coup_c + lam * spars_c
            if J_c < J:
                accepted = True
                break
            t_u *= 0.5
            t_d *= 0.5
        if not accepted:
            status = STATUS_PLATEAU if accepted_any else STATUS_STALLED
            break

        rel = (J - J_c) / max(abs(J), 1e-30)
        U, D, R, u_t = U_c, D_c, R_c, u_tc
        J, align_val, coup, spars = J_c, align_c, coup_c, spars_c
        trajectory.append(TrajectoryRecord(it, J, align_val, coup, spars, mean_gain(u_t)))
        accepted_any = True
        t_u *= problem.step_growth
        t_d *= problem.step_growth
        if rel < problem.tol_obj:
            small_streak += 1
            if small_streak >= 3:
                status = STATUS_CONVERGED
                break
        else:
            small_streak = 0

    if align.plan is not None:
        align.refresh(u_t)  # leave the stored plan at the final iterate

    delta = np.zeros_like(X)
    delta[np.ix_(i_b, levers)] = D
    rounded = round_report(delta, X, schema, i_b)
    _assert_feasible(delta, rounded, X, schema, i_b)

    norms = np.linalg.norm(D, axis=0)
    omega_lev = problem.priorities.omega_for(levers)
    active = [
        LeverActivation(int(levers[c]), schema.features[levers[c]].name, float(norms[c]), float(omega_lev[c]))
        for c in range(levers.size)
        if norms[c] > problem.tau_delta
    ]
    active.sort(key=lambda a: (-a.magnitude, a.feature))

    return InterventionResult(
        delta=delta,
        u_star=U,
        gamma=align.plan,
        trajectory=tuple(trajectory),
        active_levers=tuple(active),
        rounded_delta=rounded,
        status=status,
        n_sinkhorn_calls=align.n_calls,
        beta_used=beta,
        objective=J,
    )


def _assert_feasible(delta, rounded, X, schema, i_b):
    for i in i_b:
        bad = validate_row(X[i] + delta[i], schema, mode="optimize")
        if bad:
            raise RuntimeError(f"optimizer produced an infeasible row {i}: {bad[0]}")
        bad = validate_row(X[i] + rounded[i], schema, mode="report")
        if bad:
            raise RuntimeError(f"rounding produced an invalid report row {i}: {bad[0]}")


def round_report(
    delta: np.ndarray,
    X: np.ndarray,
    schema: FeatureSchema,
    i_target: np.ndarray,
) -> np.ndarray:
    """Re-express the intervention with binary and Likert post values rounded.

    Rounding acts on x + delta and is mapped back to a delta; exact halves
    round away from zero. Numeric non-binary features pass through, and rows
    outside the target group are untouched.
    """
    delta = np.asarray(delta, dtype=float)
    rounded = delta.copy()
    i_target = np.asarray(i_target, dtype=int)
    discrete = np.concatenate([schema.s_likert, schema.s_binary])
    for j in np.unique(discrete):
        lo, hi = schema.lowers[j], schema.uppers[j]
        post = X[i_target, j] + delta[i_target, j]
        post = np.clip(np.floor(post + 0.5), lo, hi)
        rounded[i_target, j] = post - X[i_target, j]
    return rounded
