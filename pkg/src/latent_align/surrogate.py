"""Transparent logistic probe on normalized latent codes, exact Shapley
attribution of latent factors, and transfer of factor relevance to
controllable-feature priorities.

The probe is an association model, not a causal one: its attributions rank
latent factors for the target group and are pushed through the frozen basis
to produce per-feature priority scores and sparsity penalty weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_EPS_OMEGA = 1e-6
GRAD_TOL = 1e-7
MAX_GD_ITERS = 5000


@dataclass
class SurrogateModel:
    """Logistic probe: predict(w) = sigmoid(beta . w + bias)."""

    beta: np.ndarray
    bias: float
    tau_y: float = 0.5
    train_accuracy: float = 0.0
    l2: float = 0.0
    n_iters: int = 0
    grad_norm: float = 0.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.beta.setflags(write=False)
        if not 0.0 < self.tau_y < 1.0:
            raise ValueError(f"tau_y must lie in (0, 1), got {self.tau_y}")

    def margin(self, W: np.ndarray) -> np.ndarray:
        return np.asarray(W, dtype=float) @ self.beta + self.bias

    def predict_proba(self, W: np.ndarray) -> np.ndarray:
        m = self.margin(W)
        out = np.empty_like(m)
        pos = m >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
        e = np.exp(m[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "bias": float(self.bias),
            "tau_y": float(self.tau_y),
            "train_accuracy": float(self.train_accuracy),
            "l2": float(self.l2),
            "n_iters": int(self.n_iters),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        return cls(
            beta=np.array(d["beta"], dtype=float),
            bias=float(d["bias"]),
            tau_y=float(d["tau_y"]),
            train_accuracy=float(d["train_accuracy"]),
            l2=float(d.get("l2", 0.0)),
            n_iters=int(d.get("n_iters", 0)),
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PriorityWeights:
    """Latent-factor relevance and the derived controllable-feature priorities.

    omega and rho are aligned with s_ctrl (the controllable feature indices,
    in schema order); rho_j = 1 / (omega_j + eps_omega) exactly.
    """

    phi: np.ndarray
    varphi: np.ndarray
    top_factors: np.ndarray
    omega: np.ndarray
    rho: np.ndarray
    s_ctrl: np.ndarray
    eps_omega: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.phi, self.varphi, self.top_factors, self.omega, self.rho, self.s_ctrl):
            arr.setflags(write=False)

    def rho_for(self, feature_indices: np.ndarray) -> np.ndarray:
        """Penalty weights for a subset of controllable features."""
        pos = {int(j): i for i, j in enumerate(self.s_ctrl)}
        try:
            sel = [pos[int(j)] for j in feature_indices]
        except KeyError as exc:
            raise ValueError(f"feature {exc} is not controllable") from exc
        return self.rho[sel]

    def omega_for(self, feature_indices: np.ndarray) -> np.ndarray:
        pos = {int(j): i for i, j in enumerate(self.s_ctrl)}
        sel = [pos[int(j)] for j in feature_indices]
        return self.omega[sel]

    def to_dict(self) -> dict:
        return {
            "varphi": self.varphi.tolist(),
            "top_factors": self.top_factors.tolist(),
            "omega": self.omega.tolist(),
            "rho": self.rho.tolist(),
            "s_ctrl": self.s_ctrl.tolist(),
            "eps_omega": float(self.eps_omega),
            "provenance": self.provenance,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")


def binarize_outcome(y: np.ndarray, rule: str = "median", threshold: float | None = None) -> np.ndarray:
    """Turn outcome scores into binary training labels.

    rule="median": label 1 iff y_i is strictly above the median (errors on a
    constant vector). rule="fixed": label 1 iff y_i >= threshold.
    """
    y = np.asarray(y, dtype=float)
    if rule == "median":
        if np.ptp(y) == 0.0:
            raise ValueError("outcome is constant; median binarization undefined")
        return (y > np.median(y)).astype(int)
    if rule == "fixed":
        if threshold is None:
            raise ValueError("fixed rule needs a threshold")
        return (y >= threshold).astype(int)
    raise ValueError(f"unknown binarization rule {rule!r}")


def _logistic_loss_and_grad(W, labels, beta, bias, l2):
    m = W @ beta + bias
    # mean softplus(m) - y*m, stable for large |m|
    loss = float(np.mean(np.logaddexp(0.0, m) - labels * m)) + 0.5 * l2 * float(beta @ beta)
    p = np.empty_like(m)
    pos = m >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    p[~pos] = e / (1.0 + e)
    r = p - labels
    g_beta = W.T @ r / W.shape[0] + l2 * beta
    g_bias = float(np.mean(r))
    return loss, g_beta, g_bias


def fit_logistic(
    W_tilde: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-2,
    seed: int = 0,
    tau_y: float = 0.5,
    max_iters: int = MAX_GD_ITERS,
    grad_tol: float = GRAD_TOL,
) -> SurrogateModel:
    """Fit the probe by deterministic full-batch gradient descent.

    Minimizes mean logistic loss plus (l2/2)||beta||^2 (bias unpenalized)
    with Armijo backtracking, starting from zero parameters. Stops when the
    gradient infinity norm falls below grad_tol or after max_iters. The seed
    is recorded for provenance only; the solve itself is deterministic.
    """
    W = np.asarray(W_tilde, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if W.ndim != 2 or labels.shape != (W.shape[0],):
        raise ValueError("W_tilde must be (n, k) with one label per row")
    classes = np.unique(labels)
    if not np.array_equal(classes, [0, 1]) and not np.array_equal(classes, [0.0, 1.0]):
        raise ValueError(f"labels must contain both classes 0 and 1, got {classes}")

    k = W.shape[1]
    beta = np.zeros(k)
    bias = 0.0
    step = 1.0
    loss, g_beta, g_bias = _logistic_loss_and_grad(W, labels, beta, bias, l2)
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = max(float(np.max(np.abs(g_beta))), abs(g_bias))
        if gnorm < grad_tol:
            break
        g_sq = float(g_beta @ g_beta) + g_bias**2
        step = min(step * 2.0, 1e8)
        while True:
            nb = beta - step * g_beta
            nbias = bias - step * g_bias
            nloss, ng_beta, ng_bias = _logistic_loss_and_grad(W, labels, nb, nbias, l2)
            if nloss <= loss - 1e-4 * step * g_sq or step < 1e-18:
                break
            step *= 0.5
        beta, bias, loss, g_beta, g_bias = nb, nbias, nloss, ng_beta, ng_bias

    model = SurrogateModel(
        beta=beta,
        bias=bias,
        tau_y=tau_y,
        l2=l2,
        n_iters=it,
        grad_norm=max(float(np.max(np.abs(g_beta))), abs(g_bias)),
    )
    preds = (model.predict_proba(W) >= 0.5).astype(float)
    model.train_accuracy = float(np.mean(preds == labels))
    return model


def shapley_latent(model: SurrogateModel, W_tilde: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Exact per-respondent Shapley values on the log-odds margin.

    The margin g(w) = beta . w + bias is linear, so the Shapley value of
    factor r for respondent i is beta_r * (w_ir - background_r), and the
    attributions sum exactly to g(w_i) - g(background).
    """
    W = np.asarray(W_tilde, dtype=float)
    background = np.asarray(background, dtype=float)
    if background.shape != (W.shape[1],):
        raise ValueError(f"background has shape {background.shape}, expected ({W.shape[1]},)")
    return model.beta[None, :] * (W - background[None, :])


def aggregate_relevance(phi: np.ndarray, i_target: np.ndarray) -> np.ndarray:
    """Mean absolute attribution over the target group, per factor."""
    i_target = np.asarray(i_target, dtype=int)
    if i_target.size == 0:
        raise ValueError("empty target index set")
    return np.mean(np.abs(np.asarray(phi, dtype=float)[i_target]), axis=0)


def select_topq(varphi: np.ndarray, q: int) -> np.ndarray:
    """Indices of the q largest relevance values, descending, ties to lower index."""
    varphi = np.asarray(varphi, dtype=float)
    k = varphi.shape[0]
    if not 1 <= q <= k:
        raise ValueError(f"need 1 <= q <= {k}, got q={q}")
    order = np.lexsort((np.arange(k), -varphi))
    return order[:q]


def feature_priorities(
    top_factors: np.ndarray,
    varphi: np.ndarray,
    H: np.ndarray,
    s_ctrl: np.ndarray,
    eps_omega: float = DEFAULT_EPS_OMEGA,
) -> tuple[np.ndarray, np.ndarray]:
    """Transfer factor relevance to controllable features through the basis.

    omega_j = sum over selected factors of varphi_r * H[r, j], for j in
    s_ctrl; rho_j = 1 / (omega_j + eps_omega).
    """
    if eps_omega <= 0:
        raise ValueError("eps_omega must be positive")
    top_factors = np.asarray(top_factors, dtype=int)
    s_ctrl = np.asarray(s_ctrl, dtype=int)
    varphi = np.asarray(varphi, dtype=float)
    H = np.asarray(H, dtype=float)
    omega = varphi[top_factors] @ H[np.ix_(top_factors, s_ctrl)]
    rho = 1.0 / (omega + eps_omega)
    return omega, rho


def build_priorities(
    model: SurrogateModel,
    codes: np.ndarray,
    i_target: np.ndarray,
    H: np.ndarray,
    s_ctrl: np.ndarray,
    q: int,
    eps_omega: float = DEFAULT_EPS_OMEGA,
    provenance: dict | None = None,
) -> PriorityWeights:
    """Full attribution chain: Shapley, aggregate, top-q, feature transfer.

    The background for the Shapley attribution is the mean normalized code
    over all respondents.
    """
    codes = np.asarray(codes, dtype=float)
    background = codes.mean(axis=0)
    phi = shapley_latent(model, codes, background)
    varphi = aggregate_relevance(phi, i_target)
    top = select_topq(varphi, q)
    omega, rho = feature_priorities(top, varphi, H, s_ctrl, eps_omega)
    return PriorityWeights(
        phi=phi,
        varphi=varphi,
        top_factors=top,
        omega=omega,
        rho=rho,
        s_ctrl=np.asarray(s_ctrl, dtype=int).copy(),
        eps_omega=eps_omega,
        provenance=dict(provenance or {}),
    )
