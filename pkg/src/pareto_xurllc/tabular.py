"""Tabular multi-objective soft Bellman machinery on a finite preference grid.

Q-tables have shape (S, A, W, 2): state, action, preference-grid index, objective.
The optimality filter picks, for each (s', w), the vector Q(s', a, w') whose
w-scalarisation is largest over all actions and grid preferences w'. Ties go to
the first index in (a, w') row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def preference_grid(n: int = 101) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n)
    return np.stack([u, 1.0 - u], axis=1)


@dataclass
class TabularMoMdp:
    P: np.ndarray  # (S, A, S) transition kernel
    R: np.ndarray  # (S, A, 2) vector reward
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, float)
        self.R = np.asarray(self.R, float)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not np.allclose(self.P.sum(axis=-1), 1.0, atol=1e-12):
            raise ValueError("transition kernel rows must sum to 1")
        if self.R.shape != self.P.shape[:2] + (2,):
            raise ValueError("reward table must be (S, A, 2)")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


def random_mdp(rng, max_states: int = 4, max_actions: int = 3, gamma=None) -> TabularMoMdp:
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    P = rng.random((S, A, S)) + 1e-3
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(S, A, 2))
    g = float(rng.choice([0.5, 0.9])) if gamma is None else gamma
    return TabularMoMdp(P, R, g)


def optimality_filter(Q: np.ndarray, wgrid: np.ndarray) -> np.ndarray:
    """(S, A, W, 2) -> (S, W, 2): envelope of w-scalarised values over (a, w')."""
    S, A, W, _ = Q.shape
    scal = np.einsum("wk,savk->swav", wgrid, Q).reshape(S, W, A * W)
    best = np.argmax(scal, axis=-1)
    flatQ = Q.reshape(S, A * W, 2)
    return np.take_along_axis(flatQ[:, None, :, :], best[:, :, None, None], axis=2)[:, :, 0, :]


def apply_operator(mdp: TabularMoMdp, Q: np.ndarray, wgrid: np.ndarray) -> np.ndarray:
    """One synchronous sweep of the soft multi-objective optimality operator.

    The entropy of the uniform policy over |A| actions, log|A|, is added to every
    objective component of the next-state value.
    """
    G = optimality_filter(Q, wgrid)
    G = G + np.log(mdp.n_actions)
    nxt = np.einsum("sap,pwk->sawk", mdp.P, G)
    return mdp.R[:, :, None, :] + mdp.gamma * nxt


def coupled_distance(Q1, Q2, wgrid) -> float:
    """sup over (s, a, w) of |w . (Q1 - Q2)(s, a, w)|, w restricted to the grid."""
    diff = Q1 - Q2
    return float(np.max(np.abs(np.einsum("wk,sawk->saw", wgrid, diff))))


def decoupled_distance(Q1, Q2) -> float:
    """sup over (s, a, w, w') of |w . (Q1 - Q2)(s, a, w')| for w on the 2-simplex.

    The scalarisation is linear in w so the sup sits at a simplex vertex, i.e. the
    largest absolute component difference.
    """
    return float(np.max(np.abs(Q1 - Q2)))


def iterate(mdp: TabularMoMdp, wgrid, Q0=None, tol: float = 1e-8, max_iter: int = 2000):
    """Apply the operator until successive iterates are within tol; returns (Q, n_iter, dist)."""
    S, A = mdp.n_states, mdp.n_actions
    Q = np.zeros((S, A, len(wgrid), 2)) if Q0 is None else np.asarray(Q0, float)
    dist = np.inf
    for it in range(1, max_iter + 1):
        Qn = apply_operator(mdp, Q, wgrid)
        dist = decoupled_distance(Qn, Q)
        Q = Qn
        if dist < tol:
            return Q, it, dist
    return Q, max_iter, dist


def scalarised_optimum(mdp: TabularMoMdp, w) -> np.ndarray:
    """Exhaustive search over deterministic policies of the w-scalarised soft MDP.

    Per-step reward is w.r(s, a) + gamma log|A| (uniform-policy entropy of the
    next state). Returns the optimal Q(s, a) as an (S, A) array.
    """
    w = np.asarray(w, float)
    S, A, g = mdp.n_states, mdp.n_actions, mdp.gamma
    r = mdp.R @ w + g * np.log(A)
    best_V = None
    for pol in np.ndindex(*([A] * S)):
        idx = np.arange(S)
        Ppi = mdp.P[idx, list(pol)]
        V = np.linalg.solve(np.eye(S) - g * Ppi, r[idx, list(pol)])
        best_V = V if best_V is None else np.maximum(best_V, V)
    return r + g * mdp.P @ best_V
