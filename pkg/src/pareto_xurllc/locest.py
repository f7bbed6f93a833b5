"""Direct position estimation by stochastic gradient descent on the
concentrated likelihood, plus the BGD / plain SGD / Adam reference optimisers.

Each snapshot is one re-draw of the pilots over all M subcarriers. The two
complex path gains are nuisance parameters shared by all snapshots; for any
batch of snapshots they are solved in closed form (least squares), so the loss
seen by the optimiser only depends on pbar = (x, y, h, eta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import crlb
from .scenario import ScenarioConfig

ALGORITHMS = ("minibatch_sgd", "sgd", "bgd", "adam")
# rows of the position jacobian for (x, y, h, eta), columns for (tau_L, omega_L, tau_R, omega_RU)
_ROWS = [0, 1, 2, 7]
_COLS = [0, 1, 4, 5]


@dataclass
class Observations:
    pilots: ch.Pilots
    Y: np.ndarray          # (S, M)
    noise_var: float
    P0: float


@dataclass
class EstimatorHyper:
    lr: float = 0.3
    batch: int = 16
    epochs: int = 10
    algorithm: str = "minibatch_sgd"
    betas: tuple = (0.9, 0.999)
    grad_tol: float = 1e-8


@dataclass
class Estimator:
    pbar: np.ndarray
    lr: float
    batch: int
    epochs: int
    accepted: bool = True
    converged: bool = False
    loss: float = float("nan")
    history: list = field(default_factory=list)


def nuisance_closed_form(iota, Y, P0: float, ridge: float = 1e-12):
    """Least-squares gains alpha minimising ||Y - sqrt(P0) iota alpha||^2.

    iota has shape (..., M, 2), Y (..., M). Returns (alpha, rank_deficient).
    """
    iota = np.asarray(iota)
    Y = np.asarray(Y)
    G = np.swapaxes(iota.conj(), -1, -2) @ iota
    b = (np.swapaxes(iota.conj(), -1, -2) @ Y[..., None])[..., 0]
    tr = np.real(np.trace(G, axis1=-2, axis2=-1))
    cond_bad = np.linalg.cond(G) > 1e12
    if np.any(cond_bad):
        G = G + (ridge * tr)[..., None, None] * np.eye(G.shape[-1])
    alpha = np.linalg.solve(G, b[..., None])[..., 0] / np.sqrt(P0)
    return alpha, bool(np.any(cond_bad))


def simulate(cfg: ScenarioConfig, pos, eta, n_snap: int, snr_db: float, rng, P0=None) -> Observations:
    P0 = cfg.P0_loc if P0 is None else P0
    pilots = ch.make_pilots(cfg, n_snap, rng)
    q = ch.channel_params(cfg, pos, eta)
    s = ch.loc_signal(cfg, q, pilots, P0)
    nv = ch.noise_var_for_snr(cfg, snr_db, P0)
    n = (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape)) * np.sqrt(nv / 2)
    return Observations(pilots, s + n, nv, P0)


def _basis(cfg, pbar, pilots):
    """iota (S, M, 2) and its derivatives in (tau_L, omega_L, tau_R, omega_RU): (4, S, M, 2)."""
    q = ch.channel_params(cfg, pbar[:3], pbar[3])
    t = ch.loc_terms(cfg, q[1], q[5], pilots)
    DL, jw = ch._delay_phasor(cfg, q[0])
    DR, _ = ch._delay_phasor(cfg, q[4])
    iL = DL[0][None, :] * t.A_L[0]
    iC = DR[0][None, :] * t.R[0][:, None] * t.A_LR
    iota = np.stack([iL, iC], axis=-1)
    z = np.zeros_like(iL)
    d = np.stack([
        np.stack([iL * jw, z], -1),
        np.stack([DL[0][None, :] * t.dA_L[0], z], -1),
        np.stack([z, iC * jw], -1),
        np.stack([z, DR[0][None, :] * t.dR[0][:, None] * t.A_LR], -1),
    ])
    return iota, d


def concentrated_loss(cfg: ScenarioConfig, pbar, obs: Observations, idx=None, grad: bool = True):
    """Mean over snapshots of ||Y - sqrt(P0) iota alpha_hat||^2 / nu^2 and its pbar-gradient."""
    pbar = np.asarray(pbar, float)
    pil = obs.pilots if idx is None else obs.pilots.subset(idx)
    Y = obs.Y if idx is None else obs.Y[idx]
    iota, d = _basis(cfg, pbar, pil)
    S = Y.shape[0]
    # the path gains are common to all snapshots of the batch
    alpha, _ = nuisance_closed_form(iota.reshape(-1, 2), Y.reshape(-1), obs.P0)
    sq = np.sqrt(obs.P0)
    r = Y - sq * (iota @ alpha)
    loss = float(np.sum(np.abs(r) ** 2) / (obs.noise_var * S))
    if not grad:
        return loss
    # variable projection: dL/dq = -2 Re(r^H sqrt(P0) d(iota)/dq alpha_hat)
    dmu = sq * (d @ alpha)  # (4, S, M)
    gq = -2.0 * np.real(np.sum(r.conj()[None] * dmu, axis=(1, 2))) / (obs.noise_var * S)
    T = ch.position_jacobian(cfg, pbar[:3])[np.ix_(_ROWS, _COLS)]
    return loss, T @ gq


def single_snapshot_crb(cfg: ScenarioConfig, pbar, snr_db: float, P0=None, n_snap: int = 16, seed: int = 0):
    """Model-predicted CRB of (x, y, h, eta) for one snapshot, averaged over pilot draws."""
    P0 = cfg.P0_loc if P0 is None else P0
    pil = ch.make_pilots(cfg, n_snap, np.random.default_rng([seed, 11]))
    nv = ch.noise_var_for_snr(cfg, snr_db, P0)
    Jc = crlb.fim_channel(cfg, pbar[:3], pbar[3], pil, P0, nv) / n_snap
    Jp = crlb.fim_position(Jc, ch.position_jacobian(cfg, pbar[:3]))
    inv, _ = crlb.safe_inverse(Jp)
    return inv[np.ix_(_ROWS, _ROWS)]


def init_point(cfg: ScenarioConfig, pos, eta, eta_bar: float, snr_db: float, rng, P0=None):
    """Uniform draw inside the bound box around the truth.

    The bound is the single-snapshot CRB of (x, y, h, eta). The box has
    half-width one bound along each principal direction of that CRB, i.e.
    truth + L u with L L^T = CRB and u uniform on [-1, 1]^4; an axis-aligned
    box of half-width PEB would start outside the likelihood main lobe along
    the best-determined directions. The draw is projected onto the feasible set.
    """
    crb = single_snapshot_crb(cfg, np.r_[pos, eta], snr_db, P0)
    L = np.linalg.cholesky(crb)
    p = np.r_[np.asarray(pos, float), eta] + L @ rng.uniform(-1.0, 1.0, size=4)
    return _project(cfg, p, eta_bar)


def _project(cfg: ScenarioConfig, pbar, eta_bar):
    lo = np.array([0.0, 0.0, 0.0, 0.0])
    hi = np.array([cfg.room_x, cfg.room_y, cfg.ceiling_h, eta_bar * (1 - 1e-9)])
    return np.clip(pbar, lo, hi)


def sgd_estimate(cfg: ScenarioConfig, obs: Observations, init, hyper: EstimatorHyper,
                 eta_bar: float, rng, snr_db: float | None = None) -> Estimator:
    """Projected first-order descent in whitened coordinates with cosine decay.

    Whitening uses the Cholesky factor of the model single-snapshot CRB at the
    initial point, which makes the per-snapshot loss curvature close to I.
    """
    init = _project(cfg, np.asarray(init, float), eta_bar)
    snr_db = cfg.snr_db if snr_db is None else snr_db
    crb = single_snapshot_crb(cfg, init, snr_db, obs.P0)
    L = np.linalg.cholesky(crb + 1e-30 * np.eye(4) * np.trace(crb))
    S = obs.Y.shape[0]
    alg = hyper.algorithm
    if alg not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {alg!r}; expected one of {ALGORITHMS}")
    bs = {"minibatch_sgd": hyper.batch, "sgd": 1, "bgd": S, "adam": hyper.batch}[alg]
    steps_per_epoch = int(math.ceil(S / bs))
    total = steps_per_epoch * hyper.epochs
    p = init.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    b1, b2 = hyper.betas
    best = (concentrated_loss(cfg, p, obs, grad=False), p.copy())
    hist = [best[0]]
    converged = False
    k = 0
    for ep in range(hyper.epochs):
        order = rng.permutation(S)
        for j in range(steps_per_epoch):
            idx = np.sort(order[j * bs:(j + 1) * bs])
            _, g = concentrated_loss(cfg, p, obs, idx)
            gz = L.T @ g
            if np.linalg.norm(gz) < hyper.grad_tol:
                converged = True
                break
            lr = 0.5 * hyper.lr * (1.0 + math.cos(math.pi * k / total))
            k += 1
            if alg == "adam":
                m = b1 * m + (1 - b1) * gz
                v = b2 * v + (1 - b2) * gz * gz
                step = (m / (1 - b1 ** k)) / (np.sqrt(v / (1 - b2 ** k)) + 1e-12)
            else:
                step = gz
            p = _project(cfg, p - lr * (L @ step), eta_bar)
        f = concentrated_loss(cfg, p, obs, grad=False)
        hist.append(f)
        if f < best[0]:
            best = (f, p.copy())
        if converged:
            break
    est = Estimator(best[1], hyper.lr, bs, hyper.epochs, bool(best[1][3] < eta_bar),
                    converged, best[0], hist)
    return est


def _trial(args):
    cfg, snr_db, eta_bar, eta_true_max, algorithms, hyper, n_snap, seed = args
    rng = np.random.default_rng(seed)
    pos = np.array([rng.uniform(0.5, cfg.room_x - 0.5), rng.uniform(0.5, cfg.room_y - 0.5), cfg.user_h])
    eta = rng.uniform(0.0, eta_true_max)
    obs = simulate(cfg, pos, eta, n_snap, snr_db, rng)
    init = init_point(cfg, pos, eta, eta_bar, snr_db, rng)
    out = {}
    for a in algorithms:
        h = EstimatorHyper(**{**hyper.__dict__, "algorithm": a})
        est = sgd_estimate(cfg, obs, init, h, eta_bar, np.random.default_rng([seed, 1]), snr_db)
        out[a] = (float(np.sum((est.pbar[:3] - pos) ** 2)), est.loss)
    return out


def run_trials(cfg, snr_db, eta_bar, algorithms, trials, hyper=None, n_snap=64, seed=0,
               eta_true_max=None, workers: int = 1):
    """Per-trial squared position errors and final losses for each algorithm."""
    hyper = hyper or EstimatorHyper()
    eta_true_max = cfg.eta_bar if eta_true_max is None else eta_true_max
    jobs = [(cfg, snr_db, eta_bar, eta_true_max, tuple(algorithms), hyper, n_snap,
             [seed, t]) for t in range(trials)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_trial, jobs))
    else:
        res = [_trial(j) for j in jobs]
    return {a: (np.array([r[a][0] for r in res]), np.array([r[a][1] for r in res])) for a in algorithms}


def rmse_stats(sq_err):
    sq_err = np.asarray(sq_err, float)
    mse = sq_err.mean()
    rmse = math.sqrt(mse)
    se_mse = sq_err.std(ddof=1) / math.sqrt(len(sq_err)) if len(sq_err) > 1 else 0.0
    return rmse, (se_mse / (2 * rmse) if rmse > 0 else 0.0)


def rmse_curve(cfg: ScenarioConfig, snr_list_db, algorithms=ALGORITHMS, trials: int = 100,
               eta_bars=None, hyper=None, n_snap: int = 64, seed: int = 0, eta_true_max=None,
               workers: int = 1):
    """Rows (algorithm, snr_db, eta_bar, rmse_m, stderr); common random numbers across cells."""
    eta_bars = [cfg.eta_bar] if eta_bars is None else list(eta_bars)
    rows = []
    for eb in eta_bars:
        for snr in snr_list_db:
            res = run_trials(cfg, snr, eb, algorithms, trials, hyper, n_snap, seed, eta_true_max, workers)
            for a in algorithms:
                r, se = rmse_stats(res[a][0])
                rows.append({"algorithm": a, "snr_db": float(snr), "eta_bar": float(eb),
                             "rmse_m": r, "stderr": se})
    return rows
