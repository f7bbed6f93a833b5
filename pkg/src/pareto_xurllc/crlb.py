"""Slepian-Bangs Fisher information and position error bounds.

The noise covariance does not depend on the parameters, so only the mean term
of the Slepian-Bangs formula survives: J = (2 / nu^2) sum Re{dmu^H dmu}.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .scenario import ScenarioConfig

TIKHONOV = 1e-12


@dataclass
class FisherInfo:
    J_channel: np.ndarray
    J_position: np.ndarray
    peb: float
    degenerate: bool = False


def fim_from_derivs(d: np.ndarray, noise_var: float) -> np.ndarray:
    """d has the parameter axis second to last-but-N: (..., 8, S, M) -> (..., 8, 8)."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    flat = d.reshape(d.shape[:-2] + (-1,))
    J = 2.0 / noise_var * np.real(np.einsum("...an,...bn->...ab", flat.conj(), flat))
    return 0.5 * (J + np.swapaxes(J, -1, -2))


def fim_channel(cfg: ScenarioConfig, pos, eta, pilots: ch.Pilots, P0: float, noise_var: float) -> np.ndarray:
    q = ch.channel_params(cfg, pos, eta)
    d = ch.loc_signal_derivs(cfg, q, pilots, P0)
    return fim_from_derivs(d, noise_var)


def fim_position(J_channel: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    J = jacobian @ J_channel @ jacobian.T
    return 0.5 * (J + J.T)


def safe_inverse(J: np.ndarray):
    """Inverse of a PSD matrix after diagonal equilibration and an eigenvalue floor.

    Returns (inverse, degenerate_flag).
    """
    J = 0.5 * (J + np.swapaxes(J, -1, -2))
    dg = np.diagonal(J, axis1=-2, axis2=-1)
    scale = 1.0 / np.sqrt(np.where(dg > 0, dg, 1.0))
    Je = J * scale[..., :, None] * scale[..., None, :]
    w, V = np.linalg.eigh(Je)
    n = J.shape[-1]
    floor = TIKHONOV * np.trace(Je, axis1=-2, axis2=-1)[..., None] / n
    degenerate = np.any(w < floor, axis=-1)
    w = np.maximum(w, floor)
    inv = (V / w[..., None, :]) @ np.swapaxes(V, -1, -2)
    inv = inv * scale[..., :, None] * scale[..., None, :]
    return inv, degenerate


def peb(J_position: np.ndarray):
    """sqrt of the positional trace of the inverse FIM; returns (peb, degenerate)."""
    inv, deg = safe_inverse(np.asarray(J_position, float))
    tr = inv[..., 0, 0] + inv[..., 1, 1] + inv[..., 2, 2]
    return np.sqrt(np.maximum(tr, 0.0)), deg


def fisher_info(cfg: ScenarioConfig, pos, eta, pilots, P0, noise_var) -> FisherInfo:
    Jc = fim_channel(cfg, pos, eta, pilots, P0, noise_var)
    Jp = fim_position(Jc, ch.position_jacobian(cfg, pos))
    b, deg = peb(Jp)
    return FisherInfo(Jc, Jp, float(b), bool(deg))


def position_fim_batch(cfg: ScenarioConfig, positions, eta, pilots, P0, noise_var) -> np.ndarray:
    """Position-domain FIMs for many positions at once, shape (P, 8, 8)."""
    positions = np.atleast_2d(np.asarray(positions, float))
    q = ch.channel_params(cfg, positions, eta)
    terms = ch.loc_terms(cfg, q[:, 1], q[:, 5], pilots)
    d = ch.loc_signal_derivs(cfg, q, pilots, P0, terms)
    Jc = fim_from_derivs(d, noise_var)
    T = np.stack([ch.position_jacobian(cfg, p) for p in positions])
    Jp = T @ Jc @ np.swapaxes(T, -1, -2)
    return 0.5 * (Jp + np.swapaxes(Jp, -1, -2))


def loc_pilots(cfg: ScenarioConfig, n_snap: int = 8, seed: int = 0) -> ch.Pilots:
    return ch.make_pilots(cfg, n_snap, np.random.default_rng([seed, 7]), mirrored=True)


def grid_axes(cfg: ScenarioConfig, grid_len: float | None = None):
    g = cfg.grid_len if grid_len is None else grid_len
    nx = int(round(cfg.room_x / g))
    ny = int(round(cfg.room_y / g))
    return (np.arange(nx) + 0.5) * g, (np.arange(ny) + 0.5) * g


def _heat_rows(args):
    cfg, xs, ys, pilots, P0, nv = args
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, cfg.user_h)], axis=1)
    Jp = position_fim_batch(cfg, pts, 0.0, pilots, P0, nv)
    b, _ = peb(Jp)
    return b.reshape(X.shape)


def n_workers() -> int:
    env = os.environ.get("PARETO_XURLLC_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def peb_heatmap(cfg: ScenarioConfig, grid_len: float | None = None, snr_db: float | None = None,
                n_snap: int = 8, seed: int = 0, chunk: int = 10):
    """PEB on the user-height plane; returns (xs, ys, peb[x, y])."""
    snr_db = cfg.snr_db if snr_db is None else snr_db
    xs, ys = grid_axes(cfg, grid_len)
    pilots = loc_pilots(cfg, n_snap, seed)
    nv = ch.noise_var_for_snr(cfg, snr_db)
    jobs = [(cfg, xs[i:i + chunk], ys, pilots, cfg.P0_loc, nv) for i in range(0, len(xs), chunk)]
    nw = n_workers()
    if nw > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            parts = list(ex.map(_heat_rows, jobs))
    else:
        parts = [_heat_rows(j) for j in jobs]
    return xs, ys, np.concatenate(parts, axis=0)
