"""Physical layer for both stages.

Localisation band: narrowband-per-subcarrier mmWave model with a LOS path from
the LBS and a cascaded LBS -> RIS -> user path. Communication band: THz links
from each CBS through its RIS sub-surface plus a direct path, finite-blocklength
rate, latency and service cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import C_LIGHT, ScenarioConfig

TWO_PI = 2.0 * np.pi
E_X = np.array([1.0, 0.0, 0.0])
E_Y = np.array([0.0, 1.0, 0.0])
LBS_AXIS = E_Y
RIS_AXIS = E_X
INF_LATENCY = float("inf")

# parameter order of the channel-domain vector
QBAR_NAMES = ("tau_L", "omega_L", "rho_L", "phi_L", "tau_R", "omega_RU", "rho_c", "phi_c")


class GeometryError(ValueError):
    pass


def steering_vector(n_elems: int, spacing: float, wavelength: float, angle: float,
                    centred: bool = False) -> np.ndarray:
    """ULA response; entry k is exp(j k (2 pi / lambda) z sin(angle)).

    `centred` moves the phase reference to the array centre (k - (n - 1) / 2).
    """
    if n_elems < 1 or wavelength <= 0:
        raise ValueError("need n_elems >= 1 and wavelength > 0")
    k = _index(n_elems, centred)
    return np.exp(1j * k * (TWO_PI / wavelength) * spacing * np.sin(angle))


def _index(n, centred=True):
    k = np.arange(n, dtype=float)
    return k - (n - 1) / 2.0 if centred else k


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-9):
        raise GeometryError("coincident points: zero distance in geometry")
    return v / n, n[..., 0]


def array_angle(axis, src, dst):
    """Angle of dst seen from an array at src, measured from broadside."""
    u, _ = _unit(np.asarray(dst, float) - np.asarray(src, float))
    return np.arcsin(np.clip(u @ axis, -1.0, 1.0))


# ----------------------------------------------------------------------------
# localisation band
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RisState:
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        if np.any(t < 0) or np.any(t >= TWO_PI):
            raise ValueError("RIS phases must lie in [0, 2pi)")
        object.__setattr__(self, "theta", t)


@dataclass
class Pilots:
    """Per-snapshot beamformers X (S, M, N) and RIS phase profiles (S, K)."""
    X: np.ndarray
    theta: np.ndarray

    @property
    def n_snap(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Pilots":
        return Pilots(self.X[idx], self.theta[idx])


def make_pilots(cfg: ScenarioConfig, n_snap: int, rng, mirrored: bool = False) -> Pilots:
    """Random unit-modulus beamformers and RIS profiles.

    With `mirrored`, the second half of the snapshots repeats the first half
    with each beamformer reversed along the array, so the codebook looks the
    same from both sides of the LBS array axis.
    """
    n_draw = (n_snap + 1) // 2 if mirrored else n_snap
    ph = rng.uniform(0.0, TWO_PI, size=(n_draw, cfg.M, cfg.N))
    X = np.exp(1j * ph) / np.sqrt(cfg.N)
    theta = rng.uniform(0.0, TWO_PI, size=(n_draw, cfg.K))
    if mirrored:
        X = np.concatenate([X, X[..., ::-1]])[:n_snap]
        theta = np.concatenate([theta, theta])[:n_snap]
    return Pilots(X, theta)


def noise_var_for_snr(cfg: ScenarioConfig, snr_db: float, P0: float | None = None) -> float:
    """Noise variance giving `snr_db` for a free-space path at 1 m reference."""
    P0 = cfg.P0_loc if P0 is None else P0
    ref = (cfg.lambda_c / (4.0 * np.pi * 1.0)) ** 2
    return P0 * ref / 10.0 ** (snr_db / 10.0)


def channel_params(cfg: ScenarioConfig, pos, eta=0.0) -> np.ndarray:
    """Channel-domain vector for user position(s); shape (8,) or (P, 8)."""
    pos = np.asarray(pos, dtype=float)
    single = pos.ndim == 1
    pos = np.atleast_2d(pos)
    pL = np.asarray(cfg.lbs_pos, float)
    pR = np.asarray(cfg.ris_pos, float)
    _, dLU = _unit(pos - pL)
    _, dRU = _unit(pos - pR)
    _, dLR = _unit(pR - pL)
    lam = cfg.lambda_c
    out = np.empty((len(pos), 8))
    out[:, 0] = dLU / C_LIGHT + eta
    out[:, 1] = array_angle(LBS_AXIS, pL, pos)
    out[:, 2] = lam / (4 * np.pi * dLU)
    out[:, 3] = np.mod(-TWO_PI * dLU / lam, TWO_PI)
    out[:, 4] = (dLR + dRU) / C_LIGHT + eta
    out[:, 5] = array_angle(RIS_AXIS, pR, pos)
    # reference-area scatterer: lambda / (4 pi d1 d2) per element, 1 m reference
    out[:, 6] = cfg.ris_gain * lam / (4 * np.pi * dLR * dRU)
    out[:, 7] = np.mod(-TWO_PI * (dLR + dRU) / lam, TWO_PI)
    return out[0] if single else out


def position_jacobian(cfg: ScenarioConfig, pos) -> np.ndarray:
    """T[i, j] = d qbar_j / d qhat_i with qhat = [x, y, h, rho_L, phi_L, rho_c, phi_c, eta]."""
    p = np.asarray(pos, dtype=float)
    pL = np.asarray(cfg.lbs_pos, float)
    pR = np.asarray(cfg.ris_pos, float)
    uL, _ = _unit(p - pL)
    uR, _ = _unit(p - pR)
    dL = np.linalg.norm(p - pL)
    dR = np.linalg.norm(p - pR)
    T = np.zeros((8, 8))
    T[:3, 0] = uL / C_LIGHT
    T[:3, 4] = uR / C_LIGHT
    # d/dp arcsin(e.u) = (e - (e.u) u) / (d cos omega)
    for col, axis, u, d in ((1, LBS_AXIS, uL, dL), (5, RIS_AXIS, uR, dR)):
        s = float(axis @ u)
        T[:3, col] = (axis - s * u) / (d * np.sqrt(max(1.0 - s * s, 1e-300)))
    T[3, 2] = T[4, 3] = T[5, 6] = T[6, 7] = 1.0
    T[7, 0] = T[7, 4] = 1.0
    return T


def qhat_to_qbar(cfg: ScenarioConfig, qhat) -> np.ndarray:
    q = np.asarray(qhat, dtype=float)
    base = channel_params(cfg, q[:3], q[7])
    base[[2, 3, 6, 7]] = q[[3, 4, 5, 6]]
    return base


def _ula_rows(n, spacing, lam, omega):
    """Rows exp(-j k psi), and the -j k dpsi/domega factor, for angles omega (P,)."""
    k = _index(n)
    psi = (TWO_PI / lam) * spacing * np.sin(omega)
    dpsi = (TWO_PI / lam) * spacing * np.cos(omega)
    E = np.exp(-1j * np.outer(psi, k))
    dE = E * (-1j * np.outer(dpsi, k))
    return E, dE


@dataclass
class LocTerms:
    """Array factors that do not depend on delays or complex gains."""
    A_L: np.ndarray   # (P, S, M)  a_N^H(omega_L) x
    dA_L: np.ndarray  # (P, S, M)  derivative in omega_L
    R: np.ndarray     # (P, S)     a_K^H(omega_RU) Theta a_K(omega_RL)
    dR: np.ndarray    # (P, S)
    A_LR: np.ndarray  # (S, M)     a_N^H(omega_LR) x


def loc_terms(cfg: ScenarioConfig, omega_L, omega_RU, pilots: Pilots) -> LocTerms:
    omega_L = np.atleast_1d(np.asarray(omega_L, float))
    omega_RU = np.atleast_1d(np.asarray(omega_RU, float))
    lam, z = cfg.lambda_c, cfg.lambda_c / 2.0
    pL = np.asarray(cfg.lbs_pos, float)
    pR = np.asarray(cfg.ris_pos, float)
    S, M, N = pilots.X.shape
    Xf = pilots.X.reshape(S * M, N).T  # (N, S*M)
    EN, dEN = _ula_rows(N, z, lam, omega_L)
    A_L = (EN @ Xf).reshape(-1, S, M)
    dA_L = (dEN @ Xf).reshape(-1, S, M)
    om_LR = float(array_angle(LBS_AXIS, pL, pR))
    om_RL = float(array_angle(RIS_AXIS, pR, pL))
    ELR, _ = _ula_rows(N, z, lam, np.array([om_LR]))
    A_LR = (ELR @ Xf).reshape(S, M)
    K = pilots.theta.shape[1]
    inc = np.exp(1j * pilots.theta) * steering_vector(K, z, lam, om_RL, True)[None, :]  # (S, K)
    EK, dEK = _ula_rows(K, z, lam, omega_RU)
    R = EK @ inc.T
    dR = dEK @ inc.T
    return LocTerms(A_L, dA_L, R, dR, A_LR)


def _delay_phasor(cfg: ScenarioConfig, tau):
    m = np.arange(cfg.M)
    tau = np.atleast_1d(np.asarray(tau, float))
    w = -TWO_PI * m * cfg.bandwidth_mm / cfg.M
    return np.exp(1j * np.outer(tau, w)), 1j * w  # (P, M), (M,)


def loc_signal(cfg: ScenarioConfig, qbar, pilots: Pilots, P0: float, terms: LocTerms | None = None):
    """Noiseless received pilots, shape (S, M) or (P, S, M) for batched qbar."""
    q = np.atleast_2d(np.asarray(qbar, float))
    if terms is None:
        terms = loc_terms(cfg, q[:, 1], q[:, 5], pilots)
    DL, _ = _delay_phasor(cfg, q[:, 0])
    DR, _ = _delay_phasor(cfg, q[:, 4])
    aL = (q[:, 2] * np.exp(1j * q[:, 3]))[:, None, None]
    aC = (q[:, 6] * np.exp(1j * q[:, 7]))[:, None, None]
    sig = np.sqrt(P0) * (aL * DL[:, None, :] * terms.A_L
                         + aC * DR[:, None, :] * terms.R[:, :, None] * terms.A_LR[None])
    return sig[0] if np.ndim(qbar) == 1 else sig


def loc_signal_derivs(cfg: ScenarioConfig, qbar, pilots: Pilots, P0: float, terms: LocTerms | None = None):
    """Analytic d signal / d qbar; shape (8, S, M) or (P, 8, S, M)."""
    q = np.atleast_2d(np.asarray(qbar, float))
    if terms is None:
        terms = loc_terms(cfg, q[:, 1], q[:, 5], pilots)
    sq = np.sqrt(P0)
    DL, jw = _delay_phasor(cfg, q[:, 0])
    DR, _ = _delay_phasor(cfg, q[:, 4])
    eL = np.exp(1j * q[:, 3])[:, None, None]
    eC = np.exp(1j * q[:, 7])[:, None, None]
    rL = q[:, 2][:, None, None]
    rC = q[:, 6][:, None, None]
    los = sq * DL[:, None, :] * terms.A_L
    dlos = sq * DL[:, None, :] * terms.dA_L
    cas = sq * DR[:, None, :] * terms.R[:, :, None] * terms.A_LR[None]
    dcas = sq * DR[:, None, :] * terms.dR[:, :, None] * terms.A_LR[None]
    d = np.empty((q.shape[0], 8) + los.shape[1:], dtype=complex)
    d[:, 0] = rL * eL * los * jw
    d[:, 1] = rL * eL * dlos
    d[:, 2] = eL * los
    d[:, 3] = 1j * rL * eL * los
    d[:, 4] = rC * eC * cas * jw
    d[:, 5] = rC * eC * dcas
    d[:, 6] = eC * cas
    d[:, 7] = 1j * rC * eC * cas
    return d[0] if np.ndim(qbar) == 1 else d


def localisation_channel(cfg: ScenarioConfig, pos, eta, ris: RisState, m: int) -> dict:
    """Explicit per-subcarrier channel pieces; effective h^H = h_LU^H + h_RU^H Theta H_LR."""
    if not 0 <= m < cfg.M:
        raise ValueError(f"subcarrier index {m} outside [0, {cfg.M})")
    q = channel_params(cfg, pos, eta)
    lam, z = cfg.lambda_c, cfg.lambda_c / 2.0
    pL = np.asarray(cfg.lbs_pos, float)
    pR = np.asarray(cfg.ris_pos, float)
    om_LR = float(array_angle(LBS_AXIS, pL, pR))
    om_RL = float(array_angle(RIS_AXIS, pR, pL))
    ph = lambda tau: np.exp(-1j * TWO_PI * m * tau * cfg.bandwidth_mm / cfg.M)
    aL = q[2] * np.exp(1j * q[3])
    aC = q[6] * np.exp(1j * q[7])
    sv = lambda n, a: steering_vector(n, z, lam, a, centred=True)
    hLU_H = aL * ph(q[0]) * sv(cfg.N, q[1]).conj()
    hRU_H = aC * ph(q[4]) * sv(cfg.K, q[5]).conj()
    H_LR = np.outer(sv(cfg.K, om_RL), sv(cfg.N, om_LR).conj())
    h_H = hLU_H + hRU_H @ np.diag(np.exp(1j * ris.theta)) @ H_LR
    return {"h_H": h_H, "h_LU_H": hLU_H, "h_RU_H": hRU_H, "H_LR": H_LR, "qbar": q,
            "tau_L": q[0], "tau_R": q[4], "omega_L": q[1], "omega_RU": q[5],
            "omega_LR": om_LR, "omega_RL": om_RL}


def rx_signal(h_H, x, noise_var: float, rng=None):
    """Y = h^H x + n, n ~ CN(0, noise_var); works elementwise on stacked inputs."""
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    y = np.asarray(np.sum(np.asarray(h_H) * np.asarray(x), axis=-1), dtype=complex)
    if noise_var > 0:
        n = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(noise_var / 2.0) * n
    return y


# ----------------------------------------------------------------------------
# THz communication band
# ----------------------------------------------------------------------------

@dataclass
class LinkMetrics:
    snr: np.ndarray        # per user
    rate: np.ndarray       # bits/symbol per user
    latency: np.ndarray    # seconds per user
    max_latency: float
    cost: float


def antenna_gains(delta_tr: float, delta_re: float, beamwidths) -> tuple:
    """Gains 4 pi / (delta + 1) * Omega, Omega = 4 arcsin(tan(psi_H/2) tan(psi_V/2))."""
    bw = np.asarray(beamwidths, dtype=float).reshape(-1)
    if bw.size == 2:
        bw = np.concatenate([bw, bw])
    if np.any(bw <= 0) or np.any(bw >= np.pi):
        raise ValueError("beamwidths must lie in (0, pi)")
    if delta_tr < 0 or delta_re < 0:
        raise ValueError("side-lobe ratio must be nonnegative")

    def g(delta, hw, vw):
        arg = np.tan(hw / 2) * np.tan(vw / 2)
        if arg > 1.0:
            raise ValueError("beamwidth pair exceeds the solid-angle formula domain")
        return 4 * np.pi / (delta + 1.0) * 4.0 * np.arcsin(arg)

    return g(delta_tr, bw[0], bw[1]), g(delta_re, bw[2], bw[3])


def _gains(cfg: ScenarioConfig):
    return antenna_gains(cfg.sidelobe, cfg.sidelobe, (cfg.beamwidth, cfg.beamwidth))


def ris_elements(cfg: ScenarioConfig, K_b: int | None = None) -> np.ndarray:
    """(B, K_b, 3) element positions, ULA along the RIS axis, half-wavelength pitch."""
    K_b = cfg.K_b if K_b is None else K_b
    K = cfg.B * K_b
    z = cfg.lambda_c / 2.0
    off = (np.arange(K) - (K - 1) / 2.0) * z
    pts = np.asarray(cfg.ris_pos, float)[None, :] + off[:, None] * RIS_AXIS[None, :]
    return pts.reshape(cfg.B, K_b, 3)


def _prefactor(cfg: ScenarioConfig, d):
    if np.any(np.asarray(d) <= 0):
        raise GeometryError("zero link distance")
    GT, GR = _gains(cfg)
    return np.sqrt(GT * GR) * C_LIGHT / (8.0 * np.sqrt(np.pi ** 3) * cfg.f_thz * d)


def element_phases(cfg: ScenarioConfig, b: int, user_pos):
    """Per-element phase terms (omega_{bk,u}, phi_{b,bk}) and the path length d."""
    el = ris_elements(cfg)[b]
    cb = np.asarray(cfg.cbs_pos[b], float)
    p = np.asarray(user_pos, float)
    k0 = TWO_PI * cfg.f_thz / C_LIGHT
    du = np.linalg.norm(el - p, axis=1)
    dc = np.linalg.norm(el - cb, axis=1)
    if np.any(du < 1e-9) or np.any(dc < 1e-9):
        raise GeometryError("zero distance between RIS element and terminal")
    return k0 * (du - du[0]), k0 * (dc - dc[0]), du[0] + dc[0]


def cascade_coefficient(cfg: ScenarioConfig, d: float) -> complex:
    """Beer-Lambert attenuated free-space coefficient with propagation phase."""
    return complex(_prefactor(cfg, d) * np.exp(-1j * TWO_PI * cfg.f_thz * d / C_LIGHT)
                   * np.exp(-0.5 * cfg.absorption * d))


def cascaded_gain(cfg: ScenarioConfig, b: int, u: int, theta, pairing, user_pos) -> complex:
    """g_{b,u} = s_{b,u} ghat sum_k e^{-j omega_k} e^{j theta_k} e^{-j phi_k} over sub-surface b."""
    if pairing[b][u] == 0:
        return 0j
    om, ph, d = element_phases(cfg, b, user_pos)
    th = np.asarray(theta, float).reshape(cfg.B, -1)[b]
    return cascade_coefficient(cfg, d) * np.sum(np.exp(-1j * om + 1j * th - 1j * ph))


def path_loss_direct(cfg: ScenarioConfig, b: int, u: int, pairing, user_pos) -> complex:
    if pairing[b][u] == 0:
        return 0j
    E = float(np.linalg.norm(np.asarray(cfg.cbs_pos[b], float) - np.asarray(user_pos, float)))
    return complex(_prefactor(cfg, E) * np.exp(-0.5 * cfg.absorption * E))


def cophase_theta(cfg: ScenarioConfig, positions, pairing, offsets=None) -> np.ndarray:
    """RIS phases that co-phase each served sub-surface with the direct path.

    `positions` are the (estimated) user positions; `offsets` (B,) are extra
    common phase shifts per sub-surface, added on top.
    """
    theta = np.zeros((cfg.B, cfg.K_b))
    pairing = np.asarray(pairing)
    for b in range(cfg.B):
        us = np.nonzero(pairing[b])[0]
        if len(us) == 0:
            continue
        om, ph, d = element_phases(cfg, b, positions[us[0]])
        theta[b] = om + ph + TWO_PI * cfg.f_thz * d / C_LIGHT
    if offsets is not None:
        theta = theta + np.asarray(offsets, float)[:, None]
    return np.mod(theta, TWO_PI).reshape(-1)


class LinkModel:
    """Precomputed per-pair quantities so that SNR(theta offsets, P) is cheap."""

    def __init__(self, cfg: ScenarioConfig, true_pos, est_pos, pairing):
        self.cfg = cfg
        self.pairing = np.asarray(pairing)
        self.true_pos = np.asarray(true_pos, float)
        base = cophase_theta(cfg, np.asarray(est_pos, float), self.pairing).reshape(cfg.B, cfg.K_b)
        self.base_theta = base
        U = self.pairing.shape[1]
        self.serving = np.array([int(np.nonzero(self.pairing[:, u])[0][0]) for u in range(U)])
        self.G0 = np.zeros(U, complex)  # cascade with zero extra offset
        self.L = np.zeros(U, complex)
        for u in range(U):
            b = self.serving[u]
            self.G0[u] = cascaded_gain(cfg, b, u, base.reshape(-1), self.pairing, self.true_pos[u])
            self.L[u] = path_loss_direct(cfg, b, u, self.pairing, self.true_pos[u])

    def snr(self, offsets, P) -> np.ndarray:
        off = np.asarray(offsets, float)[self.serving]
        h = self.G0 * np.exp(1j * off) + self.L
        return link_snr(P, h, 0.0, self.cfg.noise_power)

    def metrics(self, offsets, P, eps, T: int | None = None) -> LinkMetrics:
        cfg = self.cfg
        rho = self.snr(offsets, P)
        D = fbl_rate(rho, cfg.m_block, eps)
        lat = transmission_latency(cfg.S_bits, D, cfg.bandwidth_thz)
        T = cfg.T if T is None else T
        cost = total_service_cost([P] * T, eps, cfg)
        return LinkMetrics(rho, D, lat, float(np.max(lat)), cost)


def link_snr(P_t, g, L, noise_power: float):
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    if np.any(np.asarray(P_t) < 0):
        raise ValueError("transmit power must be nonnegative")
    h = np.asarray(g) + np.asarray(L)
    return np.asarray(P_t) * np.abs(h) ** 2 / noise_power


def qfunc(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


@lru_cache(maxsize=256)
def qfunc_inv(p: float) -> float:
    """Inverse Gaussian tail: bisection bracket, then Newton polish."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if qfunc(mid) > p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(6):
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        if pdf == 0.0:
            break
        step = (qfunc(x) - p) / pdf
        x += step
        if abs(step) < 1e-15:
            break
    return x


def dispersion(snr):
    snr = np.asarray(snr, dtype=float)
    return 1.0 - (1.0 + snr) ** -2.0


def fbl_rate(snr, m_block: int, eps: float):
    """Normal-approximation rate in bits/symbol, clamped at zero."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if m_block < 1:
        raise ValueError("m_block must be >= 1")
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("snr must be nonnegative")
    D = np.log2(1.0 + snr) - np.sqrt(dispersion(snr) / m_block) * qfunc_inv(float(eps)) / np.log(2.0)
    return np.maximum(D, 0.0)


def transmission_latency(S_bits: float, rates, bandwidth_thz: float):
    """Per-user latency S / (sum_b D_{b,u} W); rates may be (U,) or (B, U)."""
    r = np.asarray(rates, dtype=float)
    if r.ndim == 2:
        r = r.sum(axis=0)
    with np.errstate(divide="ignore"):
        lat = np.where(r > 0, S_bits / (np.where(r > 0, r, 1.0) * bandwidth_thz), INF_LATENCY)
    return lat


def max_latency(latencies) -> float:
    return float(np.max(latencies))


def latency_flags(latencies, delta_t: float) -> np.ndarray:
    return (np.asarray(latencies) <= delta_t).astype(int)


def total_service_cost(P_series, eps: float, cfg: ScenarioConfig) -> float:
    """-C_meta + f_P sum_t P_t + f_eps eps."""
    P = np.asarray(P_series, dtype=float)
    if np.any(P <= 0) or np.any(P > cfg.P_max * (1 + 1e-12)):
        raise ValueError(f"power constraint 0 < P_t <= P_max={cfg.P_max} violated")
    if not 0.0 < eps <= cfg.eps_max * (1 + 1e-12):
        raise ValueError(f"DEP constraint 0 < eps <= eps_max={cfg.eps_max} violated")
    return float(-cfg.C_meta + cfg.f_P * P.sum() + cfg.f_eps * eps)
