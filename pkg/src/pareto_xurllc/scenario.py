"""Static geometry, run configuration and CBS-to-user pairing.

Coordinates are metres with the origin at one floor corner of the room, so the
room occupies [0, room_x] x [0, room_y] x [0, ceiling_h].
"""

from __future__ import annotations

import ast
import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

C_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Raised when a ScenarioConfig violates one of its invariants."""


def _default_cbs():
    return [(0.0, 0.0, 2.5), (10.0, 0.0, 2.5), (10.0, 10.0, 2.5), (0.0, 10.0, 2.5)]


@dataclass(frozen=True)
class ScenarioConfig:
    room_x: float = 10.0
    room_y: float = 10.0
    ceiling_h: float = 6.0
    user_h: float = 1.7
    lbs_pos: tuple = (0.0, 5.0, 2.0)
    ris_pos: tuple = (5.0, 5.0, 6.0)
    cbs_pos: list = field(default_factory=_default_cbs)
    N: int = 8
    B: int = 4
    K_b: int = 32
    U: int = 4
    M: int = 16
    lambda_c: float = 5e-3
    f_thz: float = 0.2e12
    bandwidth_mm: float = 400e6
    bandwidth_thz: float = 1e9
    P_max: float = 0.2
    eps_max: float = 1e-5
    noise_dbm: float = -110.0
    T: int = 20
    slot_len: float = 2e-3
    C_meta: float = 150.0
    f_P: float = 1.0
    f_eps: float = 1e5
    S_bits: float = 1e6
    m_block: int = 128
    eta_bar: float = 20e-9
    grid_len: float = 0.05
    seed: int = 0
    # secondary physical knobs, not part of the core field list
    P0_loc: float = 0.1
    snr_db: float = 5.0
    ris_gain: float = 1.0
    absorption: float = 0.0033
    beamwidth: float = np.pi / 3
    sidelobe: float = 0.0

    @property
    def K(self) -> int:
        return self.B * self.K_b

    @property
    def noise_power(self) -> float:
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    def validate(self) -> "ScenarioConfig":
        if self.U > self.B:
            raise ConfigError(f"U <= B violated: U={self.U}, B={self.B} (each CBS serves one user)")
        if len(self.cbs_pos) != self.B:
            raise ConfigError(f"len(cbs_pos) == B violated: {len(self.cbs_pos)} != {self.B}")
        if min(self.N, self.B, self.K_b, self.U, self.M, self.T) < 1:
            raise ConfigError("counts N, B, K_b, U, M, T must all be >= 1")
        if not self.ceiling_h > self.user_h:
            raise ConfigError(f"ceiling_h > user_h violated: {self.ceiling_h} <= {self.user_h}")
        if not 0.0 <= self.user_h:
            raise ConfigError("user_h must be nonnegative")
        for name, pos in [("lbs_pos", self.lbs_pos), ("ris_pos", self.ris_pos)] + [
            (f"cbs_pos[{i}]", p) for i, p in enumerate(self.cbs_pos)
        ]:
            if not self.in_room(pos):
                raise ConfigError(f"position inside room box violated: {name}={tuple(pos)}")
        if not self.P_max > 0:
            raise ConfigError(f"P_max > 0 violated: {self.P_max}")
        if not 0.0 < self.eps_max < 1.0:
            raise ConfigError(f"0 < eps_max < 1 violated: {self.eps_max}")
        if self.m_block < 1:
            raise ConfigError(f"m_block >= 1 violated: {self.m_block}")
        if not (self.lambda_c > 0 and self.f_thz > 0 and self.bandwidth_mm > 0 and self.bandwidth_thz > 0):
            raise ConfigError("wavelength, carrier and bandwidths must be positive")
        if not self.eta_bar > 0:
            raise ConfigError(f"eta_bar > 0 violated: {self.eta_bar}")
        if not self.grid_len > 0:
            raise ConfigError(f"grid_len > 0 violated: {self.grid_len}")
        return self

    def in_room(self, pos, tol: float = 1e-9) -> bool:
        p = np.asarray(pos, dtype=float)
        hi = np.array([self.room_x, self.room_y, self.ceiling_h])
        return p.shape == (3,) and bool(np.all(p >= -tol) and np.all(p <= hi + tol))

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw).validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lbs_pos"] = list(self.lbs_pos)
        d["ris_pos"] = list(self.ris_pos)
        d["cbs_pos"] = [list(p) for p in self.cbs_pos]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        for k in ("lbs_pos", "ris_pos"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        if "cbs_pos" in d:
            d["cbs_pos"] = [tuple(float(x) for x in p) for p in d["cbs_pos"]]
        return cls(**d).validate()


@dataclass
class UserState:
    true_pos: np.ndarray
    est_pos: np.ndarray
    clock_offset: float = 0.0

    def accepted(self, eta_bar: float) -> bool:
        return self.clock_offset < eta_bar


@dataclass
class Scenario:
    config: ScenarioConfig
    users: list
    seed: int

    @property
    def true_positions(self) -> np.ndarray:
        return np.array([u.true_pos for u in self.users])

    @property
    def est_positions(self) -> np.ndarray:
        return np.array([u.est_pos for u in self.users])

    def with_estimates(self, est) -> "Scenario":
        users = [UserState(u.true_pos.copy(), np.asarray(e, float).copy(), u.clock_offset)
                 for u, e in zip(self.users, est)]
        return Scenario(self.config, users, self.seed)

    def pairing(self, use_estimates: bool = True) -> np.ndarray:
        pos = self.est_positions if use_estimates else self.true_positions
        return pair_users(self.config.cbs_pos, pos)


def make_scenario(config: ScenarioConfig, rng_seed: int) -> Scenario:
    """Place U users uniformly in the room at height user_h."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    xy = rng.uniform([0.0, 0.0], [config.room_x, config.room_y], size=(config.U, 2))
    eta = rng.uniform(0.0, config.eta_bar, size=config.U)
    users = []
    for i in range(config.U):
        p = np.array([xy[i, 0], xy[i, 1], config.user_h])
        users.append(UserState(p, p.copy(), float(eta[i])))
    return Scenario(config, users, int(rng_seed))


def _dist_matrix(cbs_pos, est_pos) -> np.ndarray:
    a = np.asarray(cbs_pos, dtype=float)
    b = np.asarray(est_pos, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or len(a) == 0 or len(b) == 0:
        raise ValueError("pair_users needs nonempty lists of 3-vectors")
    if len(b) > len(a):
        raise ValueError(f"U <= B violated: {len(b)} users, {len(a)} CBSs")
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def pair_users(cbs_pos, est_pos) -> np.ndarray:
    """Optimal one-to-one CBS/user assignment on Euclidean distance.

    Returns the B x U binary pairing matrix s. Exhaustive search for U <= 6
    (first minimum in lexicographic order of CBS tuples), Hungarian otherwise.
    """
    d = _dist_matrix(cbs_pos, est_pos)
    B, U = d.shape
    s = np.zeros((B, U), dtype=int)
    if U <= 6:
        best, best_cost = None, np.inf
        cols = np.arange(U)
        for perm in itertools.permutations(range(B), U):
            c = d[list(perm), cols].sum()
            if c < best_cost - 1e-12:
                best, best_cost = perm, c
        for u, b in enumerate(best):
            s[b, u] = 1
    else:
        rows, cols = linear_sum_assignment(d)
        s[rows, cols] = 1
    return s


def pairing_cost(cbs_pos, est_pos, s) -> float:
    return float((_dist_matrix(cbs_pos, est_pos) * s).sum())


def check_pairing(s: np.ndarray) -> None:
    s = np.asarray(s)
    if not np.all((s == 0) | (s == 1)):
        raise ValueError("pairing entries must be binary")
    if np.any(s.sum(axis=1) > 1):
        raise ValueError("each CBS may serve at most one user")
    if np.any(s.sum(axis=0) != 1):
        raise ValueError("each user must be served by exactly one CBS")


def parse_config_text(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse `key = value` lines; values are Python literals, '#' starts a comment."""
    base = base or ScenarioConfig()
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kw[key] = coerce_value(key, val)
    return base.replace(**kw)


def coerce_value(key: str, val: str):
    try:
        v = ast.literal_eval(val)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"{key}: cannot parse value {val!r}") from exc
    default = getattr(ScenarioConfig(), key)
    if isinstance(default, bool):
        return bool(v)
    if isinstance(default, int) and not isinstance(default, bool):
        if float(v) != int(v):
            raise ConfigError(f"{key}: expected an integer, got {val!r}")
        return int(v)
    if isinstance(default, float):
        return float(v)
    if isinstance(default, tuple):
        return tuple(float(x) for x in v)
    if isinstance(default, list):
        return [tuple(float(x) for x in p) for p in v]
    return v


def load_config(path) -> ScenarioConfig:
    if path in (None, "default"):
        return ScenarioConfig().validate()
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
