import numpy as np
import pytest

from pareto_xurllc import channel as ch
from pareto_xurllc import crlb
from pareto_xurllc.scenario import ScenarioConfig

CFG = ScenarioConfig()
# per-parameter FD steps: delays (s), angles (rad), gains, phases
STEPS = np.array([1e-13, 1e-6, 1e-9, 1e-6, 1e-13, 1e-6, 1e-12, 1e-6])


def _random_pos(rng):
    return np.array([rng.uniform(0.3, 9.7), rng.uniform(0.3, 9.7), rng.uniform(0.5, 3.0)])


def signal_fd(cfg, q, pilots, P0):
    out = []
    for i in range(8):
        e = np.zeros(8)
        e[i] = STEPS[i]
        out.append((ch.loc_signal(cfg, q + e, pilots, P0) - ch.loc_signal(cfg, q - e, pilots, P0)) / (2 * STEPS[i]))
    return np.stack(out)


def test_signal_derivatives_match_central_differences():
    rng = np.random.default_rng(0)
    pil = crlb.loc_pilots(CFG, 4)
    for _ in range(10):
        q = ch.channel_params(CFG, _random_pos(rng), rng.uniform(0, 20e-9))
        d = ch.loc_signal_derivs(CFG, q, pil, CFG.P0_loc)
        fd = signal_fd(CFG, q, pil, CFG.P0_loc)
        for i in range(8):
            rel = np.linalg.norm(d[i] - fd[i]) / np.linalg.norm(d[i])
            assert rel < 1e-5, (i, rel)


def test_position_jacobian_matches_central_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        pos = _random_pos(rng)
        qhat = np.r_[pos, ch.channel_params(CFG, pos)[[2, 3, 6, 7]], rng.uniform(0, 20e-9)]
        T = ch.position_jacobian(CFG, pos)
        for i in range(8):
            h = 1e-6 if i < 3 else (1e-13 if i == 7 else 1e-7)
            e = np.zeros(8)
            e[i] = h
            fd = (ch.qhat_to_qbar(CFG, qhat + e) - ch.qhat_to_qbar(CFG, qhat - e)) / (2 * h)
            scale = np.maximum(np.abs(T[i]), 1e-12 * np.abs(T).max(axis=0))
            assert np.all(np.abs(fd - T[i]) <= 1e-5 * scale + 1e-12 * np.abs(T[i]).max()), i


def test_fim_is_psd_on_random_geometries():
    rng = np.random.default_rng(2)
    pil = crlb.loc_pilots(CFG, 4)
    nv = ch.noise_var_for_snr(CFG, CFG.snr_db)
    pos = np.stack([_random_pos(rng) for _ in range(200)])
    J = crlb.position_fim_batch(CFG, pos, 5e-9, pil, CFG.P0_loc, nv)
    ev = np.linalg.eigvalsh(J)
    assert np.all(ev >= -1e-9 * np.abs(ev).max(axis=1, keepdims=True))


def test_fim_scales_linearly_with_power_and_inverse_noise():
    pil = crlb.loc_pilots(CFG, 4)
    pos = np.array([3.0, 4.0, 1.7])
    J1 = crlb.fim_channel(CFG, pos, 0.0, pil, 1.0, 1e-12)
    J2 = crlb.fim_channel(CFG, pos, 0.0, pil, 4.0, 1e-12)
    J3 = crlb.fim_channel(CFG, pos, 0.0, pil, 1.0, 0.5e-12)
    np.testing.assert_allclose(J2, 4 * J1, rtol=1e-12, atol=0)
    np.testing.assert_allclose(J3, 2 * J1, rtol=1e-12, atol=0)


def test_peb_identity_and_diagonal():
    assert crlb.peb(np.eye(8))[0] == np.sqrt(3.0)
    J = np.diag([4.0, 4.0, 4.0, 1, 1, 1, 1, 1])
    assert crlb.peb(J)[0] == pytest.approx(np.sqrt(0.75), rel=1e-12)


def test_peb_nonincreasing_in_power():
    pil = crlb.loc_pilots(CFG, 8)
    nv = ch.noise_var_for_snr(CFG, CFG.snr_db)
    pos = np.array([[6.0, 3.0, 1.7]])
    vals = [crlb.peb(crlb.position_fim_batch(CFG, pos, 0.0, pil, P0, nv))[0][0] for P0 in (0.01, 0.1, 1.0, 10.0)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_fim_requires_positive_noise():
    with pytest.raises(ValueError, match="noise variance"):
        crlb.fim_from_derivs(np.ones((8, 2, 3), complex), 0.0)


def test_safe_inverse_flags_singular_matrix():
    J = np.eye(8)
    J[7, 7] = 0.0
    inv, deg = crlb.safe_inverse(J)
    assert deg and np.all(np.isfinite(inv))


def test_heatmap_grid_and_minimum_near_an_anchor():
    # the minimum is narrow; a 0.25 m grid steps over it
    xs, ys, H = crlb.peb_heatmap(CFG, grid_len=0.1)
    assert H.shape == (100, 100) and np.all(np.isfinite(H)) and np.all(H > 0)
    # LBS and RIS sit on y = 5 and the codebook is mirrored, so the map is symmetric in y
    # (a few ill-conditioned cells with PEB ~ 1e4 m agree only to ~1e-4)
    np.testing.assert_allclose(H, H[:, ::-1], rtol=1e-3)
    assert np.median(np.abs(H - H[:, ::-1]) / H) < 1e-9
    i, j = np.unravel_index(np.argmin(H), H.shape)
    p = np.array([xs[i], ys[j]])
    anchors = [np.array(CFG.lbs_pos[:2]), np.array(CFG.ris_pos[:2])]
    assert min(np.linalg.norm(p - a) for a in anchors) <= 1.0


def test_heatmap_default_grid_is_200_by_200():
    xs, ys = crlb.grid_axes(CFG)
    assert len(xs) == 200 and len(ys) == 200
    assert xs[0] == pytest.approx(0.025) and xs[-1] == pytest.approx(9.975)
