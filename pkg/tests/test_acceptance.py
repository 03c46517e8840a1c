"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` to see the lines in the summary.
"""

import logging
import math
import time

import numpy as np
import pytest
import torch

from conftest import TINY, finite_difference_check, record, tiny_batch
from panoscan.context import (ModelConfig, PooledLuminanceProvider, ScanpathModel, TrainConfig, WindowData,
                              evaluate_bits, scanpath_windows, to_gmm_params, train)
from panoscan.entropy import BinIndex, GmmParams, QuantizerSpec, bin_masses, discretized_prob, quantize
from panoscan.geometry import (ErpFrame, SphericalPoint, UvPoint, ViewportSpec, project_points, project_to_uv,
                               rodrigues_rotate, rotation_matrix, uv_points_to_sph, uv_to_sph)
from panoscan.harness.synth import SyntheticSpec, synthesize
from panoscan.metrics import max_tc, min_od, orthodromic_distance, sliced_metrics
from panoscan.sampler import PidGains, SamplerConfig, generate_scanpath, settling_step, simulate_pid

SPEC = ViewportSpec()
Q = QuantizerSpec(0.2)


def random_in_fov(rng, n):
    """Anchors away from the poles and uv points inside the viewport rectangle."""
    anchors = np.stack([rng.uniform(-1.4, 1.4, n), rng.uniform(-math.pi, math.pi, n)], axis=1)
    uv = np.stack([rng.uniform(-SPEC.width / 2, SPEC.width / 2, n),
                   rng.uniform(-SPEC.height / 2, SPEC.height / 2, n)], axis=1)
    return anchors, uv


def test_criterion_01_geometry_round_trip():
    rng = np.random.default_rng(101)
    anchors, uv = random_in_fov(rng, 10_000)
    # 100 anchors with 100 viewport points each, through the batched API
    t0 = time.perf_counter()
    uv_err = 0.0
    sph_err = 0.0
    for k in range(100):
        a = SphericalPoint(*anchors[k])
        block = uv[100 * k: 100 * (k + 1)]
        phi, theta = uv_points_to_sph(block, a, SPEC)
        back, behind = project_points(phi, theta, a, SPEC)
        uv_err = max(uv_err, float(np.hypot(*(back - block).T).max()))
        phi2, theta2 = uv_points_to_sph(back, a, SPEC)
        p, p2 = np.stack([phi, theta], axis=1), np.stack([phi2, theta2], axis=1)
        sph_err = max(sph_err, max(orthodromic_distance(p[i: i + 1], p2[i: i + 1]) for i in range(len(p))))
        assert not behind.any()
    elapsed = time.perf_counter() - t0
    # the scalar entry points agree with the batched ones
    a = SphericalPoint(*anchors[0])
    one = project_to_uv(uv_to_sph(UvPoint(*uv[0]), a, SPEC), a, SPEC)
    scalar_ok = math.hypot(one.u - uv[0, 0], one.v - uv[0, 1]) < 1e-6
    ok = uv_err < 1e-6 and sph_err < 1e-9 and elapsed < 2.0 and scalar_ok
    assert record(1, ok, f"uv->sph->uv max {uv_err:.3g} px (< 1e-6), sph->uv->sph max {sph_err:.3g} rad "
                         f"(< 1e-9), 1e4 pairs in {elapsed:.2f} s (< 2 s)")


def stepwise_rotation(phi, theta):
    """Rotation assembled column by column from individual Rodrigues steps."""
    z = np.array([0.0, 0.0, 1.0])
    y1 = rodrigues_rotate(np.array([0.0, 1.0, 0.0]), z, theta)
    cols = [rodrigues_rotate(rodrigues_rotate(e, z, theta), y1, -phi) for e in np.eye(3)]
    return np.stack(cols, axis=1)


def test_criterion_02_rotation_validity():
    rng = np.random.default_rng(102)
    orth = det = center = oracle = 0.0
    for phi, theta in zip(rng.uniform(-math.pi / 2, math.pi / 2, 10_000), rng.uniform(-math.pi, math.pi, 10_000)):
        R = rotation_matrix(SphericalPoint(phi, theta))
        orth = max(orth, np.abs(R.T @ R - np.eye(3)).max())
        det = max(det, abs(np.linalg.det(R) - 1.0))
        unit = np.array([math.cos(phi) * math.cos(theta), math.cos(phi) * math.sin(theta), math.sin(phi)])
        center = max(center, np.abs(R[:, 0] - unit).max())
        oracle = max(oracle, np.abs(R - stepwise_rotation(phi, theta)).max())
    ok = orth < 1e-12 and det < 1e-12 and center < 1e-12 and oracle < 1e-12
    assert record(2, ok, f"|R^T R - I|inf {orth:.3g}, |det R - 1| {det:.3g}, center {center:.3g}, "
                         f"stepwise oracle {oracle:.3g} (all < 1e-12)")


def test_criterion_03_gmm_normalization():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(100):
        K = int(rng.integers(1, 5))
        p = GmmParams(rng.dirichlet(np.ones(K)), rng.normal(0, 10, (K, 2)), rng.uniform(0.01, 25, (K, 2)))
        sig = np.sqrt(p.variances)
        lo = np.floor((p.means - 8 * sig).min(axis=0) / Q.step + 0.5)
        hi = np.floor((p.means + 8 * sig).max(axis=0) / Q.step + 0.5)
        cu, cv = np.meshgrid(np.arange(lo[0], hi[0] + 1) * Q.step, np.arange(lo[1], hi[1] + 1) * Q.step)
        total = bin_masses(np.stack([cu, cv], axis=-1), p.weights, p.means, p.variances, Q.step, floor=0.0).sum()
        worst = max(worst, abs(total - 1.0))
    assert record(3, worst < 1e-6, f"max |sum - 1| over 100 mixtures {worst:.3g} (< 1e-6)")


def test_criterion_04_central_bin_mass():
    p = GmmParams([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    got = discretized_prob(BinIndex(0, 0), p, Q)
    # oracle: standard normal CDF through math.erf, independent of the scipy path
    phi = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    oracle = (phi(0.1) - phi(-0.1)) ** 2
    ok = abs(got - oracle) < 1e-9 and abs(oracle - 0.0063450) < 5e-8
    assert record(4, ok, f"mass {got:.10f}, oracle {oracle:.10f}, |diff| {abs(got - oracle):.3g} (< 1e-9)")


def test_criterion_05_end_to_end_gradient():
    assert TINY.S == 3 and TINY.K == 2
    assert max(TINY.C_v, TINY.C_h, TINY.C_c, TINY.hidden, TINY.head_hidden, TINY.visual_channels,
               TINY.causal_embed, TINY.causal_hidden) <= 8
    model = ScanpathModel(TINY)
    batch = tiny_batch(TINY, 2, seed=5)
    centers = np.random.default_rng(105).normal(0, 15, (2, TINY.S, 2))
    t0 = time.perf_counter()
    worst = finite_difference_check(model, batch, centers, h=1e-5)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 30
    assert record(5, ok, f"{model.n_parameters()} parameters, max relative error {worst:.3g} (< 1e-3), "
                         f"{elapsed:.1f} s (< 30 s)")


def test_criterion_06_causality():
    cfg = ModelConfig()
    model = ScanpathModel(cfg)
    rng = np.random.default_rng(106)
    failures = 0
    with torch.no_grad():
        for trial in range(100):
            grids, paths, causal = tiny_batch(cfg, 1, seed=trial)
            t = int(rng.integers(0, cfg.S))
            base = to_gmm_params(*(x[0] for x in model(grids, paths, causal)))
            perturbed = causal.clone()
            perturbed[0, t:] = torch.from_numpy(rng.normal(0, 100, (cfg.S - t, 2)))
            out = to_gmm_params(*(x[0] for x in model(grids, paths, perturbed)))
            for a, b in zip(base[: t + 1], out[: t + 1]):
                same = all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("weights", "means", "variances"))
                failures += not same
    assert record(6, failures == 0, f"{failures} of 100 perturbation trials changed a step <= t")


@pytest.fixture(scope="module")
def synthetic_fit():
    """Model trained on the synthetic generator plus held-out data (criteria 7 and 11)."""
    t0 = time.perf_counter()
    train_set = synthesize(SyntheticSpec(n_paths=2000, length=25, seed=1))
    held_out = synthesize(SyntheticSpec(n_paths=200, length=25, seed=2))
    cfg = ModelConfig(K=2, C_v=64, C_h=64, hidden=64, head_hidden=64)
    provider = PooledLuminanceProvider()

    def windows(data):
        return WindowData.concat([scanpath_windows(s.points, cfg.R, cfg.S, SPEC, provider) for s in data.scanpaths])

    result = train(windows(train_set), cfg, Q, TrainConfig(lr=1e-3, batch=64, epochs=5, seed=0))
    bits = evaluate_bits(result.model, windows(held_out), Q)
    return {"model": result.model, "bits": bits, "entropy": train_set.entropy_bits, "held_out": held_out,
            "seconds": time.perf_counter() - t0, "epoch_bits": result.epoch_bits}


def test_criterion_07_synthetic_recovery(synthetic_fit):
    gap = synthetic_fit["bits"] - synthetic_fit["entropy"]
    secs = synthetic_fit["seconds"]
    ok = abs(gap) < 0.5 and secs < 300
    assert record(7, ok, f"held-out {synthetic_fit['bits']:.4f} bits/viewpoint vs generator entropy "
                         f"{synthetic_fit['entropy']:.4f} (gap {gap:.4f}, < 0.5), {secs:.0f} s (< 300 s)")


def pid_oracle(ref, kp, ki, kd, dt, steps, windup=1e3):
    """Scalar simulation of the proxy viewer, written independently of the sampler."""
    p = v = a = integral = e_prev = 0.0
    out = []
    for _ in range(steps):
        p = p + dt * v + 0.5 * dt * dt * a
        v = v + dt * a
        e = ref - p
        integral = min(max(integral + e, -windup), windup)
        a = kp * e + ki * integral + kd * (e - e_prev)
        e_prev = e
        out.append(p)
    return np.array(out)


def oracle_settling(xs, ref, tol=0.02):
    inside = np.abs(xs - ref) <= tol * abs(ref)
    if inside.all():
        return 0
    last_out = int(np.flatnonzero(~inside)[-1])
    return None if last_out == len(xs) - 1 else last_out + 1


def test_criterion_08_pid_tracking():
    gains = PidGains.ziegler_nichols(60.0, 0.29)
    steps, ref = 1000, 10.0
    with np.errstate(all="ignore"):
        pos = simulate_pid((ref, 0.0), gains, 0.2, steps)
        oracle = pid_oracle(ref, gains.kp, gains.ki, gains.kd, 0.2, steps)
    bitwise = np.array_equal(pos[:, 0], oracle, equal_nan=True)
    settle = settling_step(pos, (ref, 0.0))
    settle_oracle = oracle_settling(oracle, ref)
    finite = pos[np.isfinite(pos[:, 0]), 0]
    bounded = np.abs(finite).max() <= 10 * ref and len(finite) == steps
    first_out = np.flatnonzero(~(np.abs(pos[:, 0]) <= 10 * ref))
    ok = bitwise and settle is not None and settle == settle_oracle
    assert record(8, ok, f"Kp={gains.kp:.4g} Ki={gains.ki:.6g} Kd={gains.kd:.4g}; settling step {settle} "
                         f"(oracle {settle_oracle}); trajectory bitwise equal to oracle: {bitwise}; "
                         f"bounded by 10x error: {bounded}"
                         + (f" (first exceeded at step {first_out[0]}, positions "
                            f"{', '.join(f'{x:.4g}' for x in pos[:5, 0])}, ...)" if len(first_out) else ""))


def test_criterion_09_quantization_angular_error():
    rng = np.random.default_rng(109)
    anchor = SphericalPoint(0.0, 0.0)
    uv = rng.uniform(-2.0, 2.0, (200_000, 2))
    # bin corners are the worst case; include them explicitly
    corners = np.array([[0.1, 0.1], [-0.1, 0.1], [0.3 - 1e-12, -0.1 + 1e-12]])
    uv = np.concatenate([uv, corners])
    q = quantize(uv, Q)
    p = np.stack(uv_points_to_sph(uv, anchor, SPEC), axis=1)
    pq = np.stack(uv_points_to_sph(q, anchor, SPEC), axis=1)
    worst = max(orthodromic_distance(p[i: i + 1], pq[i: i + 1]) for i in np.argsort(
        -np.linalg.norm(uv - q, axis=1))[:200])
    worst_deg = math.degrees(worst)
    axis = math.degrees(math.atan(Q.step / 2 / SPEC.radius))
    diagonal = math.degrees(math.atan(Q.step / math.sqrt(2) / SPEC.radius))
    ok = worst_deg < 0.05 and 0.1 < worst_deg / 0.034 < 10
    assert record(9, ok, f"max displacement {worst_deg:.5f} deg (< 0.05; stated 0.034); oracle axis-aligned "
                         f"{axis:.5f} deg, diagonal {diagonal:.5f} deg, r = {SPEC.radius:.3f} px")


def test_criterion_10_metric_suite():
    rng = np.random.default_rng(110)

    def paths(n, T=12):
        out = []
        for _ in range(n):
            start = [rng.uniform(-1, 1), rng.uniform(-3, 3)]
            pts = start + np.cumsum(rng.normal(0, 0.05, (T, 2)), axis=0)
            pts[:, 0] = np.clip(pts[:, 0], -1.5, 1.5)
            out.append(pts)
        return out

    exact = True
    sliced_equal = True
    monotone = True
    for _ in range(100):
        S, P = paths(int(rng.integers(1, 5))), paths(int(rng.integers(1, 5)))
        exact &= min_od(S, S) == 0.0 and max_tc(S, S) == 1.0
        sliced_equal &= sliced_metrics(S, P, 12) == (min_od(S, P), max_tc(S, P))
        extra = P + paths(1)
        monotone &= min_od(S, extra) <= min_od(S, P) and max_tc(S, extra) >= max_tc(S, P)
    ok = exact and sliced_equal and monotone
    assert record(10, ok, f"self comparison exact: {exact}; T_s = T equals unsliced: {sliced_equal}; "
                          f"best-case monotone: {monotone} (100 random set pairs)")


def test_criterion_11_sampler_ordering(synthetic_fit):
    model = synthetic_fit["model"]
    held_out = synthetic_fit["held_out"].scanpaths
    H = 2 * model.cfg.R + 1
    rounds = 2
    n = rounds * model.cfg.S
    wins = 0
    rows = []
    logging.disable(logging.WARNING)
    try:
        for trial in range(20):
            path = held_out[trial].points
            truth = [path[H: H + n]]
            scores = {}
            for mode in ("pid", "random", "max"):
                gens = [generate_scanpath(model, path[:H], SamplerConfig(rounds=rounds, mode=mode), SPEC,
                                          np.random.default_rng(1000 * trial + k)).points for k in range(8)]
                scores[mode] = max_tc(truth, gens)
            wins += scores["pid"] > scores["random"] and scores["pid"] > scores["max"]
            rows.append(scores)
    finally:
        logging.disable(logging.NOTSET)
    mean = {m: float(np.mean([r[m] for r in rows])) for m in ("pid", "random", "max")}
    assert record(11, wins >= 16, f"PID maxTC beats random and max in {wins}/20 trials (need >= 16); mean maxTC "
                                  f"pid {mean['pid']:.3f}, random {mean['random']:.3f}, max {mean['max']:.3f}")


def test_criterion_12_throughput():
    model = ScanpathModel(ModelConfig())
    rate, seconds = 5.0, 30.0
    rounds = int(seconds * rate) // model.cfg.S
    rng = np.random.default_rng(112)
    distinct = [ErpFrame(rng.integers(0, 256, (256, 512, 3), dtype=np.uint8)) for _ in range(10)]
    frames = [distinct[i % 10] for i in range(2 * model.cfg.R + 1 + rounds * model.cfg.S)]
    t0 = time.perf_counter()
    total = 0
    for k in range(20):
        hist = np.cumsum(np.random.default_rng(k).normal(0, 0.01, (2 * model.cfg.R + 1, 2)), axis=0)
        gen = generate_scanpath(model, hist, SamplerConfig(rounds=rounds, rate=rate), SPEC,
                                np.random.default_rng(k), frames=frames, provider=PooledLuminanceProvider())
        total += len(gen.points)
    elapsed = time.perf_counter() - t0
    ok = total == 20 * 150 and elapsed < 30
    assert record(12, ok, f"{total} viewpoints (20 scanpaths x {rounds} rounds of S={model.cfg.S}) with "
                          f"viewport extraction from ERP frames in {elapsed:.1f} s (< 30 s)")
