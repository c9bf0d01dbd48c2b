"""Seeded generators for the experimental point clouds and noise models."""

from __future__ import annotations

import math

import numpy as np

from .asymptotics import ManifoldSpec
from .types import LabeledCloud


def spiral(n: int) -> LabeledCloud:
    """Points evenly spaced along a closed 3-d spiral curve.

    Parameterised by t = 2 pi i / n as
    (cos t (0.5 cos 6t + 1), sin t (0.4 cos 6t + 1), 0.4 sin 6t); the
    parameter values are kept in params["t"] for the angular noise model.
    """
    if n < 1:
        raise ValueError("need at least one point")
    t = 2.0 * np.pi * np.arange(n) / n
    pts = np.column_stack(
        [
            np.cos(t) * (0.5 * np.cos(6 * t) + 1.0),
            np.sin(t) * (0.4 * np.cos(6 * t) + 1.0),
            0.4 * np.sin(6 * t),
        ]
    )
    return LabeledCloud(pts, params={"generator": "spiral", "n": n, "t": t})


def noise_amplitude(theta) -> np.ndarray:
    """Angular noise profile rho(theta) = 0.05 + 0.95 (1 + cos 6 theta)/2."""
    theta = np.asarray(theta, dtype=np.float64)
    return 0.05 + 0.95 * (1.0 + np.cos(6.0 * theta)) / 2.0


def embed_with_noise(cloud: LabeledCloud, d_ambient: int, seed: int) -> LabeledCloud:
    """Embed a 3-d cloud in d_ambient dimensions with angular-profile noise.

    A seeded Gaussian matrix is orthonormalised into R (R^T R = I); each
    point maps to R x_i + (Z_i/||Z_i||) rho(t_i) with standard Gaussian Z_i.
    Requires the curve parameter t in cloud.params.
    """
    if d_ambient < 3:
        raise ValueError("ambient dimension must be at least 3")
    if cloud.dim != 3:
        raise ValueError("embed_with_noise expects a 3-d input cloud")
    t = cloud.params.get("t")
    if t is None:
        raise ValueError("input cloud carries no curve parameter 't'")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d_ambient, 3))
    r, _ = np.linalg.qr(g)
    z = rng.standard_normal((cloud.n, d_ambient))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    eta = z * noise_amplitude(t)[:, None]
    pts = cloud.points @ r.T + eta
    params = dict(cloud.params)
    params.update({"generator": "spiral_noisy", "d_ambient": d_ambient, "seed": seed})
    return LabeledCloud(pts, labels=cloud.labels, params=params)


def gmm_sample(per_cluster: int, d: int, seed: int) -> LabeledCloud:
    """Mixture of three isotropic Gaussians on the unit circle in the
    first two coordinates, with spreads (0.3, 0.6, 1.0)."""
    if d < 2:
        raise ValueError("dimension must be at least 2")
    if per_cluster < 1:
        raise ValueError("need at least one point per cluster")
    rng = np.random.default_rng(seed)
    angles = [0.0, 2.0 * np.pi / 3.0, -2.0 * np.pi / 3.0]
    sigmas = [0.3, 0.6, 1.0]
    blocks = []
    labels = []
    for idx, (ang, sig) in enumerate(zip(angles, sigmas)):
        mu = np.zeros(d)
        mu[0] = np.sin(ang)
        mu[1] = np.cos(ang)
        blocks.append(mu + sig * rng.standard_normal((per_cluster, d)))
        labels.append(np.full(per_cluster, idx, dtype=np.int64))
    return LabeledCloud(
        np.vstack(blocks),
        labels=np.concatenate(labels),
        params={"generator": "gmm", "per_cluster": per_cluster, "d": d, "seed": seed},
    )


def sphere_sample(n: int, d: int, seed: int) -> LabeledCloud:
    """n uniform points on the unit sphere S^d in R^{d+1}."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if n < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d + 1))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return LabeledCloud(
        g, params={"generator": "sphere", "n": n, "d": d, "seed": seed}
    )


def torus_sample(n: int, big_radius: float = 1.0, small_radius: float = 0.5, seed: int = 0) -> LabeledCloud:
    """n points uniform w.r.t. surface area on a torus in R^3.

    The poloidal angle is drawn by rejection with acceptance probability
    (R + r cos v)/(R + r), which makes the surface measure uniform; the
    achieved acceptance rate is recorded in the params.
    """
    if not (0 < small_radius < big_radius):
        raise ValueError("radii must satisfy 0 < r < R")
    if n < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 2.0 * np.pi, size=n)
    v = np.empty(n)
    filled = 0
    proposals = 0
    while filled < n:
        batch = max(n - filled, 64)
        cand = rng.uniform(0.0, 2.0 * np.pi, size=batch)
        accept_p = (big_radius + small_radius * np.cos(cand)) / (big_radius + small_radius)
        keep = cand[rng.uniform(size=batch) < accept_p]
        proposals += batch
        take = min(keep.size, n - filled)
        v[filled : filled + take] = keep[:take]
        filled += take
    ring = big_radius + small_radius * np.cos(v)
    pts = np.column_stack([ring * np.cos(u), ring * np.sin(u), small_radius * np.sin(v)])
    return LabeledCloud(
        pts,
        params={
            "generator": "torus",
            "n": n,
            "R": big_radius,
            "r": small_radius,
            "seed": seed,
            "acceptance_rate": filled / proposals,
        },
    )


def sphere_spec(d: int) -> ManifoldSpec:
    """Analytic ManifoldSpec of the unit sphere S^d (vol = |S^d|)."""
    volume = 2.0 * math.pi ** ((d + 1) / 2.0) / math.gamma((d + 1) / 2.0)
    return ManifoldSpec.for_dim(d, volume)


def torus_spec(big_radius: float = 1.0, small_radius: float = 0.5) -> ManifoldSpec:
    """ManifoldSpec of the 2-torus, vol = 4 pi^2 R r."""
    return ManifoldSpec.for_dim(2, 4.0 * np.pi**2 * big_radius * small_radius)
