"""Finite-difference audit of every hand-written gradient."""
from __future__ import annotations

import numpy as np

from . import gradcore as gc
from .model import GEN_MODES, Variant, episode_loss_grad, init_params, pretrain_loss_grad
from .rng import RngStream

TOLERANCE = 1e-6


def _random_vec(rs, n):
    v = rs.normal(size=n)
    while np.linalg.norm(v) < 0.1:
        v = rs.normal(size=n)
    return v


def _primitive_errors(rs) -> dict:
    v = _random_vec(rs, 8)
    a, b = _random_vec(rs, 8), _random_vec(rs, 8)
    x = rs.uniform(-10, 10)
    logits = rs.normal(scale=3.0, size=10)
    target = int(rs.integers(10))
    z = rs.uniform(0, 2, size=4)
    rows = rs.normal(size=(4, 6))
    g = rs.normal(size=6)
    ab = np.concatenate([a, b])

    return {
        "l2_normalize": gc.grad_check(lambda u: (gc.l2_normalize(u), gc.l2_normalize_jacobian(u)), v),
        "cosine_sim": gc.grad_check(
            lambda u: (gc.cosine_sim(u[:8], u[8:]), np.concatenate(gc.cosine_sim_grad(u[:8], u[8:]).grads)), ab
        ),
        "sigmoid": gc.grad_check(lambda t: (gc.sigmoid(t), gc.sigmoid_grad(t).grads[0]), np.array(x)),
        "softmax_xent": gc.grad_check(lambda t: gc.softmax_xent_grad(t, target), logits),
        "weighted_sum[z]": gc.grad_check(
            lambda t: (gc.weighted_sum(t, rows) @ g, gc.weighted_sum_vjp(t, rows, g)[0]), z
        ),
        "weighted_sum[rows]": gc.grad_check(
            lambda t: (gc.weighted_sum(z, t) @ g, gc.weighted_sum_vjp(z, t, g)[1]), rows
        ),
    }


def _episode_problem(rs, mode, M=6, d=5, n_way=3, k_shot=2, n_query=2):
    p = init_params(M, d, mode, RngStream(int(rs.integers(1 << 32))), concat_head=True)
    p = p.replace(w=rs.normal(size=p.w.size), b=float(rs.normal()), tau2=float(rs.uniform(1, 15)))
    support = rs.normal(size=(n_way * k_shot, d))
    support_pos = np.repeat(np.arange(n_way), k_shot)
    Z = rs.uniform(0, 1, size=(n_way, M)) + 0.05
    queries = rs.normal(size=(n_way * n_query, d))
    query_pos = np.repeat(np.arange(n_way), n_query)
    return p, (support, support_pos, Z, queries, query_pos)


def _episode_error(params, variant, data, names) -> float:
    _, grads = episode_loss_grad(params, variant, *data)
    worst = 0.0
    for name in names:
        def f(x, name=name):
            return episode_loss_grad(params.replace(**{name: x}), variant, *data)[0], grads[name]

        worst = max(worst, gc.grad_check(f, params.arrays()[name]))
    return worst


def run(n_points: int = 100, seed: int = 0) -> dict:
    """Worst relative error per check over ``n_points`` seeded random points."""
    rs = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def keep(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(n_points):
        for name, err in _primitive_errors(rs).items():
            keep(name, err)

        for mode in GEN_MODES:
            p, data = _episode_problem(rs, mode)
            keep(f"episode_loss[ADAPTIVE,{mode}]", _episode_error(p, Variant.ADAPTIVE, data, ("R", "w", "b", "tau2")))
        p, data = _episode_problem(rs, "comp")
        keep("episode_loss[CONCAT]", _episode_error(p, Variant.CONCAT, data, ("R", "concat_W", "concat_b", "tau2")))

        R = rs.normal(size=(6, 5))
        feats = rs.normal(size=(8, 5))
        targets = rs.integers(0, 4, size=8)
        Z = rs.uniform(0, 1, size=(4, 6)) + 0.05
        tau1 = float(rs.uniform(1, 15))
        _, dR, dtau = pretrain_loss_grad(R, tau1, feats, targets, Z)
        keep("pretrain_loss[R]", gc.grad_check(lambda t: (pretrain_loss_grad(t, tau1, feats, targets, Z)[0], dR), R))
        keep("pretrain_loss[tau1]", gc.grad_check(
            lambda t: (pretrain_loss_grad(R, float(t), feats, targets, Z)[0], dtau), np.array(tau1)
        ))
    return worst
