"""Named verification suites: JVP, GRAD, THEOREM2, IDENTITY, SAMPLER.

Each suite returns a report dict with a ``passed`` flag and the measured quantities,
so the CLI can emit machine-readable results and the test suite can assert on the
same numbers.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import nets, objectives, oracles, training
from .autodiff import Var
from .flowcore import CouplingSample, TimePair, TimeSamplerConfig, TimeSamplerKind, sample_time_pairs

Array = np.ndarray

SUITES = ("JVP", "GRAD", "THEOREM2", "IDENTITY", "SAMPLER")


def _random_model(rng: np.random.Generator, *, data_dim=2, hidden=(16, 16), time_dim=8,
                  cond_mode=nets.ConditioningMode.T_DT, param_mode=nets.ParamMode.RESIDUAL,
                  head_scale=0.3) -> nets.TfmModel:
    """A small model with a non-zero output layer (the default init zeroes it)."""
    model = nets.init_tfm_model(
        data_dim=data_dim,
        hidden_sizes=tuple(hidden),
        time_cfg=nets.TimeEmbedConfig(time_dim),
        cond_mode=cond_mode,
        param_mode=param_mode,
        rng=rng,
    )
    model.params["w_out"] = head_scale * rng.standard_normal(model.params["w_out"].shape)
    model.params["b_out"] = head_scale * rng.standard_normal(model.params["b_out"].shape)
    return model


def check_jvp(seed: int = 0, n_models: int = 50, tol: float = 1e-6) -> dict:
    """Directional derivatives vs central finite differences on random MLPs."""
    rng = np.random.default_rng(seed)
    modes = list(nets.ConditioningMode)
    pmodes = list(nets.ParamMode)
    worst = 0.0
    for i in range(n_models):
        model = _random_model(
            rng,
            cond_mode=modes[i % len(modes)],
            param_mode=pmodes[i % len(pmodes)],
        )
        x = rng.standard_normal((3, 2))
        t = rng.uniform(0.05, 0.45)
        r = rng.uniform(t, 0.95)
        vx = rng.standard_normal((3, 2))
        tcol = np.full((3, 1), t)
        rcol = np.full((3, 1), r)
        err = ad.check_jvp_fd(
            lambda xx, tt, rr, m=model: nets.apply(m, m.params, xx, tt, rr, None),
            (x, tcol, rcol),
            (vx, np.ones_like(tcol), np.zeros_like(rcol)),
            eps=1e-5,
        )
        worst = max(worst, err)
    return {"suite": "JVP", "passed": worst < tol, "max_relative_error": worst, "tolerance": tol,
            "n_models": n_models}


def _frozen_target_loss(model, params, x_t, tcol, rcol, targets, weights) -> float:
    X = nets.apply(model, params, Var(x_t), Var(tcol), Var(rcol), None).value
    sq = np.sum((X - targets) ** 2, axis=1)
    return float(np.mean(weights * sq))


def check_grad(seed: int = 0, tol: float = 1e-4, fd_eps: float = 1e-6, batch: int = 8) -> dict:
    """Every parameter-gradient entry of the training loss vs finite differences.

    The loss target is stop-gradiented, so the reference is the finite difference of
    the frozen-target weighted loss around the same parameter point.
    """
    rng = np.random.default_rng(seed)
    model = _random_model(rng, hidden=(16, 16))
    cfg = objectives.LossConfig(power_p=1.0, stabilizer_c=1e-3, cfg_dropout=0.0)

    x0 = rng.standard_normal((batch, 2))
    x1 = rng.standard_normal((batch, 2))
    tt, rr = sample_time_pairs(TimeSamplerConfig(), batch, rng)
    pairs = [TimePair(float(a), float(b)) for a, b in zip(tt, rr)]
    couplings = [CouplingSample(x0[i], x1[i]) for i in range(batch)]

    _, grads = objectives.tfm_loss(model, couplings, pairs, cfg)

    # rebuild the frozen target from the same public pieces
    tcol = tt[:, None]
    rcol = rr[:, None]
    x_t = (1.0 - tcol) * x0 + tcol * x1
    X0, dX_dt = ad.jvp(
        lambda xx, a, b: nets.apply(model, model.params, xx, a, b, None),
        (x_t, tcol, rcol),
        (x1 - x0, np.ones_like(tcol), np.zeros_like(rcol)),
    )
    targets = (1.0 - rcol) * x0 + rcol * x1 + (rcol - tcol) * dX_dt
    sq0 = np.sum((X0 - targets) ** 2, axis=1)
    weights = np.array([objectives.adaptive_weight(s, cfg) for s in sq0])

    worst = 0.0
    for name, base in model.params.items():
        flat = base.ravel()
        g = grads[name].ravel()
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + fd_eps
            up = _frozen_target_loss(model, model.params, x_t, tcol, rcol, targets, weights)
            flat[j] = keep - fd_eps
            dn = _frozen_target_loss(model, model.params, x_t, tcol, rcol, targets, weights)
            flat[j] = keep
            fd = (up - dn) / (2.0 * fd_eps)
            rel = abs(g[j] - fd) / (abs(fd) + 1e-10)
            worst = max(worst, rel)
    return {"suite": "GRAD", "passed": worst < tol, "max_relative_error": worst, "tolerance": tol,
            "n_entries": sum(p.size for p in model.params.values())}


def check_theorem2(seed: int = 0, n_samples: int = 100_000) -> dict:
    """Gradient agreement of the conditional and posterior-averaged objectives."""
    rng = np.random.default_rng(seed)
    model = _random_model(rng, data_dim=1, hidden=(16, 16))
    pair_cfg = TimeSamplerConfig()

    single = oracles.AtomTarget(np.array([[0.7]]), np.array([1.0]))
    cos_single = oracles.grad_equivalence_check(model, single, 20_000, pair_cfg, np.random.default_rng(seed + 1))

    double = oracles.AtomTarget(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]))
    cos_double = oracles.grad_equivalence_check(model, double, n_samples, pair_cfg, np.random.default_rng(seed + 2))

    passed = abs(cos_single - 1.0) < 1e-12 and cos_double > 0.99
    return {"suite": "THEOREM2", "passed": passed, "cosine_single_atom": cos_single,
            "cosine_two_atom": cos_double, "n_samples": n_samples}


def overfit_single_coupling(seed: int = 0, steps: int = 2000, batch: int = 64,
                            lr: float = 1e-2) -> tuple[nets.TfmModel, Array, Array, float]:
    """Train a small model on one fixed coupling; returns (model, x0, x1, final_loss)."""
    rng = np.random.default_rng(seed)
    x0 = np.array([-1.2, 0.8])
    x1 = np.array([1.5, -0.6])
    model = nets.init_tfm_model(hidden_sizes=(64, 64), time_cfg=nets.TimeEmbedConfig(16), rng=rng)
    cfg = objectives.LossConfig(cfg_dropout=0.0)
    opt = training.Adam(model.params, lr=lr)
    couplings = [CouplingSample(x0, x1)] * batch
    pair_cfg = TimeSamplerConfig(kind=TimeSamplerKind.UNIFORM)
    final = math.inf
    for step in range(steps):
        tt, rr = sample_time_pairs(pair_cfg, batch, rng)
        pairs = [TimePair(float(a), float(b)) for a, b in zip(tt, rr)]
        report, grads = objectives.tfm_loss(model, couplings, pairs, cfg)
        opt.step(model.params, grads, lr=training.cosine_lr(lr, step, steps))
        final = report.weighted_loss
    return model, x0, x1, final


def identity_residual_grid(model: nets.TfmModel, x0: Array, x1: Array, n: int = 10) -> Array:
    """Residual of the self-consistency identity on the coupling's own path.

    Rows index t, columns r; cells with r < t are NaN. The reference marginals for a
    degenerate (single-coupling) dataset are the conditional quantities themselves.
    """
    ts = np.linspace(0.0, 1.0, n)
    grid = np.full((n, n), np.nan)
    for i, t in enumerate(ts):
        x_t = (1.0 - t) * x0 + t * x1
        for j, r in enumerate(ts):
            if r < t:
                continue
            trans = (1.0 - r) * x0 + r * x1
            grid[i, j] = objectives.identity_residual(
                model, x_t, TimePair(float(t), float(r)), trans, x1 - x0
            )
    return grid


def check_identity(seed: int = 0, steps: int = 2000, tol: float = 1e-2) -> dict:
    model, x0, x1, final_loss = overfit_single_coupling(seed, steps=steps)
    grid = identity_residual_grid(model, x0, x1)
    diag = np.array([grid[i, i] for i in range(grid.shape[0])])
    mean_resid = float(np.nanmean(grid))
    passed = mean_resid < tol and bool(np.all(diag == 0.0))
    return {"suite": "IDENTITY", "passed": passed, "mean_residual": mean_resid,
            "max_diagonal_residual": float(np.max(np.abs(diag))), "final_loss": final_loss}


def _logistic_normal_cdf(x: Array, mu: float, sigma: float) -> Array:
    logit = np.log(x) - np.log1p(-x)
    z = (logit - mu) / (sigma * math.sqrt(2.0))
    return 0.5 * (1.0 + np.array([math.erf(v) for v in z]))


def check_sampler(seed: int = 0, n: int = 100_000, ks_tol: float = 0.01) -> dict:
    """Time-pair bounds hold exactly; the t marginal matches its target law (KS test)."""
    rng = np.random.default_rng(seed)
    cfg = TimeSamplerConfig()
    t, r = sample_time_pairs(cfg, n, rng)
    bounds_ok = bool(np.all((0.0 <= t) & (t <= r) & (r <= 1.0)))
    xs = np.sort(t)
    cdf = _logistic_normal_cdf(xs, cfg.mu, cfg.sigma)
    i = np.arange(1, n + 1)
    ks = float(np.max(np.maximum(np.abs(i / n - cdf), np.abs(cdf - (i - 1) / n))))
    passed = bounds_ok and ks < ks_tol
    return {"suite": "SAMPLER", "passed": passed, "bounds_ok": bounds_ok, "ks_statistic": ks,
            "n": n}


def run_suite(name: str, seed: int = 0) -> dict:
    name = name.upper()
    if name == "JVP":
        return check_jvp(seed)
    if name == "GRAD":
        return check_grad(seed)
    if name == "THEOREM2":
        return check_theorem2(seed)
    if name == "IDENTITY":
        return check_identity(seed)
    if name == "SAMPLER":
        return check_sampler(seed)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
