"""Projected (stochastic) gradient descent with certified step sizes.

The step-size policy either takes a user value or derives
``gamma = 1/L_F`` (``1/(2 L_F)`` stochastic) from the smoothness calculus
over the training domain, a product of per-layer parameter balls.  Traces
record objective values, gradient-mapping norms and projection activity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .autodiff import backward, forward
from .chain import ChainSpec, ParamVector
from .errors import InfeasibleModel
from .objectives import Objective, Regularizer, ZeroReg
from .smoothness import BoundedDomain, objective_smoothness, propagate_chain

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "project_domain",
    "certified_step",
    "train_pgd",
    "train_sgd",
]


@dataclass(eq=False)
class TrainConfig:
    """Loop configuration; ``gamma=None`` selects the certified policy."""

    dom: BoundedDomain
    budget: int
    gamma: Optional[float] = None
    batch: int = 0
    seed: int = 0
    eps: float = 0.0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("iteration budget must be at least 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("step size must be positive")
        if self.batch < 0:
            raise ValueError("batch size must be nonnegative")


@dataclass(eq=False)
class TrainTrace:
    values: List[float] = field(default_factory=list)
    mapping_norms: List[float] = field(default_factory=list)
    proj_active: List[bool] = field(default_factory=list)
    gamma: float = 0.0
    certified_smooth: Optional[float] = None
    variance_proxy: Optional[float] = None
    stopped_early: bool = False
    final_u: Optional[ParamVector] = None

    def __len__(self) -> int:
        return len(self.values)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "value", "mapping_norm"])
            for i, (v, m) in enumerate(zip(self.values, self.mapping_norms)):
                wr.writerow([i, f"{v:.12g}", f"{m:.12g}"])


def project_domain(u: ParamVector, dom: BoundedDomain) -> ParamVector:
    """Blockwise radial projection onto the per-layer balls."""
    if len(dom.radii) != len(u.blocks):
        raise ValueError(f"{len(dom.radii)} radii for {len(u.blocks)} blocks")
    out = []
    for b, r in zip(u.blocks, dom.radii):
        n = float(np.linalg.norm(b))
        out.append(b * min(1.0, r / n) if n > 0 else b.copy())
    return ParamVector(out)


def certified_step(chain: ChainSpec, h: Objective, r: Optional[Regularizer],
                   x0, dom: BoundedDomain):
    """Smoothness-certified step size over the domain.

    Returns ``(gamma, L_F)`` with ``gamma = 1/L_F``.  Refuses chains whose
    certified bound is infinite (piecewise-linear pieces); those need an
    explicit step size or smooth activations.
    """
    r = r if r is not None else ZeroReg()
    x0 = np.asarray(x0, dtype=float)
    if float(np.linalg.norm(x0)) > dom.m0 * (1.0 + 1e-9):
        raise ValueError("input norm exceeds the domain magnitude bound")
    psi = propagate_chain(chain, dom)
    rho_out = psi.m.value
    ell_h = h.lip_bound(rho_out)
    L_h = h.smooth_bound()
    u_ref = ParamVector.zeros(chain.param_dims)
    tape = forward(chain, x0, u_ref)
    grad_ref = float(np.linalg.norm(h.value_grad(tape.output)[1]))
    L_F, _ = objective_smoothness(psi, dom, ell_h, L_h, grad_ref, r.smooth)
    Lf = L_F.value
    if not np.isfinite(Lf) or Lf <= 0:
        raise InfeasibleModel(
            "certified smoothness bound is not finite; use smooth stages "
            "(softplus, sigmoid, averaging pools) or pass an explicit step size")
    return 1.0 / Lf, Lf


def _full_grad(chain, h, r, x0, u):
    tape = forward(chain, x0, u)
    val_h, gh = h.value_grad(tape.output)
    g = backward(tape, gh) + r.grad(u)
    return float(val_h + r.value(u)), g, tape


def _loop(chain, h, r, x0, cfg, u0, gamma, certified, estimator, rng):
    trace = TrainTrace(gamma=gamma, certified_smooth=certified)
    u = project_domain(u0, cfg.dom)
    for _ in range(cfg.budget):
        val, g, tape = _full_grad(chain, h, r, x0, u)
        if estimator is not None:
            g = estimator(tape, u, rng)
        raw = u + g.scale(-gamma)
        u_next = project_domain(raw, cfg.dom)
        active = any(rn > rad for rn, rad in zip(raw.block_norms(), cfg.dom.radii))
        mapping = (u - u_next).norm() / gamma
        trace.values.append(val)
        trace.mapping_norms.append(mapping)
        trace.proj_active.append(active)
        u = u_next
        if mapping <= cfg.eps:
            trace.stopped_early = True
            break
    trace.final_u = u
    return trace


def train_pgd(chain: ChainSpec, h: Objective, r: Optional[Regularizer],
              x0, cfg: TrainConfig, u0: Optional[ParamVector] = None) -> TrainTrace:
    """Full-batch projected gradient descent.

    With the certified policy the objective value is nonincreasing along
    the trace; stops early when the gradient-mapping norm reaches
    ``cfg.eps``.
    """
    r = r if r is not None else ZeroReg()
    if cfg.gamma is not None:
        gamma, cert = cfg.gamma, None
    else:
        gamma, cert = certified_step(chain, h, r, x0, cfg.dom)
    u0 = u0 if u0 is not None else ParamVector.zeros(chain.param_dims)
    return _loop(chain, h, r, x0, cfg, u0, gamma, cert, None, None)


def train_sgd(chain: ChainSpec, h: Objective, r: Optional[Regularizer],
              x0, cfg: TrainConfig, u0: Optional[ParamVector] = None) -> TrainTrace:
    """Projected SGD with uniform mini-batches of a decomposable objective.

    The estimator averages per-sample loss gradients over a uniformly
    sampled batch (without replacement), which is unbiased for the
    full-batch gradient; the certified policy halves the certified step.
    A variance proxy (mean squared estimator deviation at the final point,
    20 resamples) is attached to the trace.
    """
    r = r if r is not None else ZeroReg()
    if not h.decomposable:
        raise ValueError("stochastic training needs a per-sample decomposable objective")
    n = h.n
    batch = cfg.batch if cfg.batch > 0 else n
    if batch > n:
        raise ValueError(f"batch size {batch} exceeds sample count {n}")
    if cfg.gamma is not None:
        gamma, cert = cfg.gamma, None
    else:
        g_full, L_f = certified_step(chain, h, r, x0, cfg.dom)
        gamma, cert = g_full / 2.0, L_f
    rng = np.random.default_rng(cfg.seed)

    def estimator(tape, u, gen):
        idx = gen.choice(n, size=batch, replace=False)
        return backward(tape, h.grad_minibatch(tape.output, idx)) + r.grad(u)

    u0 = u0 if u0 is not None else ParamVector.zeros(chain.param_dims)
    trace = _loop(chain, h, r, x0, cfg, u0, gamma, cert, estimator, rng)

    _, g_exact, tape = _full_grad(chain, h, r, x0, trace.final_u)
    dev = 0.0
    for _ in range(20):
        gb = estimator(tape, trace.final_u, rng)
        dev += (gb - g_exact).dot(gb - g_exact)
    trace.variance_proxy = dev / 20.0
    return trace
