"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tol: float
    worst: str = ""
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def rel_error(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(loss_fn, named_params, tol=1e-6, fraction=0.01, h=1e-5, seed=0, min_per_param=3,
               floor=1e-8, reference_dtype=np.float64):
    """Compare tape gradients against central differences on a random entry subset.

    ``loss_fn()`` must rebuild the graph from the current parameter values and
    return a scalar Tensor. Analytic gradients are taken in the parameters'
    own dtype; the finite differences are always evaluated in
    ``reference_dtype`` (parameters are cast temporarily), so an f32 network is
    checked against an f64 reference.
    """
    rng = np.random.default_rng(seed)
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in named_params}
    originals = {name: p.data for name, p in named_params}
    for name, p in named_params:
        p.data = originals[name].astype(reference_dtype)

    def f():
        return float(loss_fn().data)

    worst, worst_name, n_checked = 0.0, "", 0
    per_param = {}
    try:
        for name, p in named_params:
            size = p.data.size
            k = min(size, max(min_per_param, int(np.ceil(fraction * size))))
            picks = rng.choice(size, size=k, replace=False)
            flat = p.data.reshape(-1)
            errs = []
            for i in picks:
                old = flat[i]
                flat[i] = old + h
                fp = f()
                flat[i] = old - h
                fm = f()
                flat[i] = old
                num = (fp - fm) / (2 * h)
                errs.append(float(rel_error(analytic[name].reshape(-1)[i], num, floor)))
            n_checked += len(errs)
            per_param[name] = max(errs)
            if per_param[name] > worst:
                worst, worst_name = per_param[name], name
    finally:
        for name, p in named_params:
            p.data = originals[name]
    return GradCheckReport(worst, n_checked, tol, worst_name, per_param)


def input_grad_check(fn, x, tol=1e-6, h=1e-5, n=20, seed=0, floor=1e-8):
    """Check d fn(x).sum() / dx for a single input Tensor at ``n`` random entries."""
    from .tensor import Tensor, sum_

    rng = np.random.default_rng(seed)
    xt = Tensor(x.copy(), requires_grad=True)
    sum_(fn(xt)).backward()
    analytic = xt.grad.reshape(-1)
    flat = x.reshape(-1)
    worst = 0.0
    for i in rng.choice(flat.size, size=min(n, flat.size), replace=False):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn(Tensor(x)).data.sum())
        flat[i] = old - h
        fm = float(fn(Tensor(x)).data.sum())
        flat[i] = old
        worst = max(worst, float(rel_error(analytic[i], (fp - fm) / (2 * h), floor)))
    return GradCheckReport(worst, min(n, flat.size), tol)
