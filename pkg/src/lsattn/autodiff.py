"""Reverse-mode differentiation over recorded tensor graphs.

The graph is implicit: every tensor produced while gradients are enabled
keeps references to its parents and a closure that routes its own gradient
to them. `backward` replays those closures in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

__all__ = ["backward", "gradients", "zero_grads", "finite_diff_check"]


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor, seed: np.ndarray | float | None = None) -> None:
    """Accumulate gradients of `output` into every reachable tensor's .grad.

    `seed` is the upstream gradient and must match the output's shape; it
    defaults to ones. Gradients add onto existing .grad values, so call
    `zero_grads` between passes.
    """
    if seed is None:
        seed_arr = np.ones(output.shape, dtype=np.float64)
    else:
        seed_arr = np.asarray(seed, dtype=np.float64)
        if seed_arr.shape != output.shape:
            raise ShapeError(f"seed shape {seed_arr.shape} does not match output {output.shape}")
    output.grad = seed_arr if output.grad is None else output.grad + seed_arr
    for node in reversed(_topo_order(output)):
        if node._backward is not None and node.grad is not None:
            node._backward()


def gradients(
    output: Tensor,
    params: Sequence[Tensor],
    seed: np.ndarray | float | None = None,
) -> list[np.ndarray]:
    """Gradients of `output` w.r.t. each parameter; zeros when disconnected."""
    if seed is None:
        seed_arr = np.ones(output.shape, dtype=np.float64)
    else:
        seed_arr = np.asarray(seed, dtype=np.float64)
        if seed_arr.shape != output.shape:
            raise ShapeError(f"seed shape {seed_arr.shape} does not match output {output.shape}")
    order = _topo_order(output)
    for node in order:
        node.grad = None
    for p in params:
        p.grad = None
    output.grad = seed_arr
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grads(roots: Sequence[Tensor]) -> None:
    """Clear .grad on every tensor reachable from the given roots."""
    for root in roots:
        for node in _topo_order(root):
            node.grad = None


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` evaluates a scalar loss from the current parameter values. Each
    checked coordinate costs two forward passes; when a parameter has more
    coordinates than `max_coords`, a random subset (at least 200) is used.
    The denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= step <= 1e-4:
        raise ValueError("step must lie in [1e-7, 1e-4]")
    loss = f()
    if loss.shape != ():
        raise ShapeError("finite_diff_check requires a scalar-valued function")
    analytic = gradients(loss, params)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            budget = max(200, max_coords)
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(n, size=min(budget, n), replace=False)
        gflat = grad.reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + step
            up = f().item()
            flat[i] = original - step
            down = f().item()
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
