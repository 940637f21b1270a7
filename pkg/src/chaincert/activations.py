"""Scalar activation functions with derivatives and global constants.

Each entry records, for the scalar map applied coordinate-wise:

* ``lip``: sup |a'| (slope bound),
* ``smooth``: sup |a''| (curvature bound, inf for kinked maps),
* ``bound``: sup |a| (inf when unbounded),
* ``val0``: a(0),
* ``slope0``: an upper bound on |a'(0)| used by ball refinements.

``softplus-centered`` is log(1+e^x) - log 2: identical derivatives to softplus
but zero at zero, which keeps output-magnitude certificates offset-free. The
smooth network fixtures use it for exactly that reason.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LOG2 = float(np.log(2.0))


def _softplus(x: np.ndarray) -> np.ndarray:
    # stable: log(1+e^x) = max(x,0) + log1p(e^{-|x|})
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ScalarActivation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray] | None
    lip: float
    smooth: float
    bound: float
    val0: float
    slope0: float

    @property
    def second_order(self) -> bool:
        return self.d2 is not None


ACTIVATIONS: dict[str, ScalarActivation] = {}


def _register(act: ScalarActivation) -> ScalarActivation:
    ACTIVATIONS[act.name] = act
    return act


IDENTITY = _register(
    ScalarActivation(
        name="identity",
        fn=lambda x: np.asarray(x, dtype=float).copy(),
        d1=lambda x: np.ones_like(x, dtype=float),
        d2=lambda x: np.zeros_like(x, dtype=float),
        lip=1.0,
        smooth=0.0,
        bound=np.inf,
        val0=0.0,
        slope0=1.0,
    )
)

# ReLU'(0) = 0 by convention; no second derivative anywhere we expose it.
RELU = _register(
    ScalarActivation(
        name="relu",
        fn=lambda x: np.maximum(x, 0.0),
        d1=lambda x: (np.asarray(x) > 0).astype(float),
        d2=None,
        lip=1.0,
        smooth=np.inf,
        bound=np.inf,
        val0=0.0,
        slope0=1.0,
    )
)

SOFTPLUS = _register(
    ScalarActivation(
        name="softplus",
        fn=_softplus,
        d1=_sigmoid,
        d2=lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)),
        lip=1.0,
        smooth=0.25,
        bound=np.inf,
        val0=LOG2,
        slope0=0.5,
    )
)

SOFTPLUS_CENTERED = _register(
    ScalarActivation(
        name="softplus-centered",
        fn=lambda x: _softplus(x) - LOG2,
        d1=_sigmoid,
        d2=lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)),
        lip=1.0,
        smooth=0.25,
        bound=np.inf,
        val0=0.0,
        slope0=0.5,
    )
)

# |sigma''| peaks at 1/(6*sqrt(3)) ~ 0.0962; 1/10 is the cataloged bound.
SIGMOID = _register(
    ScalarActivation(
        name="sigmoid",
        fn=_sigmoid,
        d1=lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)),
        d2=lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)) * (1.0 - 2.0 * _sigmoid(x)),
        lip=0.25,
        smooth=0.1,
        bound=1.0,
        val0=0.5,
        slope0=0.25,
    )
)


def get_activation(name: str) -> ScalarActivation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise KeyError(
            f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}"
        ) from None
