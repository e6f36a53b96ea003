"""Solver settings shared by the stages and the outer loop."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class SolveSettings:
    """Tolerances and iteration caps.

    ``epsilon`` is the outer/alternation convergence tolerance on objective
    changes. ``inner_tol`` is the duality-gap target handed to the convex
    engine inside Stages 1 and 3; it is kept well below ``epsilon`` so that
    stage-to-stage monotonicity holds to ~1e-8.
    """

    epsilon: float = 1e-4
    max_outer_iters: int = 20
    stage3_max_iters: int = 100
    inner_tol: float = 1e-9
    seed: int = 42

    def __post_init__(self):
        if not self.epsilon > 0 or not self.inner_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer_iters < 1 or self.stage3_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")

    def as_dict(self):
        return asdict(self)
