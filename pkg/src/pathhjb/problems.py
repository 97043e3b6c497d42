"""Built-in benchmark problems with closed-form values.

P1 freezes the dynamics, P2 controls a drift under additive noise, P3 pays
the running integral of a drift-controlled path (a genuinely path-dependent
payoff), and P4 has a diffusion proportional to the current value, so the
coefficients vanish on the zero path and the terminal expectation is a
martingale.  The closed forms use the package quadrature conventions:
running integrals are left Riemann sums excluding the final node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .batch import PathBatch
from .calculus import FunctionalHandle
from .paths import DiscretePath
from .sde import CoefficientSet, ControlSet

__all__ = ["ProblemSpec", "make_problem", "analytic_value", "PROBLEM_IDS"]

PROBLEM_IDS = ("P1_frozen", "P2_drift_control", "P3_running_integral", "P4_multiplicative")


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    coeffs: CoefficientSet
    controls: ControlSet
    analytic: Optional[Callable[[DiscretePath], float]]
    note: str

    def analytic_handle(self, growth_degree: int = 1) -> FunctionalHandle:
        if self.analytic is None:
            raise ValueError(f"{self.id} has no closed-form value")
        return FunctionalHandle(eval=self.analytic, growth_degree=growth_degree,
                                dim=self.coeffs.dim, check_derivatives=False)


def _zeros_drift(pb: PathBatch, u) -> np.ndarray:
    return np.zeros((pb.n_paths, pb.dim))


def _zeros_diffusion(pb: PathBatch, u) -> np.ndarray:
    return np.zeros((pb.n_paths, pb.dim, pb.dim))


def _zero_driver(pb: PathBatch, y, z, u) -> np.ndarray:
    return np.zeros(pb.n_paths)


def _endpoint_payoff(pb: PathBatch) -> np.ndarray:
    return pb.endpoint[:, 0]


def _integral_payoff(pb: PathBatch) -> np.ndarray:
    return pb.running_integral[:, 0]


def make_problem(problem_id: str, horizon: float = 1.0) -> ProblemSpec:
    """Construct a built-in benchmark problem on the given horizon."""
    T = horizon
    if problem_id == "P1_frozen":
        coeffs = CoefficientSet(
            dim=1, noise_dim=1, F=_zeros_drift, G=_zeros_diffusion,
            q=_zero_driver, phi=_endpoint_payoff, horizon=T, lipschitz_L=1.0)
        controls = ControlSet((0.0,))
        return ProblemSpec(
            problem_id, coeffs, controls,
            analytic=lambda p: float(p.endpoint[0]),
            note="frozen dynamics: the value is the current state")

    if problem_id == "P2_drift_control":
        def F(pb, u):
            return np.full((pb.n_paths, 1), float(u))

        def G(pb, u):
            return np.ones((pb.n_paths, 1, 1))

        coeffs = CoefficientSet(dim=1, noise_dim=1, F=F, G=G, q=_zero_driver,
                                phi=_endpoint_payoff, horizon=T, lipschitz_L=1.0)
        controls = ControlSet((-1.0, 0.0, 1.0))
        return ProblemSpec(
            problem_id, coeffs, controls,
            analytic=lambda p: float(p.endpoint[0]) + (T - p.t),
            note="drift control, additive noise, terminal payoff: "
                 "the optimal drift is +1 throughout")

    if problem_id == "P3_running_integral":
        def F(pb, u):
            return np.full((pb.n_paths, 1), float(u))

        def G(pb, u):
            return np.ones((pb.n_paths, 1, 1))

        coeffs = CoefficientSet(dim=1, noise_dim=1, F=F, G=G, q=_zero_driver,
                                phi=_integral_payoff, horizon=T, lipschitz_L=1.0)
        controls = ControlSet((-1.0, 1.0))

        def analytic(p: DiscretePath) -> float:
            x = float(p.endpoint[0])
            remain = T - p.t
            integral = p.step * float(np.sum(p.values[:-1, 0])) if p.node_count > 1 else 0.0
            return integral + x * remain + remain**2 / 2.0

        return ProblemSpec(
            problem_id, coeffs, controls, analytic,
            note="running-integral payoff: the value carries the realized "
                 "integral plus the optimally drifted mean of the rest")

    if problem_id == "P4_multiplicative":
        def G(pb, u):
            return pb.endpoint[:, :, None]

        coeffs = CoefficientSet(dim=1, noise_dim=1, F=_zeros_drift, G=G,
                                q=_zero_driver, phi=_endpoint_payoff, horizon=T,
                                lipschitz_L=1.0)
        controls = ControlSet((0.0,))
        return ProblemSpec(
            problem_id, coeffs, controls,
            analytic=lambda p: float(p.endpoint[0]),
            note="state-proportional diffusion vanishing at the zero path; "
                 "the terminal expectation is a martingale")

    raise ValueError(f"unknown problem id {problem_id!r}; known: {PROBLEM_IDS}")


def analytic_value(spec: ProblemSpec, p: DiscretePath) -> float:
    """Closed-form value at a path, using the package quadrature conventions."""
    if spec.analytic is None:
        raise ValueError(f"{spec.id} has no closed-form value")
    return float(spec.analytic(p))
