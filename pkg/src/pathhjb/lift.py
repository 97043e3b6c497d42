"""Lift driver-path-dependent, state-dependent problems onto an augmented path space.

A problem whose coefficients read the noise path omega and the current
state x becomes fully path dependent on the stacked (omega, xi) path: the
first block of the lifted diffusion is the identity, so the leading
components of every simulated trajectory reproduce the driving noise path.
When the data depend on the noise path alone the value reduces to a plain
backward equation along noise paths concatenated onto a given prefix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .batch import PathBatch
from .bsde import RegressionBasis, ValueEstimate, solve_bsde
from .control import RegressionValueConfig, value_regression, value_tree
from .paths import DiscretePath, nodes_from_time
from .sde import CoefficientSet, ConstantControl, ControlSet, simulate_forward

__all__ = ["LiftedProblem", "lift_coefficients", "shjb_value", "bsde_value_functional"]


@dataclass(frozen=True)
class LiftedProblem:
    """State equation data driven by the noise path.

    bar_F(omega_pb, x, u) -> (m, dim_state); bar_G -> (m, dim_state, dim_noise);
    bar_q(omega_pb, x, y, z, u) -> (m,) with z (m, dim_noise);
    bar_phi(omega_pb, x) -> (m,).  omega_pb is the PathBatch of noise-path
    prefixes and x the (m, dim_state) array of current states.
    """

    dim_noise: int
    dim_state: int
    bar_F: Callable
    bar_G: Callable
    bar_q: Callable
    bar_phi: Callable
    horizon: float

    def __post_init__(self):
        if self.dim_noise < 1 or self.dim_state < 1:
            raise ValueError("dimensions must be positive")


def _split(pb: PathBatch, d: int) -> tuple[PathBatch, np.ndarray]:
    omega = PathBatch(pb.values[:, :, :d], pb.step)
    x = pb.values[:, -1, d:]
    return omega, x


def lift_coefficients(lp: LiftedProblem) -> CoefficientSet:
    """Coefficient set on the stacked (noise, state) path of dimension d+m.

    Lifted drift is (0; bar_F), lifted diffusion stacks the d x d identity
    over bar_G, and driver and terminal read the noise block plus the
    state block's endpoint.  The lifted noise dimension stays d.
    """
    d, m_state = lp.dim_noise, lp.dim_state

    def F(pb: PathBatch, u) -> np.ndarray:
        omega, x = _split(pb, d)
        top = np.zeros((pb.n_paths, d))
        bot = np.asarray(lp.bar_F(omega, x, u), dtype=float)
        return np.concatenate([top, bot], axis=1)

    def G(pb: PathBatch, u) -> np.ndarray:
        omega, x = _split(pb, d)
        out = np.empty((pb.n_paths, d + m_state, d))
        out[:, :d, :] = np.eye(d)
        out[:, d:, :] = np.asarray(lp.bar_G(omega, x, u), dtype=float)
        return out

    def q(pb: PathBatch, y, z, u) -> np.ndarray:
        omega, x = _split(pb, d)
        return np.asarray(lp.bar_q(omega, x, y, z, u), dtype=float)

    def phi(pb: PathBatch) -> np.ndarray:
        omega, x = _split(pb, d)
        return np.asarray(lp.bar_phi(omega, x), dtype=float)

    return CoefficientSet(dim=d + m_state, noise_dim=d, F=F, G=G, q=q, phi=phi,
                          horizon=lp.horizon)


def _augmented_initial(lp: LiftedProblem, omega: DiscretePath, x: np.ndarray,
                       xi_history: Optional[DiscretePath] = None) -> DiscretePath:
    """Stack the noise prefix with a state history ending at x.

    Any history with the right endpoint is equivalent because the data only
    read the state block's endpoint; the default is the constant-x path.
    The stacked path need not start at the origin.
    """
    x = np.broadcast_to(np.asarray(x, dtype=float), (lp.dim_state,))
    if xi_history is None:
        xi_vals = np.broadcast_to(x, (omega.node_count, lp.dim_state))
    else:
        if xi_history.node_count != omega.node_count or xi_history.step != omega.step:
            raise ValueError("state history must share the noise path grid")
        if not np.allclose(xi_history.values[-1], x, rtol=0, atol=0):
            raise ValueError("state history must end at x")
        xi_vals = xi_history.values
    vals = np.concatenate([omega.values, xi_vals], axis=1)
    return DiscretePath(vals, omega.step)


def shjb_value(lp: LiftedProblem, omega: DiscretePath, x: np.ndarray,
               controls: ControlSet, solver: str = "tree", n_steps: int = 4,
               reg_cfg: Optional[RegressionValueConfig] = None,
               xi_history: Optional[DiscretePath] = None) -> ValueEstimate:
    """Value of the lifted problem at (noise prefix, state x).

    Builds the augmented initial path and delegates to the chosen control
    solver.  The result is invariant to the state history used, exactly so
    for the tree solver.
    """
    coeffs = lift_coefficients(lp)
    if omega.node_count == 1 and omega.step != lp.horizon / n_steps and solver == "tree":
        omega = DiscretePath(omega.values, lp.horizon / n_steps,
                             continuous_origin=omega.continuous_origin)
    initial = _augmented_initial(lp, omega, x, xi_history)
    if solver == "tree":
        return value_tree(coeffs, initial, controls, n_steps)
    if solver == "regression":
        if reg_cfg is None:
            raise ValueError("regression solver needs a RegressionValueConfig")
        return value_regression(coeffs, initial, controls, reg_cfg).estimate
    raise ValueError("solver must be 'tree' or 'regression'")


def bsde_value_functional(lp: LiftedProblem, gamma: DiscretePath, n_paths: int,
                          seed: int, basis: RegressionBasis = RegressionBasis()) -> ValueEstimate:
    """Backward-equation value along noise paths concatenated onto gamma.

    Requires data that read the noise path only (state- and control-free):
    simulates drivers equal to gamma on [0, t] continued by fresh Brownian
    increments, and solves the backward equation with terminal bar_phi and
    driver bar_q on them.  At t equal to the horizon this returns
    bar_phi(gamma) exactly.
    """
    d = lp.dim_noise

    def F(pb, u):
        return np.zeros((pb.n_paths, d))

    def G(pb, u):
        return np.broadcast_to(np.eye(d), (pb.n_paths, d, d)).copy()

    def q(pb, y, z, u):
        return np.asarray(lp.bar_q(pb, None, y, z, u), dtype=float)

    def phi(pb):
        return np.asarray(lp.bar_phi(pb, None), dtype=float)

    coeffs = CoefficientSet(dim=d, noise_dim=d, F=F, G=G, q=q, phi=phi,
                            horizon=lp.horizon)
    controls = ControlSet((0.0,))
    n_total = nodes_from_time(lp.horizon, gamma.step)
    if gamma.node_count - 1 > n_total:
        raise ValueError("gamma extends beyond the horizon")
    batch = simulate_forward(coeffs, gamma, ConstantControl(controls), n_paths, seed)
    sol = solve_bsde(batch, q, phi, basis)
    return ValueEstimate(sol.y0, sol.std_error, "regression", batch.n_steps, n_paths, seed)
