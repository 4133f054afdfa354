"""
Backtracking (Armijo) line search and the ascent loop built on it.

Both work on a maximisation problem: a trial point x + t·p is accepted when
f(x + t·p) >= f(x) + c·t·∇f(x)ᵀp, which makes the accepted objective values
non-decreasing.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    GRADIENT = 'gradient'
    QUASI_NEWTON = 'quasi-newton'


class Termination(str, Enum):
    GRADIENT = 'gradient-converged'
    STEP = 'step-converged'
    MAX_ITERS = 'max-iters'


@dataclass(frozen=True)
class LineSearchOptions:
    """Backtracking constants; ``initial_step=None`` normalises the first move to 1 in ∞-norm."""

    shrink: float = 0.5
    sufficient_increase: float = 1e-4
    initial_step: float = None
    max_backtracks: int = 60

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink factor must lie in (0, 1), got {self.shrink}")
        if not 0 < self.sufficient_increase < 1:
            raise ValueError(
                f"sufficient-increase constant must lie in (0, 1), got {self.sufficient_increase}"
            )
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError(f"initial step must be positive, got {self.initial_step}")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    termination: Termination
    values: list = field(default_factory=list)
    iterates: list = field(default_factory=list)


def backtracking_line_search(f, x, fx, gradient, direction, step, options):
    """
    Shrink ``step`` until the sufficient-increase condition holds

    Args:
        f (callable): Objective to maximise
        x (ndarray): Current point
        fx (float): f(x)
        gradient (ndarray): ∇f(x)
        direction (ndarray): Ascent direction, ∇f(x)ᵀ direction > 0
        step (float): First trial step
        options (LineSearchOptions): Constants

    Returns:
        tuple: (step, x_new, f_new), or None when no trial step was accepted
    """
    slope = float(gradient @ direction)
    for _ in range(options.max_backtracks):
        candidate = x + step * direction
        value = f(candidate)
        if value >= fx + options.sufficient_increase * step * slope:
            return step, candidate, value
        step *= options.shrink
    return None


def _bfgs_update(inverse_hessian, s, y, first):
    """Returns (H, updated); H is left untouched when the curvature condition fails."""
    # Works on the minimisation of -f, so y is the change of -∇f
    sy = float(s @ y)
    if sy <= 0:
        return inverse_hessian, False
    if first:
        inverse_hessian = np.eye(len(s)) * sy / float(y @ y)
    rho = 1.0 / sy
    left = np.eye(len(s)) - rho * np.outer(s, y)
    return left @ inverse_hessian @ left.T + rho * np.outer(s, s), True


def ascend(value_and_gradient, f, x0, max_iters, grad_tol, step_tol, options,
           direction=Direction.QUASI_NEWTON):
    """
    Maximise f from x0 with Armijo backtracking

    The gradient test is relative, ‖∇f‖ <= grad_tol·|f|, so it is invariant to
    rescaling f. The step test compares the accepted move in ∞-norm with
    ``step_tol``.

    Until a BFGS update passes the curvature condition the inverse Hessian is
    the identity, and each trial step is normalised to a unit move in ∞-norm.

    Args:
        value_and_gradient (callable): x -> (f(x), ∇f(x))
        f (callable): x -> f(x), used for the trial points
        x0 (sequence): Starting point
        max_iters (int): Maximum number of accepted steps
        grad_tol (float): Relative gradient tolerance
        step_tol (float): Step tolerance in the units of x
        options (LineSearchOptions): Backtracking constants
        direction (Direction): Steepest ascent or BFGS-scaled ascent

    Returns:
        AscentResult: Final point, objective trace and termination reason
    """
    direction = Direction(direction)
    x = np.asarray(x0, dtype=float)
    value, gradient = value_and_gradient(x)
    values, iterates = [value], [x.copy()]
    inverse_hessian = np.eye(len(x))
    # False while H is the unscaled identity, whose steps carry the units of f
    scaled = False
    step = options.initial_step
    termination = Termination.MAX_ITERS

    def converged(value, gradient):
        return np.linalg.norm(gradient) <= grad_tol * abs(value)

    for iteration in range(max_iters):
        if converged(value, gradient):
            termination = Termination.GRADIENT
            break

        search = inverse_hessian @ gradient if direction is Direction.QUASI_NEWTON else gradient
        if float(gradient @ search) <= 0:
            inverse_hessian = np.eye(len(x))
            scaled = False
            search = gradient

        if iteration == 0 and step is not None:
            trial = step
        elif direction is Direction.QUASI_NEWTON and scaled:
            trial = 1.0
        elif iteration == 0 or direction is Direction.QUASI_NEWTON:
            trial = 1.0 / np.max(np.abs(search))
        else:
            trial = step / options.shrink

        accepted = backtracking_line_search(f, x, value, gradient, search, trial, options)
        if accepted is None:
            logger.warning(
                f"Line search exhausted {options.max_backtracks} backtracks at x={x}; stopping"
            )
            termination = Termination.STEP
            break

        step, x_new, _ = accepted
        value_new, gradient_new = value_and_gradient(x_new)
        move = x_new - x
        if direction is Direction.QUASI_NEWTON:
            inverse_hessian, updated = _bfgs_update(
                inverse_hessian, move, gradient - gradient_new, first=not scaled
            )
            scaled = scaled or updated
        x, value, gradient = x_new, value_new, gradient_new
        values.append(value)
        iterates.append(x.copy())
        logger.debug(f"Ascent iteration {iteration + 1}: x={x}, f={value:.12g}, step={step:.3g}")

        if np.max(np.abs(move)) < step_tol:
            termination = Termination.STEP
            break
    else:
        if converged(value, gradient):
            termination = Termination.GRADIENT

    return AscentResult(
        x=x,
        value=value,
        gradient=gradient,
        iterations=len(values) - 1,
        termination=termination,
        values=values,
        iterates=iterates,
    )
