"""Nonlocal diffusion on step-two Carnot groups.

Modules, bottom up: :mod:`group` (group law, dilations, left-invariant
calculus), :mod:`kernel` and :mod:`operators` (mother kernel, rescaled
nonlocal operators and their local limits), :mod:`nonlocal_solver`,
:mod:`local_reference` and :mod:`harness` (studies and reports).
"""
from ._kernels import BACKEND
from .coefficients import CoefficientSet, preset
from .fields import ScalarField, parse_expression
from .group import StratifiedGroup, abelian, builtin, heisenberg
from .kernel import KernelJ, make_bump_kernel, validate_moments

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CoefficientSet",
    "KernelJ",
    "ScalarField",
    "StratifiedGroup",
    "abelian",
    "builtin",
    "heisenberg",
    "make_bump_kernel",
    "parse_expression",
    "preset",
    "validate_moments",
]
