from .base import BilevelProblem
from .mlp import MLPHyperOpt, mlp_gradients
from .quadratic import QuadraticBilevel, quad_hypergradient, random_quadratic

__all__ = ["BilevelProblem", "MLPHyperOpt", "QuadraticBilevel", "mlp_gradients",
           "quad_hypergradient", "random_quadratic"]
