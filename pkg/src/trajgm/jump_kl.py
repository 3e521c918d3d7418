"""KL objective between the bridge rate kernel and a scaled Gaussian.

For the true kernel ``q = lam_true * J`` with ``J`` of mean ``mu_j`` and
variance ``var_j``, and a model kernel ``lam * N(mu, sigma^2)``, the KL
divergence equals, up to a constant that does not depend on the model,

    F = lam + lam_true * (log sigma - log lam
                          + var_j / (2 sigma^2) + (mu_j - mu)^2 / (2 sigma^2))

which is minimized at ``(lam_true, mu_j, sqrt(var_j))``. All functions here
broadcast over numpy arrays.
"""

from dataclasses import dataclass
import math

import numpy as np

from trajgm.errors import DomainError

__all__ = [
    "GaussianJumpKernel",
    "f_objective",
    "jump_loss_term",
    "analytic_grads",
    "softplus",
    "softplus_grad",
    "softplus_inv",
]


@dataclass(frozen=True)
class GaussianJumpKernel:
    lam: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.mu)
                and math.isfinite(self.sigma)):
            raise DomainError(f"non-finite kernel {self}")
        if not (self.lam > 0 and self.sigma > 0):
            raise DomainError(f"need lam > 0 and sigma > 0, got {self}")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def jump_loss_term(lam_pred, mu_pred, sigma_pred, lam_true, mu_j, var_j):
    """Per-sample jump loss; same value as :func:`f_objective`."""
    lam_pred = np.asarray(lam_pred, dtype=np.float64)
    sigma_pred = np.asarray(sigma_pred, dtype=np.float64)
    lam_true = np.asarray(lam_true, dtype=np.float64)
    if np.any(lam_pred <= 0) or np.any(sigma_pred <= 0):
        raise DomainError("need lam_pred > 0 and sigma_pred > 0")
    inv2s2 = 0.5 / sigma_pred**2
    bracket = (np.log(sigma_pred) - np.log(lam_pred)
               + (var_j + (np.asarray(mu_j) - mu_pred) ** 2) * inv2s2)
    # lam_true = 0 switches the bracket off even where mu_j, var_j are undefined
    val = lam_pred + np.where(lam_true > 0, lam_true * bracket, 0.0)
    if not np.all(np.isfinite(val)):
        raise DomainError("non-finite jump loss")
    return float(val) if val.ndim == 0 else val


def f_objective(lam_true, mu_j, var_j, k):
    """KL between ``lam_true * J`` and the kernel ``k``, up to a constant."""
    return jump_loss_term(k.lam, k.mu, k.sigma, lam_true, mu_j, var_j)


def analytic_grads(lam_pred, mu_pred, sigma_pred, lam_true, mu_j, var_j):
    """Partials of the jump loss with respect to ``(lam, mu, sigma)``."""
    lam_pred = np.asarray(lam_pred, dtype=np.float64)
    sigma_pred = np.asarray(sigma_pred, dtype=np.float64)
    lam_true = np.asarray(lam_true, dtype=np.float64)
    on = lam_true > 0
    diff = np.where(on, mu_pred - np.asarray(mu_j, dtype=np.float64), 0.0)
    var_j = np.where(on, var_j, 0.0)
    d_lam = 1.0 - lam_true / lam_pred
    d_mu = lam_true * diff / sigma_pred**2
    d_sigma = lam_true * (1.0 / sigma_pred - (var_j + diff**2) / sigma_pred**3)
    return d_lam, d_mu, d_sigma
