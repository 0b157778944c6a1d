"""Elementwise building blocks of the excursion-effect estimating functions.

All helpers accept scalars or numpy arrays and broadcast.
"""
import numpy as np


def blip_down(y, arm_effect):
    """Remove the treatment effect from an outcome: ``y * exp(-arm_effect)``."""
    return y * np.exp(-np.asarray(arm_effect, dtype=float))


def weight_w(p_tilde, p, arm):
    """Change-of-measure weight from randomization ``p`` to reference ``p_tilde``."""
    arm = np.asarray(arm)
    return np.where(arm == 1, p_tilde / p, (1 - p_tilde) / (1 - p))


def weight_ktilde(effect, p):
    """Scalar weight of the conditional-effect estimating function (always negative)."""
    e = np.exp(effect)
    return -e / (e * p + (1 - p))


def h_marginal(mu1, mu0, p_tilde, s_effect):
    """Mean of the blipped-down outcome under reference randomization."""
    return mu1 * np.exp(-np.asarray(s_effect, dtype=float)) * p_tilde + mu0 * (1 - p_tilde)
