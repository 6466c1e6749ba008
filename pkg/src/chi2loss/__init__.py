"""Chi-square loss for softmax classifiers, on a from-scratch numpy MLP."""
from .losses import (
    SmoothingConfig,
    chi_square_grad_wrt_logits,
    chi_square_grad_wrt_pred,
    chi_square_loss,
    cross_entropy_grad_wrt_logits,
    cross_entropy_loss,
    one_hot,
    smooth_labels,
)
from .nn import MlpModel, backward, forward, init_model, sgd_step, softmax
from .stats import chi_square_statistic, minimize_on_simplex, project_simplex, transform_covariance

__version__ = "0.1.0"
