"""Differentiable triangle-mesh rendering via randomized smoothing.

The rasterization and depth-aggregation steps of a classical renderer are
argmax maps; this package smooths them with additive random noise, yielding
a renderer with informative gradients everywhere, variance-reduced
Monte-Carlo Jacobian estimators, closed-form paths for specific noise priors,
an adaptive smoothing schedule, and a single-view pose-fitting harness.
"""

from .losses import LossWeights, composite_loss, laplacian_loss, neg_iou, rgb_l1, rgb_l2
from .optim import (AdamState, PoseTask, SmoothingController, TaskResult,
                    adam_step, angular_error, random_pose_perturbation,
                    run_pose_task, smoothing_update)
from .priors import (CAUCHY, GAUSSIAN, GUMBEL, LOGISTIC, PRIORS, UNIFORM,
                     NoisePrior, NoiseStream, PriorSupportError, get_prior,
                     sample)
from .renderer import (GradReport, RenderBudgetError, SoftRender, backward,
                       render_hard, render_scene, render_soft)
from .scene import (Camera, DirectionalLight, Mesh, ObjParseError, Pose,
                    ProjectedScene, load_obj, project, rotation_matrix, save_obj,
                    shade, signed_distance, unit_cube)
from .smooth_core import (PerturbedEstimate, SmoothingParams, barrier_scores,
                          hard_heaviside, hard_simplex_argmax, jacobian_plain,
                          jacobian_vr, sensitivity_vr, smooth_heaviside,
                          smooth_simplex_argmax)

__version__ = "0.1.0"
