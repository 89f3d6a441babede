"""ICP registration uncertainty attributed to interpretable concepts.

Registers point clouds with ICP, scores the registration's uncertainty from
restarted runs, embeds each aligned pair with analytical features and
attributes the uncertainty to concepts (sensor noise, pose-initialization
error, partial overlap) with a sparse variational multiclass Gaussian
process classifier. A BALD-driven active-learning loop adds new concepts.
"""
from .geometry import PointCloud, RigidTransform
from .gpc import Attribution, KernelSpec, PredictConfig, SvgpModel, TrainOptions, attribute, train
from .icp import IcpParams, RegistrationResult, icp_register, registration_uncertainty
from .perturb import LabeledPair, PerturbSpec, Vocabulary, synth_dataset
from .pipeline import explain, register_and_embed

__version__ = "0.1.0"

__all__ = [
    "Attribution", "IcpParams", "KernelSpec", "LabeledPair", "PerturbSpec", "PointCloud", "PredictConfig",
    "RegistrationResult", "RigidTransform", "SvgpModel", "TrainOptions", "Vocabulary", "attribute",
    "explain", "icp_register", "register_and_embed", "registration_uncertainty", "synth_dataset", "train",
]
