"""Simulation-based inference with neural posterior, likelihood and ratio estimators."""

from sbir.distributions import BoxUniform, DiagonalGaussian, Gaussian, Prior, Support
from sbir.engines import InferenceConfig, TrainConfig, rejection_abc, run_inference
from sbir.harness import ExternalSimulator, Simulator, Standardizer, simulate_batch
from sbir.posterior import NeuralPosterior, load_posterior, save_posterior
from sbir.samplers import SamplerConfig

__version__ = "0.1.0"

__all__ = [
    "BoxUniform",
    "DiagonalGaussian",
    "Gaussian",
    "Prior",
    "Support",
    "InferenceConfig",
    "TrainConfig",
    "rejection_abc",
    "run_inference",
    "ExternalSimulator",
    "Simulator",
    "Standardizer",
    "simulate_batch",
    "NeuralPosterior",
    "load_posterior",
    "save_posterior",
    "SamplerConfig",
]
