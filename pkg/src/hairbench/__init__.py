"""hairbench: train and benchmark an encoder-decoder hair-removal network.

Subpackages cover the tensor engine with reverse-mode autodiff, the
network itself, the five-term reconstruction loss, synthetic paired
dataset generation, nine image fidelity metrics, and paired statistical
method comparison.  The ``hairbench`` CLI orchestrates the pipeline.
"""

from . import engine, hairsim, image_io, loss, metrics, model, pipeline, stats  # noqa: F401

__version__ = "0.1.0"
