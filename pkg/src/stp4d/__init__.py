"""Text-conditioned 4D Gaussian splatting at desk scale.

Subpackages/modules:

- ``nn``        tensor ops, attention blocks, parameter store, gradient checks
- ``gaussians`` per-frame attribute tensors, grouping, covariance, activation
- ``camera`` / ``renderer`` / ``ply`` / ``images``   splatting and I/O
- ``prompt``    text encoders and per-frame prompt conditioning
- ``diffusion`` deterministic denoising sampler over Gaussian tokens
- ``geometry``  plane factorization + windowed-attention feature enhancement
- ``temporal``  anchor-to-actual frame extension
- ``losses``    the five consistency losses and their fusion
- ``model`` / ``train`` / ``evaluate`` / ``data`` / ``cli``   the pipeline
"""

__version__ = "0.1.0"
