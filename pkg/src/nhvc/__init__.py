"""44.1 kHz human-to-non-human voice conversion.

Subpackages: dsp (signal kernels), perturb (timbre perturbation),
linguistic (SSL content features), model / discriminator (networks),
losses, training, conversion, evaluation, data (manifests and caches),
config, cli.
"""

__version__ = "0.1.0"
