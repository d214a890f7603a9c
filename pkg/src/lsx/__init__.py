"""Unpaired shape-to-shape translation on point clouds.

An overcomplete multi-scale autoencoder maps clouds into a latent code
built from per-scale sub-codes; translation between two shape families is
learned purely in that latent space by small adversarially trained
networks, then decoded (and optionally upsampled) back to points.
"""

__version__ = "0.1.0"
