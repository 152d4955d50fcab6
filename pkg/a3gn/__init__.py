"""Attentional adversarial face generator.

Trains an encoder/generator pair that turns any face into one a fixed face
embedder accepts as a chosen target identity, while staying close to the
original image.
"""

__version__ = "0.1.0"
