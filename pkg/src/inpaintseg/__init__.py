"""Inpainting pretraining for road segmentation: masking, losses, data
harness, ToyUNet, three-step trainer, IoU evaluation and a command line."""

__version__ = "0.1.0"
