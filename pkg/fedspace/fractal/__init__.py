"""Fractal rendering and server-side pre-training."""
