#!/usr/bin/env python
# coding: utf-8

"""
Particle transport by regularized kernel and neural Sobolev descent.
"""

__all__ = [
    "cli",
    "config",
    "datasets",
    "embeddings",
    "errors",
    "features",
    "kernel_descent",
    "manifest",
    "neural",
    "sobolev",
    "streams",
    "traces",
    "version",
]
