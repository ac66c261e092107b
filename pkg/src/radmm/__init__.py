"""Decentralized consensus ERM with conventional, recycled and private recycled ADMM."""

__version__ = "0.1.0"
