"""Sampled-softmax losses with standard and improved logQ correction,
their samplers, a count-min frequency sketch, brute-force audits and a
small two-tower trainer."""

__version__ = "0.1.0"
