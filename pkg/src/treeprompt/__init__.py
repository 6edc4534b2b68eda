"""Structured prompt composition along dependency parse trees.

The package builds per-node prompts bottom-up over a validated dependency
tree, fuses them with a learnable global prompt, and injects the result
into a small frozen grounding backbone, either at the input layer or at
every encoder layer.
"""

__version__ = "0.1.0"
