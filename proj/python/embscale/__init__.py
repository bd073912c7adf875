"""Legged embodiment generation, a surrogate locomotion environment, expert
training, distillation into a morphology-agnostic student and scaling studies."""

from ._embscale import *  # noqa: F401,F403
from ._embscale import __version__, EmbscaleError, MorphologyClass  # noqa: F401
