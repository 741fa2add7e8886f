"""Perceptually uniform color ramp for uncertainty visualization.

A 48-entry table sampled from a standard perceptual map, linearly
interpolated; shipped as data so rendering needs no plotting dependency.
"""

from __future__ import annotations

import numpy as np

_RAMP = np.array([
    (0.2670, 0.0049, 0.3294),
    (0.2738, 0.0315, 0.3589),
    (0.2788, 0.0621, 0.3866),
    (0.2823, 0.0950, 0.4173),
    (0.2832, 0.1208, 0.4406),
    (0.2819, 0.1509, 0.4654),
    (0.2788, 0.1755, 0.4834),
    (0.2730, 0.2045, 0.5017),
    (0.2666, 0.2283, 0.5143),
    (0.2573, 0.2561, 0.5266),
    (0.2486, 0.2788, 0.5346),
    (0.2393, 0.3009, 0.5408),
    (0.2278, 0.3266, 0.5465),
    (0.2181, 0.3474, 0.5500),
    (0.2068, 0.3718, 0.5531),
    (0.1976, 0.3915, 0.5550),
    (0.1872, 0.4147, 0.5565),
    (0.1790, 0.4338, 0.5574),
    (0.1696, 0.4563, 0.5580),
    (0.1621, 0.4748, 0.5581),
    (0.1548, 0.4933, 0.5578),
    (0.1462, 0.5154, 0.5568),
    (0.1391, 0.5338, 0.5553),
    (0.1312, 0.5559, 0.5525),
    (0.1254, 0.5743, 0.5491),
    (0.1206, 0.5964, 0.5436),
    (0.1195, 0.6148, 0.5377),
    (0.1234, 0.6368, 0.5288),
    (0.1323, 0.6550, 0.5197),
    (0.1466, 0.6731, 0.5089),
    (0.1709, 0.6944, 0.4938),
    (0.1966, 0.7118, 0.4792),
    (0.2328, 0.7322, 0.4593),
    (0.2669, 0.7488, 0.4406),
    (0.3119, 0.7678, 0.4156),
    (0.3524, 0.7830, 0.3926),
    (0.4040, 0.8003, 0.3626),
    (0.4494, 0.8138, 0.3354),
    (0.4966, 0.8264, 0.3064),
    (0.5555, 0.8403, 0.2693),
    (0.6060, 0.8507, 0.2367),
    (0.6681, 0.8620, 0.1963),
    (0.7204, 0.8703, 0.1626),
    (0.7833, 0.8793, 0.1254),
    (0.8353, 0.8860, 0.1026),
    (0.8963, 0.8936, 0.0963),
    (0.9456, 0.8998, 0.1128),
    (0.9932, 0.9062, 0.1439),
])


def apply_colormap(values):
    """Map values in [0,1] (clipped) to RGB via the ramp, any input shape."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = v * (len(_RAMP) - 1)
    lo = np.minimum(pos.astype(np.int64), len(_RAMP) - 2)
    frac = (pos - lo)[..., None]
    return (1.0 - frac) * _RAMP[lo] + frac * _RAMP[lo + 1]
