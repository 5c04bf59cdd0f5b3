"""Semantic class identifiers shared by the world, renderer, and learners."""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class ClassId(IntEnum):
    """The six semantic classes, with stable integer indices 0-5."""

    TREES = 0  # trees and bushes
    GROUND = 1
    SKY = 2
    ROCKS = 3
    ROAD = 4
    LOGS = 5


NUM_CLASSES = 6

# Classes the vehicle must not drive through.
OBSTACLE_CLASSES = (ClassId.TREES, ClassId.ROCKS, ClassId.LOGS)

# Fixed visualization palette (RGB).
PALETTE = {
    ClassId.TREES: (0, 200, 0),      # green
    ClassId.GROUND: (0, 0, 255),     # blue
    ClassId.SKY: (0, 0, 0),          # black
    ClassId.ROCKS: (255, 0, 0),      # red
    ClassId.ROAD: (255, 255, 255),   # white
    ClassId.LOGS: (160, 32, 240),    # purple
}

PALETTE_ARRAY = np.array([PALETTE[ClassId(i)] for i in range(NUM_CLASSES)], dtype=np.uint8)

_OBSTACLE_LOOKUP = np.zeros(NUM_CLASSES, dtype=bool)
for _c in OBSTACLE_CLASSES:
    _OBSTACLE_LOOKUP[int(_c)] = True


def is_obstacle_class(class_indices: np.ndarray) -> np.ndarray:
    """Boolean array marking entries whose class is an obstacle class."""
    return _OBSTACLE_LOOKUP[np.asarray(class_indices, dtype=np.int64)]
