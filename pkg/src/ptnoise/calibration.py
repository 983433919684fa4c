"""Image-noise calibration for the synthetic world.

Real-data difficulty is emulated by the image noise level σ. The chosen σ
puts the template prompt's zero-shot accuracy inside a target band while the
truth prompt (the optimum prompt tuning can recover) still classifies almost
perfectly, so that the gap between the two is what adaptation has to close.
The largest σ meeting both conditions is frozen as ``world.DEFAULT_SIGMA``.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .instrumentation import DEFAULT_SEEDS
from .world import WorldConfig, generate_world, sample_dataset, with_seed, zero_shot_accuracy

TARGET_BAND = (0.55, 0.85)
TRUTH_FLOOR = 0.98
SIGMA_GRID = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1, 0.15, 0.2, 0.25)


def template_accuracy(config: WorldConfig, seeds=DEFAULT_SEEDS):
    """Seed-averaged zero-shot accuracy of the template and truth prompts on the test split."""
    tmpl, truth = [], []
    for s in seeds:
        world = generate_world(with_seed(config, s))
        test = sample_dataset(world, "test")
        tmpl.append(zero_shot_accuracy(world, world.template_prompt, test))
        truth.append(zero_shot_accuracy(world, world.truth_prompt, test))
    return float(np.mean(tmpl)), float(np.mean(truth))


def calibrate_sigma(config: WorldConfig | None = None, grid=SIGMA_GRID, seeds=DEFAULT_SEEDS,
                    band=TARGET_BAND, truth_floor=TRUTH_FLOOR):
    """Return ``(sigma, table)``: the largest grid σ whose template accuracy lies
    in ``band`` while truth-prompt accuracy stays >= ``truth_floor``.

    ``sigma`` is None when no grid value qualifies. ``table`` holds one
    ``(sigma, template_acc, truth_acc)`` row per grid value.
    """
    config = config or WorldConfig()
    lo, hi = band
    table, best = [], None
    for sigma in sorted(grid):
        t, u = template_accuracy(replace(config, image_noise_std=float(sigma)), seeds)
        table.append((float(sigma), t, u))
        if lo <= t <= hi and u >= truth_floor:
            best = float(sigma)
    return best, table
