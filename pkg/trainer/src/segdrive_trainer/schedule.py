"""Discriminator update cadence."""

from __future__ import annotations


class DiscriminatorSchedule:
    """The discriminator trains on every `period`-th generator step (steps
    8, 16, 24, ... for period 8), and a due update is skipped while the last
    observed discriminator loss is below `skip_threshold` — a discriminator
    that is already winning must not get further ahead.
    """

    def __init__(self, period: int = 8, skip_threshold: float = 0.3):
        if period < 1:
            raise ValueError("period must be >= 1")
        self.period = period
        self.skip_threshold = skip_threshold
        self.updates = 0
        self.skips = 0

    def is_due(self, generator_step: int) -> bool:
        """generator_step counts completed generator updates, starting at 1."""
        return generator_step % self.period == 0

    def should_update(self, generator_step: int, last_d_loss: float | None) -> bool:
        """Decide, and record the decision in the update/skip counters."""
        if not self.is_due(generator_step):
            return False
        if last_d_loss is not None and last_d_loss < self.skip_threshold:
            self.skips += 1
            return False
        self.updates += 1
        return True
