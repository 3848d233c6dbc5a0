"""Filter state, diagnostics and proposal containers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from ..prob import WeightedEnsemble


@dataclass(frozen=True)
class Diagnostics:
    ess: float = float("nan")
    last_resample_step: Optional[int] = None
    analysis_increment_norm: float = 0.0
    resampled: bool = False


@dataclass(frozen=True)
class FilterState:
    """Particle approximation of the filtering distribution at ``time_index``.

    ``weighted`` keeps the analysis ensemble before any resampling; its
    weighted moments are lower-variance estimates than those of the
    resampled ``ensemble``.  It is ``None`` when nothing was resampled.
    """

    ensemble: WeightedEnsemble
    time_index: int = 0
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    weighted: Optional[WeightedEnsemble] = None

    @property
    def estimate(self) -> WeightedEnsemble:
        return self.ensemble if self.weighted is None else self.weighted


@dataclass(frozen=True)
class GuidedProposal:
    """Conditional proposal ``x' ~ q(. | x, y0)`` for guided SMC.

    ``sample(X, y0, rng)`` maps an (N, M) ensemble to proposed states and
    ``log_density(Xp, X, y0)`` returns the M proposal log-densities.
    """

    sample: Callable
    log_density: Callable
