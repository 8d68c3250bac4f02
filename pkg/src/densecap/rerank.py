"""Final event selection: combine proposal and caption scores, keep the top K."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .decoder import CaptionHypothesis
from .errors import DataError
from .ioutil import atomic_path
from .ranker import ScoredProposal
from .timeline import Interval

DEFAULT_TOP_K = 10


@dataclass
class RankedEvent:
    interval: Interval
    caption: list[str]
    s_p: float
    s_c: float

    @property
    def s(self) -> float:
        return self.s_p * self.s_c


def rerank(
    events: list[tuple[ScoredProposal, CaptionHypothesis, list[str]]],
    top_k: int = DEFAULT_TOP_K,
) -> list[RankedEvent]:
    """Order one video's captioned proposals by s_p * s_c, keep the best top_k.

    Ties break by earlier start then shorter duration. Fewer than top_k
    inputs are returned in full.
    """
    if top_k < 1:
        raise DataError(f"top_k must be >= 1, got {top_k}")
    ranked = [
        RankedEvent(interval=sp.interval, caption=words, s_p=sp.s_p, s_c=hyp.s_c)
        for sp, hyp, words in events
    ]
    ranked.sort(key=lambda e: (-e.s, e.interval.start, e.interval.duration))
    return ranked[:top_k]


def write_submission(
    path: str | os.PathLike, events_by_video: dict[str, list[RankedEvent]]
) -> None:
    """Challenge-style submission JSON: sentences plus timestamps per video."""
    out = {
        vid: [
            {
                "sentence": " ".join(ev.caption),
                "timestamp": [float(ev.interval.start), float(ev.interval.end)],
            }
            for ev in events
        ]
        for vid, events in events_by_video.items()
    }
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
