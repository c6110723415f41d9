"""The multi-flow tracking loop.

At frame t a candidate is formed for every delta in the delta set by
chaining the memorized result for frame ``max(0, t - delta)`` with the
provider's triplet from that frame to t (``delta = INF`` always uses frame
0). The best candidate is picked per pixel and the composed result is
memorized; results older than the largest integer delta are dropped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .chaining import chain
from .core import FouTriplet, Tracklet, as_queries, identity_triplet
from .sampling import bilinear
from .selector import DEFAULT_OCCLUSION_THRESHOLD, DeltaIndexMap, compose_result, select_best

log = logging.getLogger(__name__)

INF = math.inf


class ProviderError(LookupError):
    """A flow provider could not serve a frame pair."""

    def __init__(self, src: int, dst: int, reason: str = "not available"):
        self.src = src
        self.dst = dst
        super().__init__(f"flow pair ({src}, {dst}): {reason}")


class FlowProvider(Protocol):
    width: int
    height: int

    def get(self, src: int, dst: int) -> FouTriplet: ...


@dataclass(frozen=True)
class DeltaSet:
    """Ordered time deltas; ``INF`` means direct flow from the reference frame."""

    deltas: tuple

    def __post_init__(self):
        deltas = tuple(self.deltas)
        if not deltas:
            raise ValueError("delta set must not be empty")
        ints = []
        n_inf = 0
        for d in deltas:
            if d == INF:
                n_inf += 1
            elif isinstance(d, (int, np.integer)) and not isinstance(d, bool) and d >= 1:
                ints.append(int(d))
            else:
                raise ValueError(f"invalid delta {d!r}: expected INF or a positive integer")
        if n_inf > 1:
            raise ValueError("INF may appear at most once in a delta set")
        if any(b <= a for a, b in zip(ints, ints[1:])):
            raise ValueError(f"integer deltas must be strictly increasing, got {ints}")
        object.__setattr__(self, "deltas", tuple(INF if d == INF else int(d) for d in deltas))

    @classmethod
    def parse(cls, text: str) -> DeltaSet:
        items = []
        for tok in str(text).split(","):
            tok = tok.strip().lower()
            if not tok:
                continue
            if tok in ("inf", "infinity", "∞"):
                items.append(INF)
            else:
                try:
                    items.append(int(tok))
                except ValueError:
                    raise ValueError(f"invalid delta {tok!r}") from None
        return cls(tuple(items))

    @classmethod
    def coerce(cls, value) -> DeltaSet:
        if isinstance(value, DeltaSet):
            return value
        if isinstance(value, str):
            return cls.parse(value)
        return cls(tuple(value))

    def __iter__(self):
        return iter(self.deltas)

    def __len__(self) -> int:
        return len(self.deltas)

    @property
    def has_inf(self) -> bool:
        return INF in self.deltas

    @property
    def integers(self) -> tuple[int, ...]:
        return tuple(d for d in self.deltas if d != INF)

    @property
    def max_integer(self) -> int:
        ints = self.integers
        return max(ints) if ints else 0

    def __str__(self) -> str:
        return ",".join("inf" if d == INF else str(d) for d in self.deltas)


DEFAULT_DELTAS = DeltaSet((INF, 1, 2, 4, 8, 16, 32))


def source_frame(t: int, delta) -> int:
    """Frame the candidate for ``delta`` chains from at time ``t``."""
    return 0 if delta == INF else max(0, t - delta)


class Tracker:
    """Dense tracker state: memorized 0 -> k results and the current frame.

    ``step`` must be called serially; work inside a step can be split
    across ``workers`` threads without changing the output.

    With ``clamp=False`` an integer delta larger than t contributes no
    candidate instead of falling back to frame 0. This suits providers
    that only hold pairs whose gap is in the delta set.
    """

    def __init__(
        self,
        width: int,
        height: int,
        deltas=DEFAULT_DELTAS,
        threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
        clamp: bool = True,
        workers: int = 1,
        backend: str = "compiled",
    ):
        self.deltas = DeltaSet.coerce(deltas)
        if not 0.0 < threshold < 1.0:
            raise ValueError(f"occlusion threshold must be in (0, 1), got {threshold}")
        self.threshold = float(threshold)
        self.width = int(width)
        self.height = int(height)
        self.clamp = clamp
        self.workers = workers
        self.backend = backend
        self.memory: dict[int, FouTriplet] = {0: identity_triplet(self.width, self.height, 0)}
        self.current_frame = 0
        self.peak_memory = 1
        self.last_selection: DeltaIndexMap | None = None
        self.provider_calls = 0

    def _memorized(self, frame: int) -> FouTriplet:
        if frame in self.memory:
            return self.memory[frame]
        if frame == 0:
            return identity_triplet(self.width, self.height, 0)
        raise KeyError(f"result for frame {frame} is no longer memorized")

    def _fetch(self, provider: FlowProvider, src: int, dst: int) -> FouTriplet:
        self.provider_calls += 1
        try:
            fou = provider.get(src, dst)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(src, dst, f"{type(exc).__name__}: {exc}") from exc
        if (fou.src_frame, fou.dst_frame) != (src, dst):
            raise ProviderError(src, dst, f"provider returned pair ({fou.src_frame}, {fou.dst_frame})")
        if fou.shape != (self.height, self.width):
            raise ProviderError(src, dst, f"grid {fou.shape} does not match tracker {(self.height, self.width)}")
        return fou

    def candidate_sources(self, t: int) -> list[int | None]:
        """Source frame per delta at time ``t``; None where no candidate is formed."""
        out = []
        for d in self.deltas:
            if d != INF and not self.clamp and t - d < 0:
                out.append(None)
            else:
                out.append(source_frame(t, d))
        return out

    def step(self, provider: FlowProvider) -> FouTriplet:
        t = self.current_frame + 1
        sources = self.candidate_sources(t)
        built: dict[int, FouTriplet] = {}
        active: list[int] = []
        candidates: list[FouTriplet] = []
        for i, s in enumerate(sources):
            if s is None:
                continue
            if s not in built:
                built[s] = chain(
                    self._memorized(s), self._fetch(provider, s, t), workers=self.workers, backend=self.backend
                )
            active.append(i)
            candidates.append(built[s])
        if not candidates:
            raise ProviderError(0, t, f"no delta in {self.deltas} yields a candidate at frame {t}")

        local = select_best(candidates, self.threshold, self.backend, self.workers)
        result = compose_result(candidates, local, self.backend, self.workers)
        self.last_selection = DeltaIndexMap(np.asarray(active, np.int16)[local.data], len(self.deltas))

        horizon = t - self.deltas.max_integer
        for k in [k for k in self.memory if k < horizon]:
            del self.memory[k]
        self.memory[t] = result
        self.current_frame = t
        self.peak_memory = max(self.peak_memory, len(self.memory))
        return result


class RemappedProvider:
    """Presents frames ``start, start + sign, start + 2*sign, ...`` as 0, 1, 2, ..."""

    def __init__(self, provider: FlowProvider, start: int = 0, sign: int = 1):
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        self.provider = provider
        self.start = start
        self.sign = sign
        self.width = provider.width
        self.height = provider.height

    def frame(self, i: int) -> int:
        return self.start + self.sign * i

    def get(self, src: int, dst: int) -> FouTriplet:
        a, b = self.frame(src), self.frame(dst)
        try:
            fou = self.provider.get(a, b)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(a, b, f"{type(exc).__name__}: {exc}") from exc
        return fou.with_frames(src, dst)


def track_sequence(
    provider: FlowProvider,
    num_frames: int,
    deltas=DEFAULT_DELTAS,
    threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    direction: str = "forward",
    start: int = 0,
    clamp: bool = True,
    workers: int = 1,
    backend: str = "compiled",
    on_step: Callable[[Tracker, FouTriplet], None] | None = None,
) -> list[FouTriplet]:
    """Track every pixel of frame ``start`` through ``num_frames`` frames.

    Backward tracking visits ``start, start-1, ...``. Results are stamped
    with sequence indices (0 is the reference frame).
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    sign = {"forward": 1, "fwd": 1, "backward": -1, "bwd": -1}.get(direction)
    if sign is None:
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    seq = RemappedProvider(provider, start, sign)
    tracker = Tracker(
        provider.width, provider.height, deltas, threshold, clamp=clamp, workers=workers, backend=backend
    )
    results = [tracker.memory[0]]
    for _ in range(num_frames - 1):
        res = tracker.step(seq)
        if on_step is not None:
            on_step(tracker, res)
        results.append(res)
    log.debug("tracked %d frames from %d (%s), peak memory %d", num_frames, start, direction, tracker.peak_memory)
    return results


def extract_tracklets(
    results: Sequence[FouTriplet],
    queries,
    threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    frames: Iterable[int] | None = None,
) -> list[Tracklet]:
    """Sample every result at the query positions.

    ``frames`` labels the results (defaults to 0, 1, ...).
    """
    if not results:
        return []
    w, h = results[0].width, results[0].height
    pts = as_queries(queries, w, h)
    frames = list(range(len(results))) if frames is None else list(frames)
    if len(frames) != len(results):
        raise ValueError("frames must label every result")
    n = len(pts)
    pos = np.empty((len(results), n, 2))
    score = np.empty((len(results), n))
    for i, res in enumerate(results):
        d = bilinear(res.flow.data, pts[:, 0], pts[:, 1])
        pos[i] = pts + d
        score[i] = bilinear(res.occlusion.data, pts[:, 0], pts[:, 1])
    return [
        Tracklet(
            query=(float(pts[j, 0]), float(pts[j, 1])),
            frames=frames,
            positions=pos[:, j],
            occlusion_score=score[:, j],
            threshold=threshold,
        )
        for j in range(n)
    ]
