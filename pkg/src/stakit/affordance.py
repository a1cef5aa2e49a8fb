"""Environment affordance database: zones, retrieval, label priors.

Clips observed in a video are grouped into "interaction zones" by a
sequential pass: each incoming clip is compared (through a pluggable
pairwise similarity oracle in [0, 1]) against the most recent members of
every zone already open for that video, joins the best zone when the
mean similarity clears a threshold, and founds a new zone otherwise.

A query descriptor retrieves the top-K zones on a visual channel and a
text channel; the union of both top-K lists (2K entries, duplicates kept)
votes an exponential prior over a label vocabulary, which can then be
fused multiplicatively with a model's predicted distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DEFAULT_K",
    "DEFAULT_WEIGHTED",
    "DEFAULT_THETA",
    "DEFAULT_RECENT",
    "ClipRecord",
    "Zone",
    "KnnEntry",
    "KnnResult",
    "CategoricalDistribution",
    "cosine_similarity",
    "descriptor_similarity_01",
    "build_zones",
    "zone_descriptors",
    "knn_query",
    "affordance_distribution",
    "fuse_distributions",
    "apply_affordance_to_detections",
]

DEFAULT_K = 4
DEFAULT_WEIGHTED = True
DEFAULT_THETA = 0.5
DEFAULT_RECENT = 5


@dataclass
class ClipRecord:
    """One observed clip: descriptors plus the labels seen in it."""

    clip_id: str
    visual: np.ndarray
    text: np.ndarray | None
    nouns: frozenset
    verbs: frozenset
    video_id: str
    frame_index: int


@dataclass
class Zone:
    """A group of clips from one video that share a physical location."""

    zone_id: str
    clip_ids: list[str]
    nouns: set
    verbs: set
    visual: np.ndarray
    text: np.ndarray | None


@dataclass(frozen=True)
class KnnEntry:
    zone_id: str
    similarity: float
    channel: str  # "visual" or "text"


@dataclass
class KnnResult:
    """Union of the visual and text top-K lists; always 2K entries.

    A zone close on both channels appears twice and votes twice.  Entries
    are sorted by descending similarity within each channel.
    """

    k: int
    entries: list[KnnEntry]

    def __post_init__(self) -> None:
        if len(self.entries) != 2 * self.k:
            raise ValueError(f"expected {2 * self.k} entries, got {len(self.entries)}")
        for channel in ("visual", "text"):
            sims = [e.similarity for e in self.entries if e.channel == channel]
            if len(sims) != self.k:
                raise ValueError(f"expected {self.k} entries on the {channel} channel")
            if any(sims[i] < sims[i + 1] for i in range(len(sims) - 1)):
                raise ValueError(f"{channel} entries must be sorted by descending similarity")


@dataclass
class CategoricalDistribution:
    """Probability vector over an implicit vocabulary order."""

    size: int
    p: np.ndarray

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.shape != (self.size,) or self.size == 0:
            raise ValueError(f"expected {self.size} probabilities, got shape {self.p.shape}")
        if np.any(self.p < 0):
            raise ValueError("probabilities must be nonnegative")
        total = float(self.p.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {total!r}")

    @classmethod
    def from_scores(cls, scores) -> "CategoricalDistribution":
        """Normalise nonnegative scores into a distribution."""
        s = np.asarray(scores, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError(f"scores must be a nonempty vector, got shape {s.shape}")
        if np.any(s < 0):
            raise ValueError("scores must be nonnegative")
        total = float(s.sum())
        if total <= 0:
            raise ValueError("scores sum to zero, cannot normalise")
        return cls(size=s.size, p=s / total)

    @classmethod
    def uniform(cls, size: int) -> "CategoricalDistribution":
        if size <= 0:
            raise ValueError(f"size must be positive, got {size}")
        return cls(size=size, p=np.full(size, 1.0 / size))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero-norm vectors get similarity 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"descriptor length mismatch: {a.shape} vs {b.shape}")
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


def descriptor_similarity_01(a: ClipRecord, b: ClipRecord) -> float:
    """Default zone-building oracle: visual cosine rescaled into [0, 1]."""
    return 0.5 * (cosine_similarity(a.visual, b.visual) + 1.0)


def zone_descriptors(members: list[ClipRecord]) -> tuple[np.ndarray, np.ndarray | None]:
    """Arithmetic means of the member descriptors.

    Every member must carry a visual descriptor.  The text mean is taken
    over all members when every one has a text descriptor, is None when
    none do, and errors on a mix.
    """
    if not members:
        raise ValueError("zone_descriptors needs at least one member clip")
    for m in members:
        if m.visual is None:
            raise ValueError(f"clip {m.clip_id!r} is missing its visual descriptor")
    visual = np.mean([np.asarray(m.visual, dtype=np.float64) for m in members], axis=0)
    with_text = [m for m in members if m.text is not None]
    if not with_text:
        return visual, None
    if len(with_text) != len(members):
        missing = [m.clip_id for m in members if m.text is None]
        raise ValueError(f"clips missing text descriptors: {missing}")
    text = np.mean([np.asarray(m.text, dtype=np.float64) for m in members], axis=0)
    return visual, text


def build_zones(clips: list[ClipRecord], same_zone, theta: float = DEFAULT_THETA,
                recent: int = DEFAULT_RECENT) -> list[Zone]:
    """Sequentially assign clips (per video, in input order) to zones.

    same_zone(candidate, member) must return a similarity in [0, 1].  The
    candidate joins the zone with the highest mean similarity over that
    zone's ``recent`` most recent members, provided the mean reaches
    theta; otherwise it founds a new zone.  The result is a partition of
    the input clips.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if recent < 1:
        raise ValueError(f"recent window must be at least 1, got {recent}")
    groups: dict[str, list[list[ClipRecord]]] = {}
    video_order: list[str] = []
    for clip in clips:
        per_video = groups.get(clip.video_id)
        if per_video is None:
            per_video = groups[clip.video_id] = []
            video_order.append(clip.video_id)
        best_idx = -1
        best_mean = -1.0
        for idx, members in enumerate(per_video):
            window = members[-recent:]
            total = 0.0
            for member in window:
                sim = float(same_zone(clip, member))
                if not (0.0 <= sim <= 1.0):
                    raise ValueError(
                        f"similarity oracle returned {sim!r} for clips "
                        f"({clip.clip_id!r}, {member.clip_id!r}); expected [0, 1]"
                    )
                total += sim
            mean = total / len(window)
            if mean > best_mean:
                best_idx, best_mean = idx, mean
        if best_idx >= 0 and best_mean >= theta:
            per_video[best_idx].append(clip)
        else:
            per_video.append([clip])
    zones: list[Zone] = []
    for video_id in video_order:
        for k, members in enumerate(groups[video_id]):
            visual, text = zone_descriptors(members)
            zones.append(Zone(
                zone_id=f"{video_id}:{k}",
                clip_ids=[m.clip_id for m in members],
                nouns=set().union(*[set(m.nouns) for m in members]),
                verbs=set().union(*[set(m.verbs) for m in members]),
                visual=visual,
                text=text,
            ))
    return zones


def knn_query(query: np.ndarray, zones: list[Zone], k: int = DEFAULT_K) -> KnnResult:
    """Top-K zones by cosine on the visual and text channels.

    Zones without a text descriptor score 0 on the text channel, matching
    the zero-norm convention.  Ties break toward the earlier zone in the
    database, keeping results deterministic.
    """
    if not zones:
        raise ValueError("knn_query needs a nonempty zone database")
    if not 1 <= k <= len(zones):
        raise ValueError(f"k must lie in [1, {len(zones)}], got {k}")
    query = np.asarray(query, dtype=np.float64)
    entries: list[KnnEntry] = []
    for channel in ("visual", "text"):
        scored = []
        for idx, zone in enumerate(zones):
            desc = zone.visual if channel == "visual" else zone.text
            sim = cosine_similarity(query, desc) if desc is not None else 0.0
            scored.append((-sim, idx))
        scored.sort()
        for neg_sim, idx in scored[:k]:
            entries.append(KnnEntry(zone_id=zones[idx].zone_id, similarity=-neg_sim, channel=channel))
    return KnnResult(k=k, entries=entries)


def affordance_distribution(knn: KnnResult, zones: list[Zone], vocabulary: list,
                            kind: str = "noun", weighted: bool = DEFAULT_WEIGHTED) -> CategoricalDistribution:
    """Exponential label prior voted by the retrieved zones.

    Each retrieved entry adds its similarity (or 1 in unweighted mode) to
    the exponent of every label carried by its zone; probabilities are
    exp(exponent) normalised over the vocabulary.  With no entries this
    degenerates to the uniform distribution.
    """
    if kind not in ("noun", "verb"):
        raise ValueError(f"kind must be 'noun' or 'verb', got {kind!r}")
    if not vocabulary:
        raise ValueError("vocabulary must be nonempty")
    by_id = {z.zone_id: z for z in zones}
    exponents = np.zeros(len(vocabulary))
    index = {label: i for i, label in enumerate(vocabulary)}
    for entry in knn.entries:
        zone = by_id.get(entry.zone_id)
        if zone is None:
            raise ValueError(f"knn entry references unknown zone {entry.zone_id!r}")
        labels = zone.nouns if kind == "noun" else zone.verbs
        vote = entry.similarity if weighted else 1.0
        for label in labels:
            i = index.get(label)
            if i is not None:
                exponents[i] += vote
    scores = np.exp(exponents)
    return CategoricalDistribution(size=len(vocabulary), p=scores / scores.sum())


def fuse_distributions(prior: CategoricalDistribution,
                       predicted: CategoricalDistribution) -> CategoricalDistribution:
    """Multiply two distributions elementwise and renormalise.

    Treating the two sources as independent evidence, the fused
    probability is proportional to the product.  Disjoint supports leave
    nothing to normalise and raise.
    """
    if prior.size != predicted.size:
        raise ValueError(f"distribution size mismatch: {prior.size} vs {predicted.size}")
    product = prior.p * predicted.p
    total = float(product.sum())
    if total <= 0.0:
        raise ValueError("distributions have disjoint supports, fused mass is zero")
    return CategoricalDistribution(size=prior.size, p=product / total)


def apply_affordance_to_detections(detections, prior_nouns: CategoricalDistribution,
                                   prior_verbs: CategoricalDistribution) -> list:
    """Fuse label priors into each detection's probability vectors.

    Noun and verb ids must be indices into the respective vocabularies.
    The reported labels become the argmax of the fused vectors; boxes,
    times and scores pass through untouched.
    """
    refined = []
    for det in detections:
        if det.noun_probs is None or det.verb_probs is None:
            raise ValueError(f"detection {det.uid!r} is missing label probability vectors")
        fused_nouns = fuse_distributions(prior_nouns, CategoricalDistribution.from_scores(det.noun_probs))
        fused_verbs = fuse_distributions(prior_verbs, CategoricalDistribution.from_scores(det.verb_probs))
        refined.append(replace(
            det,
            noun=int(np.argmax(fused_nouns.p)),
            verb=int(np.argmax(fused_verbs.p)),
            noun_probs=fused_nouns.p,
            verb_probs=fused_verbs.p,
        ))
    return refined
