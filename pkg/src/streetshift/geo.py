"""Outcome-defined image domains from geocoded survey records."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from sklearn.neighbors import BallTree

from .dataset import ImageRef, write_index

EARTH_RADIUS_M = 6_371_000.0

LOWER_IS_BETTER = "lower_is_better"
HIGHER_IS_BETTER = "higher_is_better"
POLARITY = {
    "general_health": LOWER_IS_BETTER,  # 1 excellent .. 5 poor
    "social_capital": HIGHER_IS_BETTER,  # people spoken to the day before
    "life_satisfaction": LOWER_IS_BETTER,  # 1 very satisfied .. 4 very dissatisfied
    "density": LOWER_IS_BETTER,
}
OUTCOMES = tuple(POLARITY) + ("custom",)


class DomainError(ValueError):
    """Domain construction failed (e.g. best and worst sets overlap)."""


@dataclass(frozen=True)
class OutcomeRecord:
    latitude: float
    longitude: float
    outcome_id: str
    value: float
    polarity: str
    group: str | None = None

    def __post_init__(self):
        if not -90 <= self.latitude <= 90:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180 <= self.longitude <= 180:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if self.outcome_id not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome_id!r}")
        if self.polarity not in (LOWER_IS_BETTER, HIGHER_IS_BETTER):
            raise ValueError(f"unknown polarity {self.polarity!r}")


@dataclass
class RowError:
    row: int
    message: str

    def __str__(self):
        return f"row {self.row}: {self.message}"


def load_records(source, polarity: str | None = None):
    """Parse ``lat,lon,outcome,value[,group][,polarity]`` text.

    Returns ``(records, errors)``; bad rows become :class:`RowError` entries
    (row numbers count the header as row 1). A missing required column is
    fatal. ``polarity`` overrides the per-outcome default, and is required
    for ``custom`` outcomes unless the file carries a polarity column.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    cols = [c.strip() for c in (reader.fieldnames or [])]
    reader.fieldnames = cols
    missing = [c for c in ("lat", "lon", "outcome", "value") if c not in cols]
    if missing:
        raise DomainError(f"missing required columns: {missing}")
    records, errors = [], []
    seen = {}
    for rowno, row in enumerate(reader, start=2):
        try:
            outcome = row["outcome"].strip()
            if outcome not in OUTCOMES:
                raise ValueError(f"unknown outcome {outcome!r}")
            pol = polarity or (row.get("polarity") or "").strip() or POLARITY.get(outcome)
            if pol is None:
                raise ValueError(f"no polarity for outcome {outcome!r}")
            value = float(row["value"])
            if not math.isfinite(value):
                raise ValueError(f"non-finite value {row['value']!r}")
            rec = OutcomeRecord(float(row["lat"]), float(row["lon"]), outcome, value, pol,
                                (row.get("group") or "").strip() or None)
        except (TypeError, ValueError) as exc:
            errors.append(RowError(rowno, str(exc)))
            continue
        if seen.setdefault(rec.outcome_id, rec.polarity) != rec.polarity:
            errors.append(RowError(rowno, f"polarity {rec.polarity} conflicts with {seen[rec.outcome_id]}"))
            continue
        records.append(rec)
    return records, errors


def aggregate_by_group(records: Iterable[OutcomeRecord]) -> list[OutcomeRecord]:
    """Mean-aggregate records sharing a group key; ungrouped records pass through.

    Groups appear in order of first occurrence; coordinates are averaged.
    """
    out, groups, order = [], {}, []
    for r in records:
        if r.group is None:
            order.append(("single", r))
            continue
        if r.group not in groups:
            groups[r.group] = []
            order.append(("group", r.group))
        groups[r.group].append(r)
    for kind, item in order:
        if kind == "single":
            out.append(item)
            continue
        rs = groups[item]
        out.append(OutcomeRecord(
            float(np.mean([r.latitude for r in rs])), float(np.mean([r.longitude for r in rs])),
            rs[0].outcome_id, float(np.mean([r.value for r in rs])), rs[0].polarity, item,
        ))
    return out


def select_deciles(records, fraction: float = 0.10):
    """Best and worst ``floor(fraction * n)`` records under the outcome polarity.

    Ties keep input order. Raises :class:`DomainError` when the two sets
    would share a record.
    """
    records = list(records)
    if not 0 < fraction <= 0.5:
        raise DomainError(f"fraction must be in (0, 0.5], got {fraction}")
    if not records:
        raise DomainError("no records")
    ids = {r.outcome_id for r in records}
    if len(ids) != 1:
        raise DomainError(f"records mix outcomes: {sorted(ids)}")
    k = math.floor(fraction * len(records))
    sign = 1.0 if records[0].polarity == LOWER_IS_BETTER else -1.0
    idx = range(len(records))
    best = sorted(idx, key=lambda i: (sign * records[i].value, i))[:k]
    worst = sorted(idx, key=lambda i: (-sign * records[i].value, i))[:k]
    if set(best) & set(worst):
        raise DomainError(
            f"best and worst {fraction:.0%} sets overlap ({len(set(best) & set(worst))} shared records); "
            "values are too tied to split"
        )
    return [records[i] for i in best], [records[i] for i in worst]


def haversine_m(a, b) -> float:
    """Great-circle distance in metres between two (lat, lon) pairs in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass
class Match:
    location: tuple[float, float]
    image: ImageRef
    distance_m: float


def _coords(loc):
    if isinstance(loc, OutcomeRecord):
        return (loc.latitude, loc.longitude)
    return (float(loc[0]), float(loc[1]))


def match_images(locations, index: list[ImageRef], radius_m: float = 50.0) -> list[Match | None]:
    """Nearest image within ``radius_m`` of each location (None when excluded).

    Candidates come from a haversine ball tree; the winner is chosen by the
    exact :func:`haversine_m` distance, ties broken by image id, so the
    result does not depend on the order of ``index``.
    """
    if not index:
        raise DomainError("image index is empty")
    locs = [_coords(loc) for loc in locations]
    if not locs:
        return []
    pts = np.radians([[r.latitude, r.longitude] for r in index])
    tree = BallTree(pts, metric="haversine")
    # slack so float differences between the tree metric and haversine_m never drop a candidate
    reach = (radius_m + 1.0) / EARTH_RADIUS_M + 1e-12
    cands = tree.query_radius(np.radians(locs), r=reach)
    out = []
    for loc, cand in zip(locs, cands):
        best = None
        for j in cand:
            ref = index[j]
            d = haversine_m(loc, (ref.latitude, ref.longitude))
            if d <= radius_m and (best is None or (d, ref.id) < (best.distance_m, best.image.id)):
                best = Match(loc, ref, d)
        out.append(best)
    return out


@dataclass
class DomainPair:
    outcome_id: str
    best: list[ImageRef] = field(default_factory=list)
    worst: list[ImageRef] = field(default_factory=list)
    fraction: float = 0.10
    radius_m: float = 50.0
    excluded_best: int = 0
    excluded_worst: int = 0
    ambiguous: int = 0

    def write(self, path):
        refs = self.best + self.worst
        write_index(path, refs, {"domain": ["best"] * len(self.best) + ["worst"] * len(self.worst)})


def build_domain_pair(records, index, fraction=0.10, radius_m=50.0) -> DomainPair:
    """Decile selection followed by nearest-image matching.

    An image matched from both sides is dropped from both (counted in
    ``ambiguous``) so the two domains stay disjoint; repeated matches within
    one side are kept once.
    """
    best_locs, worst_locs = select_deciles(records, fraction)
    mb = match_images(best_locs, index, radius_m)
    mw = match_images(worst_locs, index, radius_m)

    def unique(matches):
        seen, out = set(), []
        for m in matches:
            if m is not None and m.image.id not in seen:
                seen.add(m.image.id)
                out.append(m.image)
        return out

    best, worst = unique(mb), unique(mw)
    clash = {r.id for r in best} & {r.id for r in worst}
    return DomainPair(
        outcome_id=best_locs[0].outcome_id if best_locs else records[0].outcome_id,
        best=[r for r in best if r.id not in clash],
        worst=[r for r in worst if r.id not in clash],
        fraction=fraction,
        radius_m=radius_m,
        excluded_best=sum(m is None for m in mb),
        excluded_worst=sum(m is None for m in mw),
        ambiguous=len(clash),
    )


def read_domain_manifest(path):
    """Inverse of :meth:`DomainPair.write`: returns {'best': [...], 'worst': [...]}."""
    out = {"best": [], "worst": []}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            lat = float(r["lat"]) if r["lat"] else None
            lon = float(r["lon"]) if r["lon"] else None
            out[r["domain"]].append(ImageRef(r["id"], lat, lon, int(r["heading"] or 0), r["path"]))
    return out
