"""Expand templated URIs over a time range and merge per-file datasets.

A templated URI names many time-partitioned files at once:

    .../data/$Y/ac_k0_swe_$Y$m$d_v...cdf?Np&timerange=2008-June

Expansion walks the directory tree, keeps the files whose implied
calendar interval intersects the requested range, and the per-file
datasets are concatenated along index 0 into one time series.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import qdataset as qds
from .chrono import TimeInterval, match_template, parse_template, parse_timerange
from .datasource import PluginRegistry, read_dataset
from .qdataset import QDataSet, convert_values, make_dataset
from .uri import DataSetURI, parse_uri
from .vfs import ResourceRef, Vfs, parse_ref

__all__ = ["AggregationPlan", "AggregationError", "expand", "merge", "aggregate_read"]

FETCH_PARALLELISM = 4


class AggregationError(ValueError):
    """Expansion or merging failed; the message names the offending file."""


@dataclass(frozen=True)
class AggregationPlan:
    """Concrete files matched by a template, sorted by interval start."""

    template: str
    range: TimeInterval
    matches: tuple  # of (ResourceRef, TimeInterval)

    def __len__(self) -> int:
        return len(self.matches)


def _split_resource(resource: str):
    """(base ref without fields, templated relative path)."""
    head, _, path = resource.partition("://")
    segments = path.split("/")
    fixed = [segments[0]]  # authority (empty for file://)
    i = 1
    while i < len(segments) - 1 and "$" not in segments[i] and "..." not in segments[i]:
        fixed.append(segments[i])
        i += 1
    base = head + "://" + "/".join(fixed) + "/"
    rest = "/".join(segments[i:])
    return parse_ref(base), rest


def expand(uri: "DataSetURI | str", time_range: "TimeInterval | str | None" = None,
           vfs: Optional[Vfs] = None) -> AggregationPlan:
    """Walk the tree under a templated URI, keeping files inside the range."""
    d = parse_uri(uri) if isinstance(uri, str) else uri
    vfs = vfs or Vfs()
    if time_range is None:
        tr_text = d.get("timerange")
        if tr_text is None:
            raise AggregationError("no time range: pass one or add timerange= to the URI")
        time_range = parse_timerange(tr_text)
    elif isinstance(time_range, str):
        time_range = parse_timerange(time_range)
    template = parse_template(d.resource)
    if not template.has_fields:
        raise AggregationError(
            f"resource {d.resource!r} has no $Y/$m/$d/$H fields to aggregate over")
    base, rest = _split_resource(d.resource)
    rel_template = parse_template(rest)
    seg_templates = [parse_template(seg) for seg in rest.split("/")]

    matches: list = []
    failures: list[str] = []

    def walk(ref: ResourceRef, rel: str, depth: int) -> None:
        try:
            children = vfs.listing(ref)
        except OSError as e:
            failures.append(str(e))
            return
        last = depth == len(seg_templates) - 1
        for child in children:
            is_dir = child.endswith("/")
            name = child[:-1] if is_dir else child
            if last and not is_dir:
                candidate = rel + name
                interval = match_template(rel_template, candidate)
                if interval is not None and interval.intersects(time_range):
                    matches.append((ref.child(name), interval))
            elif not last and is_dir:
                if _segment_matches(seg_templates[depth], name):
                    walk(ref.child(name + "/"), rel + name + "/", depth + 1)

    walk(base, "", 0)
    if failures and not matches:
        raise AggregationError("; ".join(failures))
    if not matches:
        raise AggregationError(
            f"no files match {d.resource!r} within {time_range.iso()}")
    matches.sort(key=lambda m: m[1].start)
    for (_, a), (ref_b, b) in zip(matches, matches[1:]):
        if a.intersects(b):
            raise AggregationError(
                f"duplicate time coverage: {ref_b.url()} overlaps interval {a.iso()}")
    return AggregationPlan(d.resource, time_range, tuple(matches))


def _segment_matches(seg_template, name: str) -> bool:
    import re
    pattern = []
    for tok in seg_template.tokens:
        if tok.kind == "literal":
            pattern.append(re.escape(tok.text))
        elif tok.kind == "field":
            pattern.append(r"\d+")
        else:
            pattern.append(r"[^/]*")
    return re.fullmatch("".join(pattern), name) is not None


# ---------------------------------------------------------------------------
# Merging
# ---------------------------------------------------------------------------

def _check_compatible(first: QDataSet, part: QDataSet, index: int) -> None:
    if part.rank not in (1, 2) or part.is_ragged:
        raise AggregationError(f"part {index}: only regular rank-1/2 parts merge")
    if part.rank != first.rank:
        raise AggregationError(
            f"part {index}: rank {part.rank} != first part rank {first.rank}")
    dep = part.property(qds.DEPEND_0)
    if dep is None:
        raise AggregationError(f"part {index}: missing DEPEND_0 time tags")
    if not dep.units.is_time_location:
        raise AggregationError(f"part {index}: DEPEND_0 units are not time-located")
    if not first.units.convertible_to(part.units):
        raise AggregationError(
            f"part {index}: units {part.units.label!r} incompatible with "
            f"{first.units.label!r}")
    if first.rank == 2:
        d1a, d1b = first.property(qds.DEPEND_1), part.property(qds.DEPEND_1)
        if (d1a is None) != (d1b is None):
            raise AggregationError(f"part {index}: DEPEND_1 presence differs")
        if d1a is not None:
            vb = convert_values(d1b.values, d1b.units, d1a.units)
            if d1a.shape != d1b.shape or not np.array_equal(d1a.values, vb):
                raise AggregationError(f"part {index}: DEPEND_1 values differ")
        ba, bb = first.property(qds.BUNDLE_1), part.property(qds.BUNDLE_1)
        if (ba is None) != (bb is None):
            raise AggregationError(f"part {index}: BUNDLE_1 presence differs")
        if first.shape[1] != part.shape[1]:
            raise AggregationError(
                f"part {index}: width {part.shape[1]} != {first.shape[1]}")


def merge(parts: Sequence[QDataSet]) -> QDataSet:
    """Concatenate time-series parts along index 0, in the first part's units."""
    if not parts:
        raise AggregationError("nothing to merge")
    first = parts[0]
    if len(parts) == 1:
        return first
    dep0_first = first.property(qds.DEPEND_0)
    if dep0_first is None:
        raise AggregationError("part 0: missing DEPEND_0 time tags")
    time_units = dep0_first.units
    value_arrays = []
    time_arrays = []
    for i, part in enumerate(parts):
        _check_compatible(first, part, i)
        dep = part.property(qds.DEPEND_0)
        time_arrays.append(convert_values(dep.values, dep.units, time_units))
        vals = part.values
        if part.units != first.units and first.units.is_time_location:
            vals = convert_values(vals, part.units, first.units)
        value_arrays.append(vals)
    times = np.concatenate(time_arrays)
    if np.any(np.diff(times) < 0):
        seam = int(np.argmax(np.diff(times) < 0))
        raise AggregationError(
            f"non-monotonic DEPEND_0 at merged sample {seam + 1}")
    dep_props = dict(dep0_first.properties)
    dep_props[qds.UNITS] = time_units.label
    merged_dep = make_dataset(times, dep_props)
    props = dict(first.properties)
    props[qds.DEPEND_0] = merged_dep
    return make_dataset(np.concatenate(value_arrays, axis=0), props)


def aggregate_read(uri: "DataSetURI | str",
                   time_range: "TimeInterval | str | None" = None,
                   vfs: Optional[Vfs] = None,
                   registry: Optional[PluginRegistry] = None) -> QDataSet:
    """expand + fetch + read + merge; a failing file aborts with its name."""
    from .datasource import default_registry
    d = parse_uri(uri) if isinstance(uri, str) else uri
    vfs = vfs or Vfs()
    registry = registry or default_registry()
    plan = expand(d, time_range, vfs)

    def fetch_one(ref: ResourceRef):
        return vfs.fetch(ref)

    with ThreadPoolExecutor(max_workers=FETCH_PARALLELISM) as pool:
        futures = [pool.submit(fetch_one, ref) for ref, _ in plan.matches]
        parts = []
        for (ref, _), fut in zip(plan.matches, futures):
            try:
                local = fut.result()
                parts.append(read_dataset(d, registry, local))
            except Exception as e:
                raise AggregationError(f"{ref.url()}: {e}") from e
    return merge(parts)
