"""Endpoint labels from echocardiography measurements."""

from __future__ import annotations

import pandas as pd

from .types import EchoMeasurements, Grade, LabelVector, MissingMeasurementError, TargetSpec

DEFAULT_TARGETS = TargetSpec()


def _rule_bit(rule, m: EchoMeasurements) -> int | None:
    if rule.kind == "lvef_max":
        return None if m.lvef is None else int(m.lvef <= rule.threshold)
    if rule.kind == "wall_min":
        walls = [v for v in (m.ivs, m.lvpw) if v is not None]
        # a single wall above threshold is already positive
        if any(v >= rule.threshold for v in walls):
            return 1
        return None if len(walls) < 2 else 0
    if rule.kind == "grade":
        g = getattr(m, rule.source)
        return None if g is None else int(g >= Grade(int(rule.threshold)))
    raise ValueError(f"unknown rule kind {rule.kind!r}")


def derive_labels(m: EchoMeasurements, spec: TargetSpec = DEFAULT_TARGETS, *, strict: bool = False) -> LabelVector:
    """Apply the six endpoint rules; comparisons are inclusive.

    A missing input yields bit 0 and the endpoint name in ``missing``;
    with ``strict=True`` it raises instead.
    """
    bits, missing = [], []
    for rule in spec.endpoints:
        bit = _rule_bit(rule, m)
        if bit is None:
            if strict:
                raise MissingMeasurementError(f"{rule.name}: missing {rule.source}")
            missing.append(rule.name)
            bit = 0
        bits.append(bit)
    return LabelVector(tuple(bits), tuple(missing))


def derive_label_frame(frame: pd.DataFrame, spec: TargetSpec = DEFAULT_TARGETS, *, strict: bool = False) -> pd.DataFrame:
    """Label columns (``y_*``) plus a ``missing`` column from raw measurement columns."""
    rows = []
    for rec in frame.itertuples(index=False):
        m = EchoMeasurements(
            lvef=_num(getattr(rec, "lvef", None)),
            ivs=_num(getattr(rec, "ivs", None)),
            lvpw=_num(getattr(rec, "lvpw", None)),
            as_grade=getattr(rec, "as_grade", None),
            mr_grade=getattr(rec, "mr_grade", None),
            tr_grade=getattr(rec, "tr_grade", None),
            rv_grade=getattr(rec, "rv_grade", None),
        )
        lv = derive_labels(m, spec, strict=strict)
        rows.append(list(lv.bits) + [";".join(lv.missing)])
    cols = [e.column for e in spec.endpoints] + ["missing"]
    return pd.DataFrame(rows, columns=cols, index=frame.index)


def _num(v):
    if v is None:
        return None
    try:
        f = float(v)
    except (TypeError, ValueError):
        return None
    return None if f != f else f
