from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class DomainId:
    index: int
    name: str

    def __str__(self):
        return self.name


COUNT = DomainId(0, "count")
ANOMALY = DomainId(1, "anomaly")
ARITH = DomainId(2, "arith")
CHART = DomainId(3, "chart")

BUILTIN = (COUNT, ANOMALY, ARITH, CHART)
BY_NAME = {d.name: d for d in BUILTIN}


def lookup(name_or_id):
    if isinstance(name_or_id, DomainId):
        return name_or_id
    if isinstance(name_or_id, int):
        return BUILTIN[name_or_id]
    try:
        return BY_NAME[name_or_id]
    except KeyError:
        raise KeyError(f"unknown domain {name_or_id!r}; known: {', '.join(BY_NAME)}") from None
