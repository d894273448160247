"""Service universe, popularity bookkeeping and analytic hit rates.

A service is a set of microservices. Popularities form a probability
distribution over services: the chance that an arriving task belongs to a
given service. All comparisons on popularities use ``TOL``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

import numpy as np

__all__ = [
    "TOL",
    "Microservice",
    "Service",
    "ServiceCatalog",
    "NewServiceDistribution",
    "hit_rate",
    "push_service",
    "hit_rate_after_push",
    "sample_new_service",
]

TOL = 1e-9


@dataclass(frozen=True)
class Microservice:
    id: str
    size: int = 1

    def __post_init__(self):
        if self.size < 0:
            raise ValueError(f"microservice {self.id!r} has negative size")


@dataclass(frozen=True)
class Service:
    id: str
    popularity: float
    microservices: frozenset

    def __post_init__(self):
        object.__setattr__(self, "microservices", frozenset(self.microservices))
        if not self.microservices:
            raise ValueError(f"service {self.id!r} has no microservices")
        if not (-TOL <= self.popularity <= 1 + TOL):
            raise ValueError(
                f"service {self.id!r} popularity {self.popularity} outside [0, 1]")


@dataclass(frozen=True)
class ServiceCatalog:
    """Ordered, normalized collection of services.

    ``sizes`` maps microservice id to storage units; missing ids count 1.
    """

    services: tuple
    deployment_threshold: float = 0.0
    slot_index: int = 0
    sizes: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "sizes", dict(self.sizes))
        ids = [s.id for s in self.services]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate service ids: {dup}")
        if self.services:
            total = math.fsum(s.popularity for s in self.services)
            if abs(total - 1.0) > TOL:
                raise ValueError(f"popularities sum to {total!r}, expected 1")
        if not 0.0 <= self.deployment_threshold <= 1.0:
            raise ValueError("deployment threshold must lie in [0, 1]")
        object.__setattr__(self, "_index", {s.id: s for s in self.services})

    def __len__(self):
        return len(self.services)

    def __contains__(self, service_id):
        return service_id in self._index

    @property
    def ids(self):
        return tuple(s.id for s in self.services)

    def service(self, service_id) -> Service:
        try:
            return self._index[service_id]
        except KeyError:
            raise KeyError(f"unknown service id {service_id!r}") from None

    def popularity(self, service_id) -> float:
        return self.service(service_id).popularity

    def size_of(self, microservice_id) -> int:
        return self.sizes.get(microservice_id, 1)

    def microservices_of(self, service_ids: Iterable) -> frozenset:
        out = set()
        for sid in service_ids:
            out |= self.service(sid).microservices
        return frozenset(out)

    def storage(self, microservice_ids: Iterable) -> int:
        """Total size of a *set* of microservices (each counted once)."""
        return sum(self.size_of(m) for m in set(microservice_ids))

    def by_popularity(self):
        """Services in descending popularity, ties kept in catalog order."""
        return sorted(self.services, key=lambda s: -s.popularity)

    # -- JSON helpers --------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "deployment_threshold": self.deployment_threshold,
            "slot_index": self.slot_index,
            "services": [
                {"id": s.id, "popularity": s.popularity,
                 "microservices": sorted(s.microservices)}
                for s in self.services
            ],
        }
        sized = {m: n for m, n in sorted(self.sizes.items()) if n != 1}
        if sized:
            out["microservice_sizes"] = sized
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ServiceCatalog":
        services = []
        for i, item in enumerate(data["services"]):
            try:
                services.append(Service(str(item["id"]), float(item["popularity"]),
                                        frozenset(map(str, item["microservices"]))))
            except KeyError as exc:
                raise ValueError(f"services[{i}]: missing field {exc.args[0]!r}") from None
        return cls(tuple(services),
                   deployment_threshold=float(data.get("deployment_threshold", 0.0)),
                   slot_index=int(data.get("slot_index", 0)),
                   sizes={str(k): int(v) for k, v in data.get("microservice_sizes", {}).items()})


@dataclass(frozen=True)
class NewServiceDistribution:
    """Candidate popularities for a newly pushed service and its arrival chance.

    Popularities below ``threshold`` are rejected at construction, so the
    candidate set only ever holds deployable values.
    """

    candidate_popularities: tuple
    arrival_prob: float
    threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "candidate_popularities",
                           tuple(float(g) for g in self.candidate_popularities))
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival probability must lie in [0, 1]")
        for g in self.candidate_popularities:
            if not self.threshold - TOL <= g <= 1.0:
                raise ValueError(
                    f"candidate popularity {g} outside [{self.threshold}, 1]")


def hit_rate(catalog: ServiceCatalog, deployed: Iterable) -> float:
    """Popularity mass of the deployed services."""
    ids = set(deployed)
    for sid in ids:
        if sid not in catalog:
            raise KeyError(f"unknown service id {sid!r} in deployed set")
    # fsum is exactly rounded, so the result does not depend on set order
    return math.fsum(catalog.popularity(sid) for sid in ids)


def _check_new(catalog, new):
    if new.id in catalog:
        raise ValueError(f"service id {new.id!r} already present")
    if not 0.0 < new.popularity < 1.0:
        raise ValueError(f"new service popularity {new.popularity} not in (0, 1)")


def push_service(catalog: ServiceCatalog, new: Service) -> ServiceCatalog:
    """Add ``new`` and shrink every existing popularity by ``1 - P(new)``.

    The old popularities are rescaled by ``(1 - p) / sum(old)`` rather than
    ``1 - p`` alone; the two agree on a normalized catalog and the former
    stops rounding drift from accumulating across repeated pushes.
    """
    _check_new(catalog, new)
    p = new.popularity
    old_total = math.fsum(s.popularity for s in catalog.services)
    factor = (1.0 - p) / old_total if old_total > 0 else 0.0
    scaled = tuple(replace(s, popularity=s.popularity * factor) for s in catalog.services)
    return replace(catalog, services=scaled + (new,))


def hit_rate_after_push(catalog: ServiceCatalog, deployed: Iterable, new: Service,
                        cached_at_edge: bool) -> float:
    _check_new(catalog, new)
    base = hit_rate(catalog, deployed) * (1.0 - new.popularity)
    return base + new.popularity if cached_at_edge else base


def sample_new_service(dist: NewServiceDistribution, rng: np.random.Generator):
    """Draw the popularity of a new service, or ``None`` if nothing arrives."""
    if dist.arrival_prob > 0 and not dist.candidate_popularities:
        raise ValueError("empty candidate popularity set with positive arrival probability")
    if rng.random() >= dist.arrival_prob:
        return None
    idx = rng.integers(len(dist.candidate_popularities))
    return dist.candidate_popularities[idx]
