"""Named-site additive hooks: ``site_output + transform(site_output)``.

The host model calls :meth:`HookEngine.apply` at each site; nothing else in
the model knows about adapters. Transforms return the *delta*, never the
replacement value, so a registered hook can only add to the residual stream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from catchvqa.errors import HookConflictError, HookLookupError, ShapeError
from catchvqa.tensor import add, as_tensor

ADAPTER_SLOT = "adapter"


@dataclass(frozen=True)
class HookSite:
    name: str
    expected_shape: tuple  # None marks a free (batch) dimension

    def check(self, shape, what="input"):
        shape = tuple(shape)
        ok = len(shape) == len(self.expected_shape) and all(
            e is None or e == s for e, s in zip(self.expected_shape, shape)
        )
        if not ok:
            raise ShapeError(f"{self.name}: {what} shape {shape} violates contract {self.expected_shape}")

    def describe(self):
        dims = ", ".join("B" if d is None else str(d) for d in self.expected_shape)
        return f"{self.name} [{dims}]"


class HookHandle:
    __slots__ = ("site", "id", "transform", "slot", "_engine")

    def __init__(self, site, hid, transform, slot, engine):
        self.site = site
        self.id = hid
        self.transform = transform
        self.slot = slot
        self._engine = engine

    @property
    def active(self):
        return self._engine is not None and self._engine._active.get((self.site.name, self.slot)) is self

    def remove(self):
        if self._engine is not None:
            self._engine.remove(self)

    def __repr__(self):
        return f"HookHandle({self.site.name!r}, slot={self.slot!r}, id={self.id})"


class HookEngine:
    """Site registry plus the active (site, slot) -> handle table."""

    def __init__(self):
        self._sites = {}
        self._active = {}
        self._ids = itertools.count(1)
        self.epoch = 0

    def add_site(self, name, expected_shape):
        if name in self._sites:
            raise HookConflictError(f"site {name!r} already defined")
        site = HookSite(name, tuple(expected_shape))
        self._sites[name] = site
        return site

    def site(self, name):
        try:
            return self._sites[name]
        except KeyError:
            raise HookLookupError(
                f"unknown hook site {name!r}; available: {', '.join(self._sites)}"
            ) from None

    def sites(self):
        return list(self._sites.values())

    def register(self, site_name, transform, slot=ADAPTER_SLOT):
        site = self.site(site_name)
        key = (site_name, slot)
        if key in self._active:
            raise HookConflictError(f"site {site_name!r} slot {slot!r} already has an active hook")
        handle = HookHandle(site, next(self._ids), transform, slot, self)
        self._active[key] = handle
        self.epoch += 1
        return handle

    def remove(self, handle):
        key = (handle.site.name, handle.slot)
        if self._active.get(key) is handle:
            del self._active[key]
            self.epoch += 1

    def clear(self, slot=ADAPTER_SLOT):
        for key in [k for k in self._active if k[1] == slot]:
            del self._active[key]
        self.epoch += 1

    def active(self, slot=None):
        """Active handles in site-definition order."""
        order = {name: i for i, name in enumerate(self._sites)}
        handles = [h for (name, s), h in self._active.items() if slot is None or s == slot]
        return sorted(handles, key=lambda h: (order[h.site.name], h.id))

    def has_hooks(self, site_name):
        return any(name == site_name for name, _ in self._active)

    def apply(self, site_name, x):
        """Return ``x`` plus the deltas of every hook active at ``site_name``."""
        handles = [h for (name, _), h in self._active.items() if name == site_name]
        if not handles:
            return x
        site = self._sites[site_name]
        site.check(x.shape)
        base = x
        for h in sorted(handles, key=lambda h: h.id):
            delta = as_tensor(h.transform(base))
            if delta.shape != base.shape:
                raise ShapeError(
                    f"hook at {site_name} returned shape {delta.shape}, expected {base.shape}"
                )
            x = add(x, delta)
        return x

    def dump(self):
        """One line per site: name, shape contract and active slots."""
        lines = []
        for site in self._sites.values():
            slots = sorted(s for (name, s) in self._active if name == site.name)
            suffix = f"  active={','.join(slots)}" if slots else ""
            lines.append(site.describe() + suffix)
        return "\n".join(lines)


def swap_domain(backbone, registry, domain):
    """Make ``domain``'s adapter pair the active one on ``backbone``.

    Removes every adapter-slot hook, registers the domain's visual adapter at
    its layers and binds its prompt prefix. On any failure the previous hook
    set and prefix are restored.
    """
    pair = registry.get(domain)  # raises before anything is touched
    engine = backbone.hooks
    previous = [(h.site.name, h.transform) for h in engine.active(ADAPTER_SLOT)]
    previous_prefix = backbone.bound_prefix
    engine.clear(ADAPTER_SLOT)
    try:
        for layer in pair.visual.layers:
            engine.register(backbone.vision_site(layer), pair.visual.hook(layer))
        backbone.bind_prefix(pair.prompt.prefix_tensor())
    except Exception:
        engine.clear(ADAPTER_SLOT)
        for name, transform in previous:
            engine.register(name, transform)
        backbone.bound_prefix = previous_prefix
        raise
    return pair
