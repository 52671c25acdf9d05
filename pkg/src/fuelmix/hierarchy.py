"""Fuel category tree and the country -> region -> super-region nesting."""

from dataclasses import dataclass

import numpy as np

from .distributions import marginal_means, relative_means_from_marginal


@dataclass(frozen=True)
class Tier:
    name: str
    parent: str | None
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError(f"tier {self.name!r} needs at least two categories")

    @property
    def k(self):
        return len(self.children)


DEFAULT_TIERS = (
    Tier("top", None, ("solid", "kerosene", "gas", "electricity", "others")),
    Tier("mid", "solid", ("biomass", "charcoal", "coal")),
    Tier("lower", "biomass", ("wood", "cropwaste", "dung")),
)


class FuelHierarchy:
    """Ordered tiers of categories.

    Order inside a tier matters: the last child absorbs the remainder and
    carries no relative-mean parameter.  The relative-mean nodes (``nu_nodes``)
    are all non-final children, tier by tier.
    """

    def __init__(self, tiers=DEFAULT_TIERS):
        self.tiers = tuple(t if isinstance(t, Tier) else Tier(**t) for t in tiers)
        if self.tiers[0].parent is not None:
            raise ValueError("first tier must be the top tier (no parent)")
        self.nodes = []
        seen = set()
        for tier in self.tiers:
            if tier.parent is not None and tier.parent not in seen:
                raise ValueError(f"parent {tier.parent!r} of tier {tier.name!r} not defined above it")
            for child in tier.children:
                if child in seen:
                    raise ValueError(f"category {child!r} appears twice")
                seen.add(child)
                self.nodes.append(child)
        parents = [t.parent for t in self.tiers if t.parent is not None]
        if len(set(parents)) != len(parents):
            raise ValueError("a category may be disaggregated by at most one tier")
        self.node_index = {name: i for i, name in enumerate(self.nodes)}
        self.nu_nodes = [c for t in self.tiers for c in t.children[:-1]]
        self.nu_index = {name: i for i, name in enumerate(self.nu_nodes)}
        self.tier_of = {c: ti for ti, t in enumerate(self.tiers) for c in t.children}
        self.tier_below = {t.parent: ti for ti, t in enumerate(self.tiers) if t.parent is not None}
        self.leaves = [n for n in self.nodes if n not in self.tier_below]
        # index arrays for vectorized mean computations
        self._tier_nu = [np.array([self.nu_index[c] for c in t.children[:-1]]) for t in self.tiers]
        self._tier_nodes = [np.array([self.node_index[c] for c in t.children]) for t in self.tiers]
        self._tier_parent = [None if t.parent is None else self.node_index[t.parent] for t in self.tiers]

    @classmethod
    def default(cls):
        return cls(DEFAULT_TIERS)

    @property
    def S(self):
        return len(self.nu_nodes)

    @property
    def kmax(self):
        return max(t.k for t in self.tiers)

    def parent_of(self, name):
        t = self.tiers[self.tier_of[name]]
        return t.parent

    def to_list(self):
        return [{"name": t.name, "parent": t.parent, "children": list(t.children)} for t in self.tiers]

    def absolute_means(self, nu):
        """Population share of every node from relative means ``(..., S)``.

        Returns ``(..., len(nodes))``; shares of a tier's children sum to the
        share of its parent.
        """
        nu = np.asarray(nu, dtype=float)
        out = np.empty(nu.shape[:-1] + (len(self.nodes),))
        for tnu, tnodes, parent in zip(self._tier_nu, self._tier_nodes, self._tier_parent):
            cond = marginal_means(nu[..., tnu])
            if parent is None:
                out[..., tnodes] = cond
            else:
                out[..., tnodes] = cond * out[..., parent:parent + 1]
        return out

    def relative_from_absolute(self, mu_abs):
        """Inverse of :meth:`absolute_means` (tier-wise conditional shares)."""
        mu_abs = np.asarray(mu_abs, dtype=float)
        out = np.empty(mu_abs.shape[:-1] + (self.S,))
        for tnu, tnodes, parent in zip(self._tier_nu, self._tier_nodes, self._tier_parent):
            out[..., tnu] = relative_means_from_marginal(mu_abs[..., tnodes])
        return out


class RegionMap:
    """Country -> region and region -> super-region lookups."""

    def __init__(self, country_region, region_super):
        self.country_region = dict(country_region)
        self.region_super = dict(region_super)
        missing = sorted({r for r in self.country_region.values() if r not in self.region_super})
        if missing:
            raise ValueError(f"regions without a super-region: {missing}")

    @classmethod
    def from_rows(cls, rows):
        """Build from ``(country, region, super_region)`` triples."""
        cr, rs = {}, {}
        for country, region, sup in rows:
            if country in cr and cr[country] != region:
                raise ValueError(f"country {country!r} assigned to two regions")
            if region in rs and rs[region] != sup:
                raise ValueError(f"region {region!r} nested in two super-regions")
            cr[country] = region
            rs[region] = sup
        return cls(cr, rs)

    def rows(self):
        return [(c, r, self.region_super[r]) for c, r in sorted(self.country_region.items())]

    def region(self, country):
        try:
            return self.country_region[country]
        except KeyError:
            raise KeyError(f"country {country!r} not in region map") from None

    def super_region(self, region):
        return self.region_super[region]
