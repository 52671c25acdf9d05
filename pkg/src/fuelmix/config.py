"""Run configuration: model constants, MCMC settings and the hierarchy.

Every numeric constant of the model appears once in :data:`DEFAULT_CONFIG`.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

from .hierarchy import DEFAULT_TIERS, FuelHierarchy


@dataclass
class ModelConfig:
    N: int = 100000                  # artificial sample size for floor counts
    K: int = 10                      # thin-plate basis dimension
    year_min: int = 1990
    year_max: int = 2017
    prior_sd: float = 10.0           # Normal(0, sd^2) on fixed effects, upsilons, log lambda_theta
    sigma_prior_sd: float = 10.0     # positive-truncated Normal(0, sd^2) on sigmas
    rho_prior: tuple = (9.0, 1.0)    # Beta prior on the Beta-Binomial weight
    nu_clamp: float = 1e-12
    urban_clamp: float = 1e-6
    nonresponse_threshold: float = 0.15


@dataclass
class McmcConfig:
    chains: int = 4
    iterations: int = 8000
    burn_in: int = 4000
    thin: int = 4
    seed: int = 1
    adapt_interval: int = 50
    target_accept_scalar: float = 0.44
    target_accept_block: float = 0.234
    init_retries: int = 20
    split_psrf: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")

    @property
    def draws_per_chain(self):
        return (self.iterations - self.burn_in) // self.thin


PRODUCTION_MCMC = McmcConfig(chains=4, iterations=80000, burn_in=40000, thin=10)


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    hierarchy: list = field(default_factory=lambda: [
        {"name": t.name, "parent": t.parent, "children": list(t.children)} for t in DEFAULT_TIERS])
    region_map: str | None = None
    psrf_threshold: float = 1.05

    def fuel_hierarchy(self):
        return FuelHierarchy(self.hierarchy)

    def to_dict(self):
        d = asdict(self)
        d["model"]["rho_prior"] = list(self.model.rho_prior)
        return d

    @classmethod
    def from_dict(cls, d):
        d = copy.deepcopy(d or {})
        model = ModelConfig(**d.pop("model", {}))
        model.rho_prior = tuple(model.rho_prior)
        mcmc = McmcConfig(**d.pop("mcmc", {}))
        return cls(model=model, mcmc=mcmc, **d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


DEFAULT_CONFIG = Config().to_dict()
