"""Edge caching with overhearing of wireless broadcasts.

Closed-form hit ratio and occupancy of TTL-style caching/overhearing
policies under ON-OFF renewal demand, an allocator for the best policy
per item under a cache budget, and a discrete-event simulator.
"""

from .analytics import PolicyParams, RandomizedParams, evaluate, upper_bound
from .demand import Catalog, DemandProfile, Population
from .optimizer import Allocation, solve_event_driven, solve_heterogeneous, solve_time_driven
from .simulator import SimConfig, SimMetrics, replicate, run

__all__ = [
    "Allocation",
    "Catalog",
    "DemandProfile",
    "PolicyParams",
    "Population",
    "RandomizedParams",
    "SimConfig",
    "SimMetrics",
    "evaluate",
    "replicate",
    "run",
    "solve_event_driven",
    "solve_heterogeneous",
    "solve_time_driven",
    "upper_bound",
]

__version__ = "0.1.0"
