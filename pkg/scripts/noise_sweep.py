"""Prefetch waste and cache hits as mobility drifts from the learned map."""

import dataclasses

from common import parser, run_grid
from vcdsim.sim import Scenario


@dataclasses.dataclass
class NoiseConfig:
    vehicles: int = 10
    ap_count: int = 16
    duration_s: float = 1200.0
    requests_per_vehicle: int = 2
    levels: tuple = (0.0, 0.1, 0.2, 0.3)
    strategies: tuple = ("mpp", "representative", "all")

    def scenario(self, seed, strategy, eps):
        sc = Scenario(seed=seed, vehicle_count=self.vehicles, duration_s=self.duration_s,
                      strategy=strategy, noise=eps,
                      requests_per_vehicle=self.requests_per_vehicle)
        sc.mobility.ap_count = self.ap_count
        return sc


def main():
    args = parser(__doc__, 20).parse_args()
    cfg = NoiseConfig()
    cells = {f"{st} eps={e}": (lambda s, st=st, e=e: cfg.scenario(s, st, e))
             for st in cfg.strategies for e in cfg.levels}
    run_grid(cells, args.seeds, ["wasted_prefetch_bytes", "cache_hit_bytes_ratio",
                                 "completion_fraction"], args.out)


if __name__ == "__main__":
    main()
