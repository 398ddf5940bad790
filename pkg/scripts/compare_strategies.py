"""Every prefetch strategy against no prefetching on multi-AP journeys."""

import dataclasses

from common import parser, run_grid
from vcdsim.sim import Scenario


@dataclasses.dataclass
class CompareConfig:
    vehicles: int = 5
    ap_count: int = 16
    duration_s: float = 1200.0
    content_mib: int = 128
    piece_kib: int = 1024
    storage_bytes: float = float("inf")
    strategies: tuple = ("none", "mpp", "representative", "all")

    def scenario(self, seed, strategy):
        sc = Scenario(seed=seed, vehicle_count=self.vehicles, duration_s=self.duration_s,
                      strategy=strategy, storage_bytes=self.storage_bytes)
        sc.mobility.ap_count = self.ap_count
        sc.content.size_bytes = self.content_mib * 2**20
        sc.content.piece_size = self.piece_kib * 1024
        return sc


def main():
    args = parser(__doc__, 20).parse_args()
    cfg = CompareConfig()
    cells = {st: (lambda s, st=st: cfg.scenario(s, st)) for st in cfg.strategies}
    run_grid(cells, args.seeds, ["mean_contact_bytes", "cache_hit_bytes_ratio",
                                 "backhaul_bytes", "wasted_prefetch_bytes"], args.out)


if __name__ == "__main__":
    main()
