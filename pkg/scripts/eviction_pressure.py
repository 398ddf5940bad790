"""Completion under small AP caches and many concurrent vehicles."""

import dataclasses

from common import parser, run_grid
from vcdsim.sim import Scenario


@dataclasses.dataclass
class PressureConfig:
    vehicles: int = 20
    ap_count: int = 16
    duration_s: float = 600.0
    content_mib: int = 96
    piece_kib: int = 1024
    storage_multiple: float = 1.5  # AP cache size in units of one content item
    strategies: tuple = ("none", "mpp", "representative", "all")

    def scenario(self, seed, strategy):
        size = self.content_mib * 2**20
        sc = Scenario(seed=seed, vehicle_count=self.vehicles, duration_s=self.duration_s,
                      strategy=strategy, storage_bytes=self.storage_multiple * size)
        sc.mobility.ap_count = self.ap_count
        sc.content.size_bytes = size
        sc.content.piece_size = self.piece_kib * 1024
        return sc


def main():
    args = parser(__doc__, 20).parse_args()
    cfg = PressureConfig()
    cells = {st: (lambda s, st=st: cfg.scenario(s, st)) for st in cfg.strategies}
    run_grid(cells, args.seeds, ["completion_fraction", "cache_hit_bytes_ratio", "evictions",
                                 "declined_prefetches", "peak_sessions"], args.out)


if __name__ == "__main__":
    main()
