"""Regenerate the built-in scenario files in src/zipscan/scenarios/.

Cells of the 203-cell hex map are addressed as ``h<row><col>``: 14 rows,
even rows hold 15 cells and odd rows 14 cells shifted by half a pitch.
Run from the repository root: ``python scripts/make_scenarios.py``.
"""

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "zipscan" / "scenarios"
M = 507
TARGET_POWER = 0.999


def cells():
    for r in range(14):
        for c in range(15 if r % 2 == 0 else 14):
            yield r, c, c + (0.5 if r % 2 else 0.0), r * math.sqrt(3) / 2


def cid(r, c):
    return f"h{r:02d}{c:02d}"


def disk(r0, c0, radius):
    pos = {(r, c): (x, y) for r, c, x, y in cells()}
    x0, y0 = pos[(r0, c0)]
    return [cid(r, c) for (r, c), (x, y) in pos.items()
            if math.hypot(x - x0, y - y0) <= radius + 1e-6]


def main():
    cluster_a = disk(7, 7, 2)
    cluster_b = disk(11, 3, 2)
    cluster_c = disk(2, 3, 1)
    cluster_d = [cid(r, c) for r in range(6, 12) for c in (12, 13)]
    cluster_d += [cid(r, c) for r in (4, 5) for c in range(9, 14)]

    # shared zero pattern of A-D: a line through A, scattered zeros in B,
    # the centre of C, and three zeros cutting up D
    line = [cid(7, c) for c in range(4, 11)]
    zeros_b = [cid(11, 2), cid(12, 4), cid(10, 3), cid(5, 1)]
    zeros_c = [cid(2, 3)]
    zeros_d = [cid(9, 12), cid(4, 11), cid(5, 11)]
    shared = line + zeros_b + zeros_c + zeros_d

    # progressive family: zeros move one by one into cluster A
    inside_a = [cid(7, 7), cid(7, 5), cid(7, 9), cid(7, 6), cid(7, 8), cid(8, 7)]
    outside_pool = ([cid(7, 4), cid(7, 10)] + zeros_b + zeros_c + zeros_d
                    + [cid(1, 8), cid(12, 9), cid(10, 7), cid(3, 1), cid(13, 13)])
    assert not set(outside_pool) & set(cluster_a)
    assert set(inside_a) <= set(cluster_a)

    scenarios = {
        "A0": (cluster_a, []),
        "A": (cluster_a, shared),
        "B": (cluster_b, shared),
        "C": (cluster_c, shared),
        "D": (cluster_d, shared),
    }
    for j, m in enumerate((0, 2, 4, 6), start=1):
        scenarios[f"A{j}"] = (cluster_a, inside_a[:m] + outside_pool[: 15 - m])

    OUT.mkdir(parents=True, exist_ok=True)
    for name, (cluster, zeros) in scenarios.items():
        assert len(set(zeros)) == len(zeros) == (0 if name == "A0" else 15), name
        doc = {
            "name": name,
            "true_cluster": sorted(cluster),
            "structural_zeros": sorted(zeros),
            "total_cases": M,
            "target_power": TARGET_POWER,
        }
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
