import numpy as np
import pytest

from qtrack import qtree, rdopt


def random_tree(rng: np.random.Generator, depth_max: int,
                split_prob: float = 0.5) -> qtree.OptimizedQT:
    """Random valid pruned quadtree with random leaf modes."""

    def build(level, origin, size):
        if level < depth_max and rng.random() < split_prob:
            origins, half = qtree.child_geometry(origin, size)
            return qtree.split(level, origin, size,
                               tuple(build(level + 1, o, half) for o in origins))
        if rng.random() < 0.5:
            return qtree.leaf(level, origin, size, qtree.SKIP)
        return qtree.leaf(level, origin, size,
                          qtree.acquire(int(rng.integers(0, 256))))

    return qtree.OptimizedQT(root=build(0, (0, 0), 1 << depth_max),
                             depth_max=depth_max)


def random_frame(rng: np.random.Generator, side: int) -> np.ndarray:
    return rng.integers(0, 256, size=(side, side), dtype=np.uint8)


def random_weight_map(rng: np.random.Generator, side: int) -> rdopt.WeightMap:
    """Weight map with 0-2 random ROI boxes over a random background weight."""
    regions = []
    for _ in range(int(rng.integers(0, 3))):
        w = float(rng.uniform(2, side - 2))
        h = float(rng.uniform(2, side - 2))
        x = float(rng.uniform(0, side - w))
        y = float(rng.uniform(0, side - h))
        regions.append(((x, y, w, h), float(rng.uniform(1e3, 1e7))))
    return rdopt.build_weight_map(regions, side, w_bg=float(rng.uniform(1, 1e6)))


def uniform_weight_map(side: int, value: float = 1.0) -> rdopt.WeightMap:
    """Weight map with omega identically `value` (unit region bookkeeping)."""
    return rdopt.WeightMap(
        omega=np.full((side, side), value, dtype=np.float64),
        regions=(rdopt.Region(region_id=0, weight=value * side * side,
                              area=side * side),))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one "[PASS]/[FAIL] criterion N ..." line per acceptance test, echoed after
# the run so they survive pytest's output capture
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
