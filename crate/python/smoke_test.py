"""Smoke test for the pcwinter_py extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/pcwinter_py-*.whl
"""

import itertools
import math
import tempfile
from pathlib import Path

import pcwinter_py as pw


def close(a, b, tol=1e-12):
    return all(abs(x - y) <= tol for x, y in zip(a, b)) and len(a) == len(b)


def check_tree_oracles():
    p3 = pw.ContributionTree.from_parents([None, 0, 1, 1])
    assert len(p3) == 4 and p3.num_roots == 1
    assert p3.children(1) == [2, 3]
    assert p3.is_permissible([0, 1, 2, 3])
    assert not p3.is_permissible([0, 2, 1, 3])
    for t in range(20):
        order, truncated = p3.sample_traversal(seed=3, t=t)
        assert p3.is_permissible(order) and truncated == []

    weights = [0.1, 0.2, 0.05, 0.15]
    table = [sum(w for i, w in enumerate(weights) if m >> i & 1) for m in range(16)]
    assert close(p3.exact_values(table), weights)

    flat = pw.ContributionTree.from_parents([None] * 3)
    game = [math.sqrt(bin(m).count("1")) + (m & 1) * 0.3 for m in range(8)]
    assert close(flat.exact_values(game), pw.exact_shapley_values(3, game))


def check_dataset_and_values(tmp):
    ds = pw.Dataset.synthetic(nodes=120, seed=4)
    assert ds.num_nodes == 120 and ds.num_classes == 2
    data = tmp / "data"
    ds.save(str(data))
    again = pw.Dataset.load(str(data))
    assert again.sha256 == ds.sha256

    tree = pw.ContributionTree.build(ds, k=2)
    order, truncated = tree.sample_traversal(seed=0, t=0, ratios=[0.5, 0.7])
    assert len(order) + len(truncated) == len(tree)

    paths, values, nodes, edges = pw.pc_winter(ds, k=2, traversals=8, seed=1)
    assert len(paths) == len(values) == len(tree)
    assert math.isclose(sum(values), sum(v for _, v in nodes), abs_tol=1e-9)
    root_total = sum(v for p, v in zip(paths, values) if len(p) == 1)
    assert math.isclose(sum(v for _, v in edges), sum(values) - root_total, abs_tol=1e-9)

    out = tmp / "run"
    out_dir, completion, report = pw.run(
        str(data), "pc-winter", str(out), max_perms=8, seed=1, stop_on_convergence=False
    )
    assert completion == "done", completion
    assert "traversals=8" in report
    rows = pw.read_values(str(Path(out_dir) / "values.csv"))
    players = [r for r in rows if r[0] == "player"]
    assert len(players) == len(tree)
    _, same, _, _ = pw.pc_winter(again, k=2, ratios=[0.5, 0.7], traversals=8, seed=1)
    assert close([r[2] for r in players], same, tol=1e-15)

    try:
        pw.run(str(data), "no-such-method", str(tmp / "x"))
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")


def main():
    check_tree_oracles()
    with tempfile.TemporaryDirectory() as d:
        check_dataset_and_values(Path(d))
    print("python smoke test passed")


if __name__ == "__main__":
    main()
