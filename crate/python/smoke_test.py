"""Smoke test for the nlch extension module.

Build and install first:

    cd crates/python && maturin build --release && pip install ../../target/wheels/nlch-*.whl
    python ../../python/smoke_test.py
"""

import math
import random

import nlch


def main():
    grid = nlch.Grid([1.0], [64])
    kernel = nlch.Kernel.homogeneous(1.5, amplitude=0.01)
    potential = nlch.Potential.logarithmic(1.0, 2.0)
    model = nlch.Model(grid, kernel, potential)
    assert len(model) == 64

    rng = random.Random(3)
    c = [0.01 * (rng.random() - 0.5) for _ in range(len(grid))]
    shift = sum(c) / len(c)
    c = [v - shift for v in c]

    e0 = model.energy(c)
    assert math.isclose(e0["total"], e0["nonlocal"] + e0["gradient"] + e0["bulk"], rel_tol=1e-12)

    c1, report = model.step(c, 1e-4)
    assert report["energy_after"] <= report["energy_before"]
    assert abs(sum(c1) - sum(c)) / len(c) < 1e-12

    traj = model.run(c, 1e-4, 5e-3, sample_every=10)
    energies = [s["energy"] for s in traj["samples"]]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert traj["max_mass_drift"] < 1e-12

    g = grid.sample("cos(pi*x1)")
    sol = model.solve_elliptic(g, theta=0.01)
    assert sol["residual"] < 1e-8

    report = nlch.boundary_direction(nlch.Kernel.homogeneous(1.5), [0.1, 0.05, 0.025])
    assert abs(report["cos_normal"]) > 0.95

    fit = nlch.lemma_exponent(1, 0.0, [0.2, 0.1, 0.05])
    assert abs(fit["slope"] - 3.0) < 0.05

    try:
        nlch.Kernel.homogeneous(2.5)
    except ValueError:
        pass
    else:
        raise AssertionError("alpha = 2.5 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
