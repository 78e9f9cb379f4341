"""Smoke test for the cbo_lab extension module.

Build and install first, e.g. `maturin develop --release` from crates/python.
"""

import json
import tempfile
from pathlib import Path

import cbo_lab


def main():
    f = cbo_lab.Objective.rastrigin(shift=1.0)
    assert f.known_minimizer == [1.0]
    assert f([1.0]) == 0.0

    m = cbo_lab.consensus([[0.0], [1.0], [2.0]], f, 1e15)
    assert m == [1.0], m

    params = cbo_lab.CBOParams(t_final=20.0, seed=3)
    out = cbo_lab.run_particles(f, params, 0.0, 4.0, stride=100)
    assert abs(out.final_consensus[0] - 1.0) < 0.25, out.final_consensus
    assert out.records[0][0] == 0.0 and out.records[-1][0] == 20.0

    q = cbo_lab.Objective.quadratic([1.0])
    reg = cbo_lab.RegularizationParams(0.1, 10.0)
    p = cbo_lab.CBOParams(lambda_=1.0, sigma=1.0, alpha=10.0)
    cfg = cbo_lab.SolverConfig(p, reg, half_width=22.0, cells=128, t_final=0.5, snapshot_interval=0.25)
    rho0 = cbo_lab.GridDensity.gaussian(1, 128, 22.0, [-1.0], 1.0)
    snaps = cbo_lab.solve(rho0, q, cfg)
    assert len(snaps) == 3
    for s in snaps:
        assert abs(s.mass() - 1.0) < 1e-12
        assert min(s.values) >= 0.0

    report = json.loads(cbo_lab.verify_pde_run(cfg, q, rho0))
    hard = [c for c in report["checks"] if c["severity"] == "hard"]
    assert all(c["pass"] for c in hard), hard

    w = cbo_lab.wasserstein2_samples([0.0, 1.0], [1.0, 2.0])
    assert abs(w - 1.0) < 1e-15

    text = json.dumps({
        "mode": "particle",
        "objective": {"name": "rastrigin", "shift": 1.0},
        "cbo": {"lambda": 1, "sigma": 1, "alpha": 1e15, "dt": 0.01, "t_final": 1,
                "n_particles": 100, "seed": 0},
        "init": {"kind": "uniform", "low": 0, "high": 4},
    })
    with tempfile.TemporaryDirectory() as d:
        assert cbo_lab.run_config(text, d)
        names = sorted(x.name for x in Path(d).iterdir())
        assert names == ["final_consensus.json", "manifest.json", "trajectory_seed0.csv"], names

    try:
        cbo_lab.validate_config(text.replace('"seed": 0', '"seed": 0, "momentum": 1'))
    except ValueError as e:
        assert "momentum" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
