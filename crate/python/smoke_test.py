"""Smoke test for the nlsp Python extension.

Build and run from the repository root:

    cargo build --release -p nlsp-py --features extension-module
    cp target/release/libnlsp.so python/nlsp.so
    python3 python/smoke_test.py
"""

import math
import pathlib
import sys
import tempfile

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))

import nlsp  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parent.parent

CONFIG = """seed = 3
[grid]
dim = 1
n = 256
l = 20
[model]
potential = none
nonlinearity = cubic
[scenario]
soliton = true
omega1 = 1
t_final = 1
dt = 0.001
cadence = 0.1
checkpoint_every = 0.5
"""


def main():
    grid = nlsp.Grid(1, 64, 10.0)
    assert len(grid) == 64 and grid.dim == 1
    x = grid.coords()
    f = nlsp.Field(grid, [math.exp(-xi * xi) for xi in x], [0.0] * 64)
    assert abs(f.norm_l2() ** 2 - math.sqrt(math.pi / 2)) < 1e-10
    assert abs(f.pairing(f) - f.norm_l2() ** 2) < 1e-12
    assert abs(f.symplectic(f)) < 1e-14

    cfg = nlsp.Config.parse(CONFIG)
    assert nlsp.Config.parse(cfg.to_text()).hash() == cfg.hash()

    u0 = cfg.initial_data()
    prop = nlsp.Propagator(cfg)
    u1 = prop.evolve(u0, 0.0, 200)
    assert abs(u1.norm_l2() - u0.norm_l2()) < 1e-10

    gs = nlsp.ground_states(cfg)
    assert gs["soliton"]["residual"] < 1e-8

    spec = nlsp.spectrum(cfg)
    assert spec["zero_modes"]["phase"] < 1e-8

    dec = nlsp.decompose(cfg, u0)
    assert abs(dec["omega"] - 1.0) < 1e-8

    try:
        nlsp.Config.parse("[grid]\nn = -3\n")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    with tempfile.TemporaryDirectory() as tmp:
        run = pathlib.Path(tmp) / "run"
        metrics = nlsp.simulate(cfg, str(run))
        assert metrics["charge_drift_rate"] < 1e-10
        summary = nlsp.report(str(run))
        assert summary["gate_failures"] == 0
        snap = pathlib.Path(tmp) / "u.bin"
        u1.save(str(snap))
        back = nlsp.Field.load(str(snap))
        assert (back - u1).norm_l2() == 0.0

    preset = nlsp.Config.load(str(ROOT / "presets" / "cubic_quintic.cfg"))
    fgr = nlsp.fgr(preset, 2)
    assert len(fgr["samples"]) == 2

    print("smoke test passed")


if __name__ == "__main__":
    main()
