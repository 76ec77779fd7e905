"""Smoke test for the qcurve extension module: python python/smoke_test.py"""

import json
import math
from pathlib import Path

import qcurve

CONFIGS = Path(__file__).resolve().parents[2] / "cli" / "configs"


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    area = qcurve.Form(2, 2, [([1, 2], 1.0)])
    assert area.degree == 2 and area.ambient_dim == 2
    assert close(area.comass()["value"], 1.0, 1e-12)

    kahler = qcurve.Form(2, 4, [([1, 2], 1.0), ([3, 4], 1.0)])
    assert close(kahler.comass(seed=3)["value"], 1.0, 1e-3)

    ident = qcurve.Map.identity([0.0, 0.0], [1.0, 1.0])
    assert ident([0.25, 0.5]) == [0.25, 0.5]
    assert ident.distortion(area, [0.5, 0.5]) == 1.0

    cx = qcurve.Map.counterexample([-1.0, -1.0], [1.0, 1.0])
    assert (cx.n, cx.m) == (2, 3)
    jac = cx.jacobian([0.0, 0.0])
    assert len(jac) == 3 and len(jac[0]) == 2
    scan = qcurve.distortion_scan(cx, qcurve.Form(2, 3, [([1, 2], 1.0)]), 32)
    assert 1.0 <= scan["ess_sup_k"] < 3.0, scan

    mod = qcurve.discrete_modulus([0.0, 0.0], [2.0, 1.0], [32, 16], "left-edge", "right-edge")
    assert mod["lower_bound"] <= mod["modulus"]
    assert close(mod["modulus"], 0.5, 0.03), mod

    mesh = qcurve.SurfaceMesh(qcurve.Map.cylinder([0.0, 0.0], [math.pi, 1.0]), 16)
    assert close(mesh.area(), math.pi, 0.01)
    assert close(mesh.distance([0.5, 0.5], [2.5, 0.5]), 2.0, 0.01)

    cfg = qcurve.ExperimentConfig.load(CONFIGS / "identity.json")
    assert len(cfg.hash()) == 64
    res = cfg.run_check("measure-equality")
    assert res["pass"], res
    assert json.loads(cfg.to_json())["seed"] == 1

    try:
        qcurve.ExperimentConfig.from_json('{"map": 3}')
    except ValueError as e:
        assert "map" in str(e)
    else:
        raise AssertionError("bad config accepted")

    print(f"qcurve {qcurve.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
