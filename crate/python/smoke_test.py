"""Smoke test for the Python bindings.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/soc_pinn-*.whl
then run `python python/smoke_test.py`.
"""

import json
import math
import tempfile
from pathlib import Path

import soc_pinn


def main() -> None:
    assert soc_pinn.BRANCH1_DIMS == [3, 16, 32, 16, 1]
    # 1C discharge for an hour empties a full cell
    assert math.isclose(soc_pinn.coulomb_count(1.0, -3.0, 3600.0, 3.0), 0.0, abs_tol=1e-12)

    err = soc_pinn.grad_check(soc_pinn.BRANCH2_DIMS, 7, [0.1, -0.4, 0.3, 0.8])
    assert err < 1e-4, err

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        spec = json.dumps({"id": "py", "profile": {"kind": "random", "duration_s": 900}})
        csvs = soc_pinn.generate_synth(tmp / "data", count=2, seed=1, spec_json=spec)
        assert len(csvs) == 2

        config = json.dumps({"epochs": 3, "data_horizon_s": 30, "physics_horizons": [30, 60]})
        model = soc_pinn.train(tmp / "data", tmp / "run", config_json=config)
        assert model.param_count == 2322
        assert json.loads(model.cost())["bytes_f32"] == 9288

        now, future = model.predict_cascaded(3.9, -3.0, 25.0, -3.0, 25.0, 30.0)
        assert math.isclose(now, model.estimate_soc_now(3.9, -3.0, 25.0))
        assert math.isclose(future, model.predict_soc_future(now, -3.0, 25.0, 30.0))

        reloaded = soc_pinn.Model.load(tmp / "run" / "checkpoint.json")
        assert reloaded.to_json() == model.to_json()

        report = json.loads(
            soc_pinn.evaluate(
                [("PINN-All", tmp / "run" / "checkpoint.json")],
                tmp / "data",
                [30.0, 60.0],
                ["cascaded", "teacher-forced"],
            )
        )
        assert {r["config"] for r in report["rows"]} == {"PINN-All", "Physics-Only"}

        traj = json.loads(soc_pinn.rollout(tmp / "data", "py_000", 30.0, mode="physics-only"))
        assert len(traj["predicted"]) == len(traj["truth"])

        try:
            soc_pinn.coulomb_count(1.0, -1.0, 10.0, 0.0)
        except ValueError:
            pass
        else:
            raise AssertionError("zero capacity accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
