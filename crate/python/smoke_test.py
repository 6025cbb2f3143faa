"""Smoke test for the etbc Python bindings.

Run after `maturin develop -m crates/python/Cargo.toml`, or point ETBC_LIB_DIR
at a directory holding a built `etbc` extension module.
"""

import math
import os
import sys
import tempfile

if os.environ.get("ETBC_LIB_DIR"):
    sys.path.insert(0, os.environ["ETBC_LIB_DIR"])

import etbc  # noqa: E402


def main():
    f = etbc.CoeffFn("case(x < 0.5, 0.2, 2 - x)")
    assert f([0.25]) == 0.2 and abs(f([0.75]) - 1.25) < 1e-15
    assert etbc.CoeffFn(f.source)([0.75]) == f([0.75])

    m = etbc.SystemModel.reference_example()
    _, tau_v0 = m.characteristic_times(0.0)
    assert abs(tau_v0 - 0.81093) < 1e-4, tau_v0

    n = 40
    p = etbc.Predictor(m, n)
    xs = [i / n for i in range(n + 1)]
    u = [0.5 * math.cos(3 * x) for x in xs]
    v = [0.3 * (1 - x) for x in xs]
    u[0] = -v[0]
    ubar = p.predict_ubar(u, v)
    up = p.solve_target(ubar, 0.1)[-1]
    assert abs(p.solve_vbar(ubar, up)[0] - 0.1) < 1e-10

    policy = etbc.TriggerPolicy.state_dependent(0.05, 0.25)
    run = etbc.run_event_triggered(m, policy, u, v, t_end=3.0)
    assert len(run["t"]) == len(run["norm"]) and run["events"]
    assert all(b[1] > a[1] for a, b in zip(run["events"], run["events"][1:]))
    assert not run["zeno_suspected"]

    try:
        etbc.TriggerPolicy.fixed(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative eps accepted")

    k_vu, k_vv = etbc.LinearSystemSpec("1", "1 + 0.5*x", "0.5", "1 + x", 0.5).kernels(16)
    assert len(k_vu) == len(k_vv) == 17

    assert "paper-example-event-triggered" in etbc.builtin_names()
    s = etbc.Scenario.load("pure-transport").with_n_cells(32)
    with tempfile.TemporaryDirectory() as d:
        code, out = s.run(d)
        assert code == 0 and os.path.exists(os.path.join(out, "summary.toml"))
    print("etbc smoke test passed")


if __name__ == "__main__":
    main()
