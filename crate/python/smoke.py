"""Smoke test for the Python bindings.

Build first with `cargo build --release -p kausal-py`, then run
`python3 python/smoke.py` from the repository root.
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
LIB = os.path.join(ROOT, "target", "release", "libkausal.so")
HERE = os.path.dirname(os.path.abspath(__file__))

if not os.path.exists(LIB):
    sys.exit(f"missing {LIB}; run `cargo build --release -p kausal-py`")
shutil.copyfile(LIB, os.path.join(HERE, "kausal.so"))
sys.path.insert(0, HERE)

import kausal  # noqa: E402


def main():
    print("kausal", kausal.__version__)

    mu_c = kausal.critical_mu()
    assert abs(mu_c - 2.0 / 3.0) < 1e-4, mu_c

    times, states, labels = kausal.simulate(
        json.dumps({"kind": "coupled_rossler", "c1": 0.5, "c2": 0.0}), t1=10.0, dt=0.01
    )
    assert len(times) == len(states) == 1001
    assert len(labels) == 6 and all(len(r) == 6 for r in states)

    # Driven linear toy: e' = 0.9 e + 0.5 c, c is an independent AR(1).
    c, e = [0.3], [0.0]
    x = 0.12345
    for _ in range(399):
        x = (x * 997.0 + 0.3) % 1.0
        c.append(0.8 * c[-1] + (x - 0.5))
        e.append(0.9 * e[-1] + 0.5 * c[-2])
    rows = [[a, b] for a, b in zip(e, c)]
    delta, marg, joint = kausal.causal_measure(rows, [0], [1], [1, 2, 3])
    assert len(delta) == 3
    assert all(d > 0 for d in delta), delta
    assert all(j < m for m, j in zip(marg, joint))

    observed, p = kausal.identifiability_test(rows, [0], [1], permutations=20)
    assert observed > 0 and p <= 0.1, (observed, p)

    assert kausal.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    try:
        kausal.auroc([0.1, 0.2], [0, 0])
    except ValueError:
        pass
    else:
        raise AssertionError("single-class labels must raise")

    with tempfile.TemporaryDirectory() as out:
        cfg = os.path.join(ROOT, "configs", "enso_bifurcation.toml")
        manifest = json.loads(kausal.run(cfg, "stability", out))
        assert manifest["stage"] == "stability"
        assert math.isclose(manifest["summary"]["critical_mu"], mu_c, abs_tol=1e-4)

    print("smoke OK")


if __name__ == "__main__":
    main()
