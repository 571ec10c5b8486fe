"""Smoke test for the `fornits` extension module.

Builds the library with cargo, copies it next to a temporary import path
and exercises the main entry points.
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def build() -> pathlib.Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "fornits-py"], cwd=ROOT, check=True
    )
    lib = ROOT / "target" / "release" / "libfornits.so"
    out = pathlib.Path(tempfile.mkdtemp()) / "fornits.so"
    shutil.copy(lib, out)
    return out.parent


def main() -> None:
    sys.path.insert(0, str(build()))
    import fornits

    p = fornits.fit_extrapolation([0.0, 1.0, 2.0], [1.0, 3.0, 7.0])
    assert p.degree == 2
    assert abs(p(3.0) - 13.0) < 1e-12, p

    cls = fornits.fit_cls([0.0, 1.0, 2.0], [0.0, 0.0, 6.0])
    assert abs(cls(2.0) - 6.0) < 1e-12
    assert abs(cls(3.0) - 9.6) < 1e-12

    h = fornits.fit_hermite(0.0, 1.0, 1.0, 2.0, 0.0, 0.0)
    assert abs(h.derivative(0.0)) < 1e-12 and abs(h(1.0) - 2.0) < 1e-12

    assert fornits.classify(0, 1) == "NI"
    assert fornits.classify(2, 2) == "IO"

    order, errors = fornits.select_order([0.0, 1.0, 2.0], [0.0, 2.0, 4.0], 3.0, 6.0)
    assert order == 1 and errors[1] < 1e-12, (order, errors)

    try:
        fornits.fit_extrapolation([1.0, 0.0], [1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("unordered times accepted")

    cfg = 'model = "two_mass"\nmethod = "f3ornits"\n[param]\nt_end = 20.0\nt_switch = 10.0\n'
    trace = fornits.run(cfg)
    assert trace.labels == ["left_mass", "right_mass"]
    times, states = fornits.reference(cfg)
    x1_ref = [s[0] for s in states[0][1]]
    x1 = trace.dense("left_mass", 0)
    assert len(x1) == len(x1_ref) == len(times)
    err = fornits.rmse_percent(x1, x1_ref)
    assert math.isfinite(err) and err < 1.0, err

    rows = fornits.compare(cfg)
    assert len(rows) == 17
    print(f"{trace!r}: rmse(x1) = {err:.4f}%")
    for label, steps, rmse in rows:
        print(f"  {label:<40} {steps:>7} {rmse:>12.4g}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
