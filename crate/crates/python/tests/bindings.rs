use std::ffi::CString;

use nlch::nlch as module;
use pyo3::prelude::*;

fn run(code: &str) -> PyResult<()> {
    pyo3::append_to_inittab!(module);
    Python::attach(|py| py.run(&CString::new(code).unwrap(), None, None))
}

#[test]
fn bindings_round_trip_through_python() {
    run(r#"
import nlch
grid = nlch.Grid([1.0], [32])
model = nlch.Model(grid, nlch.Kernel.homogeneous(1.5, 0.01), nlch.Potential.logarithmic(1.0, 2.0))
c = grid.sample("0.05*cos(pi*x1)")
m = sum(c) / len(c)
c = [v - m for v in c]
c1, rep = model.step(c, 1e-4)
assert rep["energy_after"] <= rep["energy_before"]
assert abs(sum(c1) - sum(c)) / len(c) < 1e-13
sol = model.solve_elliptic(c, theta=0.1)
assert sol["residual"] < 1e-8
try:
    model.step(c[:-1], 1e-4)
    raise AssertionError("size mismatch accepted")
except ValueError:
    pass
try:
    nlch.Potential.logarithmic(1.0, -1.0)
    raise AssertionError("bad potential accepted")
except ValueError:
    pass
"#)
    .unwrap();
}
