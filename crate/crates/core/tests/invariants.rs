//! Property tests for the invariants each module promises.

use std::sync::OnceLock;

use proptest::prelude::*;

use nlch_core::boundary::cone;
use nlch_core::diagnostics::energy;
use nlch_core::elliptic::EllipticProblem;
use nlch_core::expr::Expr;
use nlch_core::io::parse_config;
use nlch_core::operator::{assemble_coupling, mean, project_mean_zero, CouplingMatrix};
use nlch_core::timestepper::{step, SchemeConfig};
use nlch_core::{Grid, Kernel, Model, NeumannLaplacian, Potential, State};

const N: usize = 24;

fn grid() -> Grid {
    Grid::new(&[1.0], &[N]).unwrap()
}

fn coupling() -> &'static CouplingMatrix {
    static C: OnceLock<CouplingMatrix> = OnceLock::new();
    C.get_or_init(|| assemble_coupling(&grid(), &Kernel::homogeneous(1.5, 1.0).unwrap(), 4).unwrap())
}

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| Model::new(grid(), Kernel::homogeneous(1.5, 0.01).unwrap(), Potential::logarithmic(1.0, 2.0).unwrap(), 4).unwrap())
}

fn field() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, N)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [0.0f64..1.0, 0.0f64..1.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetrized_kernel_is_symmetric(x in point(), y in point()) {
        prop_assume!((x[0] - y[0]).hypot(x[1] - y[1]) > 1e-6);
        let g = Expr::parse("1 + 0.4*sin(2*x1 + y2) + 0.1*x2").unwrap();
        let k = Kernel::modulated(1.3, 1.0, g, 0.5, 1.5).unwrap().symmetrize();
        let (a, b) = (k.value(&x, &y), k.value(&y, &x));
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn modulated_kernel_respects_declared_bounds(x in point(), y in point(), alpha in 1.01f64..1.99) {
        let r = (x[0] - y[0]).hypot(x[1] - y[1]);
        prop_assume!(r > 1e-6);
        let k = Kernel::modulated(alpha, 1.0, Expr::parse("1 + 0.5*cos(3*x1*x2)").unwrap(), 0.5, 1.5).unwrap();
        let ratio = k.value(&x, &y) * r.powf(2.0 + alpha);
        prop_assert!((0.5..=1.5).contains(&ratio), "{}", ratio);
    }

    #[test]
    fn homogeneous_kernel_scales(s in 1e-3f64..0.4, alpha in 1.01f64..1.99, dir in 0.0f64..std::f64::consts::TAU) {
        let k = Kernel::homogeneous(alpha, 1.0).unwrap();
        let x = [0.3, 0.4];
        let at = |t: f64| k.value(&x, &[x[0] + t * dir.cos(), x[1] + t * dir.sin()]);
        let expected = 2f64.powf(-2.0 - alpha) * at(s);
        prop_assert!((at(2.0 * s) - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn logarithmic_potential_derivatives_are_consistent(s in -0.99f64..0.99, t_abs in 0.2f64..1.5) {
        let p = Potential::logarithmic(t_abs, 2.0).unwrap();
        let eps = 1e-5;
        let f = |s: f64| p.f_interior(s);
        let fd1 = (f(s + eps).value - f(s - eps).value) / (2.0 * eps);
        let fd2 = (f(s + eps).first - f(s - eps).first) / (2.0 * eps);
        prop_assert!((f(s).first - fd1).abs() <= 1e-6 * (1.0 + f(s).first.abs()));
        prop_assert!((f(s).second - fd2).abs() <= 1e-6 * (1.0 + f(s).second.abs()));
        let phi = |s: f64| p.phi_interior(s);
        let pd2 = (phi(s + eps).first - phi(s - eps).first) / (2.0 * eps);
        prop_assert!((phi(s).second - pd2).abs() <= 1e-6 * (1.0 + phi(s).second.abs()));
        prop_assert!(phi(s).second >= -1e-12);
        prop_assert!((f(-s).value - f(s).value).abs() <= 1e-14 * (1.0 + f(s).value.abs()));
        prop_assert!((f(-s).first + f(s).first).abs() <= 1e-12 * (1.0 + f(s).first.abs()));
    }

    #[test]
    fn coupling_duality_and_semidefiniteness(u in field(), v in field(), shift in -3.0f64..3.0) {
        let cm = coupling();
        let vol = cm.vol();
        let lhs = dot(&cm.apply(&u).unwrap(), &v) * vol;
        let rhs = cm.bilinear(&u, &v).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        prop_assert!(cm.energy(&u) >= 0.0);
        let shifted: Vec<f64> = u.iter().map(|x| x + shift).collect();
        prop_assert!((cm.energy(&shifted) - cm.energy(&u)).abs() <= 1e-10 * (1.0 + cm.energy(&u)));
        prop_assert!(cm.apply(&[shift; N]).unwrap().iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn elliptic_solution_is_mean_zero_and_optimal(g in field(), theta in 0.0f64..0.5, dirs in prop::collection::vec(field(), 10)) {
        let g = project_mean_zero(&g);
        let neumann = NeumannLaplacian::new(&grid());
        let p = EllipticProblem::new(coupling(), &neumann, theta, g, 1e-12).unwrap();
        let u = p.solve().unwrap().u;
        prop_assert!(mean(&u).abs() <= 1e-12);
        let j0 = p.objective(&u);
        for d in dirs {
            let d = project_mean_zero(&d);
            let v: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + 1e-3 * b).collect();
            prop_assert!(p.objective(&v) >= j0 - 1e-12 * (1.0 + j0.abs()));
        }
    }

    #[test]
    fn step_conserves_mass_and_dissipates(u in prop::collection::vec(-0.3f64..0.3, N), m in -0.4f64..0.4, dt in 1e-5f64..1e-3) {
        let c: Vec<f64> = project_mean_zero(&u).iter().map(|x| x + m).collect();
        let state = State::new(c, 0.0).unwrap();
        let model = model();
        let before = energy(model, &state.c, 0.0);
        prop_assert!(before.nonlocal >= 0.0 && before.gradient >= 0.0);
        prop_assert!((before.total - (before.nonlocal + before.gradient + before.bulk)).abs() <= 1e-14 * (1.0 + before.total.abs()));
        let (next, report) = step(model, &state, &SchemeConfig::new(dt)).unwrap();
        prop_assert!((mean(&next.c) - mean(&state.c)).abs() <= 1e-13);
        prop_assert!(report.energy_after <= report.energy_before + 1e-10);
        prop_assert!(next.c.iter().all(|&s| s > -1.0 && s < 1.0));
    }

    #[test]
    fn cone_is_bounded_and_lipschitz(x in point(), y in point(), delta in 0.01f64..0.5) {
        let x0 = [0.5, 0.0];
        let (a, b) = (cone(&x, &x0, delta), cone(&y, &x0, delta));
        prop_assert!((0.0..=1.0).contains(&a));
        let d = (x[0] - y[0]).hypot(x[1] - y[1]);
        prop_assert!((a - b).abs() <= d / delta + 1e-12);
    }

    #[test]
    fn config_parser_never_panics(src in "[\\[\\]a-z_=\\.0-9\" \n-]{0,200}") {
        let _ = parse_config(&src, &[]);
    }
}
