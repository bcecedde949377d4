//! Gauss-Legendre rules and closed-form moments of `|z|^p` against the
//! autocorrelation of a box, `∫_C ∫_C g(x - y) dx dy = ∫ g(z) Π_d (h_d - |z_d|) dz`.

use std::f64::consts::{FRAC_PI_2, PI};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// `∫_a^b f` with an `n`-point Gauss-Legendre rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    rule.0.iter().zip(&rule.1).map(|(&t, &w)| w * f(m + r * t)).sum::<f64>() * r
}

/// `∫_{-h}^{h} |z|^p (h - |z|) dz` for `p > -1`.
pub fn segment_moment(h: f64, p: f64) -> f64 {
    2.0 * h.powf(p + 2.0) / ((p + 1.0) * (p + 2.0))
}

/// Angular weight for [`rect_moment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Angular {
    One,
    /// `cos²θ = z₁²/|z|²`
    Cos2,
    /// `sin²θ = z₂²/|z|²`
    Sin2,
}

/// `∫_{[-h₁,h₁]×[-h₂,h₂]} w(θ) |z|^p (h₁ - |z₁|)(h₂ - |z₂|) dz` for `p > -2`.
/// Radial integrals are exact; the angle uses Gauss-Legendre on the two
/// smooth pieces of each quadrant.
pub fn rect_moment(h: [f64; 2], p: f64, weight: Angular) -> f64 {
    let rule = gauss_legendre(48);
    let split = (h[1] / h[0]).atan();
    let radial = |th: f64| {
        let (s, c) = th.sin_cos();
        let r = if th < split { h[0] / c } else { h[1] / s };
        let w = match weight {
            Angular::One => 1.0,
            Angular::Cos2 => c * c,
            Angular::Sin2 => s * s,
        };
        w * (h[0] * h[1] * r.powf(p + 2.0) / (p + 2.0) - (h[0] * s + h[1] * c) * r.powf(p + 3.0) / (p + 3.0)
            + s * c * r.powf(p + 4.0) / (p + 4.0))
    };
    4.0 * (integrate(radial, 0.0, split, &rule) + integrate(radial, split, FRAC_PI_2, &rule))
}

/// `∫∫_{[0,1]^n × [0,1]^n} |x - y|^p dx dy`.
pub fn unit_cube_moment(n: usize, p: f64) -> f64 {
    match n {
        1 => segment_moment(1.0, p),
        2 => rect_moment([1.0, 1.0], p, Angular::One),
        _ => panic!("dimension {n} not supported"),
    }
}
