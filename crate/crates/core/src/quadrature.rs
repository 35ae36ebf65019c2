//! Quadrature rules: Gauss–Legendre, a product rule on S³ and Halton points.

use std::f64::consts::{PI, TAU};

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = mid - half * x;
        nodes[n - 1 - i] = mid + half * x;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Product rule on S³ in Hopf coordinates
/// `x = (√t cos a, √t sin a, √(1−t) cos b, √(1−t) sin b)`, where the surface
/// element is `dS = ½ dt da db`. Gauss–Legendre in `t`, trapezoid in `a`, `b`.
#[derive(Clone, Debug)]
pub struct S3Quadrature {
    t_nodes: Vec<f64>,
    t_weights: Vec<f64>,
    n_azimuth: usize,
}

impl S3Quadrature {
    pub fn new(n_t: usize, n_azimuth: usize) -> Self {
        let (t_nodes, t_weights) = gauss_legendre(n_t, 0.0, 1.0);
        S3Quadrature {
            t_nodes,
            t_weights,
            n_azimuth,
        }
    }

    pub fn len(&self) -> usize {
        self.t_nodes.len() * self.n_azimuth * self.n_azimuth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integrates `f` over S³ (total measure 2π²).
    pub fn integrate<F: FnMut([f64; 4]) -> f64>(&self, mut f: F) -> f64 {
        let h = TAU / self.n_azimuth as f64;
        let trig: Vec<(f64, f64)> = (0..self.n_azimuth)
            .map(|k| (k as f64 * h).sin_cos())
            .collect();
        let mut total = 0.0;
        for (&t, &wt) in self.t_nodes.iter().zip(&self.t_weights) {
            let (r1, r2) = (t.sqrt(), (1.0 - t).sqrt());
            let mut slice = 0.0;
            for &(sa, ca) in &trig {
                for &(sb, cb) in &trig {
                    slice += f([r1 * ca, r1 * sa, r2 * cb, r2 * sb]);
                }
            }
            total += wt * slice;
        }
        0.5 * h * h * total
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in the given prime base.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// `index`-th point of the Halton sequence in `dim <= 8` dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len());
    PRIMES[..dim]
        .iter()
        .map(|&p| radical_inverse(index, p))
        .collect()
}

/// Measure-preserving map from the unit cube onto S³ (uniform → uniform).
pub fn cube_to_s3(u: [f64; 3]) -> [f64; 4] {
    let (r1, r2) = (u[0].sqrt(), (1.0 - u[0]).sqrt());
    let (sa, ca) = (TAU * u[1]).sin_cos();
    let (sb, cb) = (TAU * u[2]).sin_cos();
    [r1 * ca, r1 * sa, r2 * cb, r2 * sb]
}
