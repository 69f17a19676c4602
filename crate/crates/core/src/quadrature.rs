//! Product quadrature on the unit sphere: Gauss–Legendre in `cos θ` times the
//! trapezoid rule in `φ`.

use std::f64::consts::PI;

use crate::cloud::Cloud;
use crate::observables::Direction;

#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    nodes: Vec<Direction>,
    weights: Vec<f64>,
    n_theta: usize,
    n_phi: usize,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n.
        let mut root = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, root);
            dp = d;
            let dx = p / d;
            root -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, root);
        dp = if d != 0.0 { d } else { dp };
        let weight = 2.0 / ((1.0 - root * root) * dp * dp);
        x[i] = -root;
        x[n - 1 - i] = root;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

impl Default for SphereQuadrature {
    /// 64 Gauss–Legendre nodes in `cos θ` by 128 trapezoid nodes in `φ`.
    fn default() -> Self {
        Self::product(64, 128)
    }
}

impl SphereQuadrature {
    pub fn product(n_theta: usize, n_phi: usize) -> Self {
        assert!(n_theta >= 1 && n_phi >= 1);
        let (u, wu) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (ui, wi) in u.iter().zip(&wu) {
            let theta = ui.clamp(-1.0, 1.0).acos();
            for k in 0..n_phi {
                nodes.push(Direction { theta, phi: k as f64 * dphi });
                weights.push(wi * dphi);
            }
        }
        SphereQuadrature {
            nodes,
            weights,
            n_theta,
            n_phi,
        }
    }

    /// A rule fine enough to resolve the far-field interference pattern of
    /// `cloud`, never coarser than the default.
    ///
    /// Sized from the largest distance `a` of an atom from the centroid: the
    /// integrand is band-limited to angular degree about `2a`, plus a margin
    /// for the Bessel tail.
    pub fn resolving(cloud: &Cloud) -> Self {
        let a = cloud.extent_about(cloud.centroid());
        let degree = (2.0 * a + 10.0 * (2.0 * a).cbrt() + 16.0).ceil() as usize;
        let n_theta = (degree / 2 + 1).max(64);
        let n_phi = (degree + 1).max(128);
        Self::product(n_theta, n_phi + n_phi % 2)
    }

    pub fn nodes(&self) -> &[Direction] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest spherical-harmonic degree integrated exactly.
    pub fn exact_degree(&self) -> usize {
        (2 * self.n_theta - 1).min(self.n_phi - 1)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_theta, self.n_phi)
    }

    pub fn integrate(&self, f: impl Fn(&Direction) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(d, w)| w * f(d)).sum()
    }
}
