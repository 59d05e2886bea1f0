//! Gauss-Legendre quadrature on intervals and collapsed-coordinate rules on
//! the reference triangle.
//!
//! The reference triangle is `T0 = {(r, s) : r >= 0, s >= 0, r + s <= 1}`.
//! Triangle rules are built from a tensor Gauss-Legendre grid on the unit
//! square through the map `(u, v) -> (u (1 - v), u v)` whose Jacobian is `u`,
//! so a rule declared exact to degree `d` integrates every monomial
//! `r^a s^b` with `a + b <= d` exactly.

/// Nodes and weights of an `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Nodes are computed by Newton iteration on the Legendre polynomial starting
/// from the Chebyshev-like initial guesses; they are accurate to machine
/// precision for the orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        // Descending cosine initial guesses produce ascending nodes this way.
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
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
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature rule on the unit interval `[0, 1]`.
#[derive(Debug, Clone)]
pub struct IntervalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl IntervalRule {
    /// Gauss-Legendre rule with `n` points mapped to `[0, 1]`.
    pub fn gauss(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        IntervalRule {
            nodes: x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
            weights: w.iter().map(|wi| 0.5 * wi).collect(),
        }
    }

    /// Smallest Gauss rule exact for polynomials of degree `d`.
    pub fn with_degree(d: usize) -> Self {
        Self::gauss(d / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Quadrature rule on the reference triangle `T0`.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// Barycentric-free reference coordinates `(r, s)`.
    pub points: Vec<(f64, f64)>,
    /// Weights summing to `area(T0) = 1/2`.
    pub weights: Vec<f64>,
    /// Degree of polynomial exactness the rule was built for.
    pub degree: usize,
}

impl TriangleRule {
    /// Rule exact for all polynomials of total degree `<= d` on `T0`.
    pub fn with_degree(d: usize) -> Self {
        let nu = (d + 2).div_ceil(2);
        let nv = (d + 1).div_ceil(2);
        let gu = IntervalRule::gauss(nu);
        let gv = IntervalRule::gauss(nv);
        let mut points = Vec::with_capacity(nu * nv);
        let mut weights = Vec::with_capacity(nu * nv);
        for (u, wu) in gu.nodes.iter().zip(&gu.weights) {
            for (v, wv) in gv.nodes.iter().zip(&gv.weights) {
                points.push((u * (1.0 - v), u * v));
                weights.push(wu * wv * u);
            }
        }
        TriangleRule { points, weights, degree: d }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
