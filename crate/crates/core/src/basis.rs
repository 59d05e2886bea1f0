//! Orthonormal polynomial bases in monomial form.
//!
//! The element basis is the orthonormal Dubiner basis of the reference
//! triangle `T0 = {(r, s) : r, s >= 0, r + s <= 1}`, expanded into exact
//! monomial coefficients. The expansion avoids the collapsed-coordinate
//! singularity of the usual Duffy-type evaluation, so element polynomials can
//! be evaluated at arbitrary points of the plane; that is exactly what the
//! extrapolation operator onto extension patches requires.
//!
//! Per element, the reference basis is shifted, scaled, and divided by the
//! square root of the affine Jacobian determinant, which makes the physical
//! element mass matrix the identity. Edge traces use scaled Legendre
//! polynomials, orthonormal in the physical edge measure, with the edge
//! parameter oriented from the lower to the higher global vertex index.

use crate::{Point2, Vector2};

/// Bivariate polynomial in dense triangular monomial storage.
///
/// The coefficient of `x^i y^j` is stored at `idx(i, j) = T(i + j) + j` with
/// `T(d) = d (d + 1) / 2`.
#[derive(Debug, Clone)]
pub struct Poly2 {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

fn tri(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Number of monomials of total degree `<= d`.
pub fn dim_p(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

impl Poly2 {
    pub fn zero(degree: usize) -> Self {
        Poly2 { degree, coeffs: vec![0.0; dim_p(degree)] }
    }

    pub fn constant(c: f64) -> Self {
        Poly2 { degree: 0, coeffs: vec![c] }
    }

    #[inline]
    pub fn idx(i: usize, j: usize) -> usize {
        tri(i + j) + j
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j <= self.degree { self.coeffs[Self::idx(i, j)] } else { 0.0 }
    }

    pub fn set(&mut self, i: usize, j: usize, c: f64) {
        assert!(i + j <= self.degree);
        self.coeffs[Self::idx(i, j)] = c;
    }

    pub fn add_scaled(&mut self, other: &Poly2, factor: f64) {
        assert!(other.degree <= self.degree);
        for d in 0..=other.degree {
            for j in 0..=d {
                self.coeffs[tri(d) + j] += factor * other.coeffs[tri(d) + j];
            }
        }
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let mut out = Poly2::zero(self.degree + other.degree);
        for da in 0..=self.degree {
            for ja in 0..=da {
                let ca = self.coeffs[tri(da) + ja];
                if ca == 0.0 {
                    continue;
                }
                let ia = da - ja;
                for db in 0..=other.degree {
                    for jb in 0..=db {
                        let cb = other.coeffs[tri(db) + jb];
                        if cb == 0.0 {
                            continue;
                        }
                        let ib = db - jb;
                        out.coeffs[Poly2::idx(ia + ib, ja + jb)] += ca * cb;
                    }
                }
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }

    /// Partial derivative with respect to the first variable.
    pub fn dx(&self) -> Poly2 {
        let deg = self.degree.saturating_sub(1);
        let mut out = Poly2::zero(deg);
        for d in 1..=self.degree {
            for j in 0..=d {
                let i = d - j;
                if i >= 1 {
                    let c = self.coeffs[tri(d) + j];
                    if c != 0.0 {
                        out.coeffs[Poly2::idx(i - 1, j)] += i as f64 * c;
                    }
                }
            }
        }
        out
    }

    /// Partial derivative with respect to the second variable.
    pub fn dy(&self) -> Poly2 {
        let deg = self.degree.saturating_sub(1);
        let mut out = Poly2::zero(deg);
        for d in 1..=self.degree {
            for j in 1..=d {
                let c = self.coeffs[tri(d) + j];
                if c != 0.0 {
                    out.coeffs[Poly2::idx(d - j, j - 1)] += j as f64 * c;
                }
            }
        }
        out
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut xp = vec![1.0; self.degree + 1];
        let mut yp = vec![1.0; self.degree + 1];
        for d in 1..=self.degree {
            xp[d] = xp[d - 1] * x;
            yp[d] = yp[d - 1] * y;
        }
        let mut acc = 0.0;
        for d in 0..=self.degree {
            for j in 0..=d {
                let c = self.coeffs[tri(d) + j];
                if c != 0.0 {
                    acc += c * xp[d - j] * yp[j];
                }
            }
        }
        acc
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Shifted Legendre factor `(1 - s)^m P_m(2 r / (1 - s) - 1)` as a polynomial
/// in `(r, s)`, via `2^{-m} sum_j C(m,j)^2 (2 (r + s - 1))^j (2 r)^{m - j}`.
fn legendre_factor(m: usize) -> Poly2 {
    let mut acc = Poly2::zero(m);
    // Base polynomials for the powers.
    let mut a = Poly2::zero(1); // 2 (r + s - 1)
    a.set(0, 0, -2.0);
    a.set(1, 0, 2.0);
    a.set(0, 1, 2.0);
    let mut b = Poly2::zero(1); // 2 r
    b.set(1, 0, 2.0);
    for j in 0..=m {
        let mut term = Poly2::constant(binomial(m, j).powi(2) * 0.5f64.powi(m as i32));
        for _ in 0..j {
            term = term.mul(&a);
        }
        for _ in 0..(m - j) {
            term = term.mul(&b);
        }
        let mut padded = Poly2::zero(m);
        padded.add_scaled(&term, 1.0);
        acc.add_scaled(&padded, 1.0);
    }
    acc
}

/// Jacobi polynomial `P_n^{(alpha, 0)}(2 s - 1)` as a polynomial in `s`,
/// via `sum_i C(n + alpha, i) C(n, n - i) (s - 1)^{n - i} s^i`.
fn jacobi_factor(n: usize, alpha: usize) -> Poly2 {
    let mut acc = Poly2::zero(n);
    let mut s_minus_1 = Poly2::zero(1);
    s_minus_1.set(0, 0, -1.0);
    s_minus_1.set(0, 1, 1.0);
    let mut s = Poly2::zero(1);
    s.set(0, 1, 1.0);
    for i in 0..=n {
        let c = binomial(n + alpha, i) * binomial(n, n - i);
        if c == 0.0 {
            continue;
        }
        let mut term = Poly2::constant(c);
        for _ in 0..(n - i) {
            term = term.mul(&s_minus_1);
        }
        for _ in 0..i {
            term = term.mul(&s);
        }
        let mut padded = Poly2::zero(n);
        padded.add_scaled(&term, 1.0);
        acc.add_scaled(&padded, 1.0);
    }
    acc
}

/// Orthonormal basis of `P_k` on the reference triangle with exact monomial
/// coefficients and exact gradients.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub k: usize,
    pub polys: Vec<Poly2>,
    pub grad_r: Vec<Poly2>,
    pub grad_s: Vec<Poly2>,
}

impl ReferenceBasis {
    pub fn new(k: usize) -> Self {
        let mut polys = Vec::with_capacity(dim_p(k));
        for d in 0..=k {
            for n in 0..=d {
                let m = d - n;
                let norm = (2.0 * (2 * m + 1) as f64 * (m + n + 1) as f64).sqrt();
                let mut p = legendre_factor(m).mul(&jacobi_factor(n, 2 * m + 1));
                p.scale(norm);
                let mut padded = Poly2::zero(k);
                padded.add_scaled(&p, 1.0);
                polys.push(padded);
            }
        }
        let grad_r = polys.iter().map(Poly2::dx).collect();
        let grad_s = polys.iter().map(Poly2::dy).collect();
        ReferenceBasis { k, polys, grad_r, grad_s }
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn eval(&self, i: usize, r: f64, s: f64) -> f64 {
        self.polys[i].eval(r, s)
    }

    pub fn grad(&self, i: usize, r: f64, s: f64) -> Vector2 {
        Vector2::new(self.grad_r[i].eval(r, s), self.grad_s[i].eval(r, s))
    }
}

/// Affine frame of a physical triangle with the scaling that keeps the pushed
/// reference basis orthonormal in the physical `L^2` inner product.
#[derive(Debug, Clone, Copy)]
pub struct ElementFrame {
    pub origin: Point2,
    /// Columns are the edge vectors `b - a` and `c - a`.
    pub jac: nalgebra::Matrix2<f64>,
    pub inv_jac: nalgebra::Matrix2<f64>,
    pub det_jac: f64,
    /// `1 / sqrt(det_jac)`; multiplies values so the mass matrix is identity.
    pub value_scale: f64,
}

impl ElementFrame {
    pub fn new(a: Point2, b: Point2, c: Point2) -> Self {
        let jac = nalgebra::Matrix2::from_columns(&[b - a, c - a]);
        let det_jac = jac.determinant();
        assert!(det_jac > 0.0, "element vertices must be counterclockwise");
        let inv_jac = jac.try_inverse().expect("nondegenerate element");
        ElementFrame { origin: a, jac, inv_jac, det_jac, value_scale: det_jac.sqrt().recip() }
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det_jac
    }

    /// Reference coordinates of a physical point (valid anywhere, which is
    /// what makes extrapolation onto extension patches a plain evaluation).
    pub fn to_reference(&self, x: Point2) -> (f64, f64) {
        let rs = self.inv_jac * (x - self.origin);
        (rs.x, rs.y)
    }

    pub fn to_physical(&self, r: f64, s: f64) -> Point2 {
        self.origin + self.jac * Vector2::new(r, s)
    }

    /// Physical value of basis function `i` at a physical point.
    pub fn value(&self, basis: &ReferenceBasis, i: usize, x: Point2) -> f64 {
        let (r, s) = self.to_reference(x);
        basis.eval(i, r, s) * self.value_scale
    }

    /// Physical gradient of basis function `i` at a physical point.
    pub fn gradient(&self, basis: &ReferenceBasis, i: usize, x: Point2) -> Vector2 {
        let (r, s) = self.to_reference(x);
        self.inv_jac.transpose() * basis.grad(i, r, s) * self.value_scale
    }

    /// Value of the polynomial with the given coefficients at any physical
    /// point, inside or outside the element.
    pub fn eval_coeffs(&self, basis: &ReferenceBasis, coeffs: &[f64], x: Point2) -> f64 {
        let (r, s) = self.to_reference(x);
        let mut acc = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            acc += c * basis.eval(i, r, s);
        }
        acc * self.value_scale
    }

    /// Gradient of the polynomial with the given coefficients at any
    /// physical point.
    pub fn grad_coeffs(&self, basis: &ReferenceBasis, coeffs: &[f64], x: Point2) -> Vector2 {
        let (r, s) = self.to_reference(x);
        let mut acc = Vector2::zeros();
        for (i, c) in coeffs.iter().enumerate() {
            acc += basis.grad(i, r, s) * *c;
        }
        self.inv_jac.transpose() * acc * self.value_scale
    }
}

/// Orthonormal Legendre trace basis on a physical edge.
///
/// The edge parameter runs from the endpoint with the lower global vertex
/// index (`t = 0`) to the higher one (`t = 1`), so the two elements sharing
/// an interior edge agree on the orientation.
#[derive(Debug, Clone)]
pub struct EdgeBasis {
    pub k: usize,
    pub length: f64,
}

impl EdgeBasis {
    pub fn new(k: usize, length: f64) -> Self {
        assert!(length > 0.0);
        EdgeBasis { k, length }
    }

    pub fn len(&self) -> usize {
        self.k + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Value of trace function `m` at edge parameter `t` in `[0, 1]`.
    pub fn value(&self, m: usize, t: f64) -> f64 {
        let xi = 2.0 * t - 1.0;
        let (p, _) = legendre_value(m, xi);
        ((2 * m + 1) as f64 / self.length).sqrt() * p
    }
}

fn legendre_value(n: usize, x: f64) -> (f64, f64) {
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
    (p1, p0)
}
