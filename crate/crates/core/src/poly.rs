//! Real polynomials in ascending coefficient order, plus the few complex
//! helpers the Laplace module needs.

use nalgebra::DMatrix;

use crate::expoly::C64;

/// Hard cap on polynomial degree; exceeding it signals a reduction failure.
pub const MAX_DEGREE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly::new(vec![0.0])
    }

    pub fn constant(c: f64) -> Self {
        Poly::new(vec![c])
    }

    /// `s - root` for a real root.
    pub fn linear(root: f64) -> Self {
        Poly::new(vec![-root, 1.0])
    }

    /// Monic polynomial with the given roots. Complex roots must come in
    /// conjugate pairs; the imaginary residue of the product is discarded.
    pub fn from_roots(roots: &[C64]) -> Self {
        let c = cpoly_from_roots(roots);
        Poly::new(c.iter().map(|z| z.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_c(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// `Σ |c_i| |z|^i`, the natural scale for judging `|p(z)|` small.
    pub fn abs_scale(&self, z: C64) -> f64 {
        let r = z.norm();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c.abs())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new(
            (0..n)
                .map(|i| self.coeffs.get(i).unwrap_or(&0.0) + other.coeffs.get(i).unwrap_or(&0.0))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn pow(&self, n: usize) -> Poly {
        (0..n).fold(Poly::constant(1.0), |acc, _| acc.mul(self))
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() == 1 {
            return Poly::zero();
        }
        Poly::new(self.coeffs.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect())
    }

    /// Quotient and remainder of polynomial long division.
    pub fn divrem(&self, divisor: &Poly) -> (Poly, Poly) {
        assert!(!divisor.is_zero(), "division by zero polynomial");
        let dd = divisor.degree();
        if self.degree() < dd {
            return (Poly::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let lead = divisor.leading();
        let mut quot = vec![0.0; self.degree() - dd + 1];
        for k in (0..quot.len()).rev() {
            let q = rem[k + dd] / lead;
            quot[k] = q;
            for (j, d) in divisor.coeffs.iter().enumerate() {
                rem[k + j] -= q * d;
            }
        }
        rem.truncate(dd.max(1));
        (Poly::new(quot), Poly::new(rem))
    }

    /// Drops trailing coefficients that are negligible relative to the rest.
    pub fn trim_relative(&self, tol: f64) -> Poly {
        let max = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mut c = self.coeffs.clone();
        while c.len() > 1 && c.last().unwrap().abs() <= tol * max {
            c.pop();
        }
        Poly::new(c)
    }

    /// All complex roots: companion-matrix eigenvalues followed by one
    /// Newton polish step. Exact zero roots are factored out first.
    pub fn roots(&self) -> Vec<C64> {
        let mut c: &[f64] = &self.coeffs;
        let mut roots = Vec::new();
        while c.len() > 1 && c[0] == 0.0 {
            roots.push(C64::new(0.0, 0.0));
            c = &c[1..];
        }
        let n = c.len() - 1;
        if n == 0 {
            return roots;
        }
        let lead = c[n];
        if n == 1 {
            roots.push(C64::new(-c[0] / lead, 0.0));
            return roots;
        }
        let mut comp = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            comp[(i, n - 1)] = -c[i] / lead;
        }
        let eig = comp.complex_eigenvalues();
        let p = Poly::new(c.to_vec());
        let dp = p.derivative();
        for z in eig.iter() {
            let mut z = *z;
            let d = dp.eval_c(z);
            if d.norm() > 0.0 {
                let step = p.eval_c(z) / d;
                let candidate = z - step;
                if p.eval_c(candidate).norm() <= p.eval_c(z).norm() {
                    z = candidate;
                }
            }
            if z.im.abs() <= 1e-14 * z.norm() {
                z.im = 0.0;
            }
            roots.push(z);
        }
        // conjugate symmetry for real polynomials
        conjugate_symmetrize(&mut roots);
        roots
    }
}

/// Makes a root list exactly conjugate-closed by pairing near-conjugates.
fn conjugate_symmetrize(roots: &mut [C64]) {
    let n = roots.len();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] || roots[i].im == 0.0 {
            continue;
        }
        let target = roots[i].conj();
        let partner = (0..n)
            .filter(|&j| j != i && !used[j])
            .min_by(|&a, &b| (roots[a] - target).norm().total_cmp(&(roots[b] - target).norm()));
        if let Some(j) = partner {
            let avg = (roots[i] + roots[j].conj()) * 0.5;
            roots[i] = avg;
            roots[j] = avg.conj();
            used[i] = true;
            used[j] = true;
        }
    }
}

/// Complex polynomial (ascending) with the given roots.
pub(crate) fn cpoly_from_roots(roots: &[C64]) -> Vec<C64> {
    let mut c = vec![C64::new(1.0, 0.0)];
    for r in roots {
        c = cpoly_mul(&c, &[-r, C64::new(1.0, 0.0)]);
    }
    c
}

pub(crate) fn cpoly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn cpoly_eval(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &k| acc * z + k)
}

/// Taylor coefficients of `p` about `z0`: `p(z0 + x) = Σ out[k] x^k`.
pub(crate) fn cpoly_shift(c: &[C64], z0: C64) -> Vec<C64> {
    let mut a = c.to_vec();
    let n = a.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            let hi = a[j + 1];
            a[j] += z0 * hi;
        }
    }
    a
}
