//! Rational functions of the Laplace variable.
//!
//! A [`RationalLT`] keeps its numerator as real coefficients and its monic
//! denominator in factored form (poles with multiplicities). Keeping poles
//! explicit makes common-denominator arithmetic exact and lets inversion go
//! straight to partial fractions without re-solving for roots.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expoly::{factorial, ExpPoly, Term, C64};
use crate::poly::{cpoly_from_roots, cpoly_shift, Poly, MAX_DEGREE};

/// Relative tolerance for recognizing a numerator root at a pole.
const CANCEL_TOL: f64 = 1e-8;
/// Relative distance below which two poles are the same pole.
const POLE_MATCH_REL: f64 = 1e-9;
/// Rounding amplification of the partial-fraction form above which a
/// conditioning warning is attached.
const MAX_AMPLIFICATION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pole {
    pub value: C64,
    pub mult: usize,
}

fn poles_match(a: C64, b: C64) -> bool {
    let scale = a.norm().max(b.norm());
    scale == 0.0 || (a - b).norm() <= POLE_MATCH_REL * scale
}

/// Proper rational function `num(s) / Π (s - p)^mult`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalLT {
    num: Poly,
    poles: Vec<Pole>,
}

/// Result of [`invert_lt`]: the time-domain function plus an optional
/// conditioning warning for clustered poles.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub density: ExpPoly,
    pub warning: Option<String>,
}

impl RationalLT {
    pub fn zero() -> Self {
        RationalLT { num: Poly::zero(), poles: Vec::new() }
    }

    /// The constant function `c` (proper but not strictly proper).
    pub fn constant(c: f64) -> Self {
        RationalLT { num: Poly::constant(c), poles: Vec::new() }
    }

    /// Builds `num / (lead · Π (s - root))`. Roots closer to zero than
    /// `1e-11` of the largest root are snapped to the origin.
    pub fn from_num_roots(num: Poly, lead: f64, roots: &[C64]) -> Result<Self> {
        let max = roots.iter().map(|r| r.norm()).fold(0.0, f64::max);
        let mut poles: Vec<Pole> = Vec::new();
        for &r in roots {
            let r = if r.norm() <= 1e-11 * max { C64::new(0.0, 0.0) } else { r };
            match poles.iter_mut().find(|p| poles_match(p.value, r)) {
                Some(p) => p.mult += 1,
                None => poles.push(Pole { value: r, mult: 1 }),
            }
        }
        let mut out = RationalLT { num: num.scale(1.0 / lead), poles };
        out.reduce()?;
        Ok(out)
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn poles(&self) -> &[Pole] {
        &self.poles
    }

    /// Monic denominator in coefficient form.
    pub fn denominator(&self) -> Poly {
        Poly::from_roots(&self.pole_list())
    }

    fn pole_list(&self) -> Vec<C64> {
        self.poles.iter().flat_map(|p| std::iter::repeat(p.value).take(p.mult)).collect()
    }

    pub fn den_degree(&self) -> usize {
        self.poles.iter().map(|p| p.mult).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn eval(&self, s: C64) -> C64 {
        let mut den = C64::new(1.0, 0.0);
        for p in &self.poles {
            den *= (s - p.value).powi(p.mult as i32);
        }
        self.num.eval_c(s) / den
    }

    /// Value at `s = 0`; for a density transform this is the total mass.
    pub fn at_zero(&self) -> f64 {
        self.eval(C64::new(0.0, 0.0)).re
    }

    pub fn scale(&self, k: f64) -> RationalLT {
        if k == 0.0 {
            return RationalLT::zero();
        }
        RationalLT { num: self.num.scale(k), poles: self.poles.clone() }
    }

    pub fn neg(&self) -> RationalLT {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &RationalLT) -> Result<RationalLT> {
        if self.is_zero() {
            return Ok(other.clone());
        }
        if other.is_zero() {
            return Ok(self.clone());
        }
        let lcm = merge_poles(&self.poles, &other.poles, |a, b| a.max(b));
        let a = self.num.mul(&cofactor(&lcm, &self.poles));
        let b = other.num.mul(&cofactor(&lcm, &other.poles));
        let mut out = RationalLT { num: a.add(&b), poles: lcm };
        out.reduce()?;
        Ok(out)
    }

    pub fn sub(&self, other: &RationalLT) -> Result<RationalLT> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &RationalLT) -> Result<RationalLT> {
        if self.is_zero() || other.is_zero() {
            return Ok(RationalLT::zero());
        }
        let poles = merge_poles(&self.poles, &other.poles, |a, b| a + b);
        let mut out = RationalLT { num: self.num.mul(&other.num), poles };
        out.reduce()?;
        Ok(out)
    }

    /// `1 / self`; requires equal numerator and denominator degree.
    pub fn recip(&self) -> Result<RationalLT> {
        if self.is_zero() {
            return Err(Error::Structural("reciprocal of a zero transform".into()));
        }
        if self.num.degree() != self.den_degree() {
            return Err(Error::Capability("reciprocal of a strictly proper transform is improper".into()));
        }
        RationalLT::from_num_roots(self.denominator(), self.num.leading(), &self.num.roots())
    }

    /// Cancels numerator roots that coincide with poles and enforces the
    /// degree cap and properness.
    pub fn reduce(&mut self) -> Result<()> {
        self.num = self.num.trim_relative(1e-14);
        if self.num.is_zero() {
            self.poles.clear();
            return Ok(());
        }
        let mut i = 0;
        while i < self.poles.len() {
            let p = self.poles[i].value;
            if p.im < 0.0 {
                i += 1;
                continue;
            }
            let conj_idx = if p.im > 0.0 {
                self.poles.iter().position(|q| poles_match(q.value, p.conj()))
            } else {
                None
            };
            while self.poles[i].mult > 0 && self.num.degree() > 0 {
                let val = self.num.eval_c(p).norm();
                if val > CANCEL_TOL * self.num.abs_scale(p) {
                    break;
                }
                let divisor = if p.im > 0.0 {
                    Poly::new(vec![p.norm_sqr(), -2.0 * p.re, 1.0])
                } else {
                    Poly::linear(p.re)
                };
                self.num = self.num.divrem(&divisor).0;
                self.poles[i].mult -= 1;
                if let Some(j) = conj_idx {
                    self.poles[j].mult -= 1;
                }
            }
            i += 1;
        }
        self.poles.retain(|p| p.mult > 0);
        let dd = self.den_degree();
        if dd > MAX_DEGREE {
            return Err(Error::Capability(format!("denominator degree {dd} exceeds cap {MAX_DEGREE}")));
        }
        if self.num.degree() > dd {
            return Err(Error::Capability(format!(
                "improper rational function (numerator degree {} > denominator degree {dd})",
                self.num.degree()
            )));
        }
        Ok(())
    }
}

/// Merges two pole lists, combining multiplicities of shared poles with `f`.
fn merge_poles(a: &[Pole], b: &[Pole], f: impl Fn(usize, usize) -> usize) -> Vec<Pole> {
    let mut out: Vec<Pole> = a.to_vec();
    for q in b {
        match out.iter_mut().find(|p| poles_match(p.value, q.value)) {
            Some(p) => p.mult = f(p.mult, q.mult),
            None => out.push(*q),
        }
    }
    out
}

/// `Π (s - p)^(mult_lcm - mult_part)` as a real polynomial.
fn cofactor(lcm: &[Pole], part: &[Pole]) -> Poly {
    let mut roots = Vec::new();
    for p in lcm {
        let used = part.iter().find(|q| poles_match(q.value, p.value)).map_or(0, |q| q.mult);
        roots.extend(std::iter::repeat(p.value).take(p.mult - used));
    }
    Poly::from_roots(&roots)
}

/// Exact Laplace transform of an exponential polynomial:
/// `c t^m e^{-ρt} ↦ c m! / (s + ρ)^{m+1}`.
pub fn lt_of(f: &ExpPoly) -> RationalLT {
    let mut poles: Vec<Pole> = Vec::new();
    for t in f.terms() {
        let p = -t.rate;
        match poles.iter_mut().find(|q| poles_match(q.value, p)) {
            Some(q) => q.mult = q.mult.max(t.power as usize + 1),
            None => poles.push(Pole { value: p, mult: t.power as usize + 1 }),
        }
    }
    let den_roots: Vec<C64> = poles.iter().flat_map(|p| std::iter::repeat(p.value).take(p.mult)).collect();
    let mut num = vec![C64::new(0.0, 0.0); den_roots.len().max(1)];
    for t in f.terms() {
        let p = -t.rate;
        let mut roots = Vec::new();
        for q in &poles {
            let k = if poles_match(q.value, p) { q.mult - (t.power as usize + 1) } else { q.mult };
            roots.extend(std::iter::repeat(q.value).take(k));
        }
        let c = cpoly_from_roots(&roots);
        let scale = t.coeff * factorial(t.power);
        for (i, ci) in c.iter().enumerate() {
            num[i] += scale * ci;
        }
    }
    if f.atom() != 0.0 {
        let den = cpoly_from_roots(&den_roots);
        if num.len() < den.len() {
            num.resize(den.len(), C64::new(0.0, 0.0));
        }
        for (i, d) in den.iter().enumerate() {
            num[i] += d * f.atom();
        }
    }
    let num = Poly::new(num.iter().map(|z| z.re).collect());
    let mut out = RationalLT { num, poles };
    // reduction never fails for transforms of valid exp-polys
    out.reduce().expect("transform of an exponential polynomial is proper");
    out
}

/// Inverts a strictly proper rational transform by partial fractions.
/// Every pole must lie in the open left half plane.
pub fn invert_lt(r: &RationalLT) -> Result<Inversion> {
    invert_impl(r, false)
}

/// Like [`invert_lt`] but admits a simple pole at the origin, which
/// inverts to a constant. Renewal densities have exactly this form.
pub fn invert_lt_with_origin(r: &RationalLT) -> Result<Inversion> {
    invert_impl(r, true)
}

fn invert_impl(r: &RationalLT, allow_origin: bool) -> Result<Inversion> {
    if r.is_zero() {
        return Ok(Inversion { density: ExpPoly::zero(), warning: None });
    }
    if r.num.degree() >= r.den_degree() {
        return Err(Error::InvalidInput("transform is not strictly proper".into()));
    }
    let num_c: Vec<C64> = r.num.coeffs().iter().map(|&c| C64::new(c, 0.0)).collect();
    let mut terms = Vec::new();
    for (idx, pole) in r.poles.iter().enumerate() {
        let p = pole.value;
        if p.im < 0.0 {
            continue; // handled with its conjugate
        }
        let m = pole.mult;
        let others: Vec<C64> = r
            .poles
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .flat_map(|(_, q)| std::iter::repeat(q.value).take(q.mult))
            .collect();
        // expanded about p from the root differences, free of cancellation
        let q_shift = cpoly_from_roots(&others.iter().map(|q| q - p).collect::<Vec<_>>());
        let n_shift = cpoly_shift(&num_c, p);
        let q0 = q_shift[0];
        let get = |v: &[C64], k: usize| v.get(k).copied().unwrap_or(C64::new(0.0, 0.0));
        let mut a = Vec::with_capacity(m);
        for k in 0..m {
            let mut acc = get(&n_shift, k);
            for j in 1..=k {
                acc -= get(&q_shift, j) * a[k - j];
            }
            a.push(acc / q0);
        }
        let residue_scale = r.num.abs_scale(p) / q0.norm().max(1e-300);
        let at_origin = p.norm() == 0.0;
        if p.re >= 0.0 && !(allow_origin && at_origin && m == 1) {
            if a.iter().any(|ak| ak.norm() > 1e-12 * residue_scale.max(1e-300)) {
                return Err(Error::UnstablePole { re: p.re, im: p.im });
            }
            continue;
        }
        for (k, ak) in a.iter().enumerate() {
            let power = (m - k - 1) as u32;
            let coeff = ak / factorial(power);
            terms.push(Term { coeff, power, rate: -p });
            if p.im > 0.0 {
                terms.push(Term { coeff: coeff.conj(), power, rate: -p.conj() });
            }
        }
    }
    let density = ExpPoly::from_terms(terms);
    let amp = amplification(&density);
    let warning = (amp > MAX_AMPLIFICATION).then(|| format!("partial fractions amplify rounding by {amp:.1e}; poles are clustered"));
    Ok(Inversion { density, warning })
}

/// `∫ Σ|terms| / |∫ Σ terms|` over the decaying terms: the factor by which
/// evaluating the exp-poly form amplifies rounding of its coefficients.
pub fn amplification(f: &ExpPoly) -> f64 {
    let decaying = f.terms().iter().filter(|t| t.rate.re > 0.0);
    let abs: f64 = decaying.clone().map(|t| t.coeff.norm() * factorial(t.power) / t.rate.re.powi(t.power as i32 + 1)).sum();
    let signed: f64 = decaying.map(|t| (t.coeff * factorial(t.power) / t.rate.powi(t.power as i32 + 1)).re).sum();
    if abs == 0.0 {
        1.0
    } else {
        abs / signed.abs().max(abs * f64::EPSILON)
    }
}

/// Matrix of rational transforms, row-major.
pub type RationalMatrix = Vec<Vec<RationalLT>>;

pub fn mat_mul(a: &RationalMatrix, b: &RationalMatrix) -> Result<RationalMatrix> {
    let n = a.len();
    let k = b.len();
    let m = b.first().map_or(0, |r| r.len());
    let mut out = vec![vec![RationalLT::zero(); m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = RationalLT::zero();
            for l in 0..k {
                if a[i][l].is_zero() || b[l][j].is_zero() {
                    continue;
                }
                acc = acc.add(&a[i][l].mul(&b[l][j])?)?;
            }
            out[i][j] = acc;
        }
    }
    Ok(out)
}

pub fn mat_add(a: &RationalMatrix, b: &RationalMatrix) -> Result<RationalMatrix> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.add(y)).collect())
        .collect()
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Geometric (Neumann) series `Σ_k d^k = (I - d)^{-1}` of a square matrix
/// of transforms. Requires the spectral radius of `d(0)` below one.
pub fn neumann_series(d: &RationalMatrix) -> Result<RationalMatrix> {
    let n = d.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > 12 {
        return Err(Error::Capability(format!("hidden block of dimension {n} exceeds 12")));
    }
    let d0 = DMatrix::from_fn(n, n, |i, j| d[i][j].at_zero());
    let rho = spectral_radius(&d0);
    if rho >= 1.0 - 1e-9 {
        return Err(Error::NonConvergentSeries { spectral_radius: rho });
    }
    resolvent(d)
}

/// `(I - d)^{-1}` by Gauss-Jordan elimination without the convergence
/// check. Renewal transforms use this with a pole at the origin. Poles stay
/// in factored form throughout, so the only roots computed are those of the
/// pivots.
pub fn resolvent(d: &RationalMatrix) -> Result<RationalMatrix> {
    let n = d.len();
    if n > 12 {
        return Err(Error::Capability(format!("matrix of dimension {n} exceeds 12")));
    }
    let mut a: RationalMatrix = (0..n)
        .map(|i| (0..n).map(|j| if i == j { RationalLT::constant(1.0).sub(&d[i][j]) } else { Ok(d[i][j].neg()) }).collect())
        .collect::<Result<_>>()?;
    let mut inv: RationalMatrix =
        (0..n).map(|i| (0..n).map(|j| RationalLT::constant(if i == j { 1.0 } else { 0.0 })).collect()).collect();
    for k in 0..n {
        let p = a[k][k].recip()?;
        for j in 0..n {
            a[k][j] = if j == k { RationalLT::constant(1.0) } else { a[k][j].mul(&p)? };
            inv[k][j] = inv[k][j].mul(&p)?;
        }
        for i in 0..n {
            if i == k || a[i][k].is_zero() {
                continue;
            }
            let f = a[i][k].clone();
            for j in 0..n {
                if j != k && !a[k][j].is_zero() {
                    a[i][j] = a[i][j].sub(&f.mul(&a[k][j])?)?;
                }
                if !inv[k][j].is_zero() {
                    inv[i][j] = inv[i][j].sub(&f.mul(&inv[k][j])?)?;
                }
            }
            a[i][k] = RationalLT::zero();
        }
    }
    Ok(inv)
}

/// Numerical inverse Laplace transform on the fixed Talbot contour.
/// A verification aid only; production inversion is by partial fractions.
pub fn talbot_invert(f: impl Fn(C64) -> C64, t: f64, m: usize) -> f64 {
    assert!(t > 0.0);
    let r = 2.0 * m as f64 / (5.0 * t);
    let mut acc = 0.5 * (f(C64::new(r, 0.0)) * (r * t).exp()).re;
    for k in 1..m {
        let theta = k as f64 * std::f64::consts::PI / m as f64;
        let cot = 1.0 / theta.tan();
        let s = C64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        acc += ((s * t).exp() * f(s) * C64::new(1.0, sigma)).re;
    }
    acc * r / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn clustered_multiple_poles() {
        // Erlang(3, a) * Erlang(2, b) with a, b 2.7% apart
        let (a, b) = (4.054924636550287, 3.942124033388757);
        let f = ExpPoly::erlang(3, a).convolve(&ExpPoly::erlang(2, b));
        let inv = invert_lt(&lt_of(&ExpPoly::erlang(3, a)).mul(&lt_of(&ExpPoly::erlang(2, b))).unwrap()).unwrap();
        for t in [0.0, 0.3, 1.0, 3.0] {
            assert!((inv.density.eval(t) - f.eval(t)).abs() < 1e-9, "t = {t}");
        }
        let sep = invert_lt(&lt_of(&ExpPoly::erlang(3, 1.0)).mul(&lt_of(&ExpPoly::erlang(2, 2.0))).unwrap()).unwrap();
        assert!(sep.warning.is_none());
        let g = ExpPoly::erlang(3, 4.18).convolve(&ExpPoly::erlang(3, 4.2042));
        let inv = invert_lt(&lt_of(&g)).unwrap();
        assert!(inv.warning.is_some());
        assert!(amplification(&ExpPoly::erlang(2, 1.0)) == 1.0);
    }

    #[test]
    fn exponential_transform() {
        let k = 2.5;
        let r = lt_of(&ExpPoly::exponential(k));
        assert_eq!(r.den_degree(), 1);
        assert_relative_eq!(r.poles()[0].value.re, -k);
        assert_relative_eq!(r.numerator().coeffs()[0], k);
    }

    #[test]
    fn gamma_transform() {
        let f = ExpPoly::from_terms([Term::real(1.0, 1, 1.0)]);
        let r = lt_of(&f);
        assert_eq!(r.poles(), &[Pole { value: c(-1.0), mult: 2 }]);
        assert_relative_eq!(r.numerator().coeffs()[0], 1.0);
        assert_eq!(r.numerator().degree(), 0);
    }

    #[test]
    fn value_at_zero_is_mass() {
        let f = ExpPoly::from_terms([Term::real(0.3, 0, 1.0), Term::real(0.2, 2, 0.7)]);
        assert!((lt_of(&f).at_zero() - f.mass()).abs() < 1e-12);
    }

    #[test]
    fn round_trip_with_repeated_and_complex_poles() {
        let z = C64::new(0.8, 1.3);
        let w = C64::new(0.1, 0.05);
        let f = ExpPoly::from_terms([
            Term::real(1.0, 2, 0.5),
            Term::real(-0.3, 0, 0.5),
            Term::real(0.7, 1, 2.0),
            Term { coeff: w, power: 0, rate: z },
            Term { coeff: w.conj(), power: 0, rate: z.conj() },
        ]);
        let back = invert_lt(&lt_of(&f)).unwrap().density;
        for i in 0..50 {
            let t = i as f64 * 0.3;
            assert!((back.eval(t) - f.eval(t)).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn unit_gamma_inversion() {
        let r = RationalLT::from_num_roots(Poly::constant(1.0), 1.0, &[c(-1.0), c(-1.0)]).unwrap();
        let f = invert_lt(&r).unwrap().density;
        assert_relative_eq!(f.eval(1.7), 1.7 * (-1.7f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn renewal_density_of_erlang_two() {
        // r*(s) = k²/(s(s+2k)) ↦ (k/2)(1 - e^{-2kt})
        let k = 1.3;
        let r = RationalLT::from_num_roots(Poly::constant(k * k), 1.0, &[c(0.0), c(-2.0 * k)]).unwrap();
        assert!(invert_lt(&r).is_err());
        let f = invert_lt_with_origin(&r).unwrap().density;
        for &t in &[0.0, 0.4, 2.0, 9.0] {
            assert_relative_eq!(f.eval(t), 0.5 * k * (1.0 - (-2.0 * k * t).exp()), epsilon = 1e-13);
        }
    }

    #[test]
    fn product_matches_convolution() {
        let f = ExpPoly::from_terms([Term::real(0.6, 0, 1.0), Term::real(0.4, 1, 2.0)]);
        let g = ExpPoly::erlang(2, 0.5);
        let lhs = lt_of(&f.convolve(&g));
        let rhs = lt_of(&f).mul(&lt_of(&g)).unwrap();
        assert_eq!(lhs.den_degree(), rhs.den_degree());
        for (a, b) in lhs.numerator().coeffs().iter().zip(rhs.numerator().coeffs()) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_geometric_series() {
        let (k, u) = (0.4, 1.0);
        let d = vec![vec![lt_of(&ExpPoly::from_terms([Term::real(k, 0, u)]))]];
        let n = neumann_series(&d).unwrap();
        // (u+s)/(u+s-k)
        let s = C64::new(0.37, 0.2);
        let expected = (s + u) / (s + u - k);
        assert!((n[0][0].eval(s) - expected).norm() < 1e-12);
    }

    #[test]
    fn neumann_of_zero_is_identity() {
        let d = vec![vec![RationalLT::zero(); 2]; 2];
        let n = neumann_series(&d).unwrap();
        assert!((n[0][0].eval(c(3.0)) - 1.0).norm() < 1e-14);
        assert!(n[0][1].is_zero());
    }

    #[test]
    fn neumann_rejects_absorbing_block() {
        let d = vec![vec![lt_of(&ExpPoly::exponential(1.0))]];
        assert!(matches!(neumann_series(&d), Err(Error::NonConvergentSeries { .. })));
    }

    #[test]
    fn neumann_times_complement_is_identity() {
        let e = |k: f64, u: f64| lt_of(&ExpPoly::from_terms([Term::real(k, 0, u)]));
        let d = vec![vec![RationalLT::zero(), e(0.3, 0.5)], vec![e(0.2, 0.4), e(0.1, 1.0)]];
        let n = neumann_series(&d).unwrap();
        let mut i_minus_d = d.clone();
        for i in 0..2 {
            for j in 0..2 {
                i_minus_d[i][j] = if i == j {
                    RationalLT::constant(1.0).sub(&d[i][j]).unwrap()
                } else {
                    d[i][j].neg()
                };
            }
        }
        let prod = mat_mul(&i_minus_d, &n).unwrap();
        for s in [c(0.0), c(1.5), C64::new(0.2, 0.9)] {
            for i in 0..2 {
                for j in 0..2 {
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[i][j].eval(s) - target).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn talbot_agrees_with_partial_fractions() {
        let f = ExpPoly::from_terms([Term::real(0.6, 0, 1.0), Term::real(0.4, 1, 2.0), Term::real(0.1, 3, 0.3)]);
        let r = lt_of(&f);
        for &t in &[0.1, 1.0, 5.0, 20.0] {
            let v = talbot_invert(|s| r.eval(s), t, 32);
            assert!((v - f.eval(t)).abs() < 1e-7, "t={t}: {v} vs {}", f.eval(t));
        }
    }
}
