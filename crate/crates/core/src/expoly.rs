//! Exponential-polynomial functions on `[0, ∞)`.
//!
//! Every kernel density in this crate is a finite sum
//!
//! ```text
//! f(t) = atom·δ(t) + Σ_j c_j · t^{m_j} · exp(-ρ_j t)
//! ```
//!
//! with complex coefficients and rates occurring in conjugate pairs, so that
//! `f` is real. The family is closed under addition, scaling, pointwise
//! products and convolution, which is all the filtering machinery needs.
//! The Dirac atom only ever appears as the zeroth convolution power of a
//! hidden block; user-facing densities carry `atom == 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

/// Mass tolerance for sub-probability checks.
pub const EPS_MASS: f64 = 1e-9;
/// Pointwise nonnegativity tolerance on the validation grid.
pub const EPS_NEG: f64 = 1e-10;
/// Rates closer than this (relative) are treated as identical.
pub const RATE_MERGE_REL: f64 = 1e-9;

/// One summand `coeff · t^power · exp(-rate · t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: C64,
    pub power: u32,
    pub rate: C64,
}

impl Term {
    pub fn real(coeff: f64, power: u32, rate: f64) -> Self {
        Term { coeff: C64::new(coeff, 0.0), power, rate: C64::new(rate, 0.0) }
    }

    fn eval(&self, t: f64) -> C64 {
        self.coeff * t.powi(self.power as i32) * (-self.rate * t).exp()
    }

    /// Peak magnitude of the term on `[0, ∞)`, used as a scale for pruning.
    fn peak(&self) -> f64 {
        let m = self.power as f64;
        let re = self.rate.re;
        if self.power == 0 || re <= 0.0 {
            return self.coeff.norm();
        }
        self.coeff.norm() * (m / re).powf(m) * (-m).exp()
    }
}

pub(crate) fn rates_match(a: C64, b: C64) -> bool {
    let scale = a.norm().max(b.norm());
    (a - b).norm() <= RATE_MERGE_REL * scale || (scale == 0.0)
}

pub(crate) fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exponential-polynomial function, optionally with a Dirac atom at zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpPoly {
    terms: Vec<Term>,
    #[serde(default)]
    atom: f64,
}

impl ExpPoly {
    pub fn zero() -> Self {
        ExpPoly::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut f = ExpPoly { terms: terms.into_iter().collect(), atom: 0.0 };
        f.normalize();
        f
    }

    /// Dirac mass `weight·δ(t)`.
    pub fn dirac(weight: f64) -> Self {
        ExpPoly { terms: Vec::new(), atom: weight }
    }

    /// `rate · exp(-rate t)`.
    pub fn exponential(rate: f64) -> Self {
        Self::from_terms([Term::real(rate, 0, rate)])
    }

    /// Erlang density with `shape` phases of rate `rate`.
    pub fn erlang(shape: u32, rate: f64) -> Self {
        assert!(shape >= 1);
        let c = rate.powi(shape as i32) / factorial(shape - 1);
        Self::from_terms([Term::real(c, shape - 1, rate)])
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn atom(&self) -> f64 {
        self.atom
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() && self.atom == 0.0
    }

    /// Largest polynomial power among the terms.
    pub fn max_power(&self) -> u32 {
        self.terms.iter().map(|t| t.power).max().unwrap_or(0)
    }

    /// Smallest real part among the rates (the slowest decay).
    pub fn slowest_rate(&self) -> Option<f64> {
        self.terms.iter().map(|t| t.rate.re).min_by(|a, b| a.total_cmp(b))
    }

    /// Merges equal rates/powers and prunes negligible terms.
    fn normalize(&mut self) {
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for term in self.terms.drain(..) {
            if term.coeff == C64::new(0.0, 0.0) {
                continue;
            }
            match merged
                .iter_mut()
                .find(|m| m.power == term.power && rates_match(m.rate, term.rate))
            {
                Some(m) => m.coeff += term.coeff,
                None => merged.push(term),
            }
        }
        let peak = merged.iter().map(Term::peak).fold(0.0, f64::max);
        merged.retain(|t| t.peak() > 1e-15 * peak && t.coeff.norm() > 0.0);
        merged.sort_by(|a, b| {
            a.rate
                .re
                .total_cmp(&b.rate.re)
                .then(a.rate.im.total_cmp(&b.rate.im))
                .then(a.power.cmp(&b.power))
        });
        self.terms = merged;
    }

    /// Value at `t` (the atom is not a point value and is excluded).
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|term| term.eval(t)).sum::<C64>().re
    }

    /// `Σ |c| t^m e^{-Re(ρ) t}`; rounding error of [`eval`](Self::eval)
    /// is a small multiple of this.
    pub fn eval_scale(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.coeff.norm() * t.max(0.0).powi(term.power as i32) * (-term.rate.re * t.max(0.0)).exp()).sum()
    }

    /// Natural log of the value at `t`, robust against underflow of the
    /// exponentials. Returns `-inf` where the function is not positive.
    pub fn ln_eval(&self, t: f64) -> f64 {
        if t < 0.0 || self.terms.is_empty() {
            return f64::NEG_INFINITY;
        }
        let r0 = self
            .terms
            .iter()
            .map(|term| term.rate.re)
            .fold(f64::INFINITY, f64::min);
        let s: C64 = self
            .terms
            .iter()
            .map(|term| term.coeff * t.powi(term.power as i32) * (-(term.rate - r0) * t).exp())
            .sum();
        if s.re > 0.0 {
            s.re.ln() - r0 * t
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Laplace transform `∫ e^{-st} f(t) dt` at complex `s`.
    pub fn laplace(&self, s: C64) -> C64 {
        let mut acc = C64::new(self.atom, 0.0);
        for term in &self.terms {
            let m = term.power;
            acc += term.coeff * factorial(m) / (s + term.rate).powi(m as i32 + 1);
        }
        acc
    }

    /// Total mass `∫_0^∞ f` (including the atom).
    pub fn mass(&self) -> f64 {
        self.laplace(C64::new(0.0, 0.0)).re
    }

    /// `∫_0^∞ Σ|terms|`, the scale of the rounding error in [`mass`](Self::mass).
    pub fn abs_mass(&self) -> f64 {
        self.atom.abs() + self.terms.iter().map(|t| t.coeff.norm() * factorial(t.power) / t.rate.norm().powi(t.power as i32 + 1)).sum::<f64>()
    }

    /// Slack for mass comparisons: [`EPS_MASS`] plus the rounding scale.
    pub fn mass_tolerance(&self) -> f64 {
        EPS_MASS + 1e3 * f64::EPSILON * self.abs_mass()
    }

    /// `∫_0^∞ t^k f(t) dt`.
    pub fn moment(&self, k: u32) -> f64 {
        let mut acc = if k == 0 { C64::new(self.atom, 0.0) } else { C64::new(0.0, 0.0) };
        for term in &self.terms {
            let m = term.power;
            acc += term.coeff * factorial(m + k) / term.rate.powi((m + k) as i32 + 1);
        }
        acc.re
    }

    /// Mean of the normalized density.
    pub fn mean(&self) -> f64 {
        self.moment(1) / self.mass()
    }

    /// The tail integral `t ↦ ∫_t^∞ f(s) ds` as an exponential polynomial.
    /// Requires all rates to have positive real part.
    pub fn tail(&self) -> ExpPoly {
        let mut out = Vec::new();
        for term in &self.terms {
            let m = term.power;
            for k in 0..=m {
                let c = term.coeff * (factorial(m) / factorial(k)) / term.rate.powi((m - k) as i32 + 1);
                out.push(Term { coeff: c, power: k, rate: term.rate });
            }
        }
        ExpPoly::from_terms(out)
    }

    /// `t ↦ ∫_0^t f(s) ds` as an exponential polynomial; zero rates
    /// (constants, polynomials) are allowed. The atom is dropped.
    pub fn antiderivative(&self) -> ExpPoly {
        let mut out = Vec::new();
        for term in &self.terms {
            let m = term.power;
            if term.rate.norm() == 0.0 {
                out.push(Term { coeff: term.coeff / (m + 1) as f64, power: m + 1, rate: term.rate });
                continue;
            }
            out.push(Term {
                coeff: term.coeff * factorial(m) / term.rate.powi(m as i32 + 1),
                power: 0,
                rate: C64::new(0.0, 0.0),
            });
            for k in 0..=m {
                let c = term.coeff * (factorial(m) / factorial(k)) / term.rate.powi((m - k) as i32 + 1);
                out.push(Term { coeff: -c, power: k, rate: term.rate });
            }
        }
        ExpPoly::from_terms(out)
    }

    /// `∫_0^t f(s) ds`, atom included.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let mut acc = C64::new(self.atom, 0.0);
        for term in &self.terms {
            let m = term.power;
            let rho = term.rate;
            let x = rho * t;
            // ∫_0^t c s^m e^{-ρs} ds = c m!/ρ^{m+1} (1 - e^{-ρt} Σ_{k≤m} (ρt)^k/k!)
            let mut partial = C64::new(0.0, 0.0);
            let mut pw = C64::new(1.0, 0.0);
            for k in 0..=m {
                partial += pw / factorial(k);
                pw *= x;
            }
            let full = term.coeff * factorial(m) / rho.powi(m as i32 + 1);
            if x.re < 1e-3 && x.norm() < 1e-3 {
                // avoid cancellation: series of the lower incomplete gamma
                let mut series = C64::new(0.0, 0.0);
                let mut pw = x.powi(m as i32 + 1);
                let mut fact = factorial(m + 1);
                for j in 0..30u32 {
                    series += pw / fact;
                    pw *= x;
                    fact *= (m + 2 + j) as f64;
                }
                acc += term.coeff * factorial(m) / rho.powi(m as i32 + 1) * (-x).exp() * series;
            } else {
                acc += full * (C64::new(1.0, 0.0) - (-x).exp() * partial);
            }
        }
        acc.re
    }

    pub fn scale(&self, k: f64) -> ExpPoly {
        self.scale_c(C64::new(k, 0.0))
    }

    pub(crate) fn scale_c(&self, k: C64) -> ExpPoly {
        let mut f = ExpPoly {
            terms: self.terms.iter().map(|t| Term { coeff: t.coeff * k, ..*t }).collect(),
            atom: (k * self.atom).re,
        };
        f.normalize();
        f
    }

    pub fn add(&self, other: &ExpPoly) -> ExpPoly {
        let mut f = ExpPoly {
            terms: self.terms.iter().chain(other.terms.iter()).copied().collect(),
            atom: self.atom + other.atom,
        };
        f.normalize();
        f
    }

    pub fn sub(&self, other: &ExpPoly) -> ExpPoly {
        self.add(&other.scale(-1.0))
    }

    /// Pointwise product. Atoms are not supported here.
    pub fn mul(&self, other: &ExpPoly) -> Result<ExpPoly> {
        if self.atom != 0.0 || other.atom != 0.0 {
            return Err(Error::Capability("pointwise product with a Dirac atom".into()));
        }
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                out.push(Term { coeff: a.coeff * b.coeff, power: a.power + b.power, rate: a.rate + b.rate });
            }
        }
        Ok(ExpPoly::from_terms(out))
    }

    /// Pointwise product with `constant + self`-style survival functions.
    pub fn mul_affine(&self, constant: f64, other: &ExpPoly) -> Result<ExpPoly> {
        Ok(self.scale(constant).add(&self.mul(other)?))
    }

    /// Convolution `(f ∗ g)(t) = ∫_0^t f(s) g(t - s) ds`, atoms included.
    pub fn convolve(&self, other: &ExpPoly) -> ExpPoly {
        let mut out = Vec::new();
        for a in &self.terms {
            for b in &other.terms {
                convolve_terms(a, b, &mut out);
            }
        }
        if self.atom != 0.0 {
            out.extend(other.terms.iter().map(|t| Term { coeff: t.coeff * self.atom, ..*t }));
        }
        if other.atom != 0.0 {
            out.extend(self.terms.iter().map(|t| Term { coeff: t.coeff * other.atom, ..*t }));
        }
        let mut f = ExpPoly { terms: out, atom: self.atom * other.atom };
        f.normalize();
        f
    }

    /// Largest imaginary part of the evaluated function on a few sample
    /// points, relative to its magnitude. Zero for conjugate-closed terms.
    pub fn imaginary_residue(&self) -> f64 {
        let scale = self.terms.iter().map(Term::peak).fold(0.0, f64::max).max(1e-300);
        let mean = self.characteristic_time();
        (0..16)
            .map(|i| {
                let t = mean * i as f64 / 4.0;
                self.terms.iter().map(|term| term.eval(t)).sum::<C64>().im.abs()
            })
            .fold(0.0, f64::max)
            / scale
    }

    /// A time scale for grids: the mean of `|f|` if finite, else 1/slowest rate.
    pub fn characteristic_time(&self) -> f64 {
        let slow = self.slowest_rate().unwrap_or(1.0);
        let mass = self.mass();
        let m1 = self.moment(1);
        if mass.abs() > 1e-300 && (m1 / mass).is_finite() && m1 / mass > 0.0 {
            m1 / mass
        } else if slow > 0.0 {
            1.0 / slow
        } else {
            1.0
        }
    }

    /// Log-spaced validation grid: `n` points up to `horizon_means` mean times.
    pub fn validation_grid(&self, n: usize, horizon_means: f64) -> Vec<f64> {
        let mean = self.characteristic_time();
        let hi = horizon_means * mean;
        let lo = hi * 1e-8;
        let mut grid = vec![0.0];
        let ratio = (hi / lo).ln() / (n - 2) as f64;
        grid.extend((0..n - 1).map(|i| lo * (ratio * i as f64).exp()));
        grid
    }

    /// Checks the sub-probability density invariants: stable rates, real
    /// values, nonnegativity up to rounding on a 1024-point log grid out to
    /// 20 mean times, and total mass at most one.
    pub fn validate_density(&self) -> Result<()> {
        if self.atom != 0.0 {
            return invalid("density carries a Dirac atom");
        }
        if self.terms.is_empty() {
            return Ok(());
        }
        if let Some(t) = self.terms.iter().find(|t| !(t.rate.re > 0.0)) {
            return invalid(format!("rate {} has nonpositive real part", t.rate));
        }
        if self.imaginary_residue() > 1e-9 {
            return invalid("complex terms are not conjugate-paired");
        }
        let mass = self.mass();
        if mass > 1.0 + self.mass_tolerance() {
            return invalid(format!("density mass {mass} exceeds 1"));
        }
        for t in self.validation_grid(1024, 20.0) {
            let v = self.eval(t);
            if v < -(EPS_NEG + 1e3 * f64::EPSILON * self.eval_scale(t)) {
                return invalid(format!("density negative ({v:e}) at t = {t}"));
            }
        }
        Ok(())
    }
}

/// Appends the exact convolution of two terms.
fn convolve_terms(a: &Term, b: &Term, out: &mut Vec<Term>) {
    let (m, n) = (a.power, b.power);
    let k = a.coeff * b.coeff * factorial(m) * factorial(n);
    if rates_match(a.rate, b.rate) {
        let p = m + n + 1;
        out.push(Term { coeff: k / factorial(p), power: p, rate: a.rate });
        return;
    }
    // partial fractions of 1/((s+a)^M (s+b)^N)
    let (big_m, big_n) = (m + 1, n + 1);
    let ba = b.rate - a.rate;
    let ab = -ba;
    for i in 1..=big_m {
        let e = big_n + big_m - i;
        let sign = if (big_m - i) % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = sign * binomial(e - 1, big_m - i) / ba.powi(e as i32);
        out.push(Term { coeff: k * coeff / factorial(i - 1), power: i - 1, rate: a.rate });
    }
    for j in 1..=big_n {
        let e = big_n + big_m - j;
        let sign = if (big_n - j) % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = sign * binomial(e - 1, big_n - j) / ab.powi(e as i32);
        out.push(Term { coeff: k * coeff / factorial(j - 1), power: j - 1, rate: b.rate });
    }
}

#[cfg(test)]
mod tests {

    #[test]
    fn antiderivative_matches_cdf() {
        let f = ExpPoly::from_terms([Term::real(2.0, 1, 0.7), Term::real(-0.3, 0, 1.9), Term::real(0.25, 0, 0.0)]);
        let g = f.antiderivative();
        for t in [0.0, 0.3, 2.0, 9.0] {
            let direct = f.sub(&ExpPoly::from_terms([Term::real(0.25, 0, 0.0)])).cdf(t) + 0.25 * t;
            assert!((g.eval(t) - direct).abs() < 1e-12, "{t}");
        }
    }
    use super::*;
    use approx::assert_relative_eq;

    fn trapezoid_convolution(f: &ExpPoly, g: &ExpPoly, t: f64, n: usize) -> f64 {
        let h = t / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let s = i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * f.eval(s) * g.eval(t - s);
        }
        acc * h
    }

    #[test]
    fn exponential_basics() {
        let f = ExpPoly::exponential(2.0);
        assert_relative_eq!(f.mass(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(f.mean(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(f.cdf(1.0), 1.0 - (-2.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(f.tail().eval(1.0), (-2.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(f.ln_eval(3.0), 2.0f64.ln() - 6.0, epsilon = 1e-14);
    }

    #[test]
    fn convolution_of_equal_rates_raises_power() {
        let f = ExpPoly::exponential(1.0);
        let g = f.convolve(&f);
        assert_eq!(g.terms().len(), 1);
        assert_eq!(g.terms()[0].power, 1);
        assert_relative_eq!(g.eval(2.0), 2.0 * (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn convolution_of_distinct_rates() {
        let f = ExpPoly::exponential(1.0);
        let g = ExpPoly::exponential(3.0);
        let h = f.convolve(&g);
        // 3/2 (e^{-t} - e^{-3t})
        let t = 0.7f64;
        assert_relative_eq!(h.eval(t), 1.5 * ((-t).exp() - (-3.0 * t).exp()), epsilon = 1e-14);
        assert_relative_eq!(h.mass(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn convolution_with_atom_is_identity() {
        let f = ExpPoly::erlang(3, 2.0);
        let d = ExpPoly::dirac(1.0);
        assert_eq!(d.convolve(&f), f);
    }

    #[test]
    fn cdf_small_argument_is_accurate() {
        let f = ExpPoly::erlang(2, 1.0);
        let t = 1e-6;
        // t^2/2 - t^3/3 + ...
        assert_relative_eq!(f.cdf(t), t * t / 2.0 - t * t * t / 3.0, max_relative = 1e-8);
    }

    #[test]
    fn validate_rejects_negative_and_excess_mass() {
        let bad = ExpPoly::from_terms([Term::real(2.0, 0, 1.0), Term::real(-2.0, 0, 0.5)]);
        assert!(bad.validate_density().is_err());
        let heavy = ExpPoly::exponential(1.0).scale(1.1);
        assert!(heavy.validate_density().is_err());
        assert!(ExpPoly::erlang(4, 0.3).validate_density().is_ok());
    }

    #[test]
    fn complex_pair_evaluates_real() {
        let r = C64::new(1.0, 2.0);
        let c = C64::new(0.5, -0.25);
        let f = ExpPoly::from_terms([
            Term { coeff: c, power: 0, rate: r },
            Term { coeff: c.conj(), power: 0, rate: r.conj() },
        ]);
        let t = 0.3f64;
        let expected = 2.0 * (c * (-r * t).exp()).re;
        assert_relative_eq!(f.eval(t), expected, epsilon = 1e-15);
        assert!(f.imaginary_residue() < 1e-15);
    }

    #[test]
    fn convolution_matches_trapezoid_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let n = rng.random_range(1..=3);
                ExpPoly::from_terms((0..n).map(|_| {
                    Term::real(rng.random_range(0.1..2.0), rng.random_range(0..3), rng.random_range(0.2..3.0))
                }))
            };
            let f = mk(&mut rng);
            let g = mk(&mut rng);
            let h = f.convolve(&g);
            for &t in &[0.5, 3.0, 11.0, 20.0] {
                // Richardson-extrapolated trapezoid
                let coarse = trapezoid_convolution(&f, &g, t, 20_000);
                let fine = trapezoid_convolution(&f, &g, t, 40_000);
                let oracle = (4.0 * fine - coarse) / 3.0;
                assert!((h.eval(t) - oracle).abs() < 1e-8, "t={t}: {} vs {}", h.eval(t), oracle);
            }
        }
    }
}
