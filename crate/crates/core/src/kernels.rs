//! Semi-Markov kernels over a finite labeled state space and the three
//! standard ways of constructing them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expoly::{ExpPoly, Term, EPS_MASS};

/// Highest polynomial power a competing-clock product may reach.
const MAX_PRODUCT_POWER: u32 = 48;

/// Square matrix of sub-probability densities `q_yz(t)` with cached derived
/// quantities.
#[derive(Debug, Clone)]
pub struct SemiMarkovKernel {
    states: Vec<String>,
    q: Vec<Vec<ExpPoly>>,
    p: Vec<Vec<f64>>,
    sojourn: Vec<ExpPoly>,
    tail: Vec<ExpPoly>,
    defect: Vec<f64>,
}

impl SemiMarkovKernel {
    /// Builds a kernel from explicit densities, validating every entry and
    /// every row mass.
    pub fn new(states: Vec<String>, q: Vec<Vec<ExpPoly>>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return invalid("kernel needs at least one state");
        }
        if q.len() != n || q.iter().any(|row| row.len() != n) {
            return invalid(format!("kernel matrix must be {n}x{n}"));
        }
        for (i, a) in states.iter().enumerate() {
            if states[..i].contains(a) {
                return invalid(format!("duplicate state label {a}"));
            }
        }
        for (y, row) in q.iter().enumerate() {
            for (z, d) in row.iter().enumerate() {
                d.validate_density().map_err(|e| {
                    Error::InvalidInput(format!("entry ({}, {}): {e}", states[y], states[z]))
                })?;
            }
        }
        Self::from_validated(states, q)
    }

    /// Skips the pointwise density scan; row masses are still checked.
    pub(crate) fn from_validated(states: Vec<String>, q: Vec<Vec<ExpPoly>>) -> Result<Self> {
        let p: Vec<Vec<f64>> = q.iter().map(|row| row.iter().map(ExpPoly::mass).collect()).collect();
        let mut defect = Vec::with_capacity(states.len());
        for (y, row) in p.iter().enumerate() {
            let total: f64 = row.iter().sum();
            let slack: f64 = q[y].iter().map(ExpPoly::mass_tolerance).sum::<f64>().max(EPS_MASS);
            if total > 1.0 + slack {
                return invalid(format!("row {} has total mass {total} > 1", states[y]));
            }
            defect.push((1.0 - total).max(0.0));
        }
        let sojourn: Vec<ExpPoly> =
            q.iter().map(|row| row.iter().fold(ExpPoly::zero(), |acc, d| acc.add(d))).collect();
        let tail = sojourn.iter().map(ExpPoly::tail).collect();
        Ok(SemiMarkovKernel { states, q, p, sojourn, tail, defect })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn density(&self, y: usize, z: usize) -> &ExpPoly {
        &self.q[y][z]
    }

    pub fn densities(&self) -> &[Vec<ExpPoly>] {
        &self.q
    }

    /// Embedded-chain matrix `P_yz = ∫ q_yz`.
    pub fn embedded(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn p(&self, y: usize, z: usize) -> f64 {
        self.p[y][z]
    }

    /// Sojourn density `f_y = Σ_z q_yz`.
    pub fn sojourn(&self, y: usize) -> &ExpPoly {
        &self.sojourn[y]
    }

    /// `∫_t^∞ f_y` without the absorbing defect.
    pub fn sojourn_tail(&self, y: usize) -> &ExpPoly {
        &self.tail[y]
    }

    /// Absorbing defect `F_y(∞) = 1 - Σ_z P_yz`.
    pub fn defect(&self, y: usize) -> f64 {
        self.defect[y]
    }

    /// Survival `S_y(t) = 1 - ∫_0^t f_y`, clamped to [0, 1].
    pub fn survival(&self, y: usize, t: f64) -> f64 {
        (self.defect[y] + self.tail[y].eval(t)).clamp(0.0, 1.0)
    }

    /// `ln S_y(t)`, accurate where `S_y` underflows.
    pub fn ln_survival(&self, y: usize, t: f64) -> f64 {
        let lt = self.tail[y].ln_eval(t);
        if self.defect[y] > 0.0 {
            log_add(self.defect[y].ln(), lt).min(0.0)
        } else {
            lt.min(0.0)
        }
    }

    /// Mean sojourn `μ_y = ∫ t f_y(t) dt` over the leaving transitions.
    pub fn mean_sojourn(&self, y: usize) -> f64 {
        self.sojourn[y].moment(1)
    }

    /// Returns a copy with relabeled states.
    pub fn relabeled(&self, states: Vec<String>) -> Result<Self> {
        if states.len() != self.len() {
            return invalid("relabeling must keep the state count");
        }
        Self::from_validated(states, self.q.clone())
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Off-diagonal rate matrix of a Markov jump process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub states: Vec<String>,
    pub rates: Vec<Vec<f64>>,
}

/// `q_yz(t) = Λ(y,z) e^{-u_y t}` with exit rate `u_y = Σ_{x≠y} Λ(y,x)`.
pub fn smk_from_generator(g: &GeneratorSpec) -> Result<SemiMarkovKernel> {
    let n = g.states.len();
    if g.rates.len() != n || g.rates.iter().any(|r| r.len() != n) {
        return invalid(format!("rate matrix must be {n}x{n}"));
    }
    let mut q = vec![vec![ExpPoly::zero(); n]; n];
    for y in 0..n {
        let mut u = 0.0;
        for z in 0..n {
            let r = g.rates[y][z];
            if z == y {
                continue;
            }
            if !(r >= 0.0) || !r.is_finite() {
                return invalid(format!("rate {} -> {} is {r}", g.states[y], g.states[z]));
            }
            u += r;
        }
        for z in (0..n).filter(|&z| z != y && g.rates[y][z] > 0.0) {
            q[y][z] = ExpPoly::from_terms([Term::real(g.rates[y][z], 0, u)]);
        }
    }
    SemiMarkovKernel::new(g.states.clone(), q)
}

/// `q_yz(t) = P_yz f̃_yz(t)`: successor first, then a conditional holding time.
pub fn smk_from_conditional(
    states: Vec<String>,
    p: &[Vec<f64>],
    ftilde: &[Vec<Option<ExpPoly>>],
) -> Result<SemiMarkovKernel> {
    let n = states.len();
    if p.len() != n || p.iter().any(|r| r.len() != n) || ftilde.len() != n || ftilde.iter().any(|r| r.len() != n) {
        return invalid(format!("P and F~ must be {n}x{n}"));
    }
    let mut q = vec![vec![ExpPoly::zero(); n]; n];
    for y in 0..n {
        let total: f64 = p[y].iter().sum();
        if p[y].iter().any(|&v| !(v >= 0.0)) || total > 1.0 + EPS_MASS {
            return invalid(format!("row {} of P is not sub-stochastic", states[y]));
        }
        for z in 0..n {
            if p[y][z] == 0.0 {
                continue;
            }
            let f = ftilde[y][z].as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("missing holding density for {} -> {}", states[y], states[z]))
            })?;
            let mass = f.mass();
            if (mass - 1.0).abs() > EPS_MASS {
                return invalid(format!("holding density {} -> {} has mass {mass}", states[y], states[z]));
            }
            q[y][z] = f.scale(p[y][z]);
        }
    }
    SemiMarkovKernel::new(states, q)
}

/// Competing clocks: `q_yz(t) = f_yz(t) Π_{x≠z} (1 - F_yx(t))`; the first
/// clock to ring selects the successor.
pub fn smk_from_competing(states: Vec<String>, clocks: &[Vec<Option<ExpPoly>>]) -> Result<SemiMarkovKernel> {
    let n = states.len();
    if clocks.len() != n || clocks.iter().any(|r| r.len() != n) {
        return invalid(format!("clock matrix must be {n}x{n}"));
    }
    let mut q = vec![vec![ExpPoly::zero(); n]; n];
    for y in 0..n {
        for (z, c) in clocks[y].iter().enumerate() {
            if let Some(f) = c {
                f.validate_density()
                    .map_err(|e| Error::InvalidInput(format!("clock {} -> {}: {e}", states[y], states[z])))?;
            }
        }
        for z in 0..n {
            let Some(f) = &clocks[y][z] else { continue };
            let mut prod = f.clone();
            for (x, other) in clocks[y].iter().enumerate() {
                let Some(g) = other else { continue };
                if x == z {
                    continue;
                }
                prod = prod.mul_affine(1.0 - g.mass(), &g.tail())?;
                if prod.max_power() > MAX_PRODUCT_POWER {
                    return Err(Error::Capability(format!(
                        "competing product for {} -> {} exceeds power {MAX_PRODUCT_POWER}",
                        states[y], states[z]
                    )));
                }
            }
            q[y][z] = prod;
        }
    }
    SemiMarkovKernel::new(states, q)
}
