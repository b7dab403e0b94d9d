//! Long-time limits: stationary quantities, holding-time entropies and the
//! mutual information rate.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPoly;
use crate::kernels::SemiMarkovKernel;
use crate::models::Channel;
use crate::quad::integrate;
use crate::renewal::MrpView;

const QUAD_TOL: f64 = 1e-9;
/// Truncation point of holding-time integrals in units of the slowest decay
/// time.
const CUT_DECAY_TIMES: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySummary {
    pub states: Vec<String>,
    /// Invariant probability of the embedded chain.
    pub invariant: Vec<f64>,
    pub mean_sojourn: Vec<f64>,
    pub mean_recurrence: Vec<f64>,
    /// `1 / m_z`.
    pub rates: Vec<f64>,
}

fn reachable(p: &[Vec<f64>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; p.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(y) = stack.pop() {
        for (z, &pz) in p[y].iter().enumerate() {
            if pz > 0.0 && !seen[z] {
                seen[z] = true;
                stack.push(z);
            }
        }
    }
    seen
}

/// Invariant measure and mean recurrence times of an irreducible recurrent
/// kernel.
pub fn stationary(k: &SemiMarkovKernel) -> Result<StationarySummary> {
    let n = k.len();
    if n == 0 {
        return invalid("empty kernel");
    }
    let p = k.embedded();
    for y in 0..n {
        if k.defect(y) > 1e-9 {
            return Err(Error::Structural(format!("state {} is partially absorbing", k.states()[y])));
        }
        let seen = reachable(p, y);
        if let Some(z) = seen.iter().position(|s| !s) {
            return Err(Error::Structural(format!("state {} cannot reach {}: chain is reducible", k.states()[y], k.states()[z])));
        }
    }
    // α (P - I) = 0 with the last equation replaced by Σ α = 1
    let mut a = DMatrix::from_fn(n, n, |i, j| p[j][i] - if i == j { 1.0 } else { 0.0 });
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let alpha = a.lu().solve(&b).ok_or_else(|| Error::Structural("singular stationary system".into()))?;
    let invariant: Vec<f64> = alpha.iter().copied().collect();
    let mean_sojourn: Vec<f64> = (0..n).map(|y| k.mean_sojourn(y)).collect();
    let cycle: f64 = invariant.iter().zip(&mean_sojourn).map(|(a, m)| a * m).sum();
    let mean_recurrence: Vec<f64> = invariant.iter().map(|a| cycle / a).collect();
    let rates = mean_recurrence.iter().map(|m| 1.0 / m).collect();
    Ok(StationarySummary { states: k.states().to_vec(), invariant, mean_sojourn, mean_recurrence, rates })
}

/// Holding time `σ_yz ∼ q_yz / P_yz` together with the survival of `y`.
#[derive(Debug, Clone)]
pub struct HoldingTimeLaw {
    pub density: ExpPoly,
    pub survival_tail: ExpPoly,
    pub defect: f64,
}

impl HoldingTimeLaw {
    pub fn new(k: &SemiMarkovKernel, y: usize, z: usize) -> Result<Self> {
        let p = k.p(y, z);
        if !(p > 0.0) {
            return invalid(format!("transition {} -> {} has probability zero", k.states()[y], k.states()[z]));
        }
        Ok(HoldingTimeLaw { density: k.density(y, z).scale(1.0 / p), survival_tail: k.sojourn_tail(y).clone(), defect: k.defect(y) })
    }

    /// Renewal holding time: the survival is that of the density itself.
    pub fn renewal(f: &ExpPoly) -> Result<Self> {
        let mass = f.mass();
        if (mass - 1.0).abs() > 1e-9 {
            return invalid(format!("holding-time density has mass {mass}"));
        }
        Ok(HoldingTimeLaw { density: f.clone(), survival_tail: f.tail(), defect: 0.0 })
    }

    fn cutoff(&self) -> f64 {
        let slow = [self.density.slowest_rate(), self.survival_tail.slowest_rate()]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min);
        CUT_DECAY_TIMES / slow
    }

    fn ln_survival(&self, t: f64) -> f64 {
        let s = self.survival_tail.eval(t) + self.defect;
        if s > 0.0 {
            s.ln().min(0.0)
        } else {
            self.survival_tail.ln_eval(t).min(0.0)
        }
    }
}

fn single_exponential_rate(d: &ExpPoly) -> Option<f64> {
    match d.terms() {
        [t] if t.power == 0 && t.rate.im == 0.0 && t.coeff.im == 0.0 && (t.coeff.re - t.rate.re).abs() <= 1e-12 * t.rate.re => {
            Some(t.rate.re)
        }
        _ => None,
    }
}

/// Differential entropy `-∫ p ln p` in nats.
pub fn dentropy(law: &HoldingTimeLaw) -> Result<f64> {
    if let Some(k) = single_exponential_rate(&law.density) {
        return Ok(1.0 - k.ln());
    }
    let d = &law.density;
    let f = |t: f64| {
        let lp = d.ln_eval(t);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            -lp.exp() * lp
        }
    };
    integrate(f, 0.0, law.cutoff(), QUAD_TOL)
}

/// `E[ln S_y(σ_yz)]`.
pub fn expected_ln_survival(law: &HoldingTimeLaw) -> Result<f64> {
    let d = &law.density;
    integrate(|t| d.eval(t) * law.ln_survival(t), 0.0, law.cutoff(), QUAD_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirTerm {
    pub from: String,
    pub to: String,
    pub weight: f64,
    pub p: f64,
    pub entropy: f64,
    pub expected_ln_survival: f64,
    /// `(1/m_y) P_yz (ln P_yz - h(σ_yz) - E ln S_y(σ_yz))`
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirMrp {
    pub terms: Vec<MirTerm>,
    pub total: f64,
}

/// `lim (1/T) ∫_0^T Σ_z E[φ(λ_t(z))] dt` over the target states.
pub fn mir_mrp(k: &SemiMarkovKernel, targets: &[usize]) -> Result<MirMrp> {
    let st = stationary(k)?;
    let mut terms = Vec::new();
    for &z in targets {
        for y in 0..k.len() {
            let p = k.p(y, z);
            if p <= 0.0 {
                continue;
            }
            let law = HoldingTimeLaw::new(k, y, z)?;
            let entropy = dentropy(&law)?;
            let els = expected_ln_survival(&law)?;
            let weight = st.rates[y];
            terms.push(MirTerm {
                from: k.states()[y].clone(),
                to: k.states()[z].clone(),
                weight,
                p,
                entropy,
                expected_ln_survival: els,
                value: weight * p * (p.ln() - entropy - els),
            });
        }
    }
    let total = terms.iter().map(|t| t.value).sum();
    Ok(MirMrp { terms, total })
}

/// `(1 - h(τ)) / E[τ]` for a renewal process with inter-arrival density `f`.
pub fn renewal_rate_term(f: &ExpPoly) -> Result<f64> {
    let law = HoldingTimeLaw::renewal(f)?;
    Ok((1.0 - dentropy(&law)?) / f.mean())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirReport {
    pub mir: f64,
    pub joint_term: f64,
    pub output_term: f64,
    pub joint_terms: Vec<MirTerm>,
    pub formula: String,
}

/// MIR of a channel whose joint and output marginals are Markov renewal.
pub fn mir_channel(c: &Channel) -> Result<MirReport> {
    let joint = MrpView::joint(c)?;
    let output = MrpView::output(c)?;
    let j = mir_mrp(&joint.kernel, &joint.targets)?;
    let (output_term, formula) = if output.kernel.len() == 1 {
        (renewal_rate_term(output.kernel.density(0, 0))?, "renewal output: (1 - h(tau)) / E[tau]")
    } else {
        (mir_mrp(&output.kernel, &output.targets)?.total, "Markov renewal output")
    };
    Ok(MirReport { mir: j.total - output_term, joint_term: j.total, output_term, joint_terms: j.terms, formula: formula.into() })
}

/// The two closed forms of the MIR for a joint kernel on `J`, `ON`, `OFF`
/// whose only transitions are `J→J`, `J→OFF`, `ON→J`, `ON→OFF`, `OFF→ON`,
/// with output `J` and inter-arrival density `f_tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThreeStateMir {
    pub per_state: f64,
    pub compact: f64,
}

pub fn three_state_mir(k: &SemiMarkovKernel, f_tau: &ExpPoly) -> Result<ThreeStateMir> {
    let idx = |l: &str| k.index_of(l).ok_or_else(|| Error::Structural(format!("missing state {l}")));
    let (j, on, off) = (idx("J")?, idx("ON")?, idx("OFF")?);
    if k.len() != 3 {
        return Err(Error::Structural("three-state form needs exactly J, ON, OFF".into()));
    }
    let allowed = [(j, j), (j, off), (on, j), (on, off), (off, on)];
    for y in 0..3 {
        for z in 0..3 {
            if !allowed.contains(&(y, z)) && !k.density(y, z).is_zero() {
                return Err(Error::Structural(format!("transition {} -> {} outside the three-state class", k.states()[y], k.states()[z])));
            }
        }
    }
    let st = stationary(k)?;
    let tau = HoldingTimeLaw::renewal(f_tau)?;
    let h_tau = dentropy(&tau)?;
    let e_tau = f_tau.mean();
    let (p_jj, p_joff, p_onj, p_onoff) = (k.p(j, j), k.p(j, off), k.p(on, j), k.p(on, off));
    let h_of = |y, z| HoldingTimeLaw::new(k, y, z).and_then(|l| dentropy(&l));
    let els_of = |y, z| HoldingTimeLaw::new(k, y, z).and_then(|l| expected_ln_survival(&l));
    let h_jj = h_of(j, j)?;
    let h_onj = h_of(on, j)?;
    let els_joff = if p_joff > 0.0 { els_of(j, off)? } else { 0.0 };
    let els_onoff = if p_onoff > 0.0 { els_of(on, off)? } else { 0.0 };
    let (inv_mj, inv_mon) = (st.rates[j], st.rates[on]);
    let per_state = inv_mj * (h_tau + p_jj * (p_jj.ln() - h_jj) + p_joff * els_joff)
        + inv_mon * (p_onj * (p_onj.ln() - h_onj) + p_onoff * els_onoff + 1.0);
    let compact = (p_jj.ln() + h_tau - h_jj + (p_onoff / p_jj) * (1.0 + els_onoff)) / e_tau;
    Ok(ThreeStateMir { per_state, compact })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriCheck {
    pub condition: String,
    pub pass: bool,
    pub detail: String,
}

/// Advisory report on direct Riemann integrability of a density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriReport {
    pub checks: Vec<DriCheck>,
    pub pattern: Option<String>,
    pub pass: bool,
}

/// Numeric necessary conditions (integrable, bounded, vanishing at
/// infinity) plus recognition of sufficient term patterns.
pub fn dri_checklist(d: &ExpPoly) -> DriReport {
    let grid = d.validation_grid(2000, 40.0);
    let values: Vec<f64> = grid.iter().map(|&t| d.eval(t)).collect();
    let sup = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mass = d.terms().iter().all(|t| t.rate.re > 0.0);
    let last = values.last().copied().unwrap_or(0.0).abs();
    let horizon = grid.last().copied().unwrap_or(0.0);
    let vanishes = mass && last <= 1e-8 * sup.max(1e-300);
    let checks = vec![
        DriCheck { condition: "integrable".into(), pass: mass, detail: format!("every term decays: {mass}") },
        DriCheck { condition: "bounded".into(), pass: sup.is_finite(), detail: format!("sup on grid {sup:e}") },
        DriCheck { condition: "vanishes at infinity".into(), pass: vanishes, detail: format!("|f({horizon:.3e})| = {last:e}") },
    ];
    let nonneg_real = d.terms().iter().all(|t| t.rate.im == 0.0 && t.coeff.im == 0.0 && t.coeff.re >= 0.0 && t.rate.re > 0.0);
    let pattern = if nonneg_real && d.max_power() == 0 {
        Some("nonnegative mixture of exponentials (non-increasing, integrable)".to_string())
    } else if nonneg_real {
        Some("nonnegative combination of Gamma-type terms".to_string())
    } else {
        None
    };
    let pass = checks.iter().all(|c| c.pass);
    DriReport { checks, pattern, pass }
}
