//! Filter statistics over the filtered augmented states, hazards and path
//! densities of the marginal point process. Weights live in the log domain.

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPoly;
use crate::filtering::FilterOutput;
use crate::kernels::log_add;

/// `ln Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Precomputed evaluation tables for one filter output.
#[derive(Debug, Clone)]
pub struct MarginalFilter {
    labels: Vec<String>,
    marks: Vec<String>,
    coarse: Vec<usize>,
    members: Vec<Vec<usize>>,
    q: Vec<Vec<ExpPoly>>,
    grouped: Vec<Vec<ExpPoly>>,
    tail: Vec<ExpPoly>,
    defect: Vec<f64>,
    transient: Option<Transient>,
}

#[derive(Debug, Clone)]
struct Transient {
    per_state: Vec<ExpPoly>,
    per_mark: Vec<ExpPoly>,
    tail: ExpPoly,
    defect: f64,
}

/// Posterior over filtered states after the last observed event.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaState {
    pub log_w: Vec<f64>,
    pub count: usize,
    /// Absolute time of the last observed event.
    pub last_event: f64,
}

impl ThetaState {
    pub fn weights(&self) -> Vec<f64> {
        self.log_w.iter().map(|l| l.exp()).collect()
    }

    /// Backward recurrence time at `t`.
    pub fn recurrence(&self, t: f64) -> f64 {
        t - self.last_event
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardEval {
    pub z: usize,
    pub value: f64,
    pub log_value: f64,
}

impl HazardEval {
    fn from_log(z: usize, log_value: f64) -> Self {
        HazardEval { z, value: log_value.exp(), log_value }
    }
}

/// How an observed path starts.
#[derive(Debug, Clone)]
pub enum PathStart {
    /// Filter state at the first observed event.
    Theta(ThetaState),
    /// Fresh start at t = 0 using the transient row; the first event is
    /// part of the path.
    Transient,
}

impl MarginalFilter {
    pub fn new(f: &FilterOutput) -> Self {
        let k = f.kernel();
        let n = k.len();
        let n_marks = f.marks().len();
        let members: Vec<Vec<usize>> = (0..n_marks).map(|z| f.members(z)).collect();
        let grouped = (0..n).map(|a| (0..n_marks).map(|z| f.grouped(a, z)).collect()).collect();
        let transient = f.transient().map(|t| {
            let total = t.per_mark.iter().fold(ExpPoly::zero(), |acc, d| acc.add(d));
            Transient {
                per_state: t.per_state.clone(),
                per_mark: t.per_mark.clone(),
                tail: total.tail(),
                defect: (1.0 - total.mass()).max(0.0),
            }
        });
        MarginalFilter {
            labels: k.states().to_vec(),
            marks: f.marks().to_vec(),
            coarse: f.coarse().to_vec(),
            members,
            q: k.densities().to_vec(),
            grouped,
            tail: (0..n).map(|a| k.sojourn_tail(a).clone()).collect(),
            defect: (0..n).map(|a| k.defect(a)).collect(),
            transient,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn marks(&self) -> &[String] {
        &self.marks
    }

    pub fn coarse(&self) -> &[usize] {
        &self.coarse
    }

    pub fn mark_index(&self, label: &str) -> Option<usize> {
        self.marks.iter().position(|m| m == label)
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|m| m == label)
    }

    /// `ln q̌_αβ(w)`.
    pub fn ln_q(&self, a: usize, b: usize, w: f64) -> f64 {
        self.q[a][b].ln_eval(w)
    }

    /// `ln f̄_α(z, v) = ln Σ_{β∈g⁻¹(z)} q̌_αβ(v)`.
    pub fn ln_grouped(&self, a: usize, z: usize, v: f64) -> f64 {
        self.grouped[a][z].ln_eval(v)
    }

    /// `ln S_α(v)`.
    pub fn ln_survival(&self, a: usize, v: f64) -> f64 {
        let lt = self.tail[a].ln_eval(v);
        if self.defect[a] > 0.0 {
            log_add(self.defect[a].ln(), lt).min(0.0)
        } else {
            lt.min(0.0)
        }
    }

    fn check_mark(&self, z: usize) -> Result<()> {
        if z >= self.marks.len() {
            return invalid(format!("mark index {z} out of range"));
        }
        Ok(())
    }

    /// Normalized filter state from nonnegative weights over filtered states.
    pub fn theta_from_weights(&self, weights: &[f64], t0: f64) -> Result<ThetaState> {
        if weights.len() != self.len() {
            return invalid(format!("{} weights for {} filtered states", weights.len(), self.len()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return invalid("weights must be nonnegative");
        }
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        self.normalized(log_w, 0, t0, "initial", 0.0)
    }

    /// Point mass on one filtered state.
    pub fn theta_point(&self, label: &str, t0: f64) -> Result<ThetaState> {
        let a = self.state_index(label).ok_or_else(|| Error::InvalidInput(format!("unknown filtered state {label}")))?;
        let mut w = vec![0.0; self.len()];
        w[a] = 1.0;
        self.theta_from_weights(&w, t0)
    }

    /// Arrival at t0: uniform over filtered copies of `origin` carrying mark
    /// `z0`.
    pub fn theta_max_entropy(&self, origin: &str, z0: usize, t0: f64) -> Result<ThetaState> {
        self.check_mark(z0)?;
        let w: Vec<f64> = (0..self.len())
            .map(|a| {
                let base = self.labels[a].rsplit('|').next().unwrap_or("");
                let base = base.split(':').next().unwrap_or("");
                if self.coarse[a] == z0 && base == origin {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        self.theta_from_weights(&w, t0).map_err(|_| Error::FilterDegeneracy { mark: self.marks[z0].clone(), waiting: t0 })
    }

    /// First observed event `z0` at `t0` after a fresh start at 0.
    pub fn theta_transient(&self, z0: usize, t0: f64) -> Result<ThetaState> {
        self.check_mark(z0)?;
        let tr = self.transient.as_ref().ok_or_else(|| Error::InvalidInput("filter has no transient row".into()))?;
        let log_w = (0..self.len())
            .map(|a| if self.coarse[a] == z0 { tr.per_state[a].ln_eval(t0) } else { f64::NEG_INFINITY })
            .collect();
        self.normalized(log_w, 0, t0, &self.marks[z0], t0)
    }

    fn normalized(&self, mut log_w: Vec<f64>, count: usize, t: f64, mark: &str, waiting: f64) -> Result<ThetaState> {
        let norm = log_sum_exp(log_w.iter().copied());
        if !norm.is_finite() {
            return Err(Error::FilterDegeneracy { mark: mark.to_string(), waiting });
        }
        for l in &mut log_w {
            *l -= norm;
        }
        Ok(ThetaState { log_w, count, last_event: t })
    }

    /// One filter step for mark `z` after waiting `w`. Also returns
    /// `ln ⟨Θ, f̄(z, w)⟩`, the log density of the step.
    pub fn theta_update(&self, theta: &ThetaState, z: usize, w: f64) -> Result<(ThetaState, f64)> {
        self.check_mark(z)?;
        if !(w > 0.0) {
            return invalid(format!("waiting time {w} must be positive"));
        }
        let mut log_w = vec![f64::NEG_INFINITY; self.len()];
        for &b in &self.members[z] {
            log_w[b] = log_sum_exp(
                (0..self.len())
                    .filter(|&a| theta.log_w[a] > f64::NEG_INFINITY)
                    .map(|a| theta.log_w[a] + self.ln_q(a, b, w)),
            );
        }
        let norm = log_sum_exp(log_w.iter().copied());
        let next = self.normalized(log_w, theta.count + 1, theta.last_event + w, &self.marks[z], w)?;
        Ok((next, norm))
    }

    /// `ln ⟨Θ, S(v)⟩`.
    pub fn ln_survival_mix(&self, theta: &ThetaState, v: f64) -> f64 {
        log_sum_exp(
            (0..self.len()).filter(|&a| theta.log_w[a] > f64::NEG_INFINITY).map(|a| theta.log_w[a] + self.ln_survival(a, v)),
        )
    }

    /// `Λ_z(v, Θ) = ⟨Θ, f̄(z, v)⟩ / ⟨Θ, S(v)⟩`.
    pub fn hazard_recurrent(&self, theta: &ThetaState, z: usize, v: f64) -> Result<HazardEval> {
        self.check_mark(z)?;
        let den = self.ln_survival_mix(theta, v);
        if den == f64::NEG_INFINITY {
            return Err(Error::VanishingSurvival { at: v });
        }
        let num = log_sum_exp(
            (0..self.len()).filter(|&a| theta.log_w[a] > f64::NEG_INFINITY).map(|a| theta.log_w[a] + self.ln_grouped(a, z, v)),
        );
        Ok(HazardEval::from_log(z, num - den))
    }

    /// `ln(1 - ∫_0^t Σ_z f̃_z)`.
    pub fn ln_transient_survival(&self, t: f64) -> Result<f64> {
        let tr = self.transient.as_ref().ok_or_else(|| Error::InvalidInput("filter has no transient row".into()))?;
        let lt = tr.tail.ln_eval(t);
        Ok(if tr.defect > 0.0 { log_add(tr.defect.ln(), lt).min(0.0) } else { lt.min(0.0) })
    }

    /// `Λ⁰_z(t) = f̃_z(t) / (1 - ∫_0^t Σ f̃)` before the first event.
    pub fn hazard_transient(&self, z: usize, t: f64) -> Result<HazardEval> {
        self.check_mark(z)?;
        let den = self.ln_transient_survival(t)?;
        if den == f64::NEG_INFINITY {
            return Err(Error::VanishingSurvival { at: t });
        }
        let num = self.transient.as_ref().unwrap().per_mark[z].ln_eval(t);
        Ok(HazardEval::from_log(z, num - den))
    }

    /// Log density of observing exactly `events` (mark, absolute time) and
    /// nothing else up to `t`.
    pub fn path_log_density(&self, start: &PathStart, events: &[(usize, f64)], t: f64) -> Result<f64> {
        let (mut theta, rest, mut acc) = match start {
            PathStart::Theta(th) => (th.clone(), events, 0.0),
            PathStart::Transient => {
                let Some(&(z0, t0)) = events.first() else {
                    return self.ln_transient_survival(t);
                };
                if !(t0 > 0.0) || t0 > t {
                    return invalid("first event time must lie in (0, t]");
                }
                let first = self.transient.as_ref().unwrap().per_mark[z0].ln_eval(t0);
                (self.theta_transient(z0, t0)?, &events[1..], first)
            }
        };
        for &(z, tk) in rest {
            if !(tk > theta.last_event) {
                return invalid(format!("event time {tk} does not follow {}", theta.last_event));
            }
            let (next, ln_norm) = self.theta_update(&theta, z, tk - theta.last_event)?;
            acc += ln_norm;
            theta = next;
        }
        if t < theta.last_event {
            return invalid("horizon precedes the last event");
        }
        Ok(acc + self.ln_survival_mix(&theta, t - theta.last_event))
    }
}
