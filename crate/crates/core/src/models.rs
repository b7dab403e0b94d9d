//! Built-in channels: the repressed promoter, the leaky promoter and a few
//! toys with known answers.

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expoly::{ExpPoly, Term};
use crate::filtering::{marginalize, FilterOutput, MarginalSpec, TransitionClassMap};
use crate::kernels::{smk_from_generator, GeneratorSpec, SemiMarkovKernel};
use crate::laplace::{RationalLT, RationalMatrix};
use crate::poly::Poly;

/// A channel whose joint input/output dynamics come from one kernel. The
/// process starts in `start` at t = 0 right after an output event.
#[derive(Debug, Clone)]
pub struct Channel {
    pub name: String,
    pub kernel: SemiMarkovKernel,
    pub joint: MarginalSpec,
    pub output: MarginalSpec,
    /// Mark of the output events in both marginal descriptions.
    pub output_mark: String,
    pub start: String,
    /// Augmented label of the start state, present in both keep-sets.
    pub start_augmented: String,
}

impl Channel {
    pub fn joint_filter(&self) -> Result<FilterOutput> {
        marginalize(&self.kernel, &self.joint)
    }

    pub fn output_filter(&self) -> Result<FilterOutput> {
        marginalize(&self.kernel, &self.output)
    }
}

/// Static modulation of a family of channels by a random label with prior.
#[derive(Debug, Clone)]
pub struct ModulatedChannel {
    pub name: String,
    pub blocks: Vec<(String, Channel)>,
    pub prior: Vec<f64>,
}

impl ModulatedChannel {
    pub fn with_prior(&self, prior: Vec<f64>) -> Result<Self> {
        if prior.len() != self.blocks.len() || prior.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return invalid("prior does not match the blocks");
        }
        Ok(ModulatedChannel { prior, ..self.clone() })
    }
}

fn s(x: &str) -> String {
    x.to_string()
}

fn spec(classes: &TransitionClassMap, keep: Option<&[&str]>, marks: &[&str], coarse: &[usize]) -> MarginalSpec {
    MarginalSpec {
        classes: classes.clone(),
        keep: keep.map(|k| k.iter().map(|x| s(x)).collect()),
        marks: marks.iter().map(|x| s(x)).collect(),
        coarse: coarse.to_vec(),
        initial: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneModelParams {
    /// Unbinding rate of the repressor, 1/s.
    pub k_on: f64,
    /// Binding rate per unit repressor concentration, 1/(nM s).
    pub k_off: f64,
    pub k1: f64,
    pub k2: f64,
    pub k_j: f64,
    /// Repressor concentrations for C = 0 and C = 1, nM.
    pub r0: f64,
    pub r1: f64,
    /// P(C = 1).
    pub pi: f64,
}

impl Default for GeneModelParams {
    fn default() -> Self {
        GeneModelParams { k_on: 0.0023, k_off: 0.0027, k1: 0.165, k2: 0.165, k_j: 0.165, r0: 1.0, r1: 10.0, pi: 0.6 }
    }
}

impl GeneModelParams {
    fn validate(&self) -> Result<()> {
        let all = [self.k_on, self.k_off, self.k1, self.k2, self.k_j, self.r0, self.r1];
        if all.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return invalid("gene model rates and concentrations must be positive");
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return invalid("pi must lie in [0, 1]");
        }
        Ok(())
    }

    /// Concentration selected by the static input.
    pub fn concentration(&self, c: usize) -> f64 {
        if c == 1 {
            self.r1
        } else {
            self.r0
        }
    }
}

pub const GENE_STATES: [&str; 4] = ["J", "P_on", "P_off", "I1"];

/// Promoter with repressor binding, one intermediate and mRNA output,
/// at repressor concentration `conc`. `J` has the outgoing dynamics of
/// `P_on`.
pub fn gene_channel(p: &GeneModelParams, conc: f64) -> Result<Channel> {
    p.validate()?;
    if !(conc >= 0.0) {
        return invalid("concentration must be nonnegative");
    }
    let kr = p.k_off * conc;
    let rates = vec![
        vec![0.0, 0.0, kr, p.k1],
        vec![0.0, 0.0, kr, p.k1],
        vec![0.0, p.k_on, 0.0, 0.0],
        vec![p.k_j, p.k2, 0.0, 0.0],
    ];
    let kernel = smk_from_generator(&GeneratorSpec { states: GENE_STATES.iter().map(|x| s(x)).collect(), rates })?;
    let mut classes = TransitionClassMap::new(4);
    classes.set(0, 2, 2);
    classes.set(1, 2, 2);
    classes.set(0, 3, 0);
    classes.set(1, 3, 0);
    classes.set(2, 1, 1);
    classes.set(3, 0, 3);
    classes.set(3, 1, 0);
    Ok(Channel {
        name: format!("gene[R={conc}]"),
        joint: spec(&classes, None, &["J", "ON", "OFF"], &[0, 1, 2]),
        output: spec(&classes, Some(&["J:3"]), &["J"], &[0]),
        kernel,
        output_mark: s("J"),
        start: s("J"),
        start_augmented: s("J:3"),
    })
}

/// Both concentrations as a statically modulated channel with prior
/// `(1 - π, π)` on `C ∈ {0, 1}`.
pub fn gene_modulated(p: &GeneModelParams) -> Result<ModulatedChannel> {
    let blocks = vec![(s("0"), gene_channel(p, p.r0)?), (s("1"), gene_channel(p, p.r1)?)];
    Ok(ModulatedChannel { name: s("gene-static"), blocks, prior: vec![1.0 - p.pi, p.pi] })
}

/// Inter-arrival density of the output at concentration `conc`.
pub fn gene_f_tau(p: &GeneModelParams, conc: f64) -> Result<ExpPoly> {
    let out = gene_channel(p, conc)?.output_filter()?;
    Ok(out.kernel().density(0, 0).clone())
}

/// Filtered transform matrix on `{J:3, P_on:1, P_off:2}` written out by
/// hand: with `w(s) = (u1+s)(u2+s) - k1 k2`,
/// rows J and P_on are `[k1 kJ, 0, k_off^R (u2+s)] / w` and row P_off is
/// `[0, k_on/(k_on+s), 0]`.
pub fn gene_filtered_closed_form(p: &GeneModelParams, conc: f64) -> Result<RationalMatrix> {
    let kr = p.k_off * conc;
    let u1 = kr + p.k1;
    let u2 = p.k_j + p.k2;
    let w = Poly::new(vec![u1 * u2 - p.k1 * p.k2, u1 + u2, 1.0]);
    let roots = w.roots();
    let jj = RationalLT::from_num_roots(Poly::constant(p.k1 * p.k_j), 1.0, &roots)?;
    let joff = RationalLT::from_num_roots(Poly::new(vec![kr * u2, kr]), 1.0, &roots)?;
    let on = RationalLT::from_num_roots(Poly::constant(p.k_on), 1.0, &[crate::expoly::C64::new(-p.k_on, 0.0)])?;
    let z = RationalLT::zero();
    Ok(vec![vec![jj.clone(), z.clone(), joff.clone()], vec![jj, z.clone(), joff], vec![z.clone(), on, z]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageModelParams {
    pub k_on: f64,
    pub k_off_r: f64,
    pub k_j: f64,
    /// Activity of the leaky state relative to the active state.
    pub r: f64,
}

impl Default for LeakageModelParams {
    fn default() -> Self {
        LeakageModelParams { k_on: 0.05, k_off_r: 0.08, k_j: 0.5, r: 0.2 }
    }
}

pub const LEAKAGE_STATES: [&str; 4] = ["r", "1", "J_1", "J_r"];

/// Two-level promoter with output rate `k_J` when active and `r k_J` when
/// leaky; output events move to the jump states `J_1`, `J_r`.
pub fn leakage_channel(p: &LeakageModelParams) -> Result<Channel> {
    if [p.k_on, p.k_off_r, p.k_j].iter().any(|&v| !(v > 0.0)) {
        return invalid("leakage model rates must be positive");
    }
    if !(p.r > 0.0 && p.r <= 1.0) {
        return invalid("leak fraction must lie in (0, 1]");
    }
    let u_r = p.k_on + p.k_j * p.r;
    let u_1 = p.k_off_r + p.k_j;
    let e = |c: f64, u: f64| ExpPoly::from_terms([Term::real(c, 0, u)]);
    let z = ExpPoly::zero;
    // state order r, 1, J_1, J_r
    let leaky_row = vec![z(), e(p.k_on, u_r), z(), e(p.k_j * p.r, u_r)];
    let active_row = vec![e(p.k_off_r, u_1), z(), e(p.k_j, u_1), z()];
    let q = vec![leaky_row.clone(), active_row.clone(), active_row, leaky_row];
    let kernel = SemiMarkovKernel::new(LEAKAGE_STATES.iter().map(|x| s(x)).collect(), q)?;
    let mut classes = TransitionClassMap::new(4);
    for y in 0..4 {
        for (to, c) in [(0, 2), (1, 1), (2, 3), (3, 3)] {
            if !kernel.density(y, to).is_zero() {
                classes.set(y, to, c);
            }
        }
    }
    // augmented order: r:2, 1:1, J_1:3, J_r:3
    Ok(Channel {
        name: s("leakage"),
        joint: spec(&classes, None, &["r", "1", "J"], &[0, 1, 2, 2]),
        output: spec(&classes, Some(&["J_1:3", "J_r:3"]), &["J"], &[0, 0]),
        kernel,
        output_mark: s("J"),
        start: s("J_1"),
        start_augmented: s("J_1:3"),
    })
}

/// `E[φ(λ^{XY}_t)]` for the leaky promoter from the two-state input chain,
/// started active at t = 0.
pub fn leakage_ctmc_phi(p: &LeakageModelParams, t: f64) -> f64 {
    let gen = DMatrix::from_row_slice(2, 2, &[-p.k_on, p.k_on, p.k_off_r, -p.k_off_r]);
    let dist = RowDVector::from_row_slice(&[0.0, 1.0]) * (gen * t).exp();
    phi(p.k_j * p.r) * dist[0] + phi(p.k_j) * dist[1]
}

/// Stationary value of [`leakage_ctmc_phi`].
pub fn leakage_ctmc_phi_limit(p: &LeakageModelParams) -> f64 {
    let pr = p.k_off_r / (p.k_on + p.k_off_r);
    phi(p.k_j * p.r) * pr + phi(p.k_j) * (1.0 - pr)
}

pub fn phi(u: f64) -> f64 {
    if u > 0.0 {
        u * u.ln()
    } else {
        0.0
    }
}

fn single_state(name: &str, f: ExpPoly) -> Result<Channel> {
    let kernel = SemiMarkovKernel::new(vec![s("J")], vec![vec![f]])?;
    let classes = TransitionClassMap::uniform(&kernel, 1);
    Ok(Channel {
        name: s(name),
        joint: spec(&classes, None, &["J"], &[0]),
        output: spec(&classes, None, &["J"], &[0]),
        kernel,
        output_mark: s("J"),
        start: s("J"),
        start_augmented: s("J:1"),
    })
}

/// Poisson output of rate `k` with a constant input.
pub fn poisson_channel(k: f64) -> Result<Channel> {
    if !(k > 0.0) {
        return invalid("rate must be positive");
    }
    single_state("poisson", ExpPoly::exponential(k))
}

/// Renewal output with Erlang(2, k) inter-arrival times and a constant input.
pub fn erlang_channel(k: f64) -> Result<Channel> {
    if !(k > 0.0) {
        return invalid("rate must be positive");
    }
    single_state("erlang2", ExpPoly::erlang(2, k))
}

/// Input switching independently of a Poisson output of rate `k_j`.
pub fn independent_channel(k_on: f64, k_off: f64, k_j: f64) -> Result<Channel> {
    let mut c = leakage_channel(&LeakageModelParams { k_on, k_off_r: k_off, k_j, r: 1.0 })?;
    c.name = s("independent");
    Ok(c)
}

/// Poisson output whose rate is chosen once from `{k0, k1}` with
/// `P(C = 1) = pi`.
pub fn random_rate_poisson(k0: f64, k1: f64, pi: f64) -> Result<ModulatedChannel> {
    let blocks = vec![(s("0"), poisson_channel(k0)?), (s("1"), poisson_channel(k1)?)];
    Ok(ModulatedChannel { name: s("random-rate-poisson"), blocks, prior: vec![1.0 - pi, pi] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gene_kernel_exit_rates() {
        let p = GeneModelParams::default();
        let c = gene_channel(&p, 1.0).unwrap();
        let u1 = p.k_off + p.k1;
        let u2 = p.k_j + p.k2;
        assert_eq!(c.kernel.density(0, 2).terms(), &[Term::real(p.k_off, 0, u1)]);
        assert_eq!(c.kernel.density(1, 3).terms(), &[Term::real(p.k1, 0, u1)]);
        assert_eq!(c.kernel.density(3, 0).terms(), &[Term::real(p.k_j, 0, u2)]);
        assert_eq!(c.kernel.density(2, 1).terms(), &[Term::real(p.k_on, 0, p.k_on)]);
    }

    #[test]
    fn f_tau_is_proper() {
        let p = GeneModelParams::default();
        for conc in [p.r0, p.r1] {
            let f = gene_f_tau(&p, conc).unwrap();
            assert!((f.mass() - 1.0).abs() < 1e-9);
            assert!(f.mean().is_finite());
        }
    }

    #[test]
    fn larger_repression_has_heavier_tail() {
        let p = GeneModelParams::default();
        let f0 = gene_f_tau(&p, p.r0).unwrap();
        let f1 = gene_f_tau(&p, p.r1).unwrap();
        assert!(f1.mean() > f0.mean());
        assert!(f1.tail().eval(500.0) > f0.tail().eval(500.0));
    }

    #[test]
    fn no_repressor_gives_two_phase_renewal() {
        let p = GeneModelParams::default();
        let c = gene_channel(&p, 0.0).unwrap();
        let f = gene_f_tau(&p, 0.0).unwrap();
        // geometric number u2/kJ of P_on → I1 rounds, each 1/k1 + 1/u2 long
        let mean = (1.0 / p.k1) * (1.0 + p.k2 / p.k_j) + 1.0 / p.k_j;
        assert!((f.mean() - mean).abs() < 1e-9 * mean);
        assert_eq!(c.kernel.p(0, 2), 0.0);
    }

    #[test]
    fn leakage_rows_are_proper() {
        let c = leakage_channel(&LeakageModelParams::default()).unwrap();
        for y in 0..4 {
            assert!(c.kernel.defect(y) < 1e-12);
        }
        let p = LeakageModelParams::default();
        assert!((leakage_ctmc_phi(&p, 0.0) - phi(p.k_j)).abs() < 1e-14);
        assert!((leakage_ctmc_phi(&p, 1e4) - leakage_ctmc_phi_limit(&p)).abs() < 1e-12);
    }

    fn coeff_gap(a: &RationalLT, b: &RationalLT) -> f64 {
        let cmp = |x: &Poly, y: &Poly| {
            let n = x.coeffs().len().max(y.coeffs().len());
            let scale = x.coeffs().iter().chain(y.coeffs()).fold(0.0f64, |m, c| m.max(c.abs())).max(1e-300);
            (0..n)
                .map(|i| (x.coeffs().get(i).unwrap_or(&0.0) - y.coeffs().get(i).unwrap_or(&0.0)).abs() / scale)
                .fold(0.0, f64::max)
        };
        if a.is_zero() && b.is_zero() {
            return 0.0;
        }
        cmp(a.numerator(), b.numerator()).max(cmp(&a.denominator(), &b.denominator()))
    }

    #[test]
    fn filter_matches_closed_form() {
        let p = GeneModelParams::default();
        for conc in [p.r0, p.r1] {
            let f = gene_channel(&p, conc).unwrap().joint_filter().unwrap();
            assert_eq!(f.kernel().states(), &["J:3", "P_on:1", "P_off:2"]);
            let cf = gene_filtered_closed_form(&p, conc).unwrap();
            for y in 0..3 {
                for z in 0..3 {
                    let gap = coeff_gap(&f.transforms()[y][z], &cf[y][z]);
                    assert!(gap < 1e-10, "({y},{z}) gap {gap}");
                }
            }
        }
    }
}
