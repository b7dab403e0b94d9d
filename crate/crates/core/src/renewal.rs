//! Markov renewal equations: renewal densities `r(t) = E[λ_t]`, the
//! evolution of `E[φ(λ_t(z))]` and its time integral.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::expoly::{ExpPoly, C64};
use crate::filtering::FilterOutput;
use crate::kernels::SemiMarkovKernel;
use crate::laplace::{invert_lt_with_origin, lt_of, resolvent, RationalLT};
use crate::models::Channel;
use crate::quad::integrate;

/// Values on the uniform grid `t_i = i h`, `i = 0..=n`, per labeled series.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub h: f64,
    pub labels: Vec<String>,
    /// `values[i][z]`
    pub values: Vec<Vec<f64>>,
}

impl GridFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.len().saturating_sub(1))
    }

    pub fn column(&self, z: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[z]).collect()
    }

    /// Linear interpolation, clamped to the grid.
    pub fn interp(&self, t: f64, z: usize) -> f64 {
        let x = (t / self.h).clamp(0.0, (self.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.len().saturating_sub(2));
        let w = x - i as f64;
        (1.0 - w) * self.values[i][z] + w * self.values[(i + 1).min(self.len() - 1)][z]
    }

    /// Every other grid point, i.e. the same function at step `2h`.
    pub fn coarsened(&self) -> GridFunction {
        GridFunction { h: 2.0 * self.h, labels: self.labels.clone(), values: self.values.iter().step_by(2).cloned().collect() }
    }

    /// CSV rows `t,state,value`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,state,value")?;
        for (i, row) in self.values.iter().enumerate() {
            for (label, v) in self.labels.iter().zip(row) {
                writeln!(w, "{},{},{}", self.t(i), label, v)?;
            }
        }
        Ok(())
    }
}

/// `t ↦ E[φ(λ_t(z))]` on a grid, one series per target.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiCurve {
    pub grid: GridFunction,
}

/// A marginal Markov renewal description used by the renewal machinery:
/// the kernel, the state occupied at t = 0 right after an arrival, and the
/// states whose arrival intensity enters `φ`.
#[derive(Debug, Clone)]
pub struct MrpView {
    pub kernel: SemiMarkovKernel,
    pub eta: Vec<f64>,
    pub targets: Vec<usize>,
}

impl MrpView {
    pub fn new(kernel: SemiMarkovKernel, eta: Vec<f64>, targets: Vec<usize>) -> Result<Self> {
        let n = kernel.len();
        if eta.len() != n || targets.iter().any(|&z| z >= n) {
            return invalid("initial distribution or targets do not match the kernel");
        }
        let mass: f64 = eta.iter().sum();
        if eta.iter().any(|&e| e < 0.0) || (mass - 1.0).abs() > 1e-9 {
            return invalid("initial distribution must be a probability vector");
        }
        Ok(MrpView { kernel, eta, targets })
    }

    /// Marginal view of a filter output started in filtered state `start`,
    /// with targets the filtered states carrying mark `mark`.
    ///
    /// Non-injective coarse-grainings are accepted only when no state can
    /// reach two target states, so that `φ` of the summed intensity is the
    /// sum of `φ` over targets.
    pub fn from_filter(f: &FilterOutput, start: &str, mark: &str) -> Result<Self> {
        let k = f.kernel();
        let a0 = k.index_of(start).ok_or_else(|| Error::InvalidInput(format!("start state {start} is not filtered")))?;
        let z = f.mark_index(mark).ok_or_else(|| Error::InvalidInput(format!("unknown mark {mark}")))?;
        if f.is_injective() {
            let mk = f.marginal_kernel()?;
            let mut eta = vec![0.0; mk.len()];
            eta[f.coarse()[a0]] = 1.0;
            return MrpView::new(mk, eta, vec![z]);
        }
        let members = f.members(z);
        for y in 0..k.len() {
            if members.iter().filter(|&&b| !k.density(y, b).is_zero()).count() > 1 {
                return Err(Error::Capability(format!(
                    "marginal is not a Markov renewal process: state {} reaches several copies of mark {mark}; use Monte Carlo",
                    k.states()[y]
                )));
            }
        }
        let mut eta = vec![0.0; k.len()];
        eta[a0] = 1.0;
        MrpView::new(k.clone(), eta, members)
    }

    pub fn joint(c: &Channel) -> Result<Self> {
        MrpView::from_filter(&c.joint_filter()?, &c.start_augmented, &c.output_mark)
    }

    pub fn output(c: &Channel) -> Result<Self> {
        MrpView::from_filter(&c.output_filter()?, &c.start_augmented, &c.output_mark)
    }

    fn target_labels(&self) -> Vec<String> {
        self.targets.iter().map(|&z| self.kernel.states()[z].clone()).collect()
    }

    /// `q_yz(v) ln(q_yz(v) / S_y(v))`, zero where `q_yz` vanishes.
    pub fn g(&self, y: usize, z: usize, v: f64) -> f64 {
        let lq = self.kernel.density(y, z).ln_eval(v);
        if lq == f64::NEG_INFINITY {
            return 0.0;
        }
        lq.exp() * (lq - self.kernel.ln_survival(y, v))
    }
}

/// One exp-poly term `c τ^m e^{-ρτ}` of `q_yz` tracked by the recursive
/// convolution.
struct ConvTerm {
    y: usize,
    z: usize,
    coeff: C64,
    power: usize,
    decay: C64,
    /// Cell weights against the left and right node of `r`.
    left: Vec<C64>,
    right: Vec<C64>,
    /// `Σ_j r_j d_j^i e^{-ρ d_j}` over closed cells, `d_j` the lag of the
    /// cell's right end; `acc_l` uses left nodes, `acc_r` right nodes.
    acc_l: Vec<C64>,
    acc_r: Vec<C64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `∫_0^h v^k e^{-ρv} dv` for `k = 0..=kmax`.
fn cell_moments(rho: C64, h: f64, kmax: usize) -> Vec<C64> {
    let x = rho * h;
    (0..=kmax)
        .map(|k| {
            if x.norm() < 1.0 {
                let mut sum = C64::new(0.0, 0.0);
                let mut term = C64::new(1.0, 0.0);
                for l in 0..60 {
                    sum += term / (k + l + 1) as f64;
                    term *= -x / (l + 1) as f64;
                    if term.norm() < 1e-18 * sum.norm() {
                        break;
                    }
                }
                sum * h.powi(k as i32 + 1)
            } else {
                let mut partial = C64::new(0.0, 0.0);
                let mut term = C64::new(1.0, 0.0);
                for l in 0..=k {
                    partial += term;
                    term *= x / (l + 1) as f64;
                }
                let kf: f64 = (1..=k).map(|i| i as f64).product();
                (C64::new(1.0, 0.0) - (-x).exp() * partial) * kf / rho.powu(k as u32 + 1)
            }
        })
        .collect()
}

/// Product trapezoidal solution of `r(t) = η q(t) + ∫_0^t r(s) q(t-s) ds` on
/// `[0, t_max]` with step `h`: `r` is linear between nodes and each cell is
/// integrated exactly against the exp-poly kernel. Cell sums run
/// recursively, so the cost is linear in the number of steps, and constant
/// `r` is reproduced without mass loss.
pub fn renewal_density_grid(k: &SemiMarkovKernel, eta: &[f64], t_max: f64, h: f64) -> Result<GridFunction> {
    let n_states = k.len();
    if !(h > 0.0) || !(t_max >= h) {
        return invalid(format!("need 0 < h <= T, got h = {h}, T = {t_max}"));
    }
    if eta.len() != n_states {
        return invalid("initial distribution does not match the kernel");
    }
    let steps = (t_max / h).round() as usize;
    let mut terms = Vec::new();
    for y in 0..n_states {
        for z in 0..n_states {
            for term in k.density(y, z).terms() {
                let m = term.power as usize;
                let mom = cell_moments(term.rate, h, m + 1);
                // v measured back from the cell's right end: weight v/h on the
                // left node and 1 - v/h on the right node
                let left: Vec<C64> = (0..=m).map(|i| mom[i + 1] / h).collect();
                let right: Vec<C64> = (0..=m).map(|i| mom[i] - left[i]).collect();
                terms.push(ConvTerm {
                    y,
                    z,
                    coeff: term.coeff,
                    power: m,
                    decay: (-term.rate * h).exp(),
                    left,
                    right,
                    acc_l: vec![C64::new(0.0, 0.0); m + 1],
                    acc_r: vec![C64::new(0.0, 0.0); m + 1],
                });
            }
        }
    }
    let q_at = |t: f64| -> Vec<Vec<f64>> { (0..n_states).map(|y| (0..n_states).map(|z| k.density(y, z).eval(t)).collect()).collect() };
    // row-vector system r_n (I - W) = b with W the newest cell's right weights
    let mut w = DMatrix::zeros(n_states, n_states);
    for term in &terms {
        w[(term.y, term.z)] += (term.coeff * term.right[term.power]).re;
    }
    let m = DMatrix::identity(n_states, n_states) - w.transpose();
    let lu = m.lu();
    let max_power = terms.iter().map(|t| t.power).max().unwrap_or(0);
    let hpow: Vec<f64> = (0..=max_power).map(|p| h.powi(p as i32)).collect();

    let q0 = q_at(0.0);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    values.push((0..n_states).map(|z| (0..n_states).map(|y| eta[y] * q0[y][z]).sum()).collect());
    for n in 1..=steps {
        let prev = &values[n - 1];
        let mut conv = vec![0.0; n_states];
        for term in &mut terms {
            let mm = term.power;
            // cells closed before step n-1, shifted by one step
            if n >= 2 {
                let (rl, rr) = (values[n - 2][term.y], prev[term.y]);
                term.acc_l[0] += rl;
                term.acc_r[0] += rr;
                for acc in [&mut term.acc_l, &mut term.acc_r] {
                    let old = acc.clone();
                    for i in 0..=mm {
                        let mut s = C64::new(0.0, 0.0);
                        for (l, a) in old.iter().enumerate().take(i + 1) {
                            s += a * binomial(i, l) * hpow[i - l];
                        }
                        acc[i] = s * term.decay;
                    }
                }
            }
            let mut c = C64::new(0.0, 0.0);
            for i in 0..=mm {
                c += binomial(mm, i) * (term.acc_l[i] * term.left[mm - i] + term.acc_r[i] * term.right[mm - i]);
            }
            c += prev[term.y] * term.left[mm];
            conv[term.z] += (term.coeff * c).re;
        }
        let qn = q_at(n as f64 * h);
        let b = nalgebra::DVector::from_fn(n_states, |z, _| (0..n_states).map(|y| eta[y] * qn[y][z]).sum::<f64>() + conv[z]);
        let r = lu.solve(&b).ok_or_else(|| Error::Structural("singular product-integration step".into()))?;
        values.push(r.iter().copied().collect());
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Refinement { discrepancy: f64::INFINITY, tolerance: 0.0 });
    }
    Ok(GridFunction { h, labels: k.states().to_vec(), values })
}

/// Grid solution at step `h/2`, checked against the one at `h`. Fails with
/// a refinement error when they differ by more than `tol` on shared points.
pub fn volterra_solve(k: &SemiMarkovKernel, eta: &[f64], t_max: f64, h: f64, tol: f64) -> Result<GridFunction> {
    let coarse = renewal_density_grid(k, eta, t_max, h)?;
    let fine = renewal_density_grid(k, eta, t_max, h / 2.0)?;
    let gap = max_gap(&coarse, &fine.coarsened());
    if gap > tol {
        return Err(Error::Refinement { discrepancy: gap, tolerance: tol });
    }
    Ok(fine)
}

/// Largest absolute difference between two grid functions on common points.
pub fn max_gap(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values.iter().zip(&b.values).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
}

/// Exact renewal densities `r*(s) = η q*(s) (I - q*(s))^{-1}` inverted by
/// partial fractions; one exp-poly per state, with a constant term for
/// recurrent states.
pub fn renewal_density_exact(k: &SemiMarkovKernel, eta: &[f64]) -> Result<Vec<ExpPoly>> {
    let n = k.len();
    if eta.len() != n {
        return invalid("initial distribution does not match the kernel");
    }
    let qs: Vec<Vec<RationalLT>> = k.densities().iter().map(|row| row.iter().map(lt_of).collect()).collect();
    let res = resolvent(&qs)?;
    (0..n)
        .map(|z| {
            let mut acc = RationalLT::zero();
            for y in 0..n {
                if eta[y] == 0.0 {
                    continue;
                }
                let entry = if y == z { res[y][z].sub(&RationalLT::constant(1.0))? } else { res[y][z].clone() };
                acc = acc.add(&entry.scale(eta[y]))?;
            }
            acc.reduce()?;
            Ok(invert_lt_with_origin(&acc)?.density)
        })
        .collect()
}

/// Grid curve of `E[φ(λ_t(z))]` for every target. Each point uses the
/// exact renewal densities and adaptive quadrature.
pub fn phi_evolution(view: &MrpView, t_max: f64, h: f64) -> Result<PhiCurve> {
    if !(h > 0.0) || !(t_max >= h) {
        return invalid(format!("need 0 < h <= T, got h = {h}, T = {t_max}"));
    }
    let r = renewal_density_exact(&view.kernel, &view.eta)?;
    let steps = (t_max / h).round() as usize;
    let values = (0..=steps)
        .map(|i| view.targets.iter().map(|&z| phi_at_target(view, &r, z, i as f64 * h)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(PhiCurve { grid: GridFunction { h, labels: view.target_labels(), values } })
}

/// Grid-only curve: renewal densities and the convolution integral both by
/// the trapezoidal rule on the grid of `r`.
pub fn phi_from_grid(view: &MrpView, r: &GridFunction) -> Result<PhiCurve> {
    let n = r.len();
    let h = r.h;
    let ns = view.kernel.len();
    let mut values = vec![vec![0.0; view.targets.len()]; n];
    for (ti, &z) in view.targets.iter().enumerate() {
        for y in 0..ns {
            if view.kernel.density(y, z).is_zero() {
                continue;
            }
            let g: Vec<f64> = (0..n).map(|i| view.g(y, z, r.t(i))).collect();
            for i in 0..n {
                let mut conv = 0.0;
                for j in 0..=i {
                    let w = if j == 0 || j == i { 0.5 } else { 1.0 };
                    conv += w * g[j] * r.values[i - j][y];
                }
                values[i][ti] += view.eta[y] * g[i] + h * conv;
            }
        }
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("non-finite phi curve".into()));
    }
    Ok(PhiCurve { grid: GridFunction { h, labels: view.target_labels(), values } })
}

const QUAD_TOL: f64 = 1e-11;

/// `Σ_z E[φ(λ_t(z))]` over the targets at one time, from exact renewal
/// densities `r` and adaptive quadrature.
pub fn phi_at(view: &MrpView, r: &[ExpPoly], t: f64) -> Result<f64> {
    view.targets.iter().map(|&z| phi_at_target(view, r, z, t)).sum()
}

fn phi_at_target(view: &MrpView, r: &[ExpPoly], z: usize, t: f64) -> Result<f64> {
    let mut total = 0.0;
    for y in 0..view.kernel.len() {
        if view.kernel.density(y, z).is_zero() {
            continue;
        }
        total += view.eta[y] * view.g(y, z, t);
        if t > 0.0 && !r[y].is_zero() {
            total += integrate(|v| view.g(y, z, v) * r[y].eval(t - v), 0.0, t, QUAD_TOL)?;
        }
    }
    Ok(total)
}

/// `Σ_z ∫_0^T E[φ(λ_t(z))] dt` over the targets, exactly up to quadrature:
/// `Σ_y η_y ∫_0^T g_y + ∫_0^T g_y(v) R_y(T - v) dv` with `R_y` the
/// antiderivative of `r_y`.
pub fn integrated_phi(view: &MrpView, r: &[ExpPoly], t_max: f64) -> Result<f64> {
    if !(t_max >= 0.0) {
        return invalid("horizon must be nonnegative");
    }
    let big_r: Vec<ExpPoly> = r.iter().map(|d| d.antiderivative()).collect();
    let mut total = 0.0;
    for &z in &view.targets {
        for y in 0..view.kernel.len() {
            if view.kernel.density(y, z).is_zero() {
                continue;
            }
            let (ey, ry) = (view.eta[y], &big_r[y]);
            let r0 = ry.eval(0.0);
            let f = |v: f64| view.g(y, z, v) * (ey + ry.eval(t_max - v) - r0);
            total += integrate(f, 0.0, t_max, QUAD_TOL * t_max.max(1.0))?;
        }
    }
    Ok(total)
}

/// Time integral of one curve series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiIntegral {
    pub value: f64,
    /// Richardson correction `(I_h - I_{2h}) / 3`; `value + error` is the
    /// extrapolated integral.
    pub error: f64,
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

/// Trapezoidal `∫_0^T` of every series of the curve.
pub fn integrate_mi_term(curve: &PhiCurve, t_max: f64) -> Result<Vec<MiIntegral>> {
    let g = &curve.grid;
    if t_max > g.t_max() + 1e-9 * g.h.max(t_max) {
        return invalid(format!("curve ends at {} before T = {t_max}", g.t_max()));
    }
    let n = (t_max / g.h).round() as usize;
    (0..g.labels.len())
        .map(|z| {
            let col: Vec<f64> = g.values[..=n].iter().map(|v| v[z]).collect();
            let fine = trapezoid(&col, g.h);
            let error = if n % 2 == 0 && n >= 2 {
                let coarse: Vec<f64> = col.iter().step_by(2).copied().collect();
                (fine - trapezoid(&coarse, 2.0 * g.h)) / 3.0
            } else {
                f64::NAN
            };
            Ok(MiIntegral { value: fine, error })
        })
        .collect()
}

/// `P(Z_t = z, V_t <= v)` from renewal densities:
/// `η_z S_z(t) 1{t <= v} + ∫_{(t-v)^+}^t r_z(s) S_z(t-s) ds`.
pub fn state_age_probability(k: &SemiMarkovKernel, eta: &[f64], r: &[ExpPoly], z: usize, t: f64, v: f64) -> Result<f64> {
    let mut p = if t <= v { eta[z] * k.survival(z, t) } else { 0.0 };
    let lo = (t - v).max(0.0);
    if t > lo {
        p += integrate(|s| r[z].eval(s) * k.survival(z, t - s), lo, t, 1e-12)?;
    }
    Ok(p)
}

/// Finite-horizon MI `∫_0^T E[φ(λ^{XY}_t)] - E[φ(λ^Y_t)] dt` from the two
/// marginal views.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ExactMi {
    pub t: f64,
    pub joint_term: f64,
    pub output_term: f64,
    pub mi: f64,
}

/// Exact MI of a channel at each horizon in `times`.
pub fn exact_mi(c: &Channel, times: &[f64]) -> Result<Vec<ExactMi>> {
    let joint = MrpView::joint(c)?;
    let output = MrpView::output(c)?;
    let rj = renewal_density_exact(&joint.kernel, &joint.eta)?;
    let ro = renewal_density_exact(&output.kernel, &output.eta)?;
    times
        .iter()
        .map(|&t| {
            let joint_term = integrated_phi(&joint, &rj, t)?;
            let output_term = integrated_phi(&output, &ro, t)?;
            Ok(ExactMi { t, joint_term, output_term, mi: joint_term - output_term })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{erlang_channel, phi, poisson_channel};
    use approx::assert_relative_eq;

    fn single(d: ExpPoly) -> MrpView {
        let k = SemiMarkovKernel::new(vec!["x".into()], vec![vec![d]]).unwrap();
        MrpView::new(k, vec![1.0], vec![0]).unwrap()
    }

    #[test]
    fn poisson_renewal_density_is_constant() {
        let v = single(ExpPoly::exponential(1.7));
        let g = renewal_density_grid(&v.kernel, &v.eta, 10.0, 0.01).unwrap();
        assert!(g.column(0).iter().all(|r| (r - 1.7).abs() < 1e-12));
        let ex = renewal_density_exact(&v.kernel, &v.eta).unwrap();
        assert_relative_eq!(ex[0].eval(3.0), 1.7, epsilon = 1e-10);
    }

    #[test]
    fn erlang_renewal_density() {
        let k = 0.8;
        let v = single(ExpPoly::erlang(2, k));
        let exact = |t: f64| 0.5 * k * (1.0 - (-2.0 * k * t).exp());
        let ex = renewal_density_exact(&v.kernel, &v.eta).unwrap();
        let g = renewal_density_grid(&v.kernel, &v.eta, 20.0, 0.01).unwrap();
        for t in [0.0, 0.5, 2.0, 10.0, 20.0] {
            assert_relative_eq!(ex[0].eval(t), exact(t), epsilon = 1e-10);
            assert!((g.interp(t, 0) - exact(t)).abs() < 1e-4);
        }
    }

    #[test]
    fn grid_is_second_order() {
        let v = single(ExpPoly::erlang(2, 1.0));
        let ex = renewal_density_exact(&v.kernel, &v.eta).unwrap();
        let err = |h: f64| {
            let g = renewal_density_grid(&v.kernel, &v.eta, 8.0, h).unwrap();
            (0..g.len()).map(|i| (g.values[i][0] - ex[0].eval(g.t(i))).abs()).fold(0.0, f64::max)
        };
        let ratio = err(0.1) / err(0.05);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn volterra_refinement_error() {
        let v = single(ExpPoly::erlang(2, 1.0));
        assert!(matches!(volterra_solve(&v.kernel, &v.eta, 5.0, 1.0, 1e-10), Err(Error::Refinement { .. })));
        assert!(volterra_solve(&v.kernel, &v.eta, 5.0, 0.01, 1e-4).is_ok());
    }

    #[test]
    fn poisson_phi_is_constant() {
        for k in [1.0, 2.5, 0.3] {
            let v = MrpView::output(&poisson_channel(k).unwrap()).unwrap();
            let c = phi_evolution(&v, 5.0, 0.05).unwrap();
            assert!(c.grid.column(0).iter().all(|x| (x - phi(k)).abs() < 1e-10));
            let r = renewal_density_exact(&v.kernel, &v.eta).unwrap();
            assert!((phi_at(&v, &r, 2.0).unwrap() - phi(k)).abs() < 1e-10);
            assert!((integrated_phi(&v, &r, 5.0).unwrap() - 5.0 * phi(k)).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_and_exact_phi_agree() {
        let v = MrpView::output(&erlang_channel(1.3).unwrap()).unwrap();
        let r = renewal_density_exact(&v.kernel, &v.eta).unwrap();
        let grid = renewal_density_grid(&v.kernel, &v.eta, 6.0, 0.005).unwrap();
        let c = phi_from_grid(&v, &grid).unwrap();
        for t in [0.5, 2.0, 6.0] {
            assert!((c.grid.interp(t, 0) - phi_at(&v, &r, t).unwrap()).abs() < 1e-4);
        }
        let exact = integrated_phi(&v, &r, 6.0).unwrap();
        assert!((integrate_mi_term(&c, 6.0).unwrap()[0].value - exact).abs() < 5e-4);
        let i = integrate_mi_term(&phi_evolution(&v, 6.0, 0.02).unwrap(), 6.0).unwrap()[0];
        assert!((i.value - exact).abs() < 1e-3);
        assert!((i.value + i.error - exact).abs() < 0.5 * (i.value - exact).abs());
    }

    #[test]
    fn integrate_constant_and_zero_curves() {
        let grid = GridFunction { h: 0.1, labels: vec!["a".into(), "b".into()], values: vec![vec![2.0, 0.0]; 31] };
        let out = integrate_mi_term(&PhiCurve { grid }, 3.0).unwrap();
        assert_relative_eq!(out[0].value, 6.0, epsilon = 1e-12);
        assert_eq!(out[1].value, 0.0);
    }

    #[test]
    fn age_distribution_is_a_probability() {
        let v = single(ExpPoly::erlang(2, 1.0));
        let r = renewal_density_exact(&v.kernel, &v.eta).unwrap();
        let t = 3.0;
        let mut last = 0.0;
        for vv in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let p = state_age_probability(&v.kernel, &v.eta, &r, 0, t, vv).unwrap();
            assert!(p >= last - 1e-12);
            last = p;
        }
        assert!((last - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_export() {
        let grid = GridFunction { h: 0.5, labels: vec!["J".into()], values: vec![vec![1.0], vec![2.0]] };
        let mut out = Vec::new();
        grid.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "t,state,value\n0,J,1\n0.5,J,2\n");
    }
}
