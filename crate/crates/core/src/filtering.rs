//! Marginalization of a semi-Markov kernel onto observable transitions:
//! transition-class augmentation, Anderson filtering of the hidden block,
//! and coarse-graining of the filtered states onto output marks.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::expoly::{factorial, ExpPoly, C64};
use crate::kernels::SemiMarkovKernel;
use crate::laplace::{invert_lt, lt_of, mat_add, mat_mul, neumann_series, spectral_radius, RationalLT, RationalMatrix};

/// Target for the omitted tail of the time-domain series.
const SERIES_TAIL_TOL: f64 = 1e-10;
const SERIES_K_CAP: usize = 10_000;
/// Largest matrix the series path will exponentiate.
const SERIES_DIM_CAP: usize = 2_000;

/// Class index for each ordered transition; class 0 is unobservable.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionClassMap {
    class: Vec<Vec<Option<u32>>>,
}

impl TransitionClassMap {
    pub fn new(n: usize) -> Self {
        TransitionClassMap { class: vec![vec![None; n]; n] }
    }

    /// Every transition of positive probability gets class `c`.
    pub fn uniform(k: &SemiMarkovKernel, c: u32) -> Self {
        let n = k.len();
        let mut m = Self::new(n);
        for y in 0..n {
            for z in 0..n {
                if !k.density(y, z).is_zero() {
                    m.class[y][z] = Some(c);
                }
            }
        }
        m
    }

    pub fn set(&mut self, y: usize, z: usize, c: u32) {
        self.class[y][z] = Some(c);
    }

    pub fn get(&self, y: usize, z: usize) -> Option<u32> {
        self.class[y][z]
    }

    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }
}

/// Kernel on reachable `(z, i)` pairs, with the data needed to rebuild
/// rows for fresh transient copies.
#[derive(Debug, Clone)]
pub struct AugmentedKernel {
    kernel: SemiMarkovKernel,
    pairs: Vec<(usize, u32)>,
    base: SemiMarkovKernel,
    classes: TransitionClassMap,
}

impl AugmentedKernel {
    pub fn kernel(&self) -> &SemiMarkovKernel {
        &self.kernel
    }

    /// `(original state, class)` of each augmented state.
    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.pairs
    }

    pub fn base(&self) -> &SemiMarkovKernel {
        &self.base
    }

    /// Augmented states with observable class, in augmented order.
    pub fn observable(&self) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&a| self.pairs[a].1 > 0).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.kernel.index_of(label)
    }

    /// Outgoing row of original state `y` expressed over augmented targets.
    pub fn row_from(&self, y: usize) -> Vec<ExpPoly> {
        self.pairs
            .iter()
            .map(|&(z, i)| {
                if self.classes.get(y, z) == Some(i) {
                    self.base.density(y, z).clone()
                } else {
                    ExpPoly::zero()
                }
            })
            .collect()
    }
}

pub fn augmented_label(state: &str, class: u32) -> String {
    format!("{state}:{class}")
}

/// Splits every state by the class of the transition that entered it.
/// Observable pairs come first, then hidden ones, each in state order.
pub fn augment(k: &SemiMarkovKernel, classes: &TransitionClassMap) -> Result<AugmentedKernel> {
    let n = k.len();
    if classes.len() != n {
        return invalid(format!("class map covers {} states, kernel has {n}", classes.len()));
    }
    let mut pairs: Vec<(usize, u32)> = Vec::new();
    for y in 0..n {
        for z in 0..n {
            if k.density(y, z).is_zero() {
                continue;
            }
            let Some(i) = classes.get(y, z) else {
                return invalid(format!("transition {} -> {} has no class", k.states()[y], k.states()[z]));
            };
            if !pairs.contains(&(z, i)) {
                pairs.push((z, i));
            }
        }
    }
    pairs.sort_by_key(|&(z, i)| (i == 0, z, i));
    let labels = pairs.iter().map(|&(z, i)| augmented_label(&k.states()[z], i)).collect();
    let q = pairs
        .iter()
        .map(|&(y, _)| {
            pairs
                .iter()
                .map(|&(z, i)| if classes.get(y, z) == Some(i) { k.density(y, z).clone() } else { ExpPoly::zero() })
                .collect()
        })
        .collect();
    let kernel = SemiMarkovKernel::from_validated(labels, q)?;
    Ok(AugmentedKernel { kernel, pairs, base: k.clone(), classes: classes.clone() })
}

/// Row of the first observable event from a fresh start, per filtered state
/// and per mark.
#[derive(Debug, Clone)]
pub struct TransientRow {
    pub origin: String,
    pub per_state: Vec<ExpPoly>,
    pub per_mark: Vec<ExpPoly>,
}

/// Filtered kernel on `Ŝ` together with the coarse-graining onto marks.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    kernel: SemiMarkovKernel,
    transforms: RationalMatrix,
    coarse: Vec<usize>,
    marks: Vec<String>,
    transient: Option<TransientRow>,
    warnings: Vec<String>,
}

impl FilterOutput {
    pub fn kernel(&self) -> &SemiMarkovKernel {
        &self.kernel
    }

    /// `q̌*(s)` entrywise.
    pub fn transforms(&self) -> &RationalMatrix {
        &self.transforms
    }

    /// `g`: filtered state index to mark index.
    pub fn coarse(&self) -> &[usize] {
        &self.coarse
    }

    pub fn marks(&self) -> &[String] {
        &self.marks
    }

    pub fn mark_index(&self, label: &str) -> Option<usize> {
        self.marks.iter().position(|m| m == label)
    }

    pub fn transient(&self) -> Option<&TransientRow> {
        self.transient.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_injective(&self) -> bool {
        self.coarse.len() == self.marks.len()
    }

    /// `g⁻¹(z)`.
    pub fn members(&self, z: usize) -> Vec<usize> {
        (0..self.coarse.len()).filter(|&a| self.coarse[a] == z).collect()
    }

    /// `Σ_{β ∈ g⁻¹(z)} q̌_αβ`.
    pub fn grouped(&self, alpha: usize, z: usize) -> ExpPoly {
        self.members(z).iter().fold(ExpPoly::zero(), |acc, &b| acc.add(self.kernel.density(alpha, b)))
    }

    /// The kernel relabeled onto marks; defined only for injective `g`.
    pub fn marginal_kernel(&self) -> Result<SemiMarkovKernel> {
        if !self.is_injective() {
            return Err(Error::Capability("coarse-graining is not injective; marginal is not an MrP".into()));
        }
        let n = self.marks.len();
        let mut inv = vec![0; n];
        for (a, &z) in self.coarse.iter().enumerate() {
            inv[z] = a;
        }
        let q = (0..n)
            .map(|y| (0..n).map(|z| self.kernel.density(inv[y], inv[z]).clone()).collect())
            .collect();
        SemiMarkovKernel::from_validated(self.marks.clone(), q)
    }
}

/// Hidden states reachable from the given rows through hidden paths.
fn reachable_hidden(k: &SemiMarkovKernel, keep: &[usize], sources: &[&[ExpPoly]]) -> Vec<usize> {
    let n = k.len();
    let hidden: Vec<bool> = (0..n).map(|z| !keep.contains(&z)).collect();
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let rows = keep.iter().map(|&a| &k.densities()[a][..]).chain(sources.iter().copied());
    for row in rows {
        for z in 0..n {
            if hidden[z] && !seen[z] && !row[z].is_zero() {
                seen[z] = true;
                stack.push(z);
            }
        }
    }
    while let Some(h) = stack.pop() {
        for z in 0..n {
            if hidden[z] && !seen[z] && !k.density(h, z).is_zero() {
                seen[z] = true;
                stack.push(z);
            }
        }
    }
    (0..n).filter(|&z| seen[z]).collect()
}

/// Hidden-block data shared by every filtered row.
struct HiddenBlock {
    keep: Vec<usize>,
    hidden: Vec<usize>,
    /// `(I - d*)^{-1} c*`, hidden by keep.
    nc: RationalMatrix,
}

impl HiddenBlock {
    fn new(k: &SemiMarkovKernel, keep: &[usize], sources: &[&[ExpPoly]]) -> Result<Self> {
        let hidden = reachable_hidden(k, keep, sources);
        let d: RationalMatrix =
            hidden.iter().map(|&h| hidden.iter().map(|&x| lt_of(k.density(h, x))).collect()).collect();
        let c: RationalMatrix = hidden.iter().map(|&h| keep.iter().map(|&x| lt_of(k.density(h, x))).collect()).collect();
        let n = neumann_series(&d)?;
        let nc = mat_mul(&n, &c)?;
        Ok(HiddenBlock { keep: keep.to_vec(), hidden, nc })
    }

    /// `a* + b* (I - d*)^{-1} c*` for one source row.
    fn filter_row(&self, row: &[ExpPoly]) -> Result<Vec<RationalLT>> {
        let a: RationalMatrix = vec![self.keep.iter().map(|&x| lt_of(&row[x])).collect()];
        if self.hidden.is_empty() {
            return Ok(a.into_iter().next().unwrap());
        }
        let b: RationalMatrix = vec![self.hidden.iter().map(|&x| lt_of(&row[x])).collect()];
        let out = mat_add(&a, &mat_mul(&b, &self.nc)?)?;
        Ok(out.into_iter().next().unwrap())
    }
}

fn invert_row(row: &[RationalLT], warnings: &mut Vec<String>) -> Result<Vec<ExpPoly>> {
    row.iter()
        .map(|r| {
            let inv = invert_lt(r)?;
            if let Some(w) = inv.warning {
                warnings.push(w);
            }
            Ok(inv.density)
        })
        .collect()
}

fn check_keep(k: &SemiMarkovKernel, keep: &[usize]) -> Result<()> {
    if keep.is_empty() {
        return invalid("keep-set is empty");
    }
    for (i, &a) in keep.iter().enumerate() {
        if a >= k.len() {
            return invalid(format!("keep index {a} out of range"));
        }
        if keep[..i].contains(&a) {
            return invalid(format!("state {} kept twice", k.states()[a]));
        }
    }
    Ok(())
}

/// Anderson filter onto `keep` via the transform route
/// `q̌* = a* + b* (I - d*)^{-1} c*`. The result carries the identity
/// coarse-graining.
pub fn anderson_filter(k: &SemiMarkovKernel, keep: &[usize]) -> Result<FilterOutput> {
    check_keep(k, keep)?;
    let block = HiddenBlock::new(k, keep, &[])?;
    let transforms: RationalMatrix =
        keep.iter().map(|&a| block.filter_row(&k.densities()[a])).collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let q: Vec<Vec<ExpPoly>> =
        transforms.iter().map(|row| invert_row(row, &mut warnings)).collect::<Result<_>>()?;
    let labels: Vec<String> = keep.iter().map(|&a| k.states()[a].clone()).collect();
    let kernel = SemiMarkovKernel::new(labels.clone(), q)?;
    Ok(FilterOutput {
        kernel,
        transforms,
        coarse: (0..keep.len()).collect(),
        marks: labels,
        transient: None,
        warnings,
    })
}

/// Row of the filter started from a fresh copy of `row`'s owner: the first
/// observable transition, per kept state.
pub fn transient_row(k: &SemiMarkovKernel, keep: &[usize], row: &[ExpPoly]) -> Result<(Vec<RationalLT>, Vec<ExpPoly>)> {
    check_keep(k, keep)?;
    if row.len() != k.len() {
        return invalid("transient source row has the wrong length");
    }
    let block = HiddenBlock::new(k, keep, &[row])?;
    let lt = block.filter_row(row)?;
    let mut warnings = Vec::new();
    let dens = invert_row(&lt, &mut warnings)?;
    for d in &dens {
        d.validate_density()?;
    }
    Ok((lt, dens))
}

/// Relabels filtered states onto marks. `g[α]` is the mark index of
/// filtered state `α`; every mark needs a preimage.
pub fn coarse_grain(f: &FilterOutput, marks: Vec<String>, g: Vec<usize>) -> Result<FilterOutput> {
    if g.len() != f.kernel.len() {
        return invalid(format!("coarse-graining covers {} states, filter has {}", g.len(), f.kernel.len()));
    }
    for (z, m) in marks.iter().enumerate() {
        if !g.contains(&z) {
            return invalid(format!("mark {m} has no preimage"));
        }
    }
    if let Some(&bad) = g.iter().find(|&&z| z >= marks.len()) {
        return invalid(format!("mark index {bad} out of range"));
    }
    let mut out = FilterOutput { coarse: g, marks, ..f.clone() };
    if let Some(t) = &f.transient {
        out.transient = Some(TransientRow { per_mark: group_row(&t.per_state, &out.coarse, out.marks.len()), ..t.clone() });
    }
    Ok(out)
}

fn group_row(per_state: &[ExpPoly], g: &[usize], n_marks: usize) -> Vec<ExpPoly> {
    let mut out = vec![ExpPoly::zero(); n_marks];
    for (a, d) in per_state.iter().enumerate() {
        out[g[a]] = out[g[a]].add(d);
    }
    out
}

/// Everything needed to marginalize a kernel onto its output marks.
#[derive(Debug, Clone)]
pub struct MarginalSpec {
    pub classes: TransitionClassMap,
    /// Augmented labels (`state:class`) to keep; all observable pairs if `None`.
    pub keep: Option<Vec<String>>,
    pub marks: Vec<String>,
    /// Mark index for each kept state, in keep order.
    pub coarse: Vec<usize>,
    /// Original state the process starts in, for the transient row.
    pub initial: Option<String>,
}

/// Augment, filter, coarse-grain, and attach the transient row.
pub fn marginalize(k: &SemiMarkovKernel, spec: &MarginalSpec) -> Result<FilterOutput> {
    let aug = augment(k, &spec.classes)?;
    let keep: Vec<usize> = match &spec.keep {
        None => aug.observable(),
        Some(labels) => labels
            .iter()
            .map(|l| aug.index_of(l).ok_or_else(|| Error::InvalidInput(format!("unknown augmented state {l}"))))
            .collect::<Result<_>>()?,
    };
    let filtered = anderson_filter(aug.kernel(), &keep)?;
    let mut out = coarse_grain(&filtered, spec.marks.clone(), spec.coarse.clone())?;
    if let Some(xi) = &spec.initial {
        let y = k.index_of(xi).ok_or_else(|| Error::InvalidInput(format!("unknown initial state {xi}")))?;
        let (_, per_state) = transient_row(aug.kernel(), &keep, &aug.row_from(y))?;
        let per_mark = group_row(&per_state, &out.coarse, out.marks.len());
        out.transient = Some(TransientRow { origin: xi.clone(), per_state, per_mark });
    }
    Ok(out)
}

/// Static modulation: block-diagonal kernel over `C × S` with a prior on `C`.
#[derive(Debug, Clone)]
pub struct Modulated {
    pub kernel: SemiMarkovKernel,
    pub block_of: Vec<usize>,
    pub block_labels: Vec<String>,
    pub prior: Vec<f64>,
}

fn check_prior(prior: &[f64], n: usize) -> Result<()> {
    if prior.len() != n {
        return invalid(format!("prior has {} entries for {n} blocks", prior.len()));
    }
    if prior.iter().any(|&p| !(p >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return invalid("prior is not a probability vector");
    }
    Ok(())
}

fn block_label(c: &str, s: &str) -> String {
    format!("{c}|{s}")
}

pub fn modulated_kernel(blocks: &[(String, SemiMarkovKernel)], prior: &[f64]) -> Result<Modulated> {
    check_prior(prior, blocks.len())?;
    let mut labels = Vec::new();
    let mut block_of = Vec::new();
    for (b, (c, k)) in blocks.iter().enumerate() {
        labels.extend(k.states().iter().map(|s| block_label(c, s)));
        block_of.extend(std::iter::repeat(b).take(k.len()));
    }
    let n = labels.len();
    let mut q = vec![vec![ExpPoly::zero(); n]; n];
    let mut off = 0;
    for (_, k) in blocks {
        for y in 0..k.len() {
            for z in 0..k.len() {
                q[off + y][off + z] = k.density(y, z).clone();
            }
        }
        off += k.len();
    }
    Ok(Modulated {
        kernel: SemiMarkovKernel::from_validated(labels, q)?,
        block_of,
        block_labels: blocks.iter().map(|(c, _)| c.clone()).collect(),
        prior: prior.to_vec(),
    })
}

/// Marginalizes each block independently and assembles the block-diagonal
/// filter output. Marks are merged by label, so several blocks may map to
/// the same mark. The transient row is the prior mixture of block rows.
pub fn modulated_marginal(
    blocks: &[(String, SemiMarkovKernel, MarginalSpec)],
    prior: &[f64],
) -> Result<(FilterOutput, Vec<usize>)> {
    check_prior(prior, blocks.len())?;
    let outs: Vec<FilterOutput> =
        blocks.par_iter().map(|(_, k, spec)| marginalize(k, spec)).collect::<Result<_>>()?;
    let mut marks: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut coarse = Vec::new();
    let mut block_of = Vec::new();
    for (b, ((c, _, _), o)) in blocks.iter().zip(&outs).enumerate() {
        for (a, s) in o.kernel.states().iter().enumerate() {
            labels.push(block_label(c, s));
            let m = &o.marks[o.coarse[a]];
            let idx = marks.iter().position(|x| x == m).unwrap_or_else(|| {
                marks.push(m.clone());
                marks.len() - 1
            });
            coarse.push(idx);
            block_of.push(b);
        }
    }
    let n = labels.len();
    let mut q = vec![vec![ExpPoly::zero(); n]; n];
    let mut tr = vec![vec![RationalLT::zero(); n]; n];
    let mut per_state = Vec::with_capacity(n);
    let has_transient = outs.iter().all(|o| o.transient.is_some());
    let mut warnings = Vec::new();
    let mut off = 0;
    for (b, o) in outs.iter().enumerate() {
        let m = o.kernel.len();
        for y in 0..m {
            for z in 0..m {
                q[off + y][off + z] = o.kernel.density(y, z).clone();
                tr[off + y][off + z] = o.transforms[y][z].clone();
            }
        }
        if let Some(t) = &o.transient {
            per_state.extend(t.per_state.iter().map(|d| d.scale(prior[b])));
        }
        warnings.extend(o.warnings.iter().cloned());
        off += m;
    }
    let kernel = SemiMarkovKernel::from_validated(labels, q)?;
    let transient = if has_transient {
        let origin = outs[0].transient.as_ref().unwrap().origin.clone();
        let per_mark = group_row(&per_state, &coarse, marks.len());
        Some(TransientRow { origin, per_state, per_mark })
    } else {
        None
    };
    Ok((FilterOutput { kernel, transforms: tr, coarse, marks, transient, warnings }, block_of))
}

/// Matrix-exponential realization `X(t) = U e^{At} V` of a matrix of
/// exponential polynomials, one Jordan block per term.
struct MeRep {
    u: DMatrix<C64>,
    a: DMatrix<C64>,
    v: DMatrix<C64>,
}

fn me_rep(x: &[Vec<&ExpPoly>], rows: usize, cols: usize) -> MeRep {
    let p: usize = x.iter().flatten().flat_map(|d| d.terms()).map(|t| t.power as usize + 1).sum();
    let mut u = DMatrix::zeros(rows, p);
    let mut a = DMatrix::zeros(p, p);
    let mut v = DMatrix::zeros(p, cols);
    let mut start = 0;
    for (r, row) in x.iter().enumerate() {
        for (c, d) in row.iter().enumerate() {
            for t in d.terms() {
                let m = t.power as usize;
                for j in 0..=m {
                    a[(start + j, start + j)] = -t.rate;
                    if j < m {
                        a[(start + j, start + j + 1)] = C64::new(1.0, 0.0);
                    }
                }
                u[(r, start)] = t.coeff * factorial(t.power);
                v[(start + m, c)] = C64::new(1.0, 0.0);
                start += m + 1;
            }
        }
    }
    MeRep { u, a, v }
}

/// Values of the time-domain series filter at the requested times.
#[derive(Debug, Clone)]
pub struct SeriesEval {
    pub k_max: usize,
    pub values: Vec<DMatrix<f64>>,
}

/// Truncated-series filter `A + Σ_{k ≤ k_max} B ∗ D^(k) ∗ C` evaluated in the
/// time domain. Convolution chains are realized as one block-bidiagonal
/// matrix exponential per time point, so no partial fractions are formed.
pub fn series_filter(k: &SemiMarkovKernel, keep: &[usize], times: &[f64]) -> Result<SeriesEval> {
    check_keep(k, keep)?;
    let hidden = reachable_hidden(k, keep, &[]);
    let sub = |rows: &[usize], cols: &[usize]| -> Vec<Vec<&ExpPoly>> {
        rows.iter().map(|&r| cols.iter().map(|&c| k.density(r, c)).collect()).collect()
    };
    let nk = keep.len();
    let nh = hidden.len();
    let d0 = DMatrix::from_fn(nh, nh, |i, j| k.p(hidden[i], hidden[j]));
    let rho = spectral_radius(&d0);
    if rho >= 1.0 - 1e-9 {
        return Err(Error::NonConvergentSeries { spectral_radius: rho });
    }
    let mut k_max = 0;
    if nh > 0 && rho > 0.0 {
        while rho.powi(k_max as i32 + 1) / (1.0 - rho) >= SERIES_TAIL_TOL {
            k_max += 1;
            if k_max >= SERIES_K_CAP {
                break;
            }
        }
    }
    let a_rep = me_rep(&sub(keep, keep), nk, nk);
    let b = me_rep(&sub(keep, &hidden), nk, nh);
    let d = me_rep(&sub(&hidden, &hidden), nh, nh);
    let c = me_rep(&sub(&hidden, keep), nh, nk);
    let (pb, pd, pc) = (b.a.nrows(), d.a.nrows(), c.a.nrows());
    let n_d = if pd == 0 { 0 } else { k_max };
    let dim = pb + n_d * pd + pc;
    if dim > SERIES_DIM_CAP {
        return Err(Error::Capability(format!("series realization of dimension {dim} exceeds {SERIES_DIM_CAP}")));
    }
    let mut big = DMatrix::<C64>::zeros(dim, dim);
    big.view_mut((0, 0), (pb, pb)).copy_from(&b.a);
    let off_c = pb + n_d * pd;
    big.view_mut((off_c, off_c), (pc, pc)).copy_from(&c.a);
    if pb > 0 && pc > 0 {
        big.view_mut((0, off_c), (pb, pc)).copy_from(&(&b.v * &c.u));
    }
    if n_d > 0 {
        let vd_ud = &d.v * &d.u;
        let vd_uc = &d.v * &c.u;
        let vb_ud = &b.v * &d.u;
        for j in 0..n_d {
            let o = pb + j * pd;
            big.view_mut((o, o), (pd, pd)).copy_from(&d.a);
            big.view_mut((o, off_c), (pd, pc)).copy_from(&vd_uc);
            if j == 0 {
                big.view_mut((0, o), (pb, pd)).copy_from(&vb_ud);
            } else {
                big.view_mut((o - pd, o), (pd, pd)).copy_from(&vd_ud);
            }
        }
    }
    let values = times
        .iter()
        .map(|&t| {
            let direct = if a_rep.a.nrows() > 0 {
                &a_rep.u * (&a_rep.a * C64::new(t, 0.0)).exp() * &a_rep.v
            } else {
                DMatrix::zeros(nk, nk)
            };
            let chain = if pb > 0 && pc > 0 {
                let e = (&big * C64::new(t, 0.0)).exp();
                &b.u * e.view((0, off_c), (pb, pc)) * &c.v
            } else {
                DMatrix::zeros(nk, nk)
            };
            (direct + chain).map(|z| z.re)
        })
        .collect();
    Ok(SeriesEval { k_max, values })
}
