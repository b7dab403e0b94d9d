//! Trajectory sampling and Monte Carlo estimates of mutual information.

use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPoly;
use crate::filtering::{augmented_label, FilterOutput};
use crate::intensity::{log_sum_exp, MarginalFilter, ThetaState};
use crate::kernels::SemiMarkovKernel;
use crate::models::{Channel, ModulatedChannel};

/// Largest tolerated fraction of discarded trajectories.
pub const DISCARD_BUDGET: f64 = 1e-3;
const CDF_TOL: f64 = 1e-12;

/// RNG for trajectory `index` of a run seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
enum Holding {
    Exponential(f64),
    General { cdf_density: ExpPoly, scale: f64 },
}

impl Holding {
    fn new(d: &ExpPoly) -> Self {
        let mass = d.mass();
        if let [t] = d.terms() {
            if t.power == 0 && t.rate.im == 0.0 && t.coeff.im == 0.0 {
                return Holding::Exponential(t.rate.re);
            }
        }
        let density = d.scale(1.0 / mass);
        Holding::General { scale: density.characteristic_time(), cdf_density: density }
    }

    /// Inverse CDF at `u ∈ (0, 1]`, measured from the right.
    fn sample(&self, u: f64) -> f64 {
        match self {
            Holding::Exponential(k) => -u.ln() / k,
            Holding::General { cdf_density: d, scale } => {
                let target = 1.0 - u;
                let (mut lo, mut hi) = (0.0, *scale);
                for _ in 0..200 {
                    if d.cdf(hi) >= target {
                        break;
                    }
                    lo = hi;
                    hi *= 2.0;
                }
                let mut t = 0.5 * (lo + hi);
                for _ in 0..200 {
                    let f = d.cdf(t) - target;
                    if f.abs() <= CDF_TOL {
                        break;
                    }
                    if f > 0.0 {
                        hi = t;
                    } else {
                        lo = t;
                    }
                    let dens = d.eval(t);
                    let newton = t - f / dens;
                    t = if dens > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                    if hi - lo <= f64::EPSILON * hi {
                        break;
                    }
                }
                t
            }
        }
    }
}

/// Per-state successor tables and holding-time samplers of a kernel.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    cumulative: Vec<Vec<(usize, f64)>>,
    holding: Vec<Vec<Option<Holding>>>,
}

impl KernelSampler {
    pub fn new(k: &SemiMarkovKernel) -> Self {
        let n = k.len();
        let mut cumulative = Vec::with_capacity(n);
        let mut holding = Vec::with_capacity(n);
        for y in 0..n {
            let mut acc = 0.0;
            let mut row = Vec::new();
            let mut hold = Vec::with_capacity(n);
            for z in 0..n {
                let p = k.p(y, z);
                if p > 0.0 {
                    acc += p;
                    row.push((z, acc));
                    hold.push(Some(Holding::new(k.density(y, z))));
                } else {
                    hold.push(None);
                }
            }
            cumulative.push(row);
            holding.push(hold);
        }
        KernelSampler { cumulative, holding }
    }

    /// Next state and holding time from `y`, or `None` on absorption.
    /// Consumes exactly two uniforms.
    pub fn step(&self, y: usize, rng: &mut impl Rng) -> Option<(usize, f64)> {
        let u1: f64 = rng.random();
        let u2: f64 = 1.0 - rng.random::<f64>();
        let &(z, _) = self.cumulative[y].iter().find(|(_, c)| u1 < *c)?;
        let w = self.holding[y][z].as_ref().expect("successor has a sampler").sample(u2);
        Some((z, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub labels: Vec<String>,
    pub initial: usize,
    /// `(T_n, Z_n)` with strictly increasing times, all within the horizon.
    pub events: Vec<(f64, usize)>,
    pub horizon: f64,
    /// True when an absorbing state ended the path before the horizon.
    pub absorbed: bool,
}

impl Trajectory {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,mark")?;
        writeln!(w, "0,{}", self.labels[self.initial])?;
        for &(t, z) in &self.events {
            writeln!(w, "{t},{}", self.labels[z])?;
        }
        Ok(())
    }
}

fn advance(t: f64, w: f64) -> f64 {
    let next = t + w;
    if next > t {
        next
    } else {
        warn!("holding time {w} vanished at t = {t}; perturbing by one ulp");
        t.next_up()
    }
}

/// Simulates the Markov renewal process from `z0` at t = 0 up to `horizon`.
pub fn simulate_mrp(k: &SemiMarkovKernel, z0: usize, horizon: f64, seed: u64) -> Result<Trajectory> {
    simulate_with(k, &KernelSampler::new(k), z0, horizon, &mut stream(seed, 0))
}

pub fn simulate_with(k: &SemiMarkovKernel, s: &KernelSampler, z0: usize, horizon: f64, rng: &mut impl Rng) -> Result<Trajectory> {
    if z0 >= k.len() {
        return invalid(format!("initial state {z0} out of range"));
    }
    if !(horizon > 0.0) {
        return invalid("horizon must be positive");
    }
    let mut events = Vec::new();
    let (mut t, mut y) = (0.0, z0);
    let absorbed = loop {
        let Some((z, w)) = s.step(y, rng) else { break true };
        t = advance(t, w);
        if t > horizon {
            break false;
        }
        events.push((t, z));
        y = z;
    };
    Ok(Trajectory { labels: k.states().to_vec(), initial: z0, events, horizon, absorbed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
    pub seed: u64,
    pub discarded: usize,
}

/// Pairwise sum, independent of thread count.
fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn estimate(samples: &[f64], seed: u64, discarded: usize) -> McEstimate {
    let n = samples.len();
    let mean = pairwise_sum(samples) / n as f64;
    let dev: Vec<f64> = samples.iter().map(|x| (x - mean).powi(2)).collect();
    let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
    McEstimate { value: mean, se: (var / n as f64).sqrt(), n, seed, discarded }
}

fn check_discards(discarded: usize, total: usize) -> Result<()> {
    if discarded as f64 > DISCARD_BUDGET * total as f64 {
        return Err(Error::MonteCarlo(format!("{discarded} of {total} trajectories discarded for filter degeneracy")));
    }
    Ok(())
}

/// Where each transition `y → z` of the full kernel lands in a marginal
/// filter: the filtered state index, if observed.
fn transition_map(c: &Channel, f: &FilterOutput) -> Vec<Vec<Option<usize>>> {
    let k = &c.kernel;
    let classes = &c.joint.classes;
    (0..k.len())
        .map(|y| {
            (0..k.len())
                .map(|z| {
                    let class = classes.get(y, z)?;
                    f.kernel().index_of(&augmented_label(&k.states()[z], class))
                })
                .collect()
        })
        .collect()
}

/// Initial condition of the output process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum YInit {
    /// Output arrival at t = 0 from the channel's start state.
    #[default]
    Arrival,
}

/// Compiled pieces of a channel for repeated simulation.
struct Compiled {
    sampler: KernelSampler,
    start: usize,
    joint: MarginalFilter,
    output: MarginalFilter,
    joint_map: Vec<Vec<Option<usize>>>,
    output_map: Vec<Vec<Option<usize>>>,
    joint_y: usize,
}

impl Compiled {
    fn new(c: &Channel) -> Result<Self> {
        if c.joint.classes != c.output.classes {
            return invalid("joint and output descriptions must share the class map");
        }
        let jf = c.joint_filter()?;
        let of = c.output_filter()?;
        let mark = |f: &FilterOutput| f.mark_index(&c.output_mark).ok_or_else(|| Error::InvalidInput(format!("no mark {}", c.output_mark)));
        mark(&of)?;
        Ok(Compiled {
            sampler: KernelSampler::new(&c.kernel),
            start: c.kernel.index_of(&c.start).ok_or_else(|| Error::InvalidInput(format!("unknown start {}", c.start)))?,
            joint_y: mark(&jf)?,
            joint_map: transition_map(c, &jf),
            output_map: transition_map(c, &of),
            joint: MarginalFilter::new(&jf),
            output: MarginalFilter::new(&of),
        })
    }

    /// Log-intensity ratio at every output arrival up to `horizon`, as
    /// `(time, ln Λ^{XY} - ln Λ^Y)`.
    fn run(&self, c: &Channel, horizon: f64, rng: &mut impl Rng) -> Result<Vec<(f64, f64)>> {
        let mut tj = self.joint.theta_point(&c.start_augmented, 0.0)?;
        let mut to = self.output.theta_point(&c.start_augmented, 0.0)?;
        let mut out = Vec::new();
        let (mut t, mut y) = (0.0, self.start);
        while let Some((z, w)) = self.sampler.step(y, rng) {
            t = advance(t, w);
            if t > horizon {
                break;
            }
            if let Some(a) = self.joint_map[y][z] {
                let mark = self.joint.coarse()[a];
                if let Some(b) = self.output_map[y][z] {
                    let lj = self.joint.hazard_recurrent(&tj, self.joint_y, tj.recurrence(t))?.log_value;
                    let lo = self.output.hazard_recurrent(&to, self.output.coarse()[b], to.recurrence(t))?.log_value;
                    out.push((t, lj - lo));
                    to = self.output.theta_update(&to, self.output.coarse()[b], t - to.last_event)?.0;
                }
                tj = self.joint.theta_update(&tj, mark, t - tj.last_event)?.0;
            } else if self.output_map[y][z].is_some() {
                return Err(Error::Structural("output event invisible to the joint marginal".into()));
            }
            y = z;
        }
        Ok(out)
    }
}

fn is_degeneracy(e: &Error) -> bool {
    matches!(e, Error::FilterDegeneracy { .. } | Error::VanishingSurvival { .. })
}

/// `I(X_{[0,T]}; Y_{[0,T]})` by averaging `Σ ln Λ^{XY} - ln Λ^Y` over output
/// arrivals of `n` simulated trajectories.
pub fn mc_mi_dynamic(c: &Channel, horizon: f64, n: usize, seed: u64, init: YInit) -> Result<McEstimate> {
    let YInit::Arrival = init;
    if n == 0 {
        return invalid("need at least one trajectory");
    }
    if !(horizon >= 0.0) {
        return invalid("horizon must be nonnegative");
    }
    let comp = Compiled::new(c)?;
    let results: Vec<Result<Option<f64>>> = (0..n as u64)
        .into_par_iter()
        .map(|i| match comp.run(c, horizon, &mut stream(seed, i)) {
            Ok(v) => Ok(Some(v.iter().map(|x| x.1).sum())),
            Err(e) if is_degeneracy(&e) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    for r in results {
        if let Some(v) = r? {
            samples.push(v);
        }
    }
    let discarded = n - samples.len();
    check_discards(discarded, n)?;
    Ok(estimate(&samples, seed, discarded))
}

/// Per-event cache for one block path: for each output arrival, the block
/// index of every candidate label `c'` evaluated on that path.
struct StaticPath {
    times: Vec<f64>,
    /// `a[k][c'] = L_{c'} + ln ⟨Θ_{c'}, f̄_{c'}(W)⟩`, `b[k][c'] = L_{c'} + ln ⟨Θ_{c'}, S_{c'}(W)⟩`
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

struct Block {
    sampler: KernelSampler,
    start: usize,
    filter: MarginalFilter,
    map: Vec<Vec<Option<usize>>>,
    y: usize,
    theta0: ThetaState,
}

fn compile_blocks(m: &ModulatedChannel) -> Result<Vec<Block>> {
    m.blocks
        .iter()
        .map(|(_, c)| {
            let f = c.output_filter()?;
            let filter = MarginalFilter::new(&f);
            Ok(Block {
                sampler: KernelSampler::new(&c.kernel),
                start: c.kernel.index_of(&c.start).ok_or_else(|| Error::InvalidInput(format!("unknown start {}", c.start)))?,
                map: transition_map(c, &f),
                y: f.mark_index(&c.output_mark).ok_or_else(|| Error::InvalidInput(format!("no mark {}", c.output_mark)))?,
                theta0: filter.theta_point(&c.start_augmented, 0.0)?,
                filter,
            })
        })
        .collect()
}

/// Simulates block `c` and evaluates every block's filter along the path.
fn static_path(blocks: &[Block], c: usize, horizon: f64, rng: &mut impl Rng) -> Result<StaticPath> {
    let blk = &blocks[c];
    let mut thetas: Vec<ThetaState> = blocks.iter().map(|b| b.theta0.clone()).collect();
    let mut ll = vec![0.0; blocks.len()];
    let mut path = StaticPath { times: Vec::new(), a: Vec::new(), b: Vec::new() };
    let (mut t, mut y) = (0.0, blk.start);
    while let Some((z, w)) = blk.sampler.step(y, rng) {
        t = advance(t, w);
        if t > horizon {
            break;
        }
        if blk.map[y][z].is_some() {
            let mut a = Vec::with_capacity(blocks.len());
            let mut b = Vec::with_capacity(blocks.len());
            for (j, other) in blocks.iter().enumerate() {
                let th = &thetas[j];
                let v = t - th.last_event;
                let hz = other.filter.hazard_recurrent(th, other.y, v);
                let ls = other.filter.ln_survival_mix(th, v);
                match hz {
                    Ok(h) if ll[j] > f64::NEG_INFINITY => {
                        a.push(ll[j] + h.log_value + ls);
                        b.push(ll[j] + ls);
                    }
                    _ => {
                        a.push(f64::NEG_INFINITY);
                        b.push(f64::NEG_INFINITY);
                    }
                }
                match other.filter.theta_update(th, other.y, v) {
                    Ok((next, norm)) => {
                        ll[j] += norm;
                        thetas[j] = next;
                    }
                    Err(e) if j != c && is_degeneracy(&e) => {
                        ll[j] = f64::NEG_INFINITY;
                        thetas[j].last_event = t;
                    }
                    Err(e) => return Err(e),
                }
            }
            path.times.push(t);
            path.a.push(a);
            path.b.push(b);
        }
        y = z;
    }
    Ok(path)
}

/// Contribution of one path of block `c` at prior `prior`, accumulated on
/// the horizon grid.
fn static_contrib(path: &StaticPath, c: usize, prior: &[f64], grid: &[f64]) -> Vec<f64> {
    let lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    let mut out = vec![0.0; grid.len()];
    let mut acc = 0.0;
    let mut g = 0;
    for (k, &t) in path.times.iter().enumerate() {
        while g < grid.len() && grid[g] < t {
            out[g] = acc;
            g += 1;
        }
        let (a, b) = (&path.a[k], &path.b[k]);
        let own = a[c] - b[c];
        let mix = log_sum_exp(a.iter().zip(&lp).map(|(x, l)| x + l)) - log_sum_exp(b.iter().zip(&lp).map(|(x, l)| x + l));
        acc += own - mix;
    }
    for o in out.iter_mut().skip(g) {
        *o = acc;
    }
    out
}

/// `I(C; Y_{[0,T]})` for every prior in `priors` and horizon in `grid`.
/// Each trajectory index simulates one path per label with common seeds and
/// weights them by the prior. Returns `estimates[prior][T]`.
pub fn mc_mi_static(m: &ModulatedChannel, priors: &[Vec<f64>], grid: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<McEstimate>>> {
    if n == 0 {
        return invalid("need at least one trajectory");
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 {
        return invalid("horizon grid must be nonnegative and increasing");
    }
    let nb = m.blocks.len();
    for p in priors {
        let s: f64 = p.iter().sum();
        if p.len() != nb || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (s - 1.0).abs() > 1e-9 {
            return invalid("each prior must be a probability vector over the blocks");
        }
    }
    let blocks = compile_blocks(m)?;
    let horizon = *grid.last().unwrap();
    let per_index: Vec<Result<Option<Vec<Vec<f64>>>>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut paths = Vec::with_capacity(nb);
            for c in 0..nb {
                match static_path(&blocks, c, horizon, &mut stream(seed, i * nb as u64 + c as u64)) {
                    Ok(p) => paths.push(p),
                    Err(e) if is_degeneracy(&e) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            let vals = priors
                .iter()
                .map(|prior| {
                    let mut v = vec![0.0; grid.len()];
                    for (c, path) in paths.iter().enumerate() {
                        if prior[c] == 0.0 {
                            continue;
                        }
                        for (vg, x) in v.iter_mut().zip(static_contrib(path, c, prior, grid)) {
                            *vg += prior[c] * x;
                        }
                    }
                    v
                })
                .collect();
            Ok(Some(vals))
        })
        .collect();
    let mut kept = Vec::with_capacity(n);
    for r in per_index {
        if let Some(v) = r? {
            kept.push(v);
        }
    }
    let discarded = n - kept.len();
    check_discards(discarded, n)?;
    Ok((0..priors.len())
        .map(|p| {
            (0..grid.len())
                .map(|g| {
                    let samples: Vec<f64> = kept.iter().map(|v| v[p][g]).collect();
                    estimate(&samples, seed, discarded)
                })
                .collect()
        })
        .collect())
}

/// `(1 - π, π)` for a two-block channel.
pub fn binary_prior(pi: f64) -> Vec<f64> {
    vec![1.0 - pi, pi]
}
