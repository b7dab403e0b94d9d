//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p mrpchan-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mrpchan::filtering::{MarginalSpec, TransitionClassMap};
use mrpchan::intensity::{MarginalFilter, PathStart};
use mrpchan::kernels::smk_from_competing;
use mrpchan::laplace::{invert_lt, RationalLT};
use mrpchan::limits::{expected_ln_survival, mir_channel, renewal_rate_term, stationary, three_state_mir, HoldingTimeLaw};
use mrpchan::models::{gene_channel, gene_f_tau, gene_filtered_closed_form, leakage_channel, leakage_ctmc_phi, phi, poisson_channel, GeneModelParams, LeakageModelParams};
use mrpchan::poly::Poly;
use mrpchan::renewal::{exact_mi, max_gap, phi_at, phi_evolution, renewal_density_exact, renewal_density_grid, volterra_solve, MrpView};
use mrpchan::simulate::{mc_mi_dynamic, YInit};
use mrpchan::ExpPoly;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn core<T>(r: mrpchan::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
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

fn closed_form_filtering() -> Outcome {
    let p = GeneModelParams::default();
    let (mut coeff, mut point) = (0.0f64, 0.0f64);
    for conc in [p.r0, p.r1] {
        let f = core(gene_channel(&p, conc).and_then(|c| c.joint_filter()))?;
        let cf = core(gene_filtered_closed_form(&p, conc))?;
        for y in 0..3 {
            for z in 0..3 {
                coeff = coeff.max(coeff_gap(&f.transforms()[y][z], &cf[y][z]));
                let d = core(invert_lt(&cf[y][z]))?.density;
                for i in 0..=600 {
                    let t = 0.1 * i as f64;
                    point = point.max((d.eval(t) - f.kernel().density(y, z).eval(t)).abs());
                }
            }
        }
    }
    check(coeff < 1e-10 && point < 1e-8, format!("coefficient gap {coeff:.1e}, pointwise gap {point:.1e} on [0, 60] s"))
}

fn poisson_sanity() -> Outcome {
    let k = 2.5;
    let c = core(poisson_channel(k))?;
    let v = core(MrpView::output(&c))?;
    let curve = core(phi_evolution(&v, 10.0, 0.05))?;
    let phi_err = curve.grid.column(0).iter().map(|x| (x - phi(k)).abs()).fold(0.0, f64::max);
    let rate_err = (core(renewal_rate_term(&ExpPoly::exponential(k)))? - phi(k)).abs();
    let mi_err = core(exact_mi(&c, &[1.0, 10.0, 100.0]))?.iter().map(|r| r.mi.abs()).fold(0.0, f64::max);
    check(phi_err < 1e-8 && rate_err < 1e-8 && mi_err < 1e-8, format!("phi {phi_err:.1e}, output term {rate_err:.1e}, MI {mi_err:.1e}"))
}

fn renewal_asymptote() -> Outcome {
    let p = GeneModelParams::default();
    let mut details = Vec::new();
    let mut ok = true;
    for conc in [p.r0, p.r1] {
        let v = core(gene_channel(&p, conc).and_then(|c| MrpView::joint(&c)))?;
        let st = core(stationary(&v.kernel))?;
        let t_max = 50.0 * st.mean_recurrence.iter().cloned().fold(0.0, f64::max);
        let g2 = core(renewal_density_grid(&v.kernel, &v.eta, t_max, 2.0))?;
        let g1 = core(renewal_density_grid(&v.kernel, &v.eta, t_max, 1.0))?;
        let fine = core(volterra_solve(&v.kernel, &v.eta, t_max, 1.0, 1e-2))?;
        let ratio = max_gap(&g2, &g1.coarsened()) / max_gap(&g1, &fine.coarsened());
        let last = fine.values.last().unwrap();
        let tail = (0..st.rates.len()).map(|z| ((last[z] - st.rates[z]) / st.rates[z]).abs()).fold(0.0, f64::max);
        ok &= tail < 1e-3 && (3.5..=4.5).contains(&ratio);
        details.push(format!("R={conc}: tail rel {tail:.1e} at T={t_max:.0} s, ratio {ratio:.2}"));
    }
    check(ok, details.join("; "))
}

fn probability_integral_transform() -> Outcome {
    let p = GeneModelParams::default();
    let mut worst = 0.0f64;
    for conc in [p.r0, p.r1] {
        let law = core(gene_f_tau(&p, conc).and_then(|f| HoldingTimeLaw::renewal(&f)))?;
        worst = worst.max((core(expected_ln_survival(&law))? + 1.0).abs());
    }
    check(worst < 1e-6, format!("|E ln S + 1| = {worst:.1e}"))
}

fn mir_consistency() -> Outcome {
    let p = GeneModelParams::default();
    let mut details = Vec::new();
    let mut ok = true;
    for conc in [p.r0, p.r1] {
        let c = core(gene_channel(&p, conc))?;
        let mir = core(mir_channel(&c))?.mir;
        let v = core(MrpView::joint(&c))?;
        let names: Vec<String> = v.kernel.states().iter().map(|s| match s.split(':').next().unwrap() {
            "P_on" => "ON".to_string(),
            "P_off" => "OFF".to_string(),
            other => other.to_string(),
        }).collect();
        let forms = core(v.kernel.relabeled(names).and_then(|k| three_state_mir(&k, &core(gene_f_tau(&p, conc)).unwrap())))?;
        let form_gap = (forms.per_state - forms.compact).abs();
        let mi = core(exact_mi(&c, &[300.0, 600.0]))?;
        let slope = (mi[1].mi - mi[0].mi) / 300.0;
        let rel = (slope - mir).abs() / mir;
        let forms_ok = form_gap < 1e-9 && (forms.per_state - mir).abs() < 1e-9;
        // the slope criterion is asserted at the high concentration
        if conc == p.r1 {
            ok &= rel < 0.01;
        }
        ok &= forms_ok;
        details.push(format!("R={conc}: MIR {mir:.10}, slope rel {rel:.1e}, forms gap {form_gap:.1e}"));
    }
    check(ok, details.join("; "))
}

fn exact_vs_mc() -> Outcome {
    let p = GeneModelParams::default();
    let mut details = Vec::new();
    let mut ok = true;
    for conc in [p.r0, p.r1] {
        let c = core(gene_channel(&p, conc))?;
        let exact = core(exact_mi(&c, &[300.0]))?[0].mi;
        let mc = core(mc_mi_dynamic(&c, 300.0, 100_000, 20240601, YInit::Arrival))?;
        let z = (mc.value - exact) / mc.se;
        ok &= z.abs() < 3.0;
        details.push(format!("R={conc}: exact {exact:.5}, MC {:.5} ± {:.5} (z {z:.2})", mc.value, mc.se));
    }
    check(ok, details.join("; "))
}

fn out_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn contour_optimum() -> Outcome {
    let out = out_dir("contour");
    let grid = [250.0, 500.0, 750.0, 1000.0];
    let t_arg = grid.map(|t| t.to_string()).join(",");
    let status = Command::new(env!("CARGO_BIN_EXE_mrpchan"))
        .args(["--model", "gene", "--seed", "7", "contour", "--pi-grid", "0:0.05:1", "--n-traj", "100000", "--T", &t_arg, "--out"])
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("contour.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let argmax = summary["argmax_pi"].as_f64().ok_or("no argmax")?;
    let rows: Vec<[f64; 4]> = std::fs::read_to_string(out.join("contour.csv"))
        .map_err(|e| e.to_string())?
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3]]
        })
        .collect();
    let ends_zero = rows.iter().filter(|r| r[1] == 0.0 || r[1] == 1.0).all(|r| r[2].abs() <= 3.0 * r[3]);
    let mut monotone = true;
    for pi_row in rows.iter().filter(|r| r[0] == grid[0]) {
        let series: Vec<&[f64; 4]> = rows.iter().filter(|r| r[1] == pi_row[1]).collect();
        for w in series.windows(2) {
            monotone &= w[1][2] >= w[0][2] - 3.0 * (w[0][3].powi(2) + w[1][3].powi(2)).sqrt();
        }
    }
    let ok = (0.5..=0.7).contains(&argmax) && ends_zero && monotone && rows.len() == 21 * grid.len();
    check(ok, format!("argmax pi {argmax} at T=1000 s, zeros at ends {ends_zero}, monotone in T {monotone}; CSV {}", out.join("contour.csv").display()))
}

fn leakage_oracle() -> Outcome {
    let p = LeakageModelParams::default();
    let v = core(leakage_channel(&p).and_then(|c| MrpView::joint(&c)))?;
    let r = core(renewal_density_exact(&v.kernel, &v.eta))?;
    let mut worst = 0.0f64;
    for i in 0..=1000 {
        let t = 0.1 * i as f64;
        worst = worst.max((core(phi_at(&v, &r, t))? - leakage_ctmc_phi(&p, t)).abs());
    }
    check(worst < 1e-6, format!("max gap {worst:.1e} on [0, 100]"))
}

/// Random instance on `A`, `B`, `H`: entering `H` is hidden and `H` has no
/// self-loop, so hidden excursions have length at most one.
struct Instance {
    q: Vec<Vec<ExpPoly>>,
    class: [[u32; 3]; 3],
    labels: Vec<(usize, u32)>,
    filter: MarginalFilter,
    out: mrpchan::filtering::FilterOutput,
}

fn random_clock(rng: &mut ChaCha8Rng) -> ExpPoly {
    let rate = rng.random_range(0.2f64.ln()..5.0f64.ln()).exp();
    if rng.random_bool(0.5) {
        ExpPoly::exponential(rate)
    } else {
        ExpPoly::erlang(2, rate)
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> mrpchan::Result<Instance> {
    let names: Vec<String> = ["A", "B", "H"].iter().map(|s| s.to_string()).collect();
    let mut clocks = vec![vec![None; 3]; 3];
    let mut class = [[0u32; 3]; 3];
    for y in 0..3 {
        for z in 0..3 {
            if y != z {
                clocks[y][z] = Some(random_clock(rng));
                class[y][z] = if z == 2 { 0 } else { rng.random_range(1..=2) };
            }
        }
    }
    let k = smk_from_competing(names, &clocks)?;
    let mut map = TransitionClassMap::new(3);
    for y in 0..3 {
        for z in 0..3 {
            if y != z {
                map.set(y, z, class[y][z]);
            }
        }
    }
    let mut labels = Vec::new();
    for z in 0..2 {
        for c in 1..=2 {
            if (0..3).any(|y| y != z && class[y][z] == c) {
                labels.push((z, c));
            }
        }
    }
    let n_marks = rng.random_range(1..=labels.len().min(2));
    let coarse: Vec<usize> = (0..labels.len()).map(|i| if i < n_marks { i } else { rng.random_range(0..n_marks) }).collect();
    let keep = labels.iter().map(|&(z, c)| format!("{}:{c}", ["A", "B"][z])).collect();
    let spec = MarginalSpec { classes: map, keep: Some(keep), marks: (0..n_marks).map(|m| format!("m{m}")).collect(), coarse, initial: None };
    let out = mrpchan::filtering::marginalize(&k, &spec)?;
    let filter = MarginalFilter::new(&out);
    Ok(Instance { q: k.densities().to_vec(), class, labels, filter, out })
}

impl Instance {
    /// Filtered density from label `a` to label `b` by direct convolution.
    fn filtered(&self, a: usize, b: usize) -> ExpPoly {
        let (y, _) = self.labels[a];
        let (z, c) = self.labels[b];
        let mut d = ExpPoly::zero();
        if y != z && self.class[y][z] == c {
            d = d.add(&self.q[y][z]);
        }
        if self.class[2][z] == c {
            d = d.add(&self.q[y][2].convolve(&self.q[2][z]));
        }
        d
    }

    /// Probability of no observed event within `v` of leaving label `a`.
    fn survival(&self, a: usize, v: f64) -> f64 {
        let (y, _) = self.labels[a];
        let stay: ExpPoly = self.q[y].iter().fold(ExpPoly::zero(), |s, d| s.add(d)).tail();
        let h_tail = self.q[2].iter().fold(ExpPoly::zero(), |s, d| s.add(d)).tail();
        stay.eval(v) + self.q[y][2].convolve(&h_tail).eval(v)
    }
}

fn bayes_and_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut post_gap, mut dens_gap, mut norm_gap, mut hazard_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut degenerate, mut clustered, mut done) = (0, 0, 0);
    while done < 100 {
        let inst = core(random_instance(&mut rng))?;
        // clustered poles make the exp-poly form lose digits; see the filter warnings
        if !inst.out.warnings().is_empty() {
            clustered += 1;
            continue;
        }
        done += 1;
        let f = &inst.filter;
        let n = inst.labels.len();
        let start = rng.random_range(0..n);
        let start_label = f.labels()[start].clone();
        // brute-force forward recursion against the filter
        let mut alpha = vec![0.0; n];
        alpha[start] = 1.0;
        let mut theta = core(f.theta_point(&start_label, 0.0))?;
        let mut events = Vec::new();
        let mut t = 0.0;
        let mut ln_total = 0.0;
        let mut broken = false;
        for _ in 0..4 {
            let w = rng.random_range(0.1..2.0);
            let z = rng.random_range(0..f.marks().len());
            t += w;
            events.push((z, t));
            let next: Vec<f64> = (0..n)
                .map(|b| if f.coarse()[b] == z { (0..n).map(|a| alpha[a] * inst.filtered(a, b).eval(w)).sum() } else { 0.0 })
                .collect();
            let s: f64 = next.iter().sum();
            match f.theta_update(&theta, z, w) {
                Ok((th, ln_norm)) => {
                    if s <= 0.0 {
                        return Err(format!("filter accepted an impossible event, brute force mass {s}"));
                    }
                    dens_gap = dens_gap.max((ln_norm - s.ln()).abs());
                    ln_total += s.ln();
                    alpha = next.iter().map(|x| x / s).collect();
                    post_gap = post_gap.max(th.weights().iter().zip(&alpha).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
                    theta = th;
                }
                Err(_) if s <= 1e-300 => {
                    broken = true;
                    break;
                }
                Err(e) => return Err(format!("filter rejected a possible event: {e}")),
            }
        }
        if broken {
            degenerate += 1;
            continue;
        }
        let tail = 0.7;
        let brute = ln_total + (0..n).map(|a| alpha[a] * inst.survival(a, tail)).sum::<f64>().ln();
        let path = core(f.path_log_density(&PathStart::Theta(core(f.theta_point(&start_label, 0.0))?), &events, t + tail))?;
        dens_gap = dens_gap.max((brute - path).abs());

        // one-step normalization and hazard integration from the posterior
        let horizon = 6.0;
        let mut mass = 0.0;
        for z in 0..f.marks().len() {
            let dens = |v: f64| (0..n).map(|a| alpha[a] * f.ln_grouped(a, z, v).exp()).sum::<f64>();
            mass += core(mrpchan::quad::integrate(dens, 0.0, horizon, 1e-9)).map_err(|e| format!("{e}
BASE {:?}
FILT {:?}
TR {:?}", inst.q, inst.out.kernel().densities(), inst.out.transforms()))?;
        }
        let surv = f.ln_survival_mix(&theta, horizon);
        norm_gap = norm_gap.max((mass + surv.exp() - 1.0).abs());
        let total_hazard = |v: f64| (0..f.marks().len()).map(|z| f.hazard_recurrent(&theta, z, v).map(|h| h.value).unwrap_or(f64::NAN)).sum::<f64>();
        let integrated = core(mrpchan::quad::integrate(total_hazard, 0.0, 2.0, 1e-9))?;
        hazard_gap = hazard_gap.max((integrated + f.ln_survival_mix(&theta, 2.0)).abs());
    }
    let ok = post_gap < 1e-9 && dens_gap < 1e-9 && norm_gap < 1e-8 && hazard_gap < 1e-8 && degenerate < 100;
    check(
        ok,
        format!("posterior {post_gap:.1e}, log density {dens_gap:.1e}, normalization {norm_gap:.1e}, hazard {hazard_gap:.1e}; {degenerate} impossible paths, {clustered} ill-conditioned draws skipped"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form filtering", closed_form_filtering),
        ("Poisson sanity", poisson_sanity),
        ("renewal-density asymptote", renewal_asymptote),
        ("probability integral transform", probability_integral_transform),
        ("MIR consistency", mir_consistency),
        ("exact vs Monte Carlo", exact_vs_mc),
        ("contour optimum", contour_optimum),
        ("leakage oracle", leakage_oracle),
        ("filter statistics", bayes_and_normalization),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (verdict, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {verdict} [{name}] {detail} ({:.2} s)", i + 1, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
