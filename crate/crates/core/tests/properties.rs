use mrpchan::config::{Model, ModelConfig};
use mrpchan::filtering::anderson_filter;
use mrpchan::intensity::{MarginalFilter, PathStart};
use mrpchan::kernels::{smk_from_generator, GeneratorSpec, SemiMarkovKernel};
use mrpchan::limits::stationary;
use mrpchan::models::{leakage_channel, LeakageModelParams};
use mrpchan::renewal::{renewal_density_exact, renewal_density_grid, MrpView};
use mrpchan::simulate::simulate_mrp;
use mrpchan::{invert_lt, lt_of, ExpPoly, Term, C64};
use proptest::prelude::*;

fn exp_poly() -> impl Strategy<Value = ExpPoly> {
    prop::collection::vec((0.1f64..2.0, 0u32..3, 0.3f64..4.0), 1..4)
        .prop_map(|ts| ExpPoly::from_terms(ts.into_iter().map(|(c, m, r)| Term::real(c, m, r))))
}

/// Distinct rates at least 30% apart.
fn separated_exp_poly() -> impl Strategy<Value = ExpPoly> {
    (0.3f64..1.0, prop::collection::vec((0.1f64..2.0, 0u32..3, 1.3f64..2.5), 1..4)).prop_map(|(r0, ts)| {
        let mut rate = r0;
        ExpPoly::from_terms(ts.into_iter().map(|(c, m, step)| {
            rate *= step;
            Term::real(c, m, rate)
        }))
    })
}

fn generator(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..3.0, n), n).prop_map(move |mut g| {
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        g
    })
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_multiplies_transforms(f in exp_poly(), g in exp_poly(), s in 0.0f64..3.0) {
        let c = f.convolve(&g);
        let s = C64::new(s, 0.0);
        let (lhs, rhs) = (c.laplace(s), f.laplace(s) * g.laplace(s));
        prop_assert!((lhs - rhs).norm() <= 1e-12 * c.abs_mass().max(1.0));
    }

    #[test]
    fn tail_and_antiderivative_agree(f in exp_poly(), t in 0.0f64..5.0) {
        let lhs = f.tail().eval(t) + f.antiderivative().eval(t) - f.antiderivative().eval(0.0);
        prop_assert!((lhs - f.mass()).abs() <= 1e-9 * f.abs_mass().max(1.0));
    }

    #[test]
    fn inversion_round_trips(f in separated_exp_poly(), t in 0.0f64..6.0) {
        let inv = invert_lt(&lt_of(&f)).unwrap();
        prop_assert!(inv.warning.is_none());
        prop_assert!((inv.density.eval(t) - f.eval(t)).abs() <= 1e-10 * f.abs_mass().max(1.0));
    }

    #[test]
    fn inversion_with_clustered_rates_degrades_gracefully(f in exp_poly(), t in 0.0f64..6.0) {
        let back = invert_lt(&lt_of(&f)).unwrap().density;
        prop_assert!((back.eval(t) - f.eval(t)).abs() <= 1e-6 * f.abs_mass().max(1.0));
    }

    #[test]
    fn generator_kernels_are_stochastic(g in generator(3)) {
        let k = smk_from_generator(&GeneratorSpec { states: labels(3), rates: g.clone() }).unwrap();
        for y in 0..3 {
            let total: f64 = (0..3).map(|z| k.p(y, z)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let exit: f64 = g[y].iter().sum();
            prop_assert!((k.mean_sojourn(y) - 1.0 / exit).abs() < 1e-12 / exit);
        }
        let st = stationary(&k).unwrap();
        prop_assert!((st.invariant.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renewal_grid_tracks_exact(g in generator(2), h in prop::sample::select(vec![0.05, 0.025])) {
        let fastest = g.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
        let k = smk_from_generator(&GeneratorSpec { states: labels(2), rates: g }).unwrap();
        let eta = vec![1.0, 0.0];
        let ex = renewal_density_exact(&k, &eta).unwrap();
        let grid = renewal_density_grid(&k, &eta, 4.0, h).unwrap();
        for i in (0..grid.len()).step_by(8) {
            for z in 0..2 {
                // second order in h, scaled by the fastest exit rate
                let bound = 0.5 * (h * fastest).powi(2) * fastest;
                prop_assert!((grid.values[i][z] - ex[z].eval(grid.t(i))).abs() < bound);
            }
        }
    }

    #[test]
    fn filter_posteriors_stay_normalized(seed in any::<u64>(), n_obs in 1usize..6) {
        let c = leakage_channel(&LeakageModelParams::default()).unwrap();
        let f = MarginalFilter::new(&c.joint_filter().unwrap());
        let tr = simulate_mrp(&c.kernel, c.kernel.index_of(&c.start).unwrap(), 40.0, seed).unwrap();
        let mark_of = |z: usize| match c.kernel.states()[z].as_str() {
            "r" => 0,
            "1" => 1,
            _ => 2,
        };
        let events: Vec<(usize, f64)> = tr.events.iter().take(n_obs).map(|&(t, z)| (mark_of(z), t)).collect();
        let mut theta = f.theta_point(&c.start_augmented, 0.0).unwrap();
        for &(z, t) in &events {
            theta = f.theta_update(&theta, z, t - theta.last_event).unwrap().0;
            prop_assert!((theta.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let start = PathStart::Theta(f.theta_point(&c.start_augmented, 0.0).unwrap());
        prop_assert!(f.path_log_density(&start, &events, 40.0).unwrap().is_finite());
    }

    #[test]
    fn config_round_trip_preserves_kernels(g in generator(2)) {
        let k = smk_from_generator(&GeneratorSpec { states: labels(2), rates: g }).unwrap();
        let mut c = mrpchan::models::poisson_channel(1.0).unwrap();
        let mut classes = mrpchan::filtering::TransitionClassMap::new(2);
        classes.set(0, 1, 1);
        classes.set(1, 0, 2);
        let spec = |keep: Option<Vec<String>>, marks: Vec<&str>, coarse: Vec<usize>| mrpchan::filtering::MarginalSpec {
            classes: classes.clone(),
            keep,
            marks: marks.into_iter().map(String::from).collect(),
            coarse,
            initial: None,
        };
        c.kernel = k.clone();
        c.joint = spec(None, vec!["A", "B"], vec![0, 1]);
        c.output = spec(Some(vec!["s1:1".into()]), vec!["B"], vec![0]);
        c.output_mark = "B".into();
        c.start = "s1".into();
        c.start_augmented = "s1:1".into();
        let text = ModelConfig::from_channel(&c).to_json();
        let Model::Channel(back) = ModelConfig::from_json(&text).unwrap().build().unwrap() else { unreachable!() };
        for y in 0..2 {
            for z in 0..2 {
                prop_assert!((back.kernel.density(y, z).eval(0.7) - k.density(y, z).eval(0.7)).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn poisson_filter_is_trivial() {
    let k = SemiMarkovKernel::new(vec!["x".into()], vec![vec![ExpPoly::exponential(2.0)]]).unwrap();
    let f = anderson_filter(&k, &[0]).unwrap();
    assert!(f.is_injective());
    let v = MrpView::from_filter(&f, "x", "x").unwrap();
    assert_eq!(v.targets, vec![0]);
}
