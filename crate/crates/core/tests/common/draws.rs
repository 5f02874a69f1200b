//! Random parameter draws for the evaluator-vs-oracle comparisons.

use rand::Rng;
use streampca::schedule::BoundParams;

pub fn log_uniform<R: Rng>(r: &mut R, lo: f64, hi: f64) -> f64 {
    (r.random_range(lo.ln()..hi.ln())).exp()
}

/// Bound parameters with `c₀ ∈ (2.1, 10)`; returns `(params, c, c₀, L)`.
pub fn bound_case<R: Rng>(r: &mut R) -> (BoundParams, f64, f64, f64) {
    let eigengap = r.random_range(0.05..1.0);
    let lambda1 = r.random_range(eigengap..2.0);
    let p = BoundParams {
        d: r.random_range(1..200),
        r: r.random_range(1.0..20.0),
        sigma2_eff: log_uniform(r, 1e-3, 1e3),
        delta: r.random_range(0.01..0.99),
        lambda1,
        eigengap,
    };
    let c0 = r.random_range(2.1..10.0);
    let c = c0 / (2.0 * eigengap);
    let l = log_uniform(r, 1e5, 1e9);
    (p, c, c0, l)
}

use super::{oracle, rel_err, rng};
use streampca::schedule::*;

/// Worst relative error per evaluator over `n` random draws.
pub fn compare_evaluators(n: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = rng(seed);
    let mut worst = vec![
        ("l_lower_bound_main", 0.0f64),
        ("l_lower_bound_initial", 0.0),
        ("theoretical_bound", 0.0),
        ("epoch_schedule", 0.0),
        ("closed_form_final_time", 0.0),
        ("max_minibatch", 0.0),
        ("finite_sample_bound", 0.0),
    ];
    let mut bump =
        |k: usize, e: f64| worst[k].1 = worst[k].1.max(if e.is_nan() { f64::INFINITY } else { e });
    for _ in 0..n {
        let (p, c, c0, l) = bound_case(&mut g);
        let d = p.d as f64;

        let lb = l_lower_bound_main(&p, c).unwrap();
        bump(0, rel_err(lb.l1, oracle::l1(d, p.r, p.delta, c)));
        bump(0, rel_err(lb.l2, oracle::l2(d, p.sigma2_eff, p.delta, c)));

        for (variant, with_d) in [
            (InitialBoundVariant::WithDimension, true),
            (InitialBoundVariant::EpochZero, false),
        ] {
            let got = l_lower_bound_initial(p.d, p.r, p.sigma2_eff, p.delta, c, variant).unwrap();
            bump(
                1,
                rel_err(
                    got,
                    oracle::l_initial(d, p.r, p.sigma2_eff, p.delta, c, with_d),
                ),
            );
        }

        let sched = StepSchedule::from_c(c, l, p.eigengap).unwrap();
        let t = g.random_range(0..10_000_000u64);
        let got = theoretical_bound(t, &p, &sched).unwrap();
        let want = oracle::bound(
            t as f64,
            d,
            p.delta,
            c,
            p.eigengap,
            p.lambda1,
            l,
            p.sigma2_eff,
        );
        bump(2, rel_err(got, want));

        let ec0 = g.random_range(3.0..20.0);
        let el = g.random_range(0.0..1e4);
        let ed = g.random_range(1..100usize);
        let sch = epoch_schedule(p.delta, ed, ec0, el).unwrap();
        let want = oracle::epochs(p.delta, ed as f64, ec0, el);
        if sch.pairs.len() != want.len() {
            bump(3, f64::INFINITY);
        } else {
            for ((ta, ea), (tb, eb)) in sch.pairs.iter().zip(&want) {
                bump(3, rel_err(*ta as f64, *tb as f64).max(rel_err(*ea, *eb)));
            }
        }
        if sch.check_conditions(p.delta, ed).is_err() {
            bump(3, f64::INFINITY);
        }
        let cf = closed_form_final_time(p.delta, ed, ec0, el);
        bump(
            4,
            rel_err(cf, oracle::closed_form(p.delta, ed as f64, ec0, el)),
        );
        // Integer epochs and integer times can only push t_J past the closed form.
        if (sch.final_time() as f64) < cf * (1.0 - 1e-12) {
            bump(4, f64::INFINITY);
        }

        let total = log_uniform(&mut g, 1.0, 1e12) as u64;
        let mc0 = g.random_range(2.05..50.0);
        let got = max_minibatch(total, mc0).unwrap();
        bump(5, rel_err(got as f64, oracle::max_b(total, mc0) as f64));

        let batch = g.random_range(1..2000u64);
        let mu = g.random_range(0..2 * batch);
        let total = (batch + mu) * g.random_range(1..100_000u64);
        let l1p = log_uniform(&mut g, 1e5, 1e8);
        let l2p = log_uniform(&mut g, 1e3, 1e8);
        let got = finite_sample_bound(total, batch, mu, &p, c0, l1p, l2p).unwrap();
        let want = oracle::finite(
            total as f64,
            batch as f64,
            mu as f64,
            d,
            p.delta,
            p.eigengap,
            p.lambda1,
            p.sigma2_eff,
            c0,
            l1p,
            l2p,
        );
        bump(6, rel_err(got.total, want));
        let lossless = minibatch_bound(total, batch, &p, c0, l1p, l2p).unwrap();
        let with_zero = finite_sample_bound(total, batch, 0, &p, c0, l1p, l2p).unwrap();
        if lossless.total != with_zero.total {
            bump(6, f64::INFINITY);
        }
    }
    worst
}
