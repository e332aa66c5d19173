//! Throwaway calibration probe for the recovery study (not shipped).
use mdfhp_core::catalog::Catalog;
use mdfhp_core::model::Event;
use mdfhp_core::estimate::{fit_mdfhp, FitOptions, MdfhpLikelihood};
use mdfhp_core::model::{MagnitudePartition, MdfhpModel, MdfhpParams};
use mdfhp_core::simulate::{rng_stream, simulate_mdfhp};
use std::time::Instant;

fn true_params() -> MdfhpParams {
    MdfhpParams {
        lambda0: vec![0.055, 0.30],
        alpha: vec![0.08, 0.08, 0.10, 0.45],
        gamma: vec![1.0, 0.7, 0.9, 0.5],
        beta: vec![0.72, 0.60, 0.66, 0.78],
        c: vec![1.5, 0.8, 1.2, 0.4],
        b_mag: vec![2.2, 3.0],
    }
}

fn main() {
    let partition = MagnitudePartition::new(4.0, &[5.0]).unwrap();
    let model = MdfhpModel::new(partition.clone(), true_params()).unwrap();
    let n = model.expected_offspring();
    eprintln!("offspring matrix: {n:?}");
    // Spectral radius of the 2x2 offspring matrix.
    let (a, b, c, d) = (n[0], n[1], n[2], n[3]);
    let tr = a + d;
    let det = a * d - b * c;
    let rho = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
    eprintln!("spectral radius: {rho:.3}");

    let t_end = 1400.0;
    let mut rng = rng_stream(42, 0, 0);
    let t0 = Instant::now();
    let sim = simulate_mdfhp(&model, &[], (0.0, t_end), &mut rng, 60_000).unwrap();
    eprintln!("simulated {} events in {:?}", sim.len(), t0.elapsed());
    let n_hi = sim.iter().filter(|e| e.subprocess == 0).count();
    eprintln!(
        "share sp0 (high): {:.3}, sp1: {:.3}",
        n_hi as f64 / sim.len() as f64,
        1.0 - n_hi as f64 / sim.len() as f64
    );

    let events: Vec<Event> = sim.iter().map(|e| Event { t: e.t, mag: e.mag }).collect();
    let cat = Catalog {
        origin_utc: "2020-01-01T00:00:00Z".into(),
        m0: 4.0,
        horizon_t: t_end,
        region: None,
        events,
    };

    let like = MdfhpLikelihood::from_catalog(&cat, &[5.0]).unwrap();
    let t0 = Instant::now();
    let mut ll = 0.0;
    for _ in 0..5 {
        ll = like.loglik(&true_params()).total();
    }
    eprintln!("loglik {ll:.2}; eval cost {:?}", t0.elapsed() / 5);

    let opts = FitOptions {
        restarts: 1,
        seed: 7,
        nm_max_evals: 3000,
        polish: true,
        polish_iters: 30,
        compute_ci: false,
        ..FitOptions::default()
    };
    let t0 = Instant::now();
    let fit = fit_mdfhp(&cat, &[5.0], &opts).unwrap();
    eprintln!("fit took {:?}, converged={}", t0.elapsed(), fit.converged);
    let truth = mdfhp_core::estimate::pack_mdfhp(&true_params());
    for (k, name) in fit.param_names.iter().enumerate() {
        let got = fit.estimates[k];
        let want = truth[k].exp();
        eprintln!("  {name:<10} got {got:>8.4}  true {want:>8.4}  (log err {:+.3})", got.ln() - want.ln());
    }
    eprintln!("loglik at fit: {:.2} vs truth {:.2}", fit.loglik, ll);
}
