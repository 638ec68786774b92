//! Per-iteration dense diagnostics on a mid-scale run: compares the Ritz
//! values driving the weight state with the iterate's true spectrum, and
//! checks the descent of the smoothed objective.

use matrix_irls::problem::{generate_ground_truth, observe, oversampling_to_m, sample_omega, DecayProfile};
use matrix_irls::solver::{
    determine_active_rank, initial_gamma_guess, initial_iterate, update_smoothing, wls_step,
    IrlsConfig,
};
use matrix_irls::spectral::top_singular_triplets;
use matrix_irls::weights::{big_f_eps, WeightState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let d: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let rho: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let max_outer: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let near_truth_start: bool = args.get(4).map(|s| s == "warm").unwrap_or(false);
    let (r, kappa) = (5usize, 10.0);

    let truth = generate_ground_truth(d, d, r, kappa, DecayProfile::Exponential, 1).unwrap();
    let m = oversampling_to_m(rho, r, d, d).unwrap();
    let omega = sample_omega(d, d, m, r, 2, 1000).unwrap();
    let y = observe(&truth, &omega).unwrap();
    let cfg = IrlsConfig {
        seed: 3,
        kappa_hint: Some(kappa),
        ..IrlsConfig::new(r)
    };

    let mut x = initial_iterate(&y);
    if near_truth_start {
        // Perturbed truth as the starting iterate: tests local convergence.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut m1 = truth.v_factor().clone();
        for k in 0..r {
            for j in 0..d {
                m1[(j, k)] *= truth.spectrum()[k];
            }
        }
        let noise: Vec<f64> = (0..m)
            .map(|_| 1e-3 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        x = matrix_irls::operators::SparsePlusLowRank::from_parts(
            y.pattern().clone(),
            noise,
            truth.u_factor().clone(),
            m1,
            nalgebra::DMatrix::zeros(d, 0),
            nalgebra::DMatrix::zeros(d, 0),
        )
        .unwrap();
    }
    let mut eps = f64::INFINITY;
    for k in 1..=max_outer {
        let spec = top_singular_triplets(&x, r + 1, cfg.krylov_iters, 1000 + k as u64).unwrap();
        // Dense truth about the iterate.
        let xd = {
            let mut out = nalgebra::DMatrix::zeros(d, d);
            for (&(i, j), &res) in x.pattern().entries().iter().zip(x.residual()) {
                out[(i as usize, j as usize)] += res;
            }
            out += x.u_left() * x.m1().transpose();
            out += x.m2() * x.v_right().transpose();
            out
        };
        let true_svals = xd.clone().svd(false, false).singular_values;
        eps = update_smoothing(eps, spec.sigma[r]);
        let r_k = determine_active_rank(&spec.sigma, eps, r);
        let w = WeightState::new(
            spec.u.columns(0, r_k).clone_owned(),
            spec.v.columns(0, r_k).clone_owned(),
            spec.sigma[..r_k].to_vec(),
            eps,
        )
        .unwrap();
        let guess = initial_gamma_guess(&w, &x).unwrap();
        let cg_tol = cfg.cg_tol_scale * eps / kappa;
        let (x_next, cg) = wls_step(&w, &y, &guess, cg_tol, cfg.cg_max_inner).unwrap();

        let f_before = big_f_eps(&xd, eps);
        let xd_next = {
            let mut out = nalgebra::DMatrix::zeros(d, d);
            for (&(i, j), &res) in x_next.pattern().entries().iter().zip(x_next.residual()) {
                out[(i as usize, j as usize)] += res;
            }
            out += x_next.u_left() * x_next.m1().transpose();
            out += x_next.m2() * x_next.v_right().transpose();
            out
        };
        let f_after = big_f_eps(&xd_next, eps);
        let rel_err = matrix_irls::problem::relative_error(&x_next, &truth).unwrap();
        let y_norm = y.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let r_norm = x_next.residual().iter().map(|v| v * v).sum::<f64>().sqrt() / y_norm;

        println!(
            "k={k:3} eps={eps:9.3e} s4/eps={:8.3} s5/eps={:8.5} s6/eps={:8.5} true7={:9.3e} F_before={f_before:12.4e} F_after={f_after:12.4e} descent={} cg={} rel_err={rel_err:9.3e} rnorm={r_norm:8.2e}",
            true_svals[r - 2] / eps,
            true_svals[r - 1] / eps,
            true_svals[r] / eps,
            true_svals[r + 1],
            f_after <= f_before + 1e-8 * f_before.abs(),
            cg.iterations,
            );
        x = x_next;
    }
}
