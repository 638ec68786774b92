//! Quick timing probe for one paper-scale solve.

use matrix_irls::problem::{generate_ground_truth, observe, oversampling_to_m, sample_omega, DecayProfile};
use matrix_irls::solver::{matrix_irls, IrlsConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let d: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let r: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let kappa: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let rho: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1);
    let max_outer: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(150);
    let cg_tol_scale: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1e-5);
    let cg_max_inner: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(500);
    let krylov_iters: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(20);
    let verbose = args.get(10).map(|s| s == "-v").unwrap_or(false);

    let truth =
        generate_ground_truth(d, d, r, kappa, DecayProfile::Exponential, seed * 131 + 1).unwrap();
    let m = oversampling_to_m(rho, r, d, d).unwrap();
    let omega = sample_omega(d, d, m, r, seed * 131 + 2, 1000).unwrap();
    let y = observe(&truth, &omega).unwrap();

    let inflate: usize = std::env::var("IRLS_RANK_INFLATE")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg = IrlsConfig {
        seed: seed * 131 + 3,
        kappa_hint: Some(kappa),
        max_outer,
        cg_tol_scale,
        cg_max_inner,
        krylov_iters,
        ..IrlsConfig::new(r + inflate)
    };
    let t1 = std::time::Instant::now();
    let out = matrix_irls(&y, &cfg, Some(&truth)).unwrap();
    let total = t1.elapsed().as_secs_f64();
    let best = out
        .record
        .iterations
        .iter()
        .filter_map(|it| it.rel_error)
        .fold(f64::INFINITY, f64::min);
    let last = out.record.iterations.last();
    println!(
        "seed={seed} d={d} rho={rho}: {:.1}s, {} iters, stop={:?}, final_err={:.3e}, best_err={:.3e}",
        total,
        out.record.iterations.len(),
        out.record.stop,
        last.and_then(|it| it.rel_error).unwrap_or(f64::NAN),
        best
    );
    if verbose {
        for (k, it) in out.record.iterations.iter().enumerate() {
            println!(
                "  k={:3} eps={:10.3e} r_k={} cg_it={:3} cg_res={:9.2e} rel_change={:9.2e} rel_err={:9.2e} t={:6.3}s",
                k + 1,
                it.eps,
                it.active_rank,
                it.cg_iterations,
                it.cg_residual,
                it.rel_change,
                it.rel_error.unwrap_or(f64::NAN),
                it.wall_time_s
            );
        }
    }
}
