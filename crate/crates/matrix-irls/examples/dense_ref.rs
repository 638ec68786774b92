//! Brute-force dense reference of the outer iteration: exact SVDs, weight
//! applied densely, constrained WLS solved in its dual form by CG on the
//! m x m system. No implicit representations anywhere. Only for diagnosis.

use matrix_irls::problem::{
    generate_ground_truth, observe, oversampling_to_m, sample_omega, DecayProfile,
};
use matrix_irls::weights::{apply_weight_inverse, WeightState};
use nalgebra::{DMatrix, DVector};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let d: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let rho: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let max_outer: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(80);
    let (r, kappa) = (5usize, 10.0);

    let truth =
        generate_ground_truth(d, d, r, kappa, DecayProfile::Exponential, seed * 131 + 1).unwrap();
    let m = oversampling_to_m(rho, r, d, d).unwrap();
    let omega = sample_omega(d, d, m, r, seed * 131 + 2, 1000).unwrap();
    let y = observe(&truth, &omega).unwrap();
    let entries = y.pattern().entries().to_vec();
    let yv = DVector::from_row_slice(y.values());

    let x0_dense = {
        let mut out = DMatrix::zeros(d, d);
        for k in 0..r {
            for i in 0..d {
                for j in 0..d {
                    out[(i, j)] += truth.u_factor()[(i, k)]
                        * truth.spectrum()[k]
                        * truth.v_factor()[(j, k)];
                }
            }
        }
        out
    };
    let x0_norm = x0_dense.norm();

    // X^(1) = P_Omega^*(y).
    let mut x = DMatrix::zeros(d, d);
    for (&(i, j), &v) in entries.iter().zip(y.values()) {
        x[(i as usize, j as usize)] = v;
    }
    let mut eps = f64::INFINITY;

    for k in 1..=max_outer {
        let svd = x.clone().svd(true, true);
        let s = &svd.singular_values;
        eps = eps.min(s[r]);
        if eps < 1e-14 * s[0] {
            println!("k={k:3} eps floor reached");
            break;
        }
        let exceed = (0..s.len()).take_while(|&i| s[i] > eps).count();
        let uncap = std::env::var("IRLS_UNCAP").is_ok();
        let r_k = if uncap { exceed } else { exceed.min(r) };
        let u_top = svd.u.as_ref().unwrap().columns(0, r_k).clone_owned();
        let v_top = svd.v_t.as_ref().unwrap().rows(0, r_k).transpose();
        let w = WeightState::new(u_top, v_top, s.as_slice()[..r_k].to_vec(), eps).unwrap();

        // Dual solve: (P_Omega W^{-1} P_Omega^*) z = y by CG with dense
        // weight-inverse applications.
        let apply_dual = |z: &DVector<f64>| -> DVector<f64> {
            let mut scatter = DMatrix::zeros(d, d);
            for (&(i, j), &val) in entries.iter().zip(z.iter()) {
                scatter[(i as usize, j as usize)] = val;
            }
            let wi = apply_weight_inverse(&w, &scatter).unwrap();
            DVector::from_iterator(
                m,
                entries.iter().map(|&(i, j)| wi[(i as usize, j as usize)]),
            )
        };
        let mut z = DVector::zeros(m);
        let mut res = yv.clone();
        let mut p = res.clone();
        let mut rs = res.norm_squared();
        let tol = 1e-5 * eps / kappa;
        let mut cg_used = 0;
        for it in 1..=2000 {
            let ap = apply_dual(&p);
            let pap = p.dot(&ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rs / pap;
            z += alpha * &p;
            res -= alpha * ap;
            let rs_new = res.norm_squared();
            cg_used = it;
            if rs_new.sqrt() / yv.norm() <= tol {
                break;
            }
            p = &res + (rs_new / rs) * p;
            rs = rs_new;
        }
        let mut scatter = DMatrix::zeros(d, d);
        for (&(i, j), &val) in entries.iter().zip(z.iter()) {
            scatter[(i as usize, j as usize)] = val;
        }
        x = apply_weight_inverse(&w, &scatter).unwrap();
        let rel_err = (&x - &x0_dense).norm() / x0_norm;
        println!(
            "k={k:3} eps={eps:10.3e} r_k={r_k} exceed={exceed:3} cg={cg_used:4} rel_err={rel_err:9.3e}"
        );
        if rel_err < 1e-11 {
            break;
        }
    }
}
