//! Bubble on top of a manufactured residual mass ω: the fitted ω-part, its
//! first-order drift α0(τ), and ‖v‖/R along the radial branch.

use blowup_lab::balance::predicted_lambda;
use blowup_lab::functional::omega_norm_sq;
use blowup_lab::radial::{bubble_seed, continue_in_tau, drifted_omega_scale, ContinuationOptions};
use blowup_lab::sphere::{manufactured_curvature, ScalarField, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let pole = SpherePoint::basis(n, 0);
    // 1 + 0.7(1 − cos θ) + 1.25(1 − cos θ)²
    let omega = ScalarField::zonal_polynomial(pole.clone(), vec![2.95, -3.2, 1.25]);
    let k = manufactured_curvature(&omega)?;
    let norm = omega_norm_sq(&omega)?.sqrt();
    let schedule: Vec<f64> = (0..5).map(|j| 2e-2 * 0.5f64.powi(j)).collect();
    let seed = bubble_seed(&k, &omega, schedule[0], predicted_lambda(schedule[0], &pole, &k)?, 240)?;
    let family = continue_in_tau(&k, &omega, &schedule, &seed, &ContinuationOptions::default())?;
    println!("{:>9} {:>9} {:>9} {:>12} {:>12} {:>9}", "tau", "lambda", "alpha0", "omega error", "first order", "||v||/R");
    for m in &family.members {
        let f = m.fit.as_ref().expect("fitted");
        let drift = (drifted_omega_scale(&k, &omega, m.tau)? - 1.0).abs() * norm;
        println!("{:>9.2e} {:>9.3} {:>9.5} {:>12.3e} {:>12.3e} {:>9.1}", m.tau, f.lambda, f.alpha0, f.omega_error, drift, f.v_norm / f.remainder);
    }
    Ok(())
}
