//! Radial continuation of a single bubble on K = 1 + 0.3 cos θ down in τ,
//! then the ln λ against ln τ regression and the τλ² intercept.

use blowup_lab::balance::{predicted_lambda, verify_blowup, VerifyOptions};
use blowup_lab::radial::{bubble_seed, continue_in_tau, ContinuationOptions};
use blowup_lab::sphere::{ScalarField, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let pole = SpherePoint::basis(n, 0);
    let k = ScalarField::zonal_polynomial(pole.clone(), vec![1.0, 0.3]);
    let omega = ScalarField::zero(n);
    let schedule: Vec<f64> = (0..7).map(|j| 5e-2 * (1e-3f64 / 5e-2).powf(j as f64 / 6.0)).collect();
    let seed = bubble_seed(&k, &omega, schedule[0], predicted_lambda(schedule[0], &pole, &k)?, 160)?;
    let family = continue_in_tau(&k, &omega, &schedule, &seed, &ContinuationOptions::default())?;
    println!("{:>10} {:>10} {:>10} {:>10} {:>8}", "tau", "lambda", "tau lam^2", "||v||/R", "newton");
    for m in &family.members {
        let f = m.fit.as_ref().expect("fitted");
        println!("{:>10.3e} {:>10.3} {:>10.5} {:>10.2} {:>8}", m.tau, f.lambda, m.tau * f.lambda * f.lambda, f.v_norm / f.remainder, m.solution.iterations);
    }
    let report = verify_blowup(&family.fitted_configurations(), &VerifyOptions::default())?;
    let b = &report.bubbles[0];
    println!("slope {:.4} +- {:.1e}; tau lambda^2 limit {:.5}, off by {:.2}%", b.rate_slope, b.rate_slope_error, b.predicted_tau_lambda_sq, 100.0 * b.tau_lambda_sq_relative_error);
    Ok(())
}
