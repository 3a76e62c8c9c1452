//! Fitting u = α0ω + Σα_iδ̃_i + v with v ⊥ E, and the orthogonal correction v̄
//! by null-space Newton against the dense KKT oracle.

use blowup_lab::bubble::BubbleParams;
use blowup_lab::functional::{Combination, Configuration, WeightedBubble};
use blowup_lab::reduction::{fit_decomposition, orthogonal_perturbation, solve_vbar, FitOptions, VbarOptions, VbarProblem};
use blowup_lab::sphere::{manufactured_curvature, ScalarField, SpherePoint};
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let e1 = SpherePoint::basis(n, 0);
    let omega = ScalarField::zonal_polynomial(e1.clone(), vec![1.0, -0.3, 0.3]);
    let k = manufactured_curvature(&omega)?;
    let bubble = |a: SpherePoint, lambda: f64, scale: f64| -> Result<WeightedBubble, Box<dyn std::error::Error>> {
        Ok(WeightedBubble { alpha: scale * k.value(&a).powf(-1.25), bubble: BubbleParams::new(a, lambda)? })
    };
    let truth = Configuration::new(n, 0.0, 1.02, omega.clone(), k.clone(), vec![bubble(e1.clone(), 30.0, 1.01)?, bubble(e1.antipode(), 12.0, 0.99)?])?;
    let mut guess = truth.clone();
    guess.alpha0 = 0.95;
    guess.bubbles[0].bubble.lambda = 40.0;
    guess.bubbles[1].bubble.lambda = 9.0;

    let report = |label: String, fit: &blowup_lab::reduction::FitResult| {
        let c = &fit.configuration;
        println!(
            "{label}: alpha0 {:.10} lambdas {:.8} {:.8}  ||v|| {:.3e}  orthogonal {}",
            c.alpha0,
            c.bubbles[0].bubble.lambda,
            c.bubbles[1].bubble.lambda,
            fit.residual_norm,
            fit.is_orthogonal()
        );
    };
    report("exact   ".into(), &fit_decomposition(&truth, &guess, &FitOptions::default())?);
    for eta in [1e-3, 1e-2] {
        let w = orthogonal_perturbation(&truth, 12, eta, 3)?;
        let u = Combination { terms: vec![(1.0, &truth), (1.0, &w)] };
        report(format!("eta {eta:.0e}"), &fit_decomposition(&u, &guess, &FitOptions::default())?);
    }

    let single = Configuration::new(n, 1e-2, 0.0, ScalarField::zero(n), ScalarField::zonal_polynomial(e1.clone(), vec![1.0, 0.3]), vec![bubble(e1, 6.0, 1.0)?])?;
    let opts = VbarOptions { degree: 40, ..Default::default() };
    let v = solve_vbar(&single, &opts)?;
    let kkt = VbarProblem::new(&single, 40)?.solve_kkt(&opts)?;
    let gap = (DVector::from_vec(v.coefficients.clone()) - kkt).amax();
    println!("\nv-bar: ||v|| {:.4e}, R {:.4e}, ratio {:.3}, Newton residuals {:?}", v.norm, v.remainder, v.ratio, v.residual_log);
    println!("max coefficient gap to the KKT solve {gap:.2e}");
    Ok(())
}
