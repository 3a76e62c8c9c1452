//! Quadrature gradient pairings of a single-bubble configuration next to
//! their analytic leading terms and the remainder that bounds the gap.

use blowup_lab::bubble::BubbleParams;
use blowup_lab::functional::{expansion_alpha, expansion_lambda, grad_pairing, remainder_budget, Configuration, TestField, WeightedBubble};
use blowup_lab::sphere::{QuadratureRule, ScalarField, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let pole = SpherePoint::basis(n, 0);
    let k = ScalarField::zonal_polynomial(pole.clone(), vec![1.0, 0.3]);
    let rule = QuadratureRule::zonal_design();
    println!("{:>8} {:>11} {:>11} {:>11} {:>11} {:>11}", "lambda", "tau", "alpha gap", "R_alpha", "lambda gap", "R_lambda");
    for lambda in [1e2, 1e3, 1e4f64] {
        let tau = 1e-2 * (100.0 / lambda).powf(1.25);
        let alpha = 1.02 * k.value(&pole).powf(-1.25);
        let b = BubbleParams::new(pole.clone(), lambda)?;
        let cfg = Configuration::new(n, tau, 0.0, ScalarField::zero(n), k.clone(), vec![WeightedBubble { alpha, bubble: b }])?;
        let ga = grad_pairing(&cfg, &TestField::Bubble(0).bind(&cfg), &k, tau, &rule)?.value;
        let gl = grad_pairing(&cfg, &TestField::Rate(0).bind(&cfg), &k, tau, &rule)?.value;
        let (ea, el) = (expansion_alpha(&cfg, 0)?, expansion_lambda(&cfg, 0)?);
        println!(
            "{lambda:>8.0e} {tau:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
            (ga - ea.leading).abs(),
            ea.remainder,
            (gl - el.leading).abs(),
            el.remainder
        );
    }
    let cfg = Configuration::new(n, 1e-3, 0.0, ScalarField::zero(n), k.clone(), vec![WeightedBubble { alpha: 0.9, bubble: BubbleParams::new(pole, 50.0)? }])?;
    println!("\nremainder budget at lambda = 50, tau = 1e-3");
    for t in remainder_budget(&cfg).terms {
        println!("  {:<10} {:<28} {:.3e}", t.aggregate, t.name, t.value);
    }
    Ok(())
}
