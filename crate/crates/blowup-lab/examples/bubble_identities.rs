//! Norm and orthogonality identities of the projected bubble, and the
//! asymptotic interaction against its exact conformal counterpart.

use blowup_lab::bubble::{bubble_dlambda, bubble_eval, conformal_interaction, epsilon, BubbleParams};
use blowup_lab::constants::{critical_exponent, s_n_closed};
use blowup_lab::sphere::{integrate_sphere, QuadratureRule, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let p = critical_exponent(n);
    let sn = s_n_closed(n);
    let rule = QuadratureRule::zonal();
    for lambda in [1.0, 10.0, 100.0, 1e3] {
        let b = BubbleParams::new(SpherePoint::basis(n, 0), lambda)?;
        let norm = integrate_sphere(|x| bubble_eval(&b, x).powf(p + 1.0), n, &[b.center()], &rule)?.value;
        let cross = integrate_sphere(|x| bubble_eval(&b, x).powf(p) * bubble_dlambda(&b, x), n, &[b.center()], &rule)?.value;
        println!("lambda {lambda:>6}: int delta^(p+1)/S_n - 1 = {:+.1e}, <delta, lambda d delta> = {cross:+.1e}", norm / sn - 1.0);
    }
    println!("\nequal rates, angle 0.5 apart");
    for lambda in [2.0, 10.0, 100.0] {
        let bi = BubbleParams::new(SpherePoint::basis(n, 0), lambda)?;
        let bj = BubbleParams::new(SpherePoint::at_angle(n, 0.5), lambda)?;
        let (e, exact) = (epsilon(&bi, &bj), conformal_interaction(&bi, &bj));
        println!("lambda {lambda:>5}: eps {e:.6e}  conformal {exact:.6e}  ratio {:.8}", e / exact);
    }
    Ok(())
}
