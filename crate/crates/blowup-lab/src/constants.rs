//! Dimensional constants c0, S_n, c2, c4, c5 and the rate constant κ1,
//! each computed by direct quadrature and cross-checked by an independent route.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{LabError, Result};
use crate::quadrature::{adaptive_gk, Estimate};
use crate::sphere::sphere_area;

/// Critical exponent p = (n+2)/(n-2).
pub fn critical_exponent(n: usize) -> f64 {
    let nf = n as f64;
    (nf + 2.0) / (nf - 2.0)
}

/// Bubble normalization c0 = (n(n-2))^{(n-2)/4}.
pub fn c0(n: usize) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0)
}

/// Mass term n(n-2)/4 of the conformal Laplacian.
pub fn conformal_mass(n: usize) -> f64 {
    let nf = n as f64;
    nf * (nf - 2.0) / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialWeight {
    One,
    /// ln(1 + r²)
    Log,
}

/// `∫_0^∞ r^a w(r) / (1+r²)^b dr`, through the substitution r = tan φ and split at r = 1.
pub fn radial_integral(a: f64, b: f64, weight: RadialWeight) -> Result<Estimate> {
    if !(a > -1.0) || !(b > (a + 1.0) / 2.0) {
        return Err(LabError::Domain(format!(
            "radial integral diverges for a = {a}, b = {b} (need b > (a+1)/2, a > -1)"
        )));
    }
    let e = 2.0 * b - 2.0 - a;
    let f = move |phi: f64| {
        let (s, c) = phi.sin_cos();
        if c <= 0.0 {
            return 0.0;
        }
        let base = s.powf(a) * c.powf(e);
        match weight {
            RadialWeight::One => base,
            RadialWeight::Log => -2.0 * c.ln() * base,
        }
    };
    adaptive_gk(f, &[0.0, PI / 8.0, PI / 4.0, 3.0 * PI / 8.0, PI / 2.0], 1e-13, 4000)
}

/// `(1/2) B((a+1)/2, b-(a+1)/2)`, the closed form of the unweighted radial integral.
pub fn radial_integral_closed(a: f64, b: f64) -> f64 {
    0.5 * beta((a + 1.0) / 2.0, b - (a + 1.0) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Quadrature,
    ClosedForm,
}

/// One constant with its error bound and the value of its independent cross-check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEntry {
    pub value: f64,
    pub error: f64,
    pub provenance: Provenance,
    pub cross_check: Option<f64>,
    pub cross_check_route: Option<String>,
}

impl ConstantEntry {
    pub fn relative_disagreement(&self) -> f64 {
        match self.cross_check {
            Some(c) => ((self.value - c) / c).abs(),
            None => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionalConstants {
    pub n: usize,
    pub c0: ConstantEntry,
    pub s_n: ConstantEntry,
    pub c2: ConstantEntry,
    pub c4: ConstantEntry,
    pub c5: ConstantEntry,
    pub kappa1: ConstantEntry,
    pub notes: BTreeMap<String, String>,
}

impl DimensionalConstants {
    /// The six constants in output order.
    pub fn entries(&self) -> [(&'static str, &ConstantEntry); 6] {
        [
            ("c0", &self.c0),
            ("S_n", &self.s_n),
            ("c2", &self.c2),
            ("c4", &self.c4),
            ("c5", &self.c5),
            ("kappa1", &self.kappa1),
        ]
    }
}

/// Closed form of S_n = (n(n-2))^{n/2} π^{n/2} Γ(n/2)/Γ(n).
pub fn s_n_closed(n: usize) -> f64 {
    let nf = n as f64;
    (0.5 * nf * (nf * (nf - 2.0)).ln() + 0.5 * nf * PI.ln() + ln_gamma(nf / 2.0) - ln_gamma(nf)).exp()
}

/// Closed form of c2 = c0^{p+1} |S^{n-1}| (1/2) B(n/2, 1).
pub fn c2_closed(n: usize) -> f64 {
    let nf = n as f64;
    let p = critical_exponent(n);
    c0(n).powf(p + 1.0) * sphere_area(n - 1) * 0.5 * beta(nf / 2.0, 1.0)
}

const AGREEMENT: f64 = 1e-8;

/// Flat bubble δ_{0,1}(r) = c0 (1+r²)^{-(n-2)/2}.
fn flat_bubble(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    c0(n) * (1.0 + r * r).powf(-(nf - 2.0) / 2.0)
}

/// λ∂δ_{0,λ}/∂λ at λ = 1.
fn flat_bubble_dlambda(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    0.5 * (nf - 2.0) * flat_bubble(n, r) * (1.0 - r * r) / (1.0 + r * r)
}

/// `|S^{n-1}| ∫_0^∞ g(r) r^{n-1} dr` by adaptive quadrature in r = tan φ.
fn rn_moment<F: Fn(f64) -> f64>(n: usize, g: F) -> Result<Estimate> {
    let f = |phi: f64| {
        let (s, c) = phi.sin_cos();
        if c <= 0.0 {
            return 0.0;
        }
        let r = s / c;
        g(r) * r.powi(n as i32 - 1) / (c * c)
    };
    let est = adaptive_gk(f, &[0.0, PI / 8.0, PI / 4.0, 3.0 * PI / 8.0, PI / 2.0], 1e-13, 4000)?;
    let area = sphere_area(n - 1);
    Ok(Estimate {
        value: area * est.value,
        error: area * est.error,
    })
}

fn consistency(name: &str, first: f64, second: f64) -> Result<()> {
    if ((first - second) / second).abs() > AGREEMENT {
        return Err(LabError::Consistency {
            name: name.into(),
            first,
            second,
        });
    }
    Ok(())
}

/// [`compute_all`] memoised per dimension.
pub fn cached(n: usize) -> Result<Arc<DimensionalConstants>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DimensionalConstants>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().expect("constants cache").get(&n) {
        return Ok(c.clone());
    }
    let c = Arc::new(compute_all(n)?);
    cache.lock().expect("constants cache").insert(n, c.clone());
    Ok(c)
}

/// All dimensional constants for dimension n (n ≥ 3).
pub fn compute_all(n: usize) -> Result<DimensionalConstants> {
    if n < 3 {
        return Err(LabError::Domain("dimension must be at least 3".into()));
    }
    let nf = n as f64;
    let p = critical_exponent(n);
    let c0v = c0(n);
    let cp1 = c0v.powf(p + 1.0);
    let area = sphere_area(n - 1);
    let scaled = |e: Estimate, k: f64| Estimate {
        value: e.value * k,
        error: e.error * k.abs(),
    };

    let s_q = scaled(radial_integral(nf - 1.0, nf, RadialWeight::One)?, cp1 * area);
    let s_c = s_n_closed(n);
    consistency("S_n", s_q.value, s_c)?;

    let c2_q = scaled(radial_integral(nf - 1.0, (nf + 2.0) / 2.0, RadialWeight::One)?, cp1 * area);
    let c2_c = c2_closed(n);
    consistency("c2", c2_q.value, c2_c)?;

    // c4 from the printed integrand |x|²(|x|²-1)/(1+|x|²)^{n+1}
    let hi = radial_integral(nf + 3.0, nf + 1.0, RadialWeight::One)?;
    let lo = radial_integral(nf + 1.0, nf + 1.0, RadialWeight::One)?;
    let k4 = (nf - 2.0) / (2.0 * nf) * cp1 * area;
    let c4_q = Estimate {
        value: k4 * (hi.value - lo.value),
        error: k4.abs() * (hi.error + lo.error),
    };
    // second route: coefficient of the moment ∫|x|² δ^p λ∂δ/∂λ
    let moment = rn_moment(n, |r| r * r * flat_bubble(n, r).powf(p) * flat_bubble_dlambda(n, r))?;
    let c4_route = -moment.value / nf;
    consistency("c4", c4_q.value, c4_route)?;

    // c5 from the printed integrand (|x|²-1) ln(1+|x|²)/(1+|x|²)^{n+1}
    let hi5 = radial_integral(nf + 1.0, nf + 1.0, RadialWeight::Log)?;
    let lo5 = radial_integral(nf - 1.0, nf + 1.0, RadialWeight::Log)?;
    let k5 = (nf - 2.0).powi(2) / 4.0 * cp1 * area;
    let c5_q = Estimate {
        value: k5 * (hi5.value - lo5.value),
        error: k5.abs() * (hi5.error + lo5.error),
    };
    // second route: τ-derivative of ∫δ^{p-τ} λ∂δ/∂λ, i.e. -(n-2)/2 ∫ δ^p λ∂δ/∂λ ln(1+|x|²)
    let log_moment = rn_moment(n, |r| flat_bubble(n, r).powf(p) * flat_bubble_dlambda(n, r) * (r * r).ln_1p())?;
    let c5_route = -(nf - 2.0) / 2.0 * log_moment.value;
    consistency("c5", c5_q.value, c5_route)?;

    let kappa = 2.0 * c5_q.value / c4_q.value;
    let kappa_err = kappa * (c5_q.error / c5_q.value.abs() + c4_q.error / c4_q.value.abs());
    let kappa_route = 2.0 * c5_route / c4_route;
    if n >= 7 && !(kappa > 0.0) {
        return Err(LabError::Consistency {
            name: "kappa1 positivity".into(),
            first: kappa,
            second: 0.0,
        });
    }

    let mut notes = BTreeMap::new();
    notes.insert(
        "kappa1_definition".into(),
        "kappa1 = 2 c5 / c4, from 2 c5 tau + c4 DeltaK/(lambda^2 K) = 0".into(),
    );
    notes.insert(
        "kappa1_alternative_form".into(),
        "1/lambda^2 = -c4 K tau/(c3 DeltaK) with c3 undefined; candidates c3 = c2 or c3 = 2 c5".into(),
    );
    notes.insert(
        "kappa1_if_c3_is_c2".into(),
        format!("{:.12e}", c2_q.value / c4_q.value),
    );
    notes.insert(
        "kappa1_if_c3_is_2c5".into(),
        format!("{:.12e}", kappa),
    );
    notes.insert(
        "laplacian_convention".into(),
        "DeltaK in the rate law is the flat Laplacian of the stereographic chart centred at the point, i.e. 4 x Laplace-Beltrami".into(),
    );
    notes.insert(
        "kappa1_laplace_beltrami".into(),
        format!("{:.12e}", kappa / 4.0),
    );
    notes.insert(
        "c4_sign_convention".into(),
        "c4 = -(1/n) int |x|^2 delta^p lambda d(delta)/d(lambda); the integrand (|x|^2-1) fixes the sign, the (1-|y|^2) form differs by -1".into(),
    );
    notes.insert(
        "c5_identity".into(),
        format!("(n-2)^2 S_n/(4n) = {:.12e}", (nf - 2.0).powi(2) * s_c / (4.0 * nf)),
    );
    if n < 7 {
        notes.insert("warning".into(), "blow-up analysis assumes n >= 7".into());
    }

    Ok(DimensionalConstants {
        n,
        c0: ConstantEntry {
            value: c0v,
            error: 0.0,
            provenance: Provenance::ClosedForm,
            cross_check: None,
            cross_check_route: None,
        },
        s_n: ConstantEntry {
            value: s_q.value,
            error: s_q.error.max((s_q.value - s_c).abs()),
            provenance: Provenance::Quadrature,
            cross_check: Some(s_c),
            cross_check_route: Some("gamma closed form".into()),
        },
        c2: ConstantEntry {
            value: c2_q.value,
            error: c2_q.error.max((c2_q.value - c2_c).abs()),
            provenance: Provenance::Quadrature,
            cross_check: Some(c2_c),
            cross_check_route: Some("beta closed form".into()),
        },
        c4: ConstantEntry {
            value: c4_q.value,
            error: c4_q.error.max((c4_q.value - c4_route).abs()),
            provenance: Provenance::Quadrature,
            cross_check: Some(c4_route),
            cross_check_route: Some("moment of |x|^2 delta^p lambda d(delta)/d(lambda)".into()),
        },
        c5: ConstantEntry {
            value: c5_q.value,
            error: c5_q.error.max((c5_q.value - c5_route).abs()),
            provenance: Provenance::Quadrature,
            cross_check: Some(c5_route),
            cross_check_route: Some("tau-derivative of int delta^(p-tau) lambda d(delta)/d(lambda)".into()),
        },
        kappa1: ConstantEntry {
            value: kappa,
            error: kappa_err.max((kappa - kappa_route).abs()),
            provenance: Provenance::Quadrature,
            cross_check: Some(kappa_route),
            cross_check_route: Some("ratio of second routes".into()),
        },
        notes,
    })
}
