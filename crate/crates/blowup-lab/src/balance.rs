//! Balancing conditions for the concentration parameters, the reduced system
//! in the variables (β, Λ, ξ) solved by Newton, the rate law, Γ diagnostics,
//! verification of blow-up families and the Morse-index count.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bubble::{epsilon, epsilon_da, epsilon_dlambda, BubbleParams};
use crate::constants::{cached, critical_exponent};
use crate::error::{LabError, Result};
use crate::functional::{energy, expansion_alpha, expansion_lambda, omega_norm_sq, point_constant, remainder_budget, Configuration, WeightedBubble};
use crate::regression::{loglog_fit, spread};
use crate::sphere::{geodesic_distance, tangent_frame, QuadratureRule, ScalarField, SpherePoint};

/// λ = (−ΔK(y)/(κ1 K(y) τ))^{1/2}, with ΔK the chart Laplacian.
pub fn predicted_lambda(tau: f64, y: &SpherePoint, curvature: &ScalarField) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(LabError::Domain(format!("τ must be positive, got {tau}")));
    }
    let lap = curvature.chart_laplacian(y);
    if lap >= 0.0 {
        return Err(LabError::Hypothesis(format!("ΔK(y) = {lap:.4e} is not negative")));
    }
    let kappa1 = cached(y.dim())?.kappa1.value;
    Ok((-lap / (kappa1 * curvature.value(y) * tau)).sqrt())
}

// ---------------------------------------------------------------------------
// Balancing residuals
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceResiduals {
    /// −c2 Σ_j α_j λ_i∂ε_ij/∂λ_i + α_i(c4 ΔK(a_i)/(λ_i² K(a_i)) + 2c5 τ)
    pub rate: Vec<f64>,
    /// The same with the interaction at weight 2c2, matching the verified
    /// rate expansion (self term ½); it vanishes where that expansion does.
    pub rate_balanced: Vec<f64>,
    /// |∇K(a_i)|/λ_i
    pub gradient: Vec<f64>,
    /// 1/λ_i³ + Σ_j ε_ij + R² + Σ_k ln λ_k/λ_k^{n/2}
    pub gradient_bound: Vec<f64>,
    /// gradient / gradient_bound
    pub gradient_ratio: Vec<f64>,
    pub r2_lambda: f64,
}

pub fn balance_residuals(cfg: &Configuration) -> Result<BalanceResiduals> {
    let c = cached(cfg.n)?;
    let nf = cfg.n as f64;
    let b = cfg.bubble_params();
    let budget = remainder_budget(cfg);
    let far: f64 = b.iter().map(|bk| bk.lambda.ln() / bk.lambda.powf(nf / 2.0)).sum();
    let mut out = BalanceResiduals {
        rate: Vec::new(),
        rate_balanced: Vec::new(),
        gradient: Vec::new(),
        gradient_bound: Vec::new(),
        gradient_ratio: Vec::new(),
        r2_lambda: budget.r2_lambda,
    };
    for (i, wi) in cfg.bubbles.iter().enumerate() {
        let bi = &wi.bubble;
        let mut inter = 0.0;
        let mut eps_sum = 0.0;
        for (j, wj) in cfg.bubbles.iter().enumerate() {
            if j != i {
                inter += c.c2.value * wj.alpha * epsilon_dlambda(bi, &wj.bubble);
                eps_sum += epsilon(bi, &wj.bubble);
            }
        }
        let k = cfg.curvature.value(&bi.a);
        let own = wi.alpha * (c.c4.value * cfg.curvature.chart_laplacian(&bi.a) / (bi.lambda * bi.lambda * k) + 2.0 * c.c5.value * cfg.tau);
        let e = own - inter;
        out.rate_balanced.push(own - 2.0 * inter);
        let g = cfg.curvature.gradient(&bi.a).norm() / bi.lambda;
        let bound = bi.lambda.powi(-3) + eps_sum + budget.r * budget.r + far;
        out.rate.push(e);
        out.gradient.push(g);
        out.gradient_bound.push(bound);
        out.gradient_ratio.push(g / bound);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reduced variables
// ---------------------------------------------------------------------------

/// Coordinates of a configuration relative to target critical points y_i:
/// β0 = 1 − α0^{4/(n−2)}, β_i = 1 − α_i^{4/(n−2)} K(x_i),
/// 1/λ_i² = −κ1 K(y_i) τ (1 + Λ_i)/ΔK(y_i), x_i = (y_i + ξ_i)/|y_i + ξ_i|
/// with ξ_i in the coordinates of `tangent_frame(y_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub tau: f64,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub rate_deviation: Vec<f64>,
    pub shift: Vec<Vec<f64>>,
    pub targets: Vec<SpherePoint>,
}

/// Membership in the box |β| < τ ln²τ, τ/C ≤ λ^{−2} ≤ Cτ, d(x_i, y_i) ≤ Cτ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCheck {
    pub constant: f64,
    pub max_beta_ratio: f64,
    pub rate_bounds: Vec<(f64, f64)>,
    pub max_distance_ratio: f64,
    pub inside: bool,
}

impl ReducedState {
    pub fn origin(tau: f64, targets: Vec<SpherePoint>) -> Self {
        let n = targets.first().map(|y| y.dim()).unwrap_or(0);
        Self {
            tau,
            beta0: 0.0,
            beta: vec![0.0; targets.len()],
            rate_deviation: vec![0.0; targets.len()],
            shift: vec![vec![0.0; n]; targets.len()],
            targets,
        }
    }

    fn dim(&self) -> usize {
        self.targets.first().map(|y| y.dim()).unwrap_or(0)
    }

    pub fn to_configuration(&self, omega: &ScalarField, curvature: &ScalarField) -> Result<Configuration> {
        let n = curvature.dim();
        let q = (n as f64 - 2.0) / 4.0;
        let kappa1 = cached(n)?.kappa1.value;
        let alpha0 = if omega.is_zero() { 0.0 } else { (1.0 - self.beta0).powf(q) };
        let mut bubbles = Vec::with_capacity(self.targets.len());
        for (i, y) in self.targets.iter().enumerate() {
            let frame = tangent_frame(y);
            let mut v = y.to_vector();
            for (k, e) in frame.iter().enumerate() {
                v += e * self.shift[i][k];
            }
            let x = SpherePoint::from_ambient(&v)?;
            let lap = curvature.chart_laplacian(y);
            let inv_l2 = -kappa1 * curvature.value(y) * self.tau * (1.0 + self.rate_deviation[i]) / lap;
            if !(inv_l2 > 0.0) {
                return Err(LabError::Domain(format!("rate deviation {} gives no positive λ", self.rate_deviation[i])));
            }
            let alpha = ((1.0 - self.beta[i]) / curvature.value(&x)).powf(q);
            bubbles.push(WeightedBubble {
                alpha,
                bubble: BubbleParams::new(x, inv_l2.powf(-0.5))?,
            });
        }
        Configuration::new(n, self.tau, alpha0, omega.clone(), curvature.clone(), bubbles)
    }

    pub fn from_configuration(cfg: &Configuration, targets: &[SpherePoint]) -> Result<Self> {
        if targets.len() != cfg.bubbles.len() {
            return Err(LabError::Domain("one target per bubble".into()));
        }
        let e = 4.0 / (cfg.n as f64 - 2.0);
        let kappa1 = cached(cfg.n)?.kappa1.value;
        let mut state = ReducedState::origin(cfg.tau, targets.to_vec());
        state.beta0 = if cfg.has_residual_mass() { 1.0 - cfg.alpha0.powf(e) } else { 0.0 };
        for (i, (wb, y)) in cfg.bubbles.iter().zip(targets).enumerate() {
            let x = &wb.bubble.a;
            state.beta[i] = 1.0 - wb.alpha.powf(e) * cfg.curvature.value(x);
            let lap = cfg.curvature.chart_laplacian(y);
            let inv_l2 = 1.0 / (wb.bubble.lambda * wb.bubble.lambda);
            state.rate_deviation[i] = inv_l2 * lap / (-kappa1 * cfg.curvature.value(y) * cfg.tau) - 1.0;
            let xy = x.dot(y);
            if xy <= 0.0 {
                return Err(LabError::Domain("bubble centre is not in the hemisphere of its target".into()));
            }
            let xi = x.to_vector() / xy - y.to_vector();
            state.shift[i] = tangent_frame(y).iter().map(|t| t.dot(&xi)).collect();
        }
        Ok(state)
    }

    pub fn box_check(&self, cfg: &Configuration, constant: f64) -> BoxCheck {
        let t = self.tau;
        let beta_scale = t * t.ln().powi(2);
        let mut max_beta_ratio = if cfg.has_residual_mass() { self.beta0.abs() / beta_scale } else { 0.0 };
        let mut rate_bounds = Vec::new();
        let mut max_distance_ratio: f64 = 0.0;
        let mut inside = true;
        for (i, wb) in cfg.bubbles.iter().enumerate() {
            max_beta_ratio = max_beta_ratio.max(self.beta[i].abs() / beta_scale);
            let inv_l2 = wb.bubble.lambda.powi(-2);
            let bounds = (inv_l2 * constant / t, inv_l2 / (constant * t));
            inside &= bounds.0 >= 1.0 && bounds.1 <= 1.0;
            rate_bounds.push(bounds);
            let d = geodesic_distance(&wb.bubble.a, &self.targets[i]).unwrap_or(f64::INFINITY);
            max_distance_ratio = max_distance_ratio.max(d / (constant * t));
        }
        inside &= max_beta_ratio < 1.0 && max_distance_ratio <= 1.0;
        BoxCheck {
            constant,
            max_beta_ratio,
            rate_bounds,
            max_distance_ratio,
            inside,
        }
    }

    fn to_vector(&self, with_mass: bool) -> DVector<f64> {
        let mut v = Vec::new();
        if with_mass {
            v.push(self.beta0);
        }
        for i in 0..self.targets.len() {
            v.push(self.beta[i]);
            v.push(self.rate_deviation[i]);
            v.extend(&self.shift[i]);
        }
        DVector::from_vec(v)
    }

    fn with_vector(&self, z: &DVector<f64>, with_mass: bool) -> Self {
        let mut s = self.clone();
        let mut idx = 0;
        if with_mass {
            s.beta0 = z[0];
            idx = 1;
        }
        let n = self.dim();
        for i in 0..self.targets.len() {
            s.beta[i] = z[idx];
            s.rate_deviation[i] = z[idx + 1];
            s.shift[i] = z.rows(idx + 2, n).iter().copied().collect();
            idx += 2 + n;
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Reduced system
// ---------------------------------------------------------------------------

/// Normalised leading terms of the gradient along ω, δ̃_i, λ_i∂δ̃_i/∂λ_i and
/// (1/λ_i)∂δ̃_i/∂a_i. The point equations carry the interaction
/// c2 Σ_j α_j (1/λ_i)∂ε_ij/∂a_i (1 − g_i − g_j) next to the curvature term,
/// mirroring the rate equations.
pub fn reduced_residuals(cfg: &Configuration, targets: &[SpherePoint]) -> Result<DVector<f64>> {
    let c = cached(cfg.n)?;
    let p = critical_exponent(cfg.n);
    let m = (cfg.n as f64 - 2.0) / 2.0;
    let point_c = point_constant(cfg.n)?;
    let mut r = Vec::new();
    if cfg.has_residual_mass() {
        r.push(1.0 - cfg.alpha0.powf(p - 1.0));
    }
    let g: Vec<f64> = cfg
        .bubbles
        .iter()
        .map(|wb| wb.alpha.powf(p - 1.0) * cfg.curvature.value(&wb.bubble.a) * wb.bubble.lambda.powf(-cfg.tau * m))
        .collect();
    for (i, wi) in cfg.bubbles.iter().enumerate() {
        let bi = &wi.bubble;
        let y = &targets[i];
        r.push(expansion_alpha(cfg, i)?.leading / (wi.alpha * c.s_n.value));
        let rate_scale = wi.alpha.powf(p) * bi.lambda.powf(-cfg.tau * m) * c.c5.value * cfg.curvature.value(y) * cfg.tau;
        r.push(expansion_lambda(cfg, i)?.leading / rate_scale);
        let frame = tangent_frame(&bi.a);
        let grad = cfg.curvature.gradient(&bi.a);
        let mut inter = DVector::zeros(cfg.n + 1);
        for (j, wj) in cfg.bubbles.iter().enumerate() {
            if j != i {
                inter += epsilon_da(bi, &wj.bubble) * (c.c2.value * wj.alpha * (1.0 - g[i] - g[j]) / bi.lambda);
            }
        }
        let point_scale = wi.alpha.powf(p) * point_c.abs() / bi.lambda;
        let hess_scale = cfg.curvature.hessian(y).norm().max(1e-300);
        for e in &frame {
            let lead = wi.alpha.powf(p) * point_c * e.dot(&grad) / bi.lambda;
            r.push((lead + e.dot(&inter)) / (point_scale * hess_scale));
        }
    }
    Ok(DVector::from_vec(r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    pub iteration: usize,
    pub residual: f64,
    pub step: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub tolerance: f64,
    pub box_constant: f64,
    pub fd_step: f64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_halvings: 20,
            tolerance: 1e-13,
            box_constant: 10.0,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub state: ReducedState,
    pub configuration: Configuration,
    pub log: Vec<NewtonStep>,
    /// ‖z_k − z_final‖∞ per iterate
    pub errors: Vec<f64>,
    /// e_{k+1}/e_k² over the iterates with e_{k+1} above roundoff
    pub error_ratios: Vec<f64>,
    pub box_check: BoxCheck,
    /// α-residuals at machine precision and λ-, point-residuals below τ² ln²τ
    pub schedule_met: bool,
}

fn validate_targets(targets: &[SpherePoint], curvature: &ScalarField) -> Result<()> {
    for (i, y) in targets.iter().enumerate() {
        let g = curvature.gradient(y).norm();
        if g > 1e-8 {
            return Err(LabError::Hypothesis(format!("target {i} is not a critical point of K (|∇K| = {g:.3e})")));
        }
        let lap = curvature.chart_laplacian(y);
        if lap >= 0.0 {
            return Err(LabError::Hypothesis(format!("ΔK(y_{i}) = {lap:.4e} is not negative")));
        }
        for (j, z) in targets.iter().enumerate().skip(i + 1) {
            if geodesic_distance(y, z)? < 1e-10 {
                return Err(LabError::Hypothesis(format!("targets {i} and {j} coincide")));
            }
        }
    }
    Ok(())
}

/// Newton on the reduced system from `start` (the origin β = Λ = ξ = 0 if None).
pub fn solve_reduced(
    tau: f64,
    targets: &[SpherePoint],
    omega: &ScalarField,
    curvature: &ScalarField,
    start: Option<ReducedState>,
    options: &ReducedOptions,
) -> Result<ReducedSolution> {
    validate_targets(targets, curvature)?;
    if !(tau > 0.0) {
        return Err(LabError::Domain(format!("τ must be positive, got {tau}")));
    }
    let with_mass = !omega.is_zero();
    let mut base = start.unwrap_or_else(|| ReducedState::origin(tau, targets.to_vec()));
    // a warm start from another τ keeps its reduced coordinates, not its τ
    base.tau = tau;
    let eval = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let cfg = base.with_vector(z, with_mass).to_configuration(omega, curvature)?;
        reduced_residuals(&cfg, targets)
    };
    let mut z = base.to_vector(with_mass);
    let mut r = eval(&z)?;
    let mut iterates = vec![z.clone()];
    let mut log = Vec::new();
    let h = options.fd_step;
    for it in 0..options.max_iterations {
        let res = r.amax();
        if res < options.tolerance {
            break;
        }
        let dim = z.len();
        let mut jac = DMatrix::zeros(r.len(), dim);
        for k in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let d = (eval(&zp)? - eval(&zm)?) / (2.0 * h);
            jac.set_column(k, &d);
        }
        let step = jac.lu().solve(&r).ok_or_else(|| LabError::Construction(format!("singular reduced Jacobian at iteration {it}")))?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial = &z - &step * t;
            if let Ok(rt) = eval(&trial) {
                if rt.amax() < res {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        let (zn, rn) = match accepted {
            Some(v) => v,
            None if res < 1e3 * options.tolerance => break,
            None => {
                return Err(LabError::Construction(format!(
                    "Newton on the reduced system stalled at iteration {it}, residual {res:.3e}; trace {:?}",
                    log.iter().map(|s: &NewtonStep| s.residual).collect::<Vec<_>>()
                )))
            }
        };
        log.push(NewtonStep {
            iteration: it,
            residual: res,
            step: (&zn - &z).amax(),
            damping: t,
        });
        z = zn;
        r = rn;
        iterates.push(z.clone());
    }
    if r.amax() >= 1e3 * options.tolerance {
        return Err(LabError::Construction(format!(
            "Newton on the reduced system did not converge; residual {:.3e}",
            r.amax()
        )));
    }
    log.push(NewtonStep {
        iteration: log.len(),
        residual: r.amax(),
        step: 0.0,
        damping: 0.0,
    });
    let errors: Vec<f64> = iterates.iter().map(|v| (v - &z).amax()).collect();
    let error_ratios = errors
        .windows(2)
        .filter(|w| w[1] > 1e-13 && w[0] > 0.0)
        .map(|w| w[1] / (w[0] * w[0]))
        .collect();
    let state = base.with_vector(&z, with_mass);
    let configuration = state.to_configuration(omega, curvature)?;
    let box_check = state.box_check(&configuration, options.box_constant);
    let schedule_met = schedule_met(&configuration, targets)?;
    Ok(ReducedSolution {
        state,
        configuration,
        log,
        errors,
        error_ratios,
        box_check,
        schedule_met,
    })
}

fn schedule_met(cfg: &Configuration, targets: &[SpherePoint]) -> Result<bool> {
    let r = reduced_residuals(cfg, targets)?;
    let tau = cfg.tau;
    let slack = tau * tau * tau.ln().powi(2);
    let mut idx = 0;
    let mut ok = true;
    if cfg.has_residual_mass() {
        ok &= r[0].abs() < 1e-12;
        idx = 1;
    }
    for _ in 0..cfg.bubbles.len() {
        ok &= r[idx].abs() < 1e-12;
        ok &= r.rows(idx + 1, 1 + cfg.n).amax() < slack;
        idx += 2 + cfg.n;
    }
    Ok(ok)
}

/// (1/n)‖ω‖² + (1/n) S_n Σ K(a_i)^{(2−n)/2}.
pub fn limiting_energy(cfg: &Configuration) -> Result<f64> {
    let nf = cfg.n as f64;
    let s_n = cached(cfg.n)?.s_n.value;
    let mut e = if cfg.has_residual_mass() { omega_norm_sq(&cfg.omega)? / nf } else { 0.0 };
    for wb in &cfg.bubbles {
        e += s_n * cfg.curvature.value(&wb.bubble.a).powf((2.0 - nf) / 2.0) / nf;
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Γ diagnostics
// ---------------------------------------------------------------------------

/// Γ_i = λ_i² Σ_{k≠i} ε_ik + (|∇K(a_i)|/λ_i)/(Σ_{k≠i} ε_ki + 1/λ_i²).
pub fn gamma_diagnostic(cfg: &Configuration) -> Vec<f64> {
    let b = cfg.bubble_params();
    b.iter()
        .enumerate()
        .map(|(i, bi)| {
            let eps: f64 = b.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, bk)| epsilon(bi, bk)).sum();
            let l2 = bi.lambda * bi.lambda;
            l2 * eps + (cfg.curvature.gradient(&bi.a).norm() / bi.lambda) / (eps + 1.0 / l2)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPartition {
    pub threshold: f64,
    /// indices whose Γ stays bounded over the family
    pub bounded: Vec<usize>,
    pub unbounded: Vec<usize>,
}

/// Γ_i counts as bounded over a family (sorted by decreasing τ) iff it never
/// exceeds `threshold` times its value at the first member; an identically
/// zero sequence is bounded.
pub fn classify_gamma(family: &[Vec<f64>], threshold: f64) -> GammaPartition {
    let count = family.first().map(|g| g.len()).unwrap_or(0);
    let mut out = GammaPartition {
        threshold,
        bounded: Vec::new(),
        unbounded: Vec::new(),
    };
    for i in 0..count {
        let first = family[0][i];
        let hi = family.iter().map(|g| g[i]).fold(0.0, f64::max);
        if hi == 0.0 || hi <= threshold * first {
            out.bounded.push(i);
        } else {
            out.unbounded.push(i);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Blow-up verification
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberDiagnostics {
    pub tau: f64,
    pub lambda: f64,
    pub tau_lambda_sq: f64,
    pub lambda_distance: f64,
    pub tau_log_lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleReport {
    pub limit_point: SpherePoint,
    pub laplacian_sign: f64,
    pub members: Vec<MemberDiagnostics>,
    /// slope of ln λ against ln τ
    pub rate_slope: f64,
    pub rate_slope_error: f64,
    /// −ΔK(y)/(κ1 K(y)), the limit of τλ²
    pub predicted_tau_lambda_sq: f64,
    pub tau_lambda_sq_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub bubbles: Vec<BubbleReport>,
    /// min pairwise distance of the centres per member
    pub min_distance: Vec<f64>,
    /// λ_max/λ_min per member
    pub rate_spread: Vec<f64>,
    /// max ε_ij λ_min² per member
    pub interaction_decay: Vec<f64>,
    /// (Σε + Σ|∇K|/λ + τ) λ_min² per member
    pub sum_constant: Vec<f64>,
    pub gamma: GammaPartition,
    /// λ_i → ∞ and τ ln λ_i → 0
    pub concentration: Verdict,
    /// λ_i d(a_i, y_i) → 0
    pub localisation: Verdict,
    /// d(a_i, a_j) ≥ ½ min d(y_k, y_l), bounded λ ratios, ε_ij λ_min² → 0
    pub separation: Verdict,
    /// slope −½ ± tolerance and τλ² within tolerance of its limit
    pub rate_law: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub slope_tolerance: f64,
    pub rate_tolerance: f64,
    pub gamma_threshold: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            slope_tolerance: 0.02,
            rate_tolerance: 0.1,
            gamma_threshold: 10.0,
        }
    }
}

/// Nearest critical point of K by Newton on the tangential gradient.
pub fn nearest_critical_point(curvature: &ScalarField, start: &SpherePoint) -> SpherePoint {
    let mut x = start.clone();
    for _ in 0..50 {
        let frame = tangent_frame(&x);
        let g = curvature.gradient(&x);
        let gv = DVector::from_iterator(frame.len(), frame.iter().map(|e| e.dot(&g)));
        if gv.norm() < 1e-14 {
            break;
        }
        let h = curvature.hessian(&x);
        let hm = DMatrix::from_fn(frame.len(), frame.len(), |k, l| frame[k].dot(&(&h * &frame[l])));
        let step = match hm.lu().solve(&gv) {
            Some(s) => s,
            None => break,
        };
        let mut v = x.to_vector();
        for (k, e) in frame.iter().enumerate() {
            v -= e * step[k];
        }
        match SpherePoint::from_ambient(&v) {
            Ok(nx) => x = nx,
            Err(_) => break,
        }
    }
    x
}

/// Checks the blow-up picture on a family of configurations sorted by decreasing τ.
pub fn verify_blowup(family: &[(f64, Configuration)], options: &VerifyOptions) -> Result<BlowupReport> {
    if family.len() < 4 {
        return Err(LabError::InsufficientData(format!("family has {} members, need at least 4", family.len())));
    }
    if family.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(LabError::Domain("family must be sorted by strictly decreasing τ".into()));
    }
    let count = family[0].1.bubbles.len();
    if family.iter().any(|(_, c)| c.bubbles.len() != count) || count == 0 {
        return Err(LabError::Domain("every member needs the same positive number of bubbles".into()));
    }
    let n = family[0].1.n;
    let kappa1 = cached(n)?.kappa1.value;
    let last = &family.last().expect("non-empty").1;
    let curvature = &last.curvature;

    let mut bubbles = Vec::new();
    let mut concentration = true;
    let mut localisation = true;
    let mut rate_ok = true;
    let mut details = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..count {
        let y = nearest_critical_point(curvature, &last.bubbles[i].bubble.a);
        let lap = curvature.chart_laplacian(&y);
        let members: Vec<MemberDiagnostics> = family
            .iter()
            .map(|(tau, c)| {
                let b = &c.bubbles[i].bubble;
                MemberDiagnostics {
                    tau: *tau,
                    lambda: b.lambda,
                    tau_lambda_sq: tau * b.lambda * b.lambda,
                    lambda_distance: b.lambda * geodesic_distance(&b.a, &y).unwrap_or(f64::NAN),
                    tau_log_lambda: tau * b.lambda.ln(),
                }
            })
            .collect();
        let taus: Vec<f64> = members.iter().map(|m| m.tau).collect();
        let lams: Vec<f64> = members.iter().map(|m| m.lambda).collect();
        let fit = loglog_fit(&taus, &lams);
        let predicted = -lap / (kappa1 * curvature.value(&y));
        let observed = members.last().expect("non-empty").tau_lambda_sq;
        let rel = (observed / predicted - 1.0).abs();

        let growing = lams.windows(2).all(|w| w[1] > w[0]);
        let tll: Vec<f64> = members.iter().map(|m| m.tau_log_lambda).collect();
        let shrinking = tll.windows(2).all(|w| w[1] < w[0]);
        concentration &= growing && shrinking;
        details.0.push(format!("bubble {i}: λ increasing {growing}, τ ln λ decreasing {shrinking} (last {:.3e})", tll.last().unwrap()));

        let ld: Vec<f64> = members.iter().map(|m| m.lambda_distance).collect();
        let first = ld[0];
        let last_ld = *ld.last().unwrap();
        let loc = last_ld < 1e-8 || (ld.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)) && last_ld < first);
        localisation &= loc;
        details.1.push(format!("bubble {i}: λ·d(a,y) from {first:.3e} to {last_ld:.3e}"));

        let slope_ok = (fit.slope + 0.5).abs() <= options.slope_tolerance;
        let value_ok = lap < 0.0 && rel <= options.rate_tolerance;
        rate_ok &= slope_ok && value_ok;
        details.2.push(format!(
            "bubble {i}: slope {:.4} ± {:.1e}, τλ² {observed:.4e} vs {predicted:.4e} (rel {rel:.2e})",
            fit.slope, fit.slope_error
        ));

        bubbles.push(BubbleReport {
            limit_point: y,
            laplacian_sign: lap.signum(),
            members,
            rate_slope: fit.slope,
            rate_slope_error: fit.slope_error,
            predicted_tau_lambda_sq: predicted,
            tau_lambda_sq_relative_error: rel,
        });
    }

    let ys: Vec<&SpherePoint> = bubbles.iter().map(|b| &b.limit_point).collect();
    let mut min_y = f64::INFINITY;
    for i in 0..ys.len() {
        for j in i + 1..ys.len() {
            min_y = min_y.min(geodesic_distance(ys[i], ys[j])?);
        }
    }
    let mut min_distance = Vec::new();
    let mut rate_spread = Vec::new();
    let mut interaction_decay = Vec::new();
    let mut sum_constant = Vec::new();
    let mut gammas = Vec::new();
    for (tau, c) in family {
        let b = c.bubble_params();
        let mut md = f64::INFINITY;
        let mut eps_max: f64 = 0.0;
        let mut eps_total = 0.0;
        for i in 0..b.len() {
            for j in 0..b.len() {
                if i != j {
                    eps_total += epsilon(&b[i], &b[j]);
                    if i < j {
                        md = md.min(geodesic_distance(&b[i].a, &b[j].a)?);
                        eps_max = eps_max.max(epsilon(&b[i], &b[j]));
                    }
                }
            }
        }
        let lams: Vec<f64> = b.iter().map(|x| x.lambda).collect();
        let lmin = lams.iter().cloned().fold(f64::INFINITY, f64::min);
        let grads: f64 = b.iter().map(|x| c.curvature.gradient(&x.a).norm() / x.lambda).sum();
        min_distance.push(md);
        rate_spread.push(spread(&lams));
        interaction_decay.push(eps_max * lmin * lmin);
        sum_constant.push((eps_total + grads + tau) * lmin * lmin);
        gammas.push(gamma_diagnostic(c));
    }
    let separated = count < 2 || min_distance.iter().all(|d| *d >= 0.5 * min_y);
    let spread_bounded = spread(&rate_spread) < options.gamma_threshold;
    let decaying = count < 2 || interaction_decay.last().unwrap() <= &interaction_decay[0];
    let separation = Verdict::new(
        separated && spread_bounded && decaying,
        format!(
            "min distance {:.3e} vs half target separation {:.3e}; λ spread {:.3e}..{:.3e}; ε λ_min² {:.3e} → {:.3e}",
            min_distance.iter().cloned().fold(f64::INFINITY, f64::min),
            0.5 * min_y,
            rate_spread.iter().cloned().fold(f64::INFINITY, f64::min),
            rate_spread.iter().cloned().fold(0.0, f64::max),
            interaction_decay[0],
            interaction_decay.last().unwrap()
        ),
    );
    Ok(BlowupReport {
        bubbles,
        min_distance,
        rate_spread,
        interaction_decay,
        sum_constant,
        gamma: classify_gamma(&gammas, options.gamma_threshold),
        concentration: Verdict::new(concentration, details.0.join("; ")),
        localisation: Verdict::new(localisation, details.1.join("; ")),
        separation,
        rate_law: Verdict::new(rate_ok, details.2.join("; ")),
    })
}

// ---------------------------------------------------------------------------
// Morse index
// ---------------------------------------------------------------------------

/// (N + 1) + index(I_K, ω) + Σ(n − index(K, y_i)); without residual mass
/// the α0 direction is absent and `index_omega` must be 0.
pub fn morse_index(bubbles: usize, index_omega: usize, indices_k: &[usize], n: usize, with_residual_mass: bool) -> Result<usize> {
    if indices_k.len() != bubbles {
        return Err(LabError::Domain(format!("{} curvature indices for {bubbles} bubbles", indices_k.len())));
    }
    if let Some(bad) = indices_k.iter().find(|k| **k > n) {
        return Err(LabError::Domain(format!("Morse index {bad} of K exceeds n = {n}")));
    }
    if !with_residual_mass && index_omega != 0 {
        return Err(LabError::Domain("no residual mass: index(I_K, ω) must be 0".into()));
    }
    let gluing = bubbles + usize::from(with_residual_mass);
    Ok(gluing + index_omega + indices_k.iter().map(|k| n - k).sum::<usize>())
}

/// Number of negative eigenvalues of the Riemannian Hessian of K at a critical point.
pub fn curvature_index(curvature: &ScalarField, y: &SpherePoint) -> usize {
    let frame = tangent_frame(y);
    let h = curvature.hessian(y);
    let hm = DMatrix::from_fn(frame.len(), frame.len(), |k, l| frame[k].dot(&(&h * &frame[l])));
    SymmetricEigen::new(hm).eigenvalues.iter().filter(|v| **v < 0.0).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedHessian {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub gluing_eigenvalues: Vec<f64>,
    pub rate_eigenvalues: Vec<f64>,
}

impl ReducedHessian {
    pub fn signature_ok(&self) -> bool {
        self.gluing_eigenvalues.iter().all(|v| *v < 0.0) && self.rate_eigenvalues.iter().all(|v| *v > 0.0)
    }
}

/// Central-difference Hessian of (α0, α_i, ln λ_i) ↦ I_{K,τ}(α0ω + Σα_iδ̃_i).
pub fn reduced_hessian(cfg: &Configuration, rule: &QuadratureRule, alpha_step: f64, log_lambda_step: f64) -> Result<ReducedHessian> {
    let mut labels = Vec::new();
    if cfg.has_residual_mass() {
        labels.push("alpha0".to_string());
    }
    for i in 0..cfg.bubbles.len() {
        labels.push(format!("alpha[{i}]"));
    }
    let gluing = labels.len();
    for i in 0..cfg.bubbles.len() {
        labels.push(format!("log_lambda[{i}]"));
    }
    let dim = labels.len();
    let steps: Vec<f64> = (0..dim).map(|k| if k < gluing { alpha_step } else { log_lambda_step }).collect();
    let moved = |d: &[f64]| -> Result<f64> {
        let mut c = cfg.clone();
        let mut k = 0;
        if c.has_residual_mass() {
            c.alpha0 += d[0];
            k = 1;
        }
        for b in c.bubbles.iter_mut() {
            b.alpha += d[k];
            k += 1;
        }
        for b in c.bubbles.iter_mut() {
            b.bubble.lambda *= d[k].exp();
            k += 1;
        }
        Ok(energy(&c, &c.curvature, c.tau, rule)?.value)
    };
    let zero = vec![0.0; dim];
    let f0 = moved(&zero)?;
    let mut h = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        let mut d = zero.clone();
        d[a] = steps[a];
        let fp = moved(&d)?;
        d[a] = -steps[a];
        let fm = moved(&d)?;
        h[(a, a)] = (fp - 2.0 * f0 + fm) / (steps[a] * steps[a]);
        for b in a + 1..dim {
            let mut vals = [0.0; 4];
            for (s, (sa, sb)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().enumerate() {
                let mut d = zero.clone();
                d[a] = sa * steps[a];
                d[b] = sb * steps[b];
                vals[s] = moved(&d)?;
            }
            let v = (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * steps[a] * steps[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    let block = |lo: usize, len: usize| -> Vec<f64> {
        if len == 0 {
            return Vec::new();
        }
        let mut e: Vec<f64> = SymmetricEigen::new(h.view((lo, lo), (len, len)).into_owned()).eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    };
    Ok(ReducedHessian {
        labels,
        matrix: (0..dim).map(|r| h.row(r).iter().copied().collect()).collect(),
        gluing_eigenvalues: block(0, gluing),
        rate_eigenvalues: block(gluing, dim - gluing),
    })
}
