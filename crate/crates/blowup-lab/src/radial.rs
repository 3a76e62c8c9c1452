//! Rotationally symmetric solutions of L u = K u^{p−τ} on S^n, computed by
//! Chebyshev collocation in the polar angle θ ∈ [0, π] measured from the
//! pole e_0, and continued in τ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bubble::BubbleParams;
use crate::constants::{c0, conformal_mass, critical_exponent};
use crate::error::{LabError, Result};
use crate::functional::{energy, omega_norm_sq, remainder_budget, Configuration, SphereFunction, WeightedBubble};
use crate::reduction::{fit_decomposition, FitOptions};
use crate::sphere::{geodesic_distance, Center, QuadratureRule, ScalarField, SpherePoint};

/// Chebyshev–Lobatto nodes in θ with spectral first and second derivative matrices.
#[derive(Clone, Debug)]
pub struct ChebyshevGrid {
    pub theta: Vec<f64>,
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    cot: Vec<f64>,
}

impl ChebyshevGrid {
    pub fn new(intervals: usize) -> Result<Self> {
        if intervals < 4 {
            return Err(LabError::Domain(format!("need at least 4 intervals, got {intervals}")));
        }
        let nn = intervals;
        let size = nn + 1;
        let h = std::f64::consts::PI / (2.0 * nn as f64);
        // θ_j = π sin²(jπ/2N), written to stay accurate next to both poles
        let theta: Vec<f64> = (0..size)
            .map(|j| {
                if 2 * j <= nn {
                    std::f64::consts::PI * (j as f64 * h).sin().powi(2)
                } else {
                    std::f64::consts::PI - std::f64::consts::PI * ((nn - j) as f64 * h).sin().powi(2)
                }
            })
            .collect();
        let c: Vec<f64> = (0..size)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == nn {
                    2.0 * s
                } else {
                    s
                }
            })
            .collect();
        // 1/(x_i − x_j) with x_i − x_j = −2 sin((i+j)h) sin((i−j)h)
        let z = DMatrix::from_fn(size, size, |i, j| {
            if i == j {
                0.0
            } else {
                let (a, b) = (i as f64, j as f64);
                -0.5 / (((a + b) * h).sin() * ((a - b) * h).sin())
            }
        });
        let mut d1 = DMatrix::from_fn(size, size, |i, j| if i == j { 0.0 } else { z[(i, j)] * c[i] / c[j] });
        for i in 0..size {
            let s: f64 = d1.row(i).sum();
            d1[(i, i)] = -s;
        }
        let mut d2 = DMatrix::from_fn(size, size, |i, j| if i == j { 0.0 } else { 2.0 * z[(i, j)] * (c[i] / c[j] * d1[(i, i)] - d1[(i, j)]) });
        for i in 0..size {
            let s: f64 = d2.row(i).sum();
            d2[(i, i)] = -s;
        }
        // θ = π(1 − x)/2
        let scale = 2.0 / std::f64::consts::PI;
        let cot = theta.iter().map(|t| t.cos() / t.sin()).collect();
        Ok(Self {
            theta,
            first: d1 * (-scale),
            second: d2 * (scale * scale),
            cot,
        })
    }

    pub fn intervals(&self) -> usize {
        self.theta.len() - 1
    }

    /// (D u)_i = Σ_j D_ij (u_j − u_i); the rows of D sum to zero, and the
    /// differences keep the large rows next to the poles from amplifying
    /// rounding in u.
    fn apply(matrix: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let ui = u[i];
            matrix.row(i).iter().zip(u.iter()).map(|(d, v)| d * (v - ui)).sum()
        })
    }

    pub fn derivative(&self, u: &DVector<f64>) -> DVector<f64> {
        Self::apply(&self.first, u)
    }

    pub fn second_derivative(&self, u: &DVector<f64>) -> DVector<f64> {
        Self::apply(&self.second, u)
    }
}

/// Positive values at the Chebyshev–Lobatto nodes in θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFunction {
    pub n: usize,
    pub theta: Vec<f64>,
    pub values: Vec<f64>,
}

fn pole(n: usize) -> SpherePoint {
    SpherePoint::basis(n, 0)
}

/// Polar angle of x from the pole, accurate near both poles.
fn polar_angle(x: &SpherePoint) -> f64 {
    let c = x.coords();
    let r: f64 = c[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    r.atan2(c[0])
}

impl RadialFunction {
    pub fn from_fn(n: usize, intervals: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = ChebyshevGrid::new(intervals)?;
        let values = grid.theta.iter().map(|t| f(*t)).collect();
        Ok(Self { n, theta: grid.theta, values })
    }

    pub fn sample(u: &dyn SphereFunction, intervals: usize) -> Result<Self> {
        let n = u.dim();
        Self::from_fn(n, intervals, |t| u.value(&SpherePoint::at_angle(n, t)))
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|v| *v > 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn interpolant(&self) -> Result<RadialInterpolant> {
        let grid = ChebyshevGrid::new(self.intervals())?;
        RadialInterpolant::new(self, &grid)
    }

    /// The same function on a grid with a different number of intervals.
    pub fn resample(&self, intervals: usize) -> Result<Self> {
        let f = self.interpolant()?;
        Self::from_fn(self.n, intervals, |t| f.at_angle(t).0)
    }

    /// (u'(0), u'(π)) relative to max |u'|.
    pub fn neumann_defect(&self) -> Result<(f64, f64)> {
        let grid = ChebyshevGrid::new(self.intervals())?;
        let d = grid.derivative(&DVector::from_column_slice(&self.values));
        let scale = d.amax().max(f64::MIN_POSITIVE);
        Ok((d[0].abs() / scale, d[d.len() - 1].abs() / scale))
    }
}

/// Barycentric interpolant of a RadialFunction and of its first two θ-derivatives.
#[derive(Clone, Debug)]
pub struct RadialInterpolant {
    n: usize,
    x: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    width: f64,
}

impl RadialInterpolant {
    fn new(u: &RadialFunction, grid: &ChebyshevGrid) -> Result<Self> {
        let v = DVector::from_column_slice(&u.values);
        let first: Vec<f64> = grid.derivative(&v).iter().copied().collect();
        let second: Vec<f64> = grid.second_derivative(&v).iter().copied().collect();
        let nn = u.intervals();
        let weights = (0..=nn)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == nn {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        // u ≈ c(λ/g)^m near the pole gives u''/u = −m(λ² − 1)/2 there
        let m = (u.n as f64 - 2.0) / 2.0;
        let lambda = (1.0 + 2.0 * (second[0] / u.values[0]).abs() / m).sqrt();
        Ok(Self {
            n: u.n,
            x: grid.theta.iter().map(|t| 1.0 - 2.0 * t / std::f64::consts::PI).collect(),
            weights,
            values: u.values.clone(),
            first,
            second,
            width: 1.0 / lambda.max(1.0),
        })
    }

    /// (u, u', u'') at polar angle θ.
    pub fn at_angle(&self, theta: f64) -> (f64, f64, f64) {
        let x = 1.0 - 2.0 * theta / std::f64::consts::PI;
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for j in 0..self.x.len() {
            let d = x - self.x[j];
            if d == 0.0 {
                return (self.values[j], self.first[j], self.second[j]);
            }
            let w = self.weights[j] / d;
            num[0] += w * self.values[j];
            num[1] += w * self.first[j];
            num[2] += w * self.second[j];
            den += w;
        }
        (num[0] / den, num[1] / den, num[2] / den)
    }
}

impl SphereFunction for RadialInterpolant {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &SpherePoint) -> f64 {
        self.at_angle(polar_angle(x)).0
    }

    fn conformal_laplacian(&self, x: &SpherePoint) -> f64 {
        let theta = polar_angle(x);
        let (u, d1, d2) = self.at_angle(theta);
        let nf = self.n as f64;
        let lap = if theta < 1e-7 || std::f64::consts::PI - theta < 1e-7 {
            nf * d2
        } else {
            d2 + (nf - 1.0) * d1 * theta.cos() / theta.sin()
        };
        -lap + conformal_mass(self.n) * u
    }

    fn centers(&self) -> Vec<Center> {
        let p = pole(self.n);
        vec![
            Center {
                point: p.clone(),
                scale: self.width,
            },
            Center::smooth(p.antipode()),
        ]
    }
}

fn check_radial_curvature(curvature: &ScalarField, n: usize) -> Result<()> {
    if curvature.dim() != n {
        return Err(LabError::Domain(format!("curvature lives on S^{}, function on S^{n}", curvature.dim())));
    }
    if let Some(axis) = curvature.axis() {
        if (axis.dot(&pole(n)) - 1.0).abs() > 1e-14 {
            return Err(LabError::Domain("curvature must be zonal about the pole e_0".into()));
        }
    }
    Ok(())
}

fn curvature_on(grid: &ChebyshevGrid, curvature: &ScalarField, n: usize) -> Result<Vec<f64>> {
    check_radial_curvature(curvature, n)?;
    let k: Vec<f64> = grid.theta.iter().map(|t| curvature.value(&SpherePoint::at_angle(n, *t))).collect();
    if k.iter().any(|v| *v <= 0.0) {
        return Err(LabError::Hypothesis("K must be positive on [0, π]".into()));
    }
    Ok(k)
}

struct Collocation {
    n: usize,
    grid: ChebyshevGrid,
    k: Vec<f64>,
    tau: f64,
}

impl Collocation {
    fn new(n: usize, intervals: usize, curvature: &ScalarField, tau: f64) -> Result<Self> {
        let grid = ChebyshevGrid::new(intervals)?;
        let k = curvature_on(&grid, curvature, n)?;
        Ok(Self { n, grid, k, tau })
    }

    fn exponent(&self) -> f64 {
        critical_exponent(self.n) - self.tau
    }

    /// Residual and the scale max(c|u|, K u^{p−τ}) it is measured against.
    fn residual(&self, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if u.iter().any(|v| !(*v > 0.0)) {
            return Err(LabError::Domain("radial function must be positive at every node".into()));
        }
        let q = self.exponent();
        let c = conformal_mass(self.n);
        let nf = self.n as f64;
        let d1 = self.grid.derivative(u);
        let d2 = self.grid.second_derivative(u);
        let last = u.len() - 1;
        let mut scale: f64 = 0.0;
        let r = DVector::from_fn(u.len(), |k, _| {
            let nonlinear = self.k[k] * u[k].powf(q);
            scale = scale.max(nonlinear).max(c * u[k]);
            let lap = if k == 0 || k == last { nf * d2[k] } else { d2[k] + (nf - 1.0) * self.grid.cot[k] * d1[k] };
            -lap + c * u[k] - nonlinear
        });
        Ok((r, scale))
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let q = self.exponent();
        let c = conformal_mass(self.n);
        let nf = self.n as f64;
        let last = u.len() - 1;
        let mut j = DMatrix::zeros(u.len(), u.len());
        for k in 0..u.len() {
            if k == 0 || k == last {
                j.set_row(k, &(self.grid.second.row(k) * (-nf)));
            } else {
                j.set_row(k, &(-self.grid.second.row(k) - self.grid.first.row(k) * ((nf - 1.0) * self.grid.cot[k])));
            }
            j[(k, k)] += c - q * self.k[k] * u[k].powf(q - 1.0);
        }
        j
    }
}

/// −u'' − (n−1) cot θ u' + (n(n−2)/4) u − K u^{p−τ} at the nodes; the pole rows
/// use cot θ u' → u''.
pub fn radial_residual(u: &RadialFunction, curvature: &ScalarField, tau: f64) -> Result<Vec<f64>> {
    let col = Collocation::new(u.n, u.intervals(), curvature, tau)?;
    Ok(col.residual(&DVector::from_column_slice(&u.values))?.0.iter().copied().collect())
}

/// ‖radial_residual‖∞ / max(c|u|, K u^{p−τ}).
pub fn scaled_residual(u: &RadialFunction, curvature: &ScalarField, tau: f64) -> Result<f64> {
    let col = Collocation::new(u.n, u.intervals(), curvature, tau)?;
    let (r, s) = col.residual(&DVector::from_column_slice(&u.values))?;
    Ok(r.amax() / s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for RadialOptions {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            tolerance: 1e-10,
            max_halvings: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSolution {
    pub function: RadialFunction,
    /// scaled ∞-norm of the residual
    pub residual: f64,
    pub iterations: usize,
    pub neumann_defect: (f64, f64),
    /// stopped because the Newton correction fell to roundoff with the residual
    /// still above tolerance (the pole-row floor grows like N⁴ ε)
    pub roundoff_limited: bool,
}

const ROUNDOFF_STEP: f64 = 1e-13;

/// Damped Newton on the collocation system, keeping u positive.
pub fn solve_radial(curvature: &ScalarField, tau: f64, initial: &RadialFunction, options: &RadialOptions) -> Result<RadialSolution> {
    if !initial.is_positive() {
        return Err(LabError::Domain("initial radial function is not positive".into()));
    }
    let col = Collocation::new(initial.n, initial.intervals(), curvature, tau)?;
    let mut u = DVector::from_column_slice(&initial.values);
    let (mut r, mut s) = col.residual(&u)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut roundoff_limited = false;
    while r.amax() / s >= options.tolerance {
        if iterations == options.max_iterations {
            return Err(LabError::Divergence(format!("radial Newton: no convergence after {iterations} iterations; scaled residuals {trace:?}")));
        }
        let res = r.amax() / s;
        trace.push(res);
        let step = col
            .jacobian(&u)
            .lu()
            .solve(&r)
            .ok_or_else(|| LabError::Divergence(format!("singular collocation Jacobian at iteration {iterations}")))?;
        if step.amax() <= ROUNDOFF_STEP * u.amax() {
            roundoff_limited = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial = &u - &step * t;
            if trial.iter().all(|v| *v > 0.0) {
                let (rt, st) = col.residual(&trial)?;
                if rt.amax() / st < res || (t == 1.0 && rt.amax() / st < 1e3 * options.tolerance) {
                    accepted = Some((trial, rt, st));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((un, rn, sn)) => {
                u = un;
                r = rn;
                s = sn;
            }
            None => {
                return Err(LabError::Divergence(format!(
                    "radial Newton: no admissible step at iteration {iterations} (positivity or residual); scaled residuals {trace:?}"
                )))
            }
        }
        iterations += 1;
    }
    // one polishing step: Newton is quadratic here, so this lands at roundoff
    if let Some(step) = col.jacobian(&u).lu().solve(&r) {
        let trial = &u - step;
        if trial.iter().all(|v| *v > 0.0) {
            let (rt, st) = col.residual(&trial)?;
            if rt.amax() / st <= r.amax() / s {
                u = trial;
                r = rt;
                s = st;
            }
        }
    }
    let residual = r.amax() / s;
    if residual >= options.tolerance && !roundoff_limited {
        return Err(LabError::Divergence(format!("radial Newton stalled at scaled residual {residual:.3e}")));
    }
    let function = RadialFunction {
        n: initial.n,
        theta: col.grid.theta.clone(),
        values: u.iter().copied().collect(),
    };
    let neumann_defect = function.neumann_defect()?;
    Ok(RadialSolution {
        function,
        residual,
        iterations,
        neumann_defect,
        roundoff_limited,
    })
}

/// α δ̃_{pole,λ} (+ ω) on the grid, with α balancing α^{p−1}K(pole)λ^{−τ(n−2)/2} = 1.
pub fn bubble_seed(curvature: &ScalarField, omega: &ScalarField, tau: f64, lambda: f64, intervals: usize) -> Result<RadialFunction> {
    let n = curvature.dim();
    let m = (n as f64 - 2.0) / 2.0;
    let p = critical_exponent(n);
    let y = pole(n);
    let alpha = (lambda.powf(tau * m) / curvature.value(&y)).powf(1.0 / (p - 1.0));
    let b = BubbleParams::new(y, lambda)?;
    RadialFunction::from_fn(n, intervals, |t| {
        let x = SpherePoint::at_angle(n, t);
        alpha * crate::bubble::bubble_eval(&b, &x) + omega.value(&x)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFit {
    pub configuration: Configuration,
    pub alpha0: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// λ · d(a, pole)
    pub center_offset: f64,
    pub v_norm: f64,
    pub remainder: f64,
    /// ‖α0 ω − ω‖
    pub omega_error: f64,
    pub energy: f64,
}

/// Fits α0 ω + α δ̃_{a,λ} to a radial solution; ω is held fixed up to α0.
pub fn fit_radial(u: &RadialFunction, curvature: &ScalarField, omega: &ScalarField, tau: f64, previous: Option<&Configuration>) -> Result<RadialFit> {
    let n = u.n;
    let m = (n as f64 - 2.0) / 2.0;
    let f = u.interpolant()?;
    let initial = match previous {
        Some(c) => {
            let mut c = c.clone();
            c.tau = tau;
            c
        }
        None => {
            // bubble part u − ω at the pole: value and curvature give (α, λ)
            let grid = ChebyshevGrid::new(u.intervals())?;
            let b: Vec<f64> = grid.theta.iter().zip(&u.values).map(|(t, v)| v - omega.value(&SpherePoint::at_angle(n, *t))).collect();
            let b2 = grid.second_derivative(&DVector::from_vec(b.clone()))[0];
            let lambda = (1.0 + 2.0 * (b2 / b[0]).abs() / m).sqrt().max(1.0);
            let alpha = b[0] / (c0(n) * (lambda / 2.0).powf(m));
            let alpha0 = if omega.is_zero() { 0.0 } else { 1.0 };
            Configuration::new(n, tau, alpha0, omega.clone(), curvature.clone(), vec![WeightedBubble { alpha, bubble: BubbleParams::new(pole(n), lambda)? }])?
        }
    };
    let fit = fit_decomposition(&f, &initial, &FitOptions::default())?;
    let cfg = fit.configuration;
    let wb = &cfg.bubbles[0];
    let omega_error = if cfg.has_residual_mass() { (cfg.alpha0 - 1.0).abs() * omega_norm_sq(omega)?.sqrt() } else { 0.0 };
    let e = energy(&f, curvature, tau, &QuadratureRule::zonal())?.value;
    Ok(RadialFit {
        alpha0: cfg.alpha0,
        alpha: wb.alpha,
        lambda: wb.bubble.lambda,
        center_offset: wb.bubble.lambda * geodesic_distance(&wb.bubble.a, &pole(n))?,
        v_norm: fit.residual_norm,
        remainder: remainder_budget(&cfg).r,
        omega_error,
        energy: e,
        configuration: cfg,
    })
}

/// α0 solving ⟨∇I_{K,τ}(α0 ω), ω⟩ = 0 with the bubble ignored. ω solves the
/// critical problem, not the subcritical one, so this drifts from 1 at O(τ) and
/// sets the floor for `omega_error` at a given τ.
pub fn drifted_omega_scale(curvature: &ScalarField, omega: &ScalarField, tau: f64) -> Result<f64> {
    let n = curvature.dim();
    let p = critical_exponent(n);
    if omega.is_zero() {
        return Ok(0.0);
    }
    let rule = QuadratureRule::zonal().with_tolerance(1e-13);
    let pairing = |exponent: f64| {
        crate::sphere::integrate_sphere(
            |x| {
                let w = omega.value(x);
                curvature.value(x) * w.abs().powf(exponent)
            },
            n,
            &[],
            &rule,
        )
        .map(|e| e.value)
    };
    Ok((pairing(p + 1.0)? / pairing(p + 1.0 - tau)?).powf(1.0 / (p - 1.0 - tau)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub solver: RadialOptions,
    /// Smallest accepted fraction of a scheduled step in ln τ.
    pub min_step_fraction: f64,
    pub fit: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            solver: RadialOptions::default(),
            min_step_fraction: 1.0 / 64.0,
            fit: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialMember {
    pub tau: f64,
    pub solution: RadialSolution,
    pub fit: Option<RadialFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stall {
    pub reached_tau: f64,
    pub target_tau: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFamily {
    pub members: Vec<RadialMember>,
    pub stall: Option<Stall>,
}

impl RadialFamily {
    /// (τ, fitted configuration) pairs for `verify_blowup`.
    pub fn fitted_configurations(&self) -> Vec<(f64, Configuration)> {
        self.members.iter().filter_map(|m| m.fit.as_ref().map(|f| (m.tau, f.configuration.clone()))).collect()
    }
}

fn predictor(members: &[RadialMember], tau: f64) -> RadialFunction {
    let last = &members[members.len() - 1];
    if members.len() < 2 {
        return last.solution.function.clone();
    }
    let prev = &members[members.len() - 2];
    // secant in (ln τ, ln u)
    let s = (tau.ln() - last.tau.ln()) / (last.tau.ln() - prev.tau.ln());
    let mut f = last.solution.function.clone();
    for (v, w) in f.values.iter_mut().zip(&prev.solution.function.values) {
        *v = (v.ln() + s * (v.ln() - w.ln())).exp();
    }
    f
}

/// Natural-parameter continuation along a strictly decreasing τ schedule,
/// bisecting steps in ln τ on failure.
pub fn continue_in_tau(curvature: &ScalarField, omega: &ScalarField, schedule: &[f64], seed: &RadialFunction, options: &ContinuationOptions) -> Result<RadialFamily> {
    if schedule.is_empty() {
        return Err(LabError::Domain("empty τ schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|t| !(*t > 0.0)) {
        return Err(LabError::Domain("τ schedule must be positive and strictly decreasing".into()));
    }
    let fit_member = |u: &RadialFunction, tau: f64, prev: Option<&RadialMember>| -> Result<Option<RadialFit>> {
        if !options.fit {
            return Ok(None);
        }
        let guess = prev.and_then(|m| m.fit.as_ref()).map(|f| {
            let mut c = f.configuration.clone();
            let scale = (prev.unwrap().tau / tau).sqrt();
            c.bubbles[0].bubble.lambda *= scale;
            c
        });
        fit_radial(u, curvature, omega, tau, guess.as_ref()).map(Some)
    };
    let first = solve_radial(curvature, schedule[0], seed, &options.solver)?;
    let fit = fit_member(&first.function, schedule[0], None)?;
    let mut members = vec![RadialMember {
        tau: schedule[0],
        solution: first,
        fit,
    }];
    for &target in &schedule[1..] {
        let start = members.last().unwrap().tau;
        let full = start.ln() - target.ln();
        let mut fraction = 1.0;
        let mut current = start;
        while current > target {
            let next = (current.ln() - fraction * full).exp().max(target);
            let guess = predictor(&members, next);
            match solve_radial(curvature, next, &guess, &options.solver) {
                Ok(sol) => {
                    let reached = next;
                    if (reached / target - 1.0).abs() < 1e-12 {
                        let fit = fit_member(&sol.function, target, members.last())?;
                        members.push(RadialMember { tau: target, solution: sol, fit });
                        current = target;
                    } else {
                        // intermediate step: keep it for the predictor only
                        let fit = fit_member(&sol.function, reached, members.last())?;
                        members.push(RadialMember { tau: reached, solution: sol, fit });
                        current = reached;
                        fraction = (fraction * 2.0).min(1.0);
                    }
                }
                Err(e) => {
                    fraction *= 0.5;
                    if fraction < options.min_step_fraction {
                        members.retain(|m| schedule.iter().any(|t| (m.tau / t - 1.0).abs() < 1e-12));
                        return Ok(RadialFamily {
                            members,
                            stall: Some(Stall {
                                reached_tau: current,
                                target_tau: target,
                                reason: e.to_string(),
                            }),
                        });
                    }
                }
            }
        }
    }
    members.retain(|m| schedule.iter().any(|t| (m.tau / t - 1.0).abs() < 1e-12));
    Ok(RadialFamily { members, stall: None })
}
