//! Finite-dimensional reduction: fitting α0ω + Σα_iδ̃_{a_i,λ_i} to a field in
//! H¹, and solving for the correction v̄ orthogonal to the bubble manifold
//! that makes the gradient vanish in the orthogonal directions.
//!
//! Both work on axially symmetric data: every bubble centre lies on one axis
//! (or its antipode) and ω, K are zonal about it or constant.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bubble::BubbleParams;
use crate::constants::critical_exponent;
use crate::error::{LabError, Result};
use crate::functional::{remainder_budget, Configuration, SphereFunction, TestField, WeightedBubble};
use crate::harmonics::{ZonalDiscretization, ZonalExpansion};
use crate::sphere::{perturb_point, tangent_frame, Center, SphereGrid, SpherePoint};

/// Common axis of a configuration's bubbles, ω and K.
pub fn configuration_axis(cfg: &Configuration) -> Result<SpherePoint> {
    let axis = cfg
        .bubbles
        .first()
        .map(|b| b.bubble.a.clone())
        .or_else(|| cfg.omega.axis().cloned())
        .or_else(|| cfg.curvature.axis().cloned())
        .unwrap_or_else(|| SpherePoint::basis(cfg.n, 0));
    let on_axis = |p: &SpherePoint| (p.dot(&axis).abs() - 1.0).abs() < 1e-12;
    let mut points: Vec<&SpherePoint> = cfg.bubbles.iter().map(|b| &b.bubble.a).collect();
    points.extend(cfg.omega.axis());
    points.extend(cfg.curvature.axis());
    if points.into_iter().all(on_axis) {
        Ok(axis)
    } else {
        Err(LabError::Domain("bubble centres, ω and K must share one axis".into()))
    }
}

fn configuration_centers(cfg: &Configuration) -> Vec<Center> {
    let mut c: Vec<Center> = cfg.bubbles.iter().map(|b| b.bubble.center()).collect();
    c.sort_by(|a, b| a.scale.partial_cmp(&b.scale).unwrap_or(std::cmp::Ordering::Equal));
    c
}

/// Bubbles sorted by λ descending, then by first ambient coordinate of a descending.
pub fn canonicalize(cfg: &Configuration) -> Configuration {
    let mut out = cfg.clone();
    out.bubbles.sort_by(|x, y| {
        y.bubble
            .lambda
            .partial_cmp(&x.bubble.lambda)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.bubble.a.coords()[0].partial_cmp(&x.bubble.a.coords()[0]).unwrap_or(std::cmp::Ordering::Equal))
    });
    out
}

// ---------------------------------------------------------------------------
// Decomposition fit
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Gauss points per panel of the fitting grid.
    pub nodes: usize,
    /// Panel width cap of the fitting grid.
    pub max_width: f64,
    /// Stop once the largest parameter update is below this.
    pub step_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            nodes: 24,
            max_width: 0.1,
            step_tolerance: 1e-13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitIteration {
    pub iteration: usize,
    /// ‖u − model‖² before the step
    pub objective: f64,
    pub step: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterError {
    pub name: String,
    pub value: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub configuration: Configuration,
    /// H¹ norm of the residual v = u − α0ω − Σα_iδ̃_i.
    pub residual_norm: f64,
    /// ‖v‖·sqrt((G^{-1})_kk) with G the Gram matrix of the parameter
    /// directions: the parameter shift a residual of size ‖v‖ can induce.
    pub standard_errors: Vec<ParameterError>,
    /// Largest |⟨v, e⟩| over the spanning fields e of E (unit-free basis).
    pub max_constraint_pairing: f64,
    pub iterations: Vec<FitIteration>,
}

impl FitResult {
    /// Orthogonality of the residual to E within 1e-8‖v‖ + 1e-12.
    pub fn is_orthogonal(&self) -> bool {
        self.max_constraint_pairing < 1e-8 * self.residual_norm + 1e-12
    }
}

fn parameter_names(cfg: &Configuration) -> Vec<String> {
    let mut names = Vec::new();
    if cfg.has_residual_mass() {
        names.push("alpha0".to_string());
    }
    for i in 0..cfg.bubbles.len() {
        names.push(format!("alpha[{i}]"));
        names.push(format!("log_lambda[{i}]"));
        for k in 0..cfg.n {
            names.push(format!("point[{i}][{k}]"));
        }
    }
    names
}

fn parameter_values(cfg: &Configuration) -> Vec<f64> {
    let mut v = Vec::new();
    if cfg.has_residual_mass() {
        v.push(cfg.alpha0);
    }
    for b in &cfg.bubbles {
        v.push(b.alpha);
        v.push(b.bubble.lambda.ln());
        v.extend(std::iter::repeat(0.0).take(cfg.n));
    }
    v
}

/// Moves the parameters by `delta` in the layout of [`TestField::basis`];
/// point updates are local coordinates t with a ↦ (a + Σt_k e_k/λ)/|·|.
fn apply_step(cfg: &Configuration, delta: &DVector<f64>) -> Result<Configuration> {
    let mut out = cfg.clone();
    let mut idx = 0;
    if cfg.has_residual_mass() {
        out.alpha0 += delta[0];
        idx = 1;
    }
    for wb in out.bubbles.iter_mut() {
        wb.alpha += delta[idx];
        let lam = wb.bubble.lambda;
        let frame = tangent_frame(&wb.bubble.a);
        let mut xi = DVector::zeros(cfg.n + 1);
        for (k, e) in frame.iter().enumerate() {
            xi += e * (delta[idx + 2 + k] / lam);
        }
        let a = if xi.norm() > 0.0 { perturb_point(&wb.bubble.a, &xi)? } else { wb.bubble.a.clone() };
        wb.bubble = BubbleParams::new(a, lam * delta[idx + 1].exp())?;
        idx += 2 + cfg.n;
    }
    Configuration::new(out.n, out.tau, out.alpha0, out.omega, out.curvature, out.bubbles)
}

/// Nodal tables of the parameter directions ∂model/∂θ_k and their images under L.
fn direction_tables(cfg: &Configuration, grid: &SphereGrid) -> (DMatrix<f64>, DMatrix<f64>) {
    let fields: Vec<(f64, TestField)> = TestField::basis(cfg)
        .into_iter()
        .map(|t| {
            let scale = match t {
                TestField::Omega | TestField::Bubble(_) => 1.0,
                TestField::Rate(i) | TestField::Point(i, _) => cfg.bubbles[i].alpha,
            };
            (scale, t)
        })
        .collect();
    let bound: Vec<_> = fields.iter().map(|(s, t)| (*s, t.bind(cfg))).collect();
    let mut values = DMatrix::zeros(grid.len(), bound.len());
    let mut images = DMatrix::zeros(grid.len(), bound.len());
    for (q, x) in grid.points.iter().enumerate() {
        for (k, (s, f)) in bound.iter().enumerate() {
            values[(q, k)] = s * f.value(x);
            images[(q, k)] = s * f.conformal_laplacian(x);
        }
    }
    (values, images)
}

struct Residual {
    values: DVector<f64>,
    images: DVector<f64>,
}

fn residual(u_values: &DVector<f64>, u_images: &DVector<f64>, cfg: &Configuration, grid: &SphereGrid) -> Residual {
    let mut values = u_values.clone();
    let mut images = u_images.clone();
    for (q, x) in grid.points.iter().enumerate() {
        values[q] -= cfg.value(x);
        images[q] -= cfg.conformal_laplacian(x);
    }
    Residual { values, images }
}

fn weighted(grid: &SphereGrid, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().zip(&grid.weights).map(|(a, w)| a * w))
}

fn fit_grid(cfg: &Configuration, axis: &SpherePoint, options: &FitOptions) -> SphereGrid {
    SphereGrid::zonal(cfg.n, axis, &configuration_centers(cfg), options.nodes, options.max_width, true)
}

/// Damped Gauss–Newton for min ‖u − α0ω − Σα_iδ̃_{a_i,λ_i}‖ starting from
/// `initial` (which also fixes N, ω, K and τ). The result is canonicalized.
pub fn fit_decomposition(u: &dyn SphereFunction, initial: &Configuration, options: &FitOptions) -> Result<FitResult> {
    let axis = configuration_axis(initial)?;
    let mut cfg = initial.clone();
    let mut iterations = Vec::new();
    // The grid follows the bubbles; refit once on a grid built at the answer
    // if the rates moved far from where they started.
    let mut grid_lambdas: Vec<f64> = cfg.bubbles.iter().map(|b| b.bubble.lambda).collect();
    let mut grid = fit_grid(&cfg, &axis, options);
    for _pass in 0..3 {
        let (u_values, u_images) = sample_field(u, &grid);
        cfg = gauss_newton(&u_values, &u_images, cfg.clone(), &grid, options, &mut iterations)?;
        let moved = cfg
            .bubbles
            .iter()
            .zip(&grid_lambdas)
            .any(|(b, l)| (b.bubble.lambda / l).ln().abs() > 0.1);
        if !moved {
            break;
        }
        grid_lambdas = cfg.bubbles.iter().map(|b| b.bubble.lambda).collect();
        grid = fit_grid(&cfg, &axis, options);
    }
    let (u_values, u_images) = sample_field(u, &grid);
    summarize(&u_values, &u_images, canonicalize(&cfg), &grid, iterations)
}

fn sample_field(u: &dyn SphereFunction, grid: &SphereGrid) -> (DVector<f64>, DVector<f64>) {
    let values = DVector::from_iterator(grid.len(), grid.points.iter().map(|x| u.value(x)));
    let images = DVector::from_iterator(grid.len(), grid.points.iter().map(|x| u.conformal_laplacian(x)));
    (values, images)
}

fn gauss_newton(
    u_values: &DVector<f64>,
    u_images: &DVector<f64>,
    start: Configuration,
    grid: &SphereGrid,
    options: &FitOptions,
    log: &mut Vec<FitIteration>,
) -> Result<Configuration> {
    let mut current = start;
    let objective = |c: &Configuration| {
        let r = residual(u_values, u_images, c, grid);
        grid.sum(&r.values.component_mul(&r.images).iter().copied().collect::<Vec<_>>())
    };
    let mut f = objective(&current);
    let mut damping = 0.0f64;
    for it in 0..options.max_iterations {
        let (values, images) = direction_tables(&current, grid);
        let wv = {
            let mut m = values.clone();
            for (q, mut row) in m.row_iter_mut().enumerate() {
                row *= grid.weights[q];
            }
            m
        };
        let gram = {
            let g = wv.transpose() * &images;
            (&g + g.transpose()) * 0.5
        };
        check_rank(&current, &gram)?;
        let r = residual(u_values, u_images, &current, grid);
        let rhs = images.transpose() * weighted(grid, &r.values);
        let mut accepted = false;
        for _ in 0..30 {
            let mut lhs = gram.clone();
            for k in 0..lhs.nrows() {
                lhs[(k, k)] *= 1.0 + damping;
            }
            let step = match lhs.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    damping = (damping * 10.0).max(1e-8);
                    continue;
                }
            };
            let size = step.amax();
            let trial = match apply_step(&current, &step) {
                Ok(c) => c,
                Err(_) => {
                    damping = (damping * 10.0).max(1e-8);
                    continue;
                }
            };
            let ft = objective(&trial);
            if ft <= f || size < options.step_tolerance {
                log.push(FitIteration {
                    iteration: it,
                    objective: f,
                    step: size,
                    damping,
                });
                current = trial;
                f = ft;
                damping *= 0.1;
                if damping < 1e-10 {
                    damping = 0.0;
                }
                accepted = true;
                if size < options.step_tolerance {
                    return Ok(current);
                }
                break;
            }
            damping = (damping * 10.0).max(1e-8);
        }
        if !accepted {
            // No decrease possible at this resolution: stationary to roundoff.
            let r = residual(u_values, u_images, &current, grid);
            let rhs = images.transpose() * weighted(grid, &r.values);
            let scale = gram.diagonal().map(|d| d.sqrt()).amax() * f.max(0.0).sqrt();
            if rhs.amax() <= 1e-10 * scale + 1e-13 {
                return Ok(current);
            }
            return Err(LabError::FitFailure(format!(
                "no descent step at iteration {it}; best objective {f:e}; best iterate {}",
                serde_json::to_string(&current.bubbles).unwrap_or_default()
            )));
        }
    }
    Err(LabError::FitFailure(format!(
        "no convergence in {} iterations; best objective {f:e}; best iterate {}",
        options.max_iterations,
        serde_json::to_string(&current.bubbles).unwrap_or_default()
    )))
}

fn check_rank(cfg: &Configuration, gram: &DMatrix<f64>) -> Result<()> {
    for (i, b) in cfg.bubbles.iter().enumerate() {
        if b.alpha < 1e-6 {
            return Err(LabError::RankDeficient(format!("bubble {i} has vanishing weight α = {:e}", b.alpha)));
        }
    }
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-13 * hi) {
        return Err(LabError::RankDeficient(format!("Gram matrix of the parameter directions has condition {:e}", hi / lo)));
    }
    Ok(())
}

fn summarize(u_values: &DVector<f64>, u_images: &DVector<f64>, cfg: Configuration, grid: &SphereGrid, iterations: Vec<FitIteration>) -> Result<FitResult> {
    let r = residual(u_values, u_images, &cfg, grid);
    let norm2 = grid.sum(&r.values.component_mul(&r.images).iter().copied().collect::<Vec<_>>());
    let residual_norm = norm2.max(0.0).sqrt();
    let (values, images) = direction_tables(&cfg, grid);
    let wv = {
        let mut m = values.clone();
        for (q, mut row) in m.row_iter_mut().enumerate() {
            row *= grid.weights[q];
        }
        m
    };
    let gram = {
        let g = wv.transpose() * &images;
        (&g + g.transpose()) * 0.5
    };
    let inverse = gram.clone().try_inverse().ok_or_else(|| LabError::RankDeficient("singular Gram matrix at the fit".into()))?;
    let names = parameter_names(&cfg);
    let vals = parameter_values(&cfg);
    let standard_errors = names
        .into_iter()
        .zip(vals)
        .enumerate()
        .map(|(k, (name, value))| ParameterError {
            name,
            value,
            standard_error: residual_norm * inverse[(k, k)].max(0.0).sqrt(),
        })
        .collect();
    // pairings against the unscaled spanning fields
    let wr = weighted(grid, &r.values);
    let mut max_pairing = 0.0f64;
    for t in TestField::basis(&cfg) {
        let f = t.bind(&cfg);
        let s: f64 = grid.points.iter().enumerate().map(|(q, x)| wr[q] * f.conformal_laplacian(x)).sum();
        max_pairing = max_pairing.max(s.abs());
    }
    Ok(FitResult {
        configuration: cfg,
        residual_norm,
        standard_errors,
        max_constraint_pairing: max_pairing,
        iterations,
    })
}

/// Initial guess from the largest local maxima of u − α0ω along the axis:
/// λ from the peak height, δ̃(a) = c0 (λ/2)^{(n−2)/2}, with α = K(a)^{−(n−2)/4}.
pub fn initial_guess_from_peaks(u: &dyn SphereFunction, template: &Configuration, bubbles: usize, samples: usize) -> Result<Configuration> {
    let axis = configuration_axis(template)?;
    let n = template.n;
    let m = (n as f64 - 2.0) / 2.0;
    let dir = &tangent_frame(&axis)[0];
    let av = axis.to_vector();
    let excess: Vec<(f64, SpherePoint)> = (0..=samples)
        .map(|k| {
            // finer near the poles, where concentrated bubbles sit
            let s = k as f64 / samples as f64;
            let theta = std::f64::consts::PI * (0.5 - 0.5 * (std::f64::consts::PI * s).cos());
            let x = SpherePoint::from_ambient(&(&av * theta.cos() + dir * theta.sin())).expect("unit vector");
            let base = if template.has_residual_mass() { template.alpha0 * template.omega.value(&x) } else { 0.0 };
            (u.value(&x) - base, x)
        })
        .collect();
    let mut peaks: Vec<(f64, SpherePoint)> = Vec::new();
    for k in 0..excess.len() {
        let left = if k > 0 { excess[k - 1].0 } else { f64::MIN };
        let right = if k + 1 < excess.len() { excess[k + 1].0 } else { f64::MIN };
        if excess[k].0 > left && excess[k].0 >= right && excess[k].0 > 0.0 {
            peaks.push(excess[k].clone());
        }
    }
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    if peaks.len() < bubbles {
        return Err(LabError::FitFailure(format!("found {} peaks, need {bubbles}", peaks.len())));
    }
    let c0 = crate::constants::c0(n);
    let mut out = template.clone();
    out.bubbles = peaks
        .into_iter()
        .take(bubbles)
        .map(|(h, x)| {
            let alpha = template.curvature.value(&x).powf(-m / 2.0);
            let lambda = 2.0 * (h / (alpha * c0)).powf(1.0 / m);
            Ok(WeightedBubble {
                alpha,
                bubble: BubbleParams::new(x, lambda.max(1.0))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Orthogonal correction v̄
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VbarOptions {
    /// Highest zonal harmonic degree; 0 picks one from the largest rate.
    pub degree: usize,
    pub max_iterations: usize,
    /// Newton stops when the projected residual falls below this.
    pub tolerance: f64,
    /// Smallest admissible eigenvalue of the projected Jacobian.
    pub degeneracy_threshold: f64,
}

impl Default for VbarOptions {
    fn default() -> Self {
        Self {
            degree: 0,
            max_iterations: 50,
            tolerance: 1e-13,
            degeneracy_threshold: 1e-6,
        }
    }
}

/// Degree that resolves bubbles of rate λ: max(24, 8λ), capped at 400.
pub fn default_degree(cfg: &Configuration) -> usize {
    let lam = cfg.bubbles.iter().map(|b| b.bubble.lambda).fold(1.0, f64::max);
    ((8.0 * lam).ceil() as usize).clamp(24, 400)
}

/// The discretized problem: find c with A c = 0 and F(c) ⊥ null(A), where
/// F_k(c) = ⟨∇I(u + Σc_lφ_l), φ_k⟩ and A_jk = ⟨e_j, φ_k⟩ for e_j ∈ E.
pub struct VbarProblem {
    pub disc: ZonalDiscretization,
    /// rows: the spanning fields of E (ω, δ̃_i, λ_i∂δ̃_i/∂λ_i)
    pub constraints: DMatrix<f64>,
    /// orthonormal basis of null(A)
    pub nullspace: DMatrix<f64>,
    u_values: DVector<f64>,
    u_pairings: DVector<f64>,
    curvature: DVector<f64>,
    exponent: f64,
}

impl VbarProblem {
    pub fn new(cfg: &Configuration, degree: usize) -> Result<Self> {
        let axis = configuration_axis(cfg)?;
        let disc = ZonalDiscretization::new(axis, degree, &configuration_centers(cfg));
        let fields = TestField::axial_basis(cfg);
        let mut constraints = DMatrix::zeros(fields.len(), disc.modes());
        for (j, t) in fields.into_iter().enumerate() {
            let f = t.bind(cfg);
            let row = disc.h1_coefficients(&f);
            constraints.set_row(j, &row.transpose());
        }
        let sv = constraints.clone().svd(false, false).singular_values;
        let rank = sv.iter().filter(|v| **v > 1e-10 * sv.max()).count();
        if rank < constraints.nrows() {
            return Err(LabError::Degenerate(format!(
                "constraint fields are dependent at degree {degree} (rank {rank} of {})",
                constraints.nrows()
            )));
        }
        // Householder QR of [Aᵀ | I]: the trailing columns of Q span null(A).
        let mut stacked = DMatrix::zeros(disc.modes(), rank + disc.modes());
        stacked.view_mut((0, 0), (disc.modes(), rank)).copy_from(&constraints.transpose());
        stacked.view_mut((0, rank), (disc.modes(), disc.modes())).fill_with_identity();
        let full = stacked.qr().q();
        let nullspace = full.columns(rank, disc.modes() - rank).into_owned();
        let u_values = disc.sample(&|x| cfg.value(x));
        let u_pairings = disc.project(&disc.sample(&|x| cfg.conformal_laplacian(x)));
        let curvature = disc.sample(&|x| cfg.curvature.value(x));
        Ok(Self {
            disc,
            constraints,
            nullspace,
            u_values,
            u_pairings,
            curvature,
            exponent: critical_exponent(cfg.n) - cfg.tau,
        })
    }

    pub fn modes(&self) -> usize {
        self.disc.modes()
    }

    /// F(c).
    pub fn gradient(&self, c: &DVector<f64>) -> DVector<f64> {
        let w = &self.u_values + self.disc.synthesize(c);
        let nl = DVector::from_iterator(
            w.len(),
            w.iter().zip(self.curvature.iter()).map(|(v, k)| k * v.abs().powf(self.exponent - 1.0) * v),
        );
        &self.u_pairings + c - self.disc.project(&nl)
    }

    /// I − B(c), B_kl = (p−τ)∫K|u+v|^{p−1−τ}φ_kφ_l.
    pub fn jacobian(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let w = &self.u_values + self.disc.synthesize(c);
        let weight = DVector::from_iterator(
            w.len(),
            w.iter().zip(self.curvature.iter()).map(|(v, k)| self.exponent * k * v.abs().powf(self.exponent - 1.0)),
        );
        let b = self.disc.weighted_gram(&weight);
        DMatrix::identity(self.modes(), self.modes()) - b
    }

    /// Newton on Zᵀ F(Zy) = 0 from y0 (null-space coordinates).
    pub fn solve_nullspace(&self, y0: &DVector<f64>, options: &VbarOptions) -> Result<(DVector<f64>, Vec<f64>)> {
        let z = &self.nullspace;
        let mut y = y0.clone();
        let mut log = Vec::new();
        let mut res = (z.transpose() * self.gradient(&(z * &y))).norm();
        for _ in 0..options.max_iterations {
            log.push(res);
            let jac = z.transpose() * self.jacobian(&(z * &y)) * z;
            if res < options.tolerance {
                self.check_degeneracy(&jac, options)?;
                return Ok((z * &y, log));
            }
            let rhs = z.transpose() * self.gradient(&(z * &y));
            let step = jac.clone().lu().solve(&rhs).ok_or_else(|| LabError::Degenerate("projected Jacobian is singular".into()))?;
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..20 {
                let trial = &y - &step * t;
                let r = (z.transpose() * self.gradient(&(z * &trial))).norm();
                if r < res || r < options.tolerance {
                    y = trial;
                    res = r;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                // stationary at roundoff level
                log.push(res);
                self.check_degeneracy(&jac, options)?;
                if res < 1e3 * options.tolerance {
                    return Ok((z * &y, log));
                }
                return Err(LabError::Divergence(format!("v̄ Newton stalled at residual {res:e}")));
            }
        }
        Err(LabError::Divergence(format!("v̄ Newton did not converge; residual {res:e}")))
    }

    fn check_degeneracy(&self, jac: &DMatrix<f64>, options: &VbarOptions) -> Result<()> {
        let sym = (jac + jac.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym).eigenvalues;
        let smallest = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if smallest < options.degeneracy_threshold {
            return Err(LabError::Degenerate(format!(
                "projected second variation has eigenvalue {smallest:e}: neighbourhood too large or discretization too coarse"
            )));
        }
        Ok(())
    }

    /// Newton on the full saddle-point system [[I−B, Aᵀ], [A, 0]].
    pub fn solve_kkt(&self, options: &VbarOptions) -> Result<DVector<f64>> {
        let (m, k) = (self.modes(), self.constraints.nrows());
        let mut c = DVector::zeros(m);
        let mut mu = DVector::zeros(k);
        for _ in 0..options.max_iterations {
            let top = self.gradient(&c) + self.constraints.transpose() * &mu;
            let bottom = &self.constraints * &c;
            let r = DVector::from_iterator(m + k, top.iter().chain(bottom.iter()).copied());
            if r.norm() < options.tolerance {
                return Ok(c);
            }
            let mut kkt = DMatrix::zeros(m + k, m + k);
            kkt.view_mut((0, 0), (m, m)).copy_from(&self.jacobian(&c));
            kkt.view_mut((0, m), (m, k)).copy_from(&self.constraints.transpose());
            kkt.view_mut((m, 0), (k, m)).copy_from(&self.constraints);
            let step = kkt.lu().solve(&r).ok_or_else(|| LabError::Degenerate("KKT matrix is singular".into()))?;
            let before = r.norm();
            c -= step.rows(0, m);
            mu -= step.rows(m, k);
            let after = {
                let top = self.gradient(&c) + self.constraints.transpose() * &mu;
                let bottom = &self.constraints * &c;
                (top.norm_squared() + bottom.norm_squared()).sqrt()
            };
            if after >= before && after < 1e3 * options.tolerance {
                return Ok(c);
            }
        }
        Err(LabError::Divergence("KKT Newton did not converge".into()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VbarSolution {
    /// H¹ coefficients of v̄ in the zonal basis.
    pub coefficients: Vec<f64>,
    pub degree: usize,
    /// ‖v̄‖ (H¹)
    pub norm: f64,
    /// R(τ, a, λ)
    pub remainder: f64,
    pub ratio: f64,
    /// projected residual per Newton iteration
    pub residual_log: Vec<f64>,
}

/// v̄ ∈ E^⊥ with ⟨∇I(u+v̄), h⟩ = 0 for h ∈ E^⊥, discretized by zonal
/// harmonics up to the chosen degree; Newton from v = 0.
pub fn solve_vbar(cfg: &Configuration, options: &VbarOptions) -> Result<VbarSolution> {
    let degree = if options.degree == 0 { default_degree(cfg) } else { options.degree };
    let problem = VbarProblem::new(cfg, degree)?;
    solve_vbar_from(cfg, &problem, &DVector::zeros(problem.nullspace.ncols()), options)
}

/// [`solve_vbar`] on a prepared problem from a chosen start (null-space coordinates).
pub fn solve_vbar_from(cfg: &Configuration, problem: &VbarProblem, y0: &DVector<f64>, options: &VbarOptions) -> Result<VbarSolution> {
    let (c, log) = problem.solve_nullspace(y0, options)?;
    let remainder = remainder_budget(cfg).r;
    let norm = c.norm();
    Ok(VbarSolution {
        coefficients: c.iter().copied().collect(),
        degree: problem.disc.basis.degree,
        norm,
        remainder,
        ratio: norm / remainder,
        residual_log: log,
    })
}

impl VbarSolution {
    pub fn field(&self, problem: &VbarProblem) -> ZonalExpansion {
        problem.disc.expansion(DVector::from_vec(self.coefficients.clone()))
    }
}

/// A zonal field of H¹ norm `eta` orthogonal to E at `cfg`, with random
/// coefficients decaying like 1/(1+k) up to `degree`.
pub fn orthogonal_perturbation(cfg: &Configuration, degree: usize, eta: f64, seed: u64) -> Result<ZonalExpansion> {
    let problem = VbarProblem::new(cfg, degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DVector::from_iterator(problem.modes(), (0..problem.modes()).map(|k| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g / (1.0 + k as f64)
    }));
    let z = &problem.nullspace;
    let mut c = z * (z.transpose() * raw);
    c *= eta / c.norm();
    Ok(problem.disc.expansion(c))
}

/// A generic zonal field of H¹ norm `eta` (not projected).
pub fn generic_perturbation(cfg: &Configuration, degree: usize, eta: f64, seed: u64) -> Result<ZonalExpansion> {
    let axis = configuration_axis(cfg)?;
    let disc = ZonalDiscretization::new(axis, degree, &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = DVector::from_iterator(disc.modes(), (0..disc.modes()).map(|k| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g / (1.0 + k as f64)
    }));
    c *= eta / c.norm();
    Ok(disc.expansion(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::Combination;
    use crate::sphere::{manufactured_curvature, ScalarField};

    fn omega(n: usize) -> ScalarField {
        ScalarField::zonal_polynomial(SpherePoint::basis(n, 0), vec![1.0, -0.3, 0.3])
    }

    fn planted(n: usize) -> Configuration {
        let w = omega(n);
        let k = manufactured_curvature(&w).unwrap();
        let e1 = SpherePoint::basis(n, 0);
        let b0 = BubbleParams::new(e1.clone(), 30.0).unwrap();
        let b1 = BubbleParams::new(e1.antipode(), 12.0).unwrap();
        let m = (n as f64 - 2.0) / 2.0;
        let bubbles = vec![
            WeightedBubble { alpha: 1.01 * k.value(&b0.a).powf(-m / 2.0), bubble: b0 },
            WeightedBubble { alpha: 0.99 * k.value(&b1.a).powf(-m / 2.0), bubble: b1 },
        ];
        Configuration::new(n, 0.0, 1.02, w, k, bubbles).unwrap()
    }

    fn jitter(cfg: &Configuration) -> Configuration {
        let mut c = cfg.clone();
        c.alpha0 *= 0.97;
        for (i, b) in c.bubbles.iter_mut().enumerate() {
            b.alpha *= 1.03;
            b.bubble.lambda *= if i == 0 { 1.2 } else { 0.85 };
        }
        c
    }

    fn max_param_gap(a: &Configuration, b: &Configuration) -> f64 {
        let mut g = (a.alpha0 - b.alpha0).abs();
        for (x, y) in a.bubbles.iter().zip(&b.bubbles) {
            g = g.max((x.alpha - y.alpha).abs());
            g = g.max((x.bubble.lambda / y.bubble.lambda).ln().abs());
            g = g.max(crate::sphere::geodesic_distance(&x.bubble.a, &y.bubble.a).unwrap() * y.bubble.lambda);
        }
        g
    }

    #[test]
    fn exact_field_is_recovered() {
        let cfg = planted(7);
        let fit = fit_decomposition(&cfg, &jitter(&cfg), &FitOptions::default()).unwrap();
        assert!(max_param_gap(&fit.configuration, &cfg) < 1e-10, "{:?}", fit.configuration);
        assert!(fit.residual_norm < 1e-10, "{}", fit.residual_norm);
        assert!(fit.is_orthogonal());
    }

    #[test]
    fn refit_is_idempotent_and_order_free() {
        let cfg = planted(7);
        let first = fit_decomposition(&cfg, &jitter(&cfg), &FitOptions::default()).unwrap();
        let again = fit_decomposition(&first.configuration, &first.configuration, &FitOptions::default()).unwrap();
        assert!(max_param_gap(&again.configuration, &first.configuration) < 1e-10);
        let mut swapped = jitter(&cfg);
        swapped.bubbles.reverse();
        let other = fit_decomposition(&cfg, &swapped, &FitOptions::default()).unwrap();
        assert!(max_param_gap(&other.configuration, &first.configuration) < 1e-10);
    }

    #[test]
    fn orthogonal_perturbation_keeps_parameters_and_sets_the_norm() {
        let cfg = planted(7);
        for eta in [1e-3, 1e-2] {
            let w = orthogonal_perturbation(&cfg, 12, eta, 5).unwrap();
            let u = Combination { terms: vec![(1.0, &cfg), (1.0, &w)] };
            let fit = fit_decomposition(&u, &jitter(&cfg), &FitOptions::default()).unwrap();
            assert!(max_param_gap(&fit.configuration, &cfg) < 1e-3 * eta, "{eta}");
            assert!((fit.residual_norm / eta - 1.0).abs() < 0.05, "{}", fit.residual_norm);
            assert!(fit.is_orthogonal(), "{}", fit.max_constraint_pairing);
        }
    }

    #[test]
    fn exact_bubble_needs_no_correction() {
        let n = 7;
        let b = BubbleParams::new(SpherePoint::basis(n, 0), 5.0).unwrap();
        let cfg = Configuration::new(n, 0.0, 0.0, ScalarField::zero(n), ScalarField::constant(n, 1.0), vec![WeightedBubble { alpha: 1.0, bubble: b }]).unwrap();
        let s = solve_vbar(&cfg, &VbarOptions::default()).unwrap();
        assert!(s.norm < 1e-12, "{}", s.norm);
    }

    #[test]
    fn nullspace_newton_matches_kkt() {
        let n = 7;
        let k = ScalarField::zonal_polynomial(SpherePoint::basis(n, 0), vec![1.0, 0.3]);
        let b = BubbleParams::new(SpherePoint::basis(n, 0), 6.0).unwrap();
        let m = 2.5;
        let cfg = Configuration::new(n, 1e-2, 0.0, ScalarField::zero(n), k.clone(), vec![WeightedBubble { alpha: k.value(&b.a).powf(-m / 2.0), bubble: b }]).unwrap();
        let problem = VbarProblem::new(&cfg, 40).unwrap();
        let opts = VbarOptions::default();
        let s = solve_vbar_from(&cfg, &problem, &DVector::zeros(problem.nullspace.ncols()), &opts).unwrap();
        let kkt = problem.solve_kkt(&opts).unwrap();
        let gap = (DVector::from_vec(s.coefficients.clone()) - kkt).amax();
        assert!(gap < 1e-8, "{gap}");
        assert!(s.norm > 1e-4);
    }
}
