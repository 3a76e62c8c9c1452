//! One-dimensional quadrature building blocks: Gauss–Legendre panels,
//! geometrically graded composite rules, adaptive Gauss–Kronrod and
//! Clenshaw–Curtis weights for Chebyshev–Lobatto grids.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{LabError, Result};

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if m == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// A focus point of a graded rule: the integrand varies on length `scale` near `at`.
#[derive(Clone, Copy, Debug)]
pub struct Focus {
    pub at: f64,
    pub scale: f64,
}

/// Breakpoints on [a, b] graded geometrically (ratio 2) towards each focus,
/// with panel width capped at `max_width`.
pub fn graded_breaks(a: f64, b: f64, foci: &[Focus], max_width: f64) -> Vec<f64> {
    let mut pts = vec![a, b];
    for f in foci {
        if f.at < a - 1e-15 || f.at > b + 1e-15 {
            continue;
        }
        let c = f.at.clamp(a, b);
        pts.push(c);
        let s0 = (f.scale * 0.25).max(1e-14);
        let mut s = s0;
        while s < (b - a) {
            pts.push(c + s);
            pts.push(c - s);
            s *= 2.0;
        }
    }
    pts.retain(|p| *p >= a && *p <= b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() < 1e-15 * (1.0 + y.abs()));
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let k = (len / max_width).ceil().max(1.0) as usize;
        for j in 1..=k {
            out.push(w[0] + len * j as f64 / k as f64);
        }
    }
    out
}

/// Composite Gauss–Legendre nodes/weights over given breakpoints.
pub fn composite_rule(breaks: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(m);
    let mut xs = Vec::with_capacity(breaks.len() * m);
    let mut ws = Vec::with_capacity(breaks.len() * m);
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let h = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for k in 0..m {
            xs.push(mid + h * gx[k]);
            ws.push(h * gw[k]);
        }
    }
    (xs, ws)
}

/// Value with an error estimate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Graded composite integral of `f` over [a, b] with two orders for an error estimate.
pub fn graded_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, foci: &[Focus], max_width: f64) -> Estimate {
    let breaks = graded_breaks(a, b, foci, max_width);
    let eval = |m: usize| {
        let (xs, ws) = composite_rule(&breaks, m);
        xs.iter().zip(ws.iter()).map(|(x, w)| w * f(*x)).sum::<f64>()
    };
    let fine = eval(20);
    let coarse = eval(14);
    Estimate {
        value: fine,
        error: (fine - coarse).abs(),
    }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

#[derive(PartialEq)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) on the listed breakpoints.
///
/// Stops when the summed error estimate falls below `rel_tol * |value|`
/// (or an absolute floor); otherwise returns a precision error carrying the best estimate.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: F, breaks: &[f64], rel_tol: f64, max_segments: usize) -> Result<Estimate> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        let (v, e) = gk15(&f, w[0], w[1]);
        heap.push(Segment { a: w[0], b: w[1], value: v, error: e });
    }
    loop {
        let total: f64 = heap.iter().map(|s| s.value).sum();
        let err: f64 = heap.iter().map(|s| s.error).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            return Ok(Estimate { value: total, error: err });
        }
        if heap.len() >= max_segments {
            return Err(LabError::Precision {
                estimate: total,
                error: err,
                tolerance: rel_tol,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            let total: f64 = heap.iter().map(|s| s.value).sum();
            let err: f64 = heap.iter().map(|s| s.error).sum();
            return Err(LabError::Precision {
                estimate: total,
                error: err,
                tolerance: rel_tol,
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
}

/// Clenshaw–Curtis weights for the Chebyshev–Lobatto nodes `cos(jπ/N)` on [-1, 1].
pub fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    let nf = n as f64;
    for (j, wj) in w.iter_mut().enumerate() {
        let theta = j as f64 * PI / nf;
        let mut s = 0.0;
        for k in 1..=n / 2 {
            let b = if 2 * k == n { 1.0 } else { 2.0 };
            s += b / (4.0 * (k * k) as f64 - 1.0) * (2.0 * k as f64 * theta).cos();
        }
        let c = if j == 0 || j == n { 1.0 } else { 2.0 };
        *wj = c / nf * (1.0 - s);
    }
    w
}
