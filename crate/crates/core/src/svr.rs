//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved directly in the difference coefficients
//! `beta_i = alpha_i - alpha_i*`:
//!
//! ```text
//! max  -1/2 sum_ij beta_i beta_j K(x_i, x_j) - eps sum_i |beta_i| + sum_i y_i beta_i
//! s.t. sum_i beta_i = 0,  -C <= beta_i <= C
//! ```
//!
//! Each step moves one pair `(beta_i, beta_j)` along `e_i - e_j`, which keeps
//! the equality constraint, and minimises the resulting one-dimensional
//! piecewise quadratic exactly. The pair is picked with second-order working
//! set selection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SvrError {
    #[error("invalid hyperparameters: {0}")]
    Params(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate feature: zero variance")]
    DegenerateFeature,
}

/// Regularisation `c`, tube half-width `epsilon` and RBF width `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrHyperParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl SvrHyperParams {
    pub fn new(c: f64, epsilon: f64, gamma: f64) -> Result<Self, SvrError> {
        let p = Self { c, epsilon, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SvrError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(SvrError::Params(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(SvrError::Params(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SvrError::Params(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Stop once the maximal KKT violation drops to this value.
    pub tol: f64,
    /// Pair-update budget; `None` means `200 * n` capped at [`MAX_PAIR_UPDATES`].
    pub max_iter: Option<usize>,
}

pub const MAX_PAIR_UPDATES: usize = 2_000_000;

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: None,
        }
    }
}

impl SolverSettings {
    pub fn iteration_budget(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| n.saturating_mul(200).min(MAX_PAIR_UPDATES))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub kkt_violation: f64,
    pub dual_objective: f64,
    pub converged: bool,
    /// Model output at each training input, in input order.
    pub fitted: Vec<f64>,
}

/// A fitted regressor: `f(x) = sum_i beta_i K(s_i, x) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    support: Vec<f64>,
    beta: Vec<f64>,
    bias: f64,
    params: SvrHyperParams,
}

impl SvrModel {
    pub fn from_parts(
        support: Vec<f64>,
        beta: Vec<f64>,
        bias: f64,
        params: SvrHyperParams,
    ) -> Result<Self, SvrError> {
        params.validate()?;
        if support.len() != beta.len() {
            return Err(SvrError::Shape(format!(
                "{} support inputs but {} coefficients",
                support.len(),
                beta.len()
            )));
        }
        Ok(Self {
            support,
            beta,
            bias,
            params,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn params(&self) -> SvrHyperParams {
        self.params
    }

    pub fn predict(&self, x: f64) -> f64 {
        let g = self.params.gamma;
        self.support
            .iter()
            .zip(&self.beta)
            .map(|(&s, &b)| b * rbf_kernel(s, x, g))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.predict(x)).collect()
    }

    /// Same as [`predict_many`](Self::predict_many) when the inputs and the
    /// support vectors all sit on one lattice `origin + k * step`, with the
    /// kernel tabulated per lattice distance. `None` if any point is off the
    /// lattice (relative slack `1e-6` of a step) or the span is too wide.
    pub fn predict_on_lattice(&self, xs: &[f64], step: f64) -> Option<Vec<f64>> {
        if !(step > 0.0) || !step.is_finite() {
            return None;
        }
        let Some(&origin) = self.support.first().or(xs.first()) else {
            return Some(Vec::new());
        };
        let slot = |x: f64| {
            let k = ((x - origin) / step).round();
            ((k * step - (x - origin)).abs() <= 1e-6 * step && k.abs() < 1e7).then_some(k as i64)
        };
        let sv: Vec<i64> = self
            .support
            .iter()
            .map(|&x| slot(x))
            .collect::<Option<_>>()?;
        let qs: Vec<i64> = xs.iter().map(|&x| slot(x)).collect::<Option<_>>()?;
        let lo = sv.iter().chain(&qs).min().copied().unwrap_or(0);
        let hi = sv.iter().chain(&qs).max().copied().unwrap_or(0);
        let span = usize::try_from(hi - lo).ok()?;
        if span > 1 << 22 {
            return None;
        }
        let g = self.params.gamma;
        let table: Vec<f64> = (0..=span)
            .map(|d| {
                let dx = d as f64 * step;
                (-g * dx * dx).exp()
            })
            .collect();
        Some(
            qs.iter()
                .map(|&q| {
                    sv.iter()
                        .zip(&self.beta)
                        .map(|(&s, &b)| b * table[q.abs_diff(s) as usize])
                        .sum::<f64>()
                        + self.bias
                })
                .collect(),
        )
    }

    /// Plain `key = value` dump for debugging.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "c = {:e}", self.params.c);
        let _ = writeln!(out, "epsilon = {:e}", self.params.epsilon);
        let _ = writeln!(out, "gamma = {:e}", self.params.gamma);
        let _ = writeln!(out, "bias = {:e}", self.bias);
        let _ = writeln!(out, "support_vectors = {}", self.support.len());
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(out, "beta = {}", join(&self.beta));
        let _ = writeln!(out, "support = {}", join(&self.support));
        out
    }
}

/// `1 / (n_features * var(features))`, population variance, one feature.
pub fn gamma_scale(features: &[f64]) -> Result<f64, SvrError> {
    if features.is_empty() {
        return Err(SvrError::Shape("no features".into()));
    }
    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    let var = features.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return Err(SvrError::DegenerateFeature);
    }
    Ok(1.0 / var)
}

pub fn rbf_kernel(x: f64, z: f64, gamma: f64) -> f64 {
    let d = x - z;
    (-gamma * d * d).exp()
}

/// `-1/2 beta'K beta - eps |beta|_1 + y'beta`, evaluated densely.
pub fn dual_objective(x: &[f64], y: &[f64], beta: &[f64], params: &SvrHyperParams) -> f64 {
    let mut quad = 0.0;
    for (i, &bi) in beta.iter().enumerate() {
        if bi == 0.0 {
            continue;
        }
        for (j, &bj) in beta.iter().enumerate() {
            quad += bi * bj * rbf_kernel(x[i], x[j], params.gamma);
        }
    }
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let lin: f64 = y.iter().zip(beta).map(|(a, b)| a * b).sum();
    -0.5 * quad - params.epsilon * l1 + lin
}

const DENSE_LIMIT: usize = 1024;

/// Random access to Gram matrix entries. RBF diagonals are always 1.
trait Gram {
    fn k(&self, i: usize, j: usize) -> f64;

    /// Writes row `i` into `out`.
    fn row(&self, i: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.k(i, k);
        }
    }
}

/// Equally spaced inputs: `K_ij` depends on `|i - j|` only.
struct ToeplitzGram(Vec<f64>);

impl ToeplitzGram {
    fn new(n: usize, step: f64, gamma: f64) -> Self {
        Self(
            (0..n)
                .map(|d| {
                    let dist = step * d as f64;
                    (-gamma * dist * dist).exp()
                })
                .collect(),
        )
    }
}

impl Gram for ToeplitzGram {
    #[inline(always)]
    fn k(&self, i: usize, j: usize) -> f64 {
        self.0[i.abs_diff(j)]
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        let n = out.len();
        for (o, t) in out[..i].iter_mut().zip(self.0[1..=i].iter().rev()) {
            *o = *t;
        }
        out[i..].copy_from_slice(&self.0[..n - i]);
    }
}

struct DenseGram {
    n: usize,
    data: Vec<f64>,
}

impl DenseGram {
    fn new(x: &[f64], gamma: f64) -> Self {
        let n = x.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in 0..i {
                let k = rbf_kernel(x[i], x[j], gamma);
                data[i * n + j] = k;
                data[j * n + i] = k;
            }
        }
        Self { n, data }
    }
}

impl Gram for DenseGram {
    #[inline(always)]
    fn k(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

struct DirectGram<'a> {
    x: &'a [f64],
    gamma: f64,
}

impl Gram for DirectGram<'_> {
    #[inline(always)]
    fn k(&self, i: usize, j: usize) -> f64 {
        rbf_kernel(self.x[i], self.x[j], self.gamma)
    }
}

fn uniform_step(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let step = x[1] - x[0];
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let ok = x
        .iter()
        .enumerate()
        .all(|(k, &v)| (v - (x[0] + step * k as f64)).abs() <= 1e-12 * scale);
    ok.then_some(step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StepKind {
    Lower,
    Upper,
    /// `beta_i` lands on zero.
    KinkI,
    /// `beta_j` lands on zero.
    KinkJ,
    Interior,
}

/// Minimiser of `1/2 eta t^2 - g t + eps (|a + t| - |a| + |c - t| - |c|)` on
/// `[lo, hi]`. Convex, piecewise quadratic with kinks at `t = -a` and `t = c`.
/// Returns `(0, Interior)` when no candidate improves on `t = 0`.
#[allow(clippy::too_many_arguments)]
fn pair_step(eta: f64, g: f64, eps: f64, a: f64, c: f64, lo: f64, hi: f64) -> (f64, StepKind) {
    let phi = |t: f64| {
        0.5 * eta * t * t - g * t + eps * ((a + t).abs() - a.abs() + (c - t).abs() - c.abs())
    };
    let mut points = [
        (lo, StepKind::Lower),
        (hi, StepKind::Upper),
        (0.0, StepKind::Interior),
        (0.0, StepKind::Interior),
    ];
    let mut m = 2;
    for (k, kind) in [(-a, StepKind::KinkI), (c, StepKind::KinkJ)] {
        if k > lo && k < hi {
            points[m] = (k, kind);
            m += 1;
        }
    }
    let pts = &mut points[..m];
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));

    let mut best = (0.0, StepKind::Interior, 0.0);
    let mut consider = |t: f64, kind: StepKind| {
        let v = phi(t);
        if v < best.2 {
            best = (t, kind, v);
        }
    };
    for &(t, kind) in pts.iter() {
        consider(t, kind);
    }
    if eta > 1e-15 {
        for w in pts.windows(2) {
            let (l, r) = (w[0].0, w[1].0);
            let mid = 0.5 * (l + r);
            let s1 = (a + mid).signum();
            let s2 = (c - mid).signum();
            let t = (g - eps * (s1 - s2)) / eta;
            if t > l && t < r {
                consider(t, StepKind::Interior);
            }
        }
    }
    (best.0, best.1)
}

/// Trains an epsilon-SVR on scalar inputs.
///
/// Returns the model together with a [`SolverReport`]. Hitting the iteration
/// budget is not an error: the returned model is the last (feasible,
/// best-so-far) iterate with `converged = false`.
pub fn train_svr(
    x: &[f64],
    y: &[f64],
    params: SvrHyperParams,
    settings: &SolverSettings,
) -> Result<(SvrModel, SolverReport), SvrError> {
    train_svr_traced(x, y, params, settings, None)
}

/// [`train_svr`] that additionally records the dual objective after every
/// pair update into `trace`.
pub fn train_svr_traced(
    x: &[f64],
    y: &[f64],
    params: SvrHyperParams,
    settings: &SolverSettings,
    trace: Option<&mut Vec<f64>>,
) -> Result<(SvrModel, SolverReport), SvrError> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(SvrError::Shape(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(SvrError::Shape("empty training set".into()));
    }
    if !(settings.tol > 0.0) {
        return Err(SvrError::Params(format!(
            "tolerance must be > 0, got {}",
            settings.tol
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SvrError::Shape("non-finite training value".into()));
    }

    let n = x.len();
    let run = |state: SolverState| match uniform_step(x) {
        Some(step) => state.run(&ToeplitzGram::new(n, step, params.gamma), settings, trace),
        None if n <= DENSE_LIMIT => state.run(&DenseGram::new(x, params.gamma), settings, trace),
        None => state.run(
            &DirectGram {
                x,
                gamma: params.gamma,
            },
            settings,
            trace,
        ),
    };
    let (state, iterations, violation) = run(SolverState::new(y, params.c, params.epsilon));
    let SolverState {
        beta, grad, c, eps, ..
    } = state;

    let bias = compute_bias(&beta, &grad, c, eps);
    let dual = 0.5
        * beta
            .iter()
            .zip(y.iter().zip(&grad))
            .map(|(b, (yi, fi))| b * (yi + fi))
            .sum::<f64>()
        - eps * beta.iter().map(|b| b.abs()).sum::<f64>();

    // grad = y - K beta
    let fitted: Vec<f64> = y.iter().zip(&grad).map(|(yi, fi)| yi - fi + bias).collect();
    let (support, beta): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(&beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(x, b)| (*x, *b))
        .unzip();
    let model = SvrModel {
        support,
        beta,
        bias,
        params,
    };
    let report = SolverReport {
        iterations,
        kkt_violation: violation,
        dual_objective: dual,
        converged: violation <= settings.tol,
        fitted,
    };
    Ok((model, report))
}

/// Largest free set handed to the dense face solve.
const FACE_SOLVE_MAX: usize = 400;
/// Ridge added to the free-set Gram block before factorising.
const FACE_RIDGE: f64 = 1e-10;

struct SolverState {
    c: f64,
    eps: f64,
    beta: Vec<f64>,
    /// `y - K beta`: the gradient of the smooth part of the objective.
    grad: Vec<f64>,
    objective: f64,
    row_i: Vec<f64>,
    row_j: Vec<f64>,
}

struct Scan {
    up: f64,
    up_idx: usize,
    low: f64,
    free: usize,
}

impl Scan {
    fn new() -> Self {
        Self {
            up: f64::NEG_INFINITY,
            up_idx: usize::MAX,
            low: f64::INFINITY,
            free: 0,
        }
    }

    #[inline(always)]
    fn push(&mut self, k: usize, b: f64, f: f64, c: f64, eps: f64) {
        if b < c {
            let u = if b >= 0.0 { f - eps } else { f + eps };
            if u > self.up {
                self.up = u;
                self.up_idx = k;
            }
        }
        if b > -c {
            let l = if b <= 0.0 { f + eps } else { f - eps };
            self.low = self.low.min(l);
        }
        self.free += usize::from(b != 0.0 && b.abs() < c);
    }
}

impl SolverState {
    fn new(y: &[f64], c: f64, eps: f64) -> Self {
        Self {
            c,
            eps,
            beta: vec![0.0; y.len()],
            grad: y.to_vec(),
            objective: 0.0,
            row_i: vec![0.0; y.len()],
            row_j: vec![0.0; y.len()],
        }
    }

    /// Returns the final state, the number of updates and the final violation.
    fn run<G: Gram>(
        mut self,
        gram: &G,
        settings: &SolverSettings,
        mut trace: Option<&mut Vec<f64>>,
    ) -> (Self, usize, f64) {
        let n = self.beta.len();
        let budget = settings.iteration_budget(n);
        let mut iterations = 0;
        let mut stalled = 0usize;
        let mut since_face = 0usize;
        let mut scan = self.scan();
        let violation = loop {
            let violation = (scan.up - scan.low).max(0.0);
            if violation <= settings.tol || iterations >= budget {
                break violation;
            }
            // Pair updates crawl along ill-conditioned directions of the
            // free set; a periodic Newton step on the current face fixes that.
            let m = scan.free;
            let face_cost = (m * m * m + n * m) / (3 * n);
            if (2..=FACE_SOLVE_MAX).contains(&m) && since_face >= face_cost.max(10) {
                since_face = 0;
                if self.face_step(gram) {
                    scan = self.scan();
                    iterations += 1;
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(self.objective);
                    }
                    continue;
                }
            }
            let i = scan.up_idx;
            let Some(j) = self.partner(gram, i, scan.up) else {
                break violation;
            };
            let moved = match self.pair_step(gram, i, j) {
                Some(next) => {
                    scan = next;
                    true
                }
                None => false,
            };
            iterations += 1;
            since_face += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective);
            }
            if moved {
                stalled = 0;
            } else {
                // Rounding left no representable move for this pair.
                stalled += 1;
                if stalled > n {
                    break violation;
                }
            }
        };
        (self, iterations, violation)
    }

    /// Maximal violating pair bounds and the free-set size.
    fn scan(&self) -> Scan {
        let (c, eps) = (self.c, self.eps);
        let mut out = Scan::new();
        for (k, (&b, &f)) in self.beta.iter().zip(&self.grad).enumerate() {
            out.push(k, b, f, c, eps);
        }
        out
    }

    /// Second-order choice of the coefficient to move down against `i`.
    /// Leaves row `i` of the Gram matrix in `row_i`.
    fn partner<G: Gram>(&mut self, gram: &G, i: usize, m_up: f64) -> Option<usize> {
        let (c, eps) = (self.c, self.eps);
        gram.row(i, &mut self.row_i);
        let mut pick = (f64::NEG_INFINITY, None);
        for (k, ((&b, &f), &kik)) in self
            .beta
            .iter()
            .zip(&self.grad)
            .zip(&self.row_i)
            .enumerate()
        {
            if b <= -c {
                continue;
            }
            let l = if b <= 0.0 { f + eps } else { f - eps };
            let gap = m_up - l;
            if gap > 0.0 {
                let eta = (2.0 - 2.0 * kik).max(1e-12);
                let score = gap * gap / eta;
                if score > pick.0 {
                    pick = (score, Some(k));
                }
            }
        }
        pick.1
    }

    /// Exact line search along `e_i - e_j`. Expects row `i` in `row_i`.
    /// Returns the scan of the updated state, or `None` when nothing moved.
    fn pair_step<G: Gram>(&mut self, gram: &G, i: usize, j: usize) -> Option<Scan> {
        let (c, eps) = (self.c, self.eps);
        let (a, cj) = (self.beta[i], self.beta[j]);
        let kij = gram.k(i, j);
        let eta = (2.0 - 2.0 * kij).max(0.0);
        let lo = (-c - a).max(cj - c);
        let hi = (c - a).min(cj + c);
        let g = self.grad[i] - self.grad[j];
        let (t, kind) = pair_step(eta, g, eps, a, cj, lo, hi);

        // Land exactly on bounds and kinks so coefficient status stays exact.
        let sum = a + cj;
        let (new_i, new_j) = match kind {
            StepKind::KinkI => (0.0, sum),
            StepKind::KinkJ => (sum, 0.0),
            StepKind::Upper if hi == c - a => (c, sum - c),
            StepKind::Upper => (sum + c, -c),
            StepKind::Lower if lo == -c - a => (-c, sum + c),
            StepKind::Lower => (sum - c, c),
            StepKind::Interior => (a + t, cj - t),
        };
        let (new_i, new_j) = (new_i.clamp(-c, c), new_j.clamp(-c, c));
        let di = new_i - a;
        let dj = new_j - cj;
        if di == 0.0 && dj == 0.0 {
            return None;
        }
        self.beta[i] = new_i;
        self.beta[j] = new_j;
        // Exact change of the objective for the realised step.
        self.objective +=
            g * di - 0.5 * eta * di * di - eps * (new_i.abs() - a.abs() + new_j.abs() - cj.abs());
        gram.row(j, &mut self.row_j);
        let mut scan = Scan::new();
        for (k, (((f, ri), rj), &b)) in self
            .grad
            .iter_mut()
            .zip(&self.row_i)
            .zip(&self.row_j)
            .zip(&self.beta)
            .enumerate()
        {
            *f -= di * ri + dj * rj;
            scan.push(k, b, *f, c, eps);
        }
        Some(scan)
    }

    /// Newton steps on the face where free coefficients keep their sign and
    /// all others stay put. Each step is an exact line search truncated at
    /// the first coefficient to reach zero or a bound; that coefficient then
    /// leaves the face and the solve repeats on the smaller face.
    fn face_step<G: Gram>(&mut self, gram: &G) -> bool {
        let (c, eps) = (self.c, self.eps);
        let free: Vec<usize> = (0..self.beta.len())
            .filter(|&k| self.beta[k] != 0.0 && self.beta[k].abs() < c)
            .collect();
        let m = free.len();
        let kff = DMatrix::from_fn(m, m, |r, s| gram.k(free[r], free[s]));
        let mut beta_f: Vec<f64> = free.iter().map(|&k| self.beta[k]).collect();
        let sign: Vec<f64> = beta_f.iter().map(|b| b.signum()).collect();
        let mut g: Vec<f64> = free
            .iter()
            .zip(&sign)
            .map(|(&k, s)| self.grad[k] - eps * s)
            .collect();
        let mut active: Vec<usize> = (0..m).collect();
        let mut gain_total = 0.0;

        while active.len() >= 2 {
            let p = active.len();
            let sub = DMatrix::from_fn(p, p, |r, s| kff[(active[r], active[s])]);
            let mut ridge = sub.clone();
            for r in 0..p {
                ridge[(r, r)] += FACE_RIDGE;
            }
            let Some(chol) = ridge.cholesky() else {
                break;
            };
            let gs = DVector::from_iterator(p, active.iter().map(|&r| g[r]));
            let u = chol.solve(&gs);
            let v = chol.solve(&DVector::from_element(p, 1.0));
            let v_sum = v.sum();
            if !(v_sum.abs() > 0.0) {
                break;
            }
            let mut dir = &u + &v * (-u.sum() / v_sum);
            // Cancellation in an ill-conditioned solve can leave a visible sum.
            let mean = dir.mean();
            dir.add_scalar_mut(-mean);
            let slope = gs.dot(&dir);
            if !(slope > 0.0) || !slope.is_finite() {
                break;
            }
            let curv = dir.dot(&(&sub * &dir)).max(0.0);
            let mut t = if curv > 0.0 {
                slope / curv
            } else {
                f64::INFINITY
            };
            let mut block = None;
            for (q, &r) in active.iter().enumerate() {
                let (b, d) = (beta_f[r], dir[q]);
                if d == 0.0 {
                    continue;
                }
                let target = match (sign[r] > 0.0, d > 0.0) {
                    (true, true) => c,
                    (false, false) => -c,
                    _ => 0.0,
                };
                let limit = (target - b) / d;
                if limit < t {
                    t = limit;
                    block = Some((q, target));
                }
            }
            if !(t > 0.0) || !t.is_finite() {
                break;
            }
            let mut delta = DVector::zeros(p);
            for (q, &r) in active.iter().enumerate() {
                let b = beta_f[r];
                let nb = match block {
                    Some((bq, target)) if bq == q => target,
                    _ if sign[r] > 0.0 => (b + t * dir[q]).clamp(0.0, c),
                    _ => (b + t * dir[q]).clamp(-c, 0.0),
                };
                delta[q] = nb - b;
            }
            let k_delta = &sub * &delta;
            let gain = gs.dot(&delta) - 0.5 * delta.dot(&k_delta);
            if !(gain > 0.0) || delta.sum().abs() > 1e-13 * c {
                break;
            }
            for (q, &r) in active.iter().enumerate() {
                beta_f[r] += delta[q];
            }
            // Gradient on the whole original face, so removed entries stay exact.
            for (r, gr) in g.iter_mut().enumerate() {
                let mut s = 0.0;
                for (q, &a) in active.iter().enumerate() {
                    s += kff[(r, a)] * delta[q];
                }
                *gr -= s;
            }
            gain_total += gain;
            match block {
                Some((bq, target)) => {
                    beta_f[active[bq]] = target;
                    active.remove(bq);
                }
                None => break,
            }
        }

        if !(gain_total > 0.0) {
            return false;
        }
        let delta: Vec<(usize, f64)> = free
            .iter()
            .zip(&beta_f)
            .filter_map(|(&k, &nb)| {
                let d = nb - self.beta[k];
                (d != 0.0).then_some((k, d))
            })
            .collect();
        for &(k, d) in &delta {
            self.beta[k] += d;
        }
        for (&k, &nb) in free.iter().zip(&beta_f) {
            if nb == 0.0 || nb.abs() == c {
                self.beta[k] = nb;
            }
        }
        for (k, f) in self.grad.iter_mut().enumerate() {
            let mut s = 0.0;
            for &(fk, d) in &delta {
                s += d * gram.k(fk, k);
            }
            *f -= s;
        }
        self.objective += gain_total;
        true
    }
}

fn compute_bias(beta: &[f64], f_grad: &[f64], c: f64, eps: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for (&b, &f) in beta.iter().zip(f_grad) {
        if b > 0.0 && b < c {
            free_sum += f - eps;
            free_n += 1;
        } else if b < 0.0 && b > -c {
            free_sum += f + eps;
            free_n += 1;
        } else if b == 0.0 {
            lb = lb.max(f - eps);
            ub = ub.min(f + eps);
        } else if b >= c {
            ub = ub.min(f - eps);
        } else {
            lb = lb.max(f + eps);
        }
    }
    if free_n > 0 {
        return free_sum / free_n as f64;
    }
    match (lb.is_finite(), ub.is_finite()) {
        (true, true) => 0.5 * (lb + ub),
        (true, false) => lb,
        (false, true) => ub,
        (false, false) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn gamma_scale_examples() {
        // Two points at distance 1 have population variance 0.25.
        assert!((gamma_scale(&[0.0, 1.0]).unwrap() - 4.0).abs() < 1e-12);
        // {-1, 1}: variance 1.
        assert!((gamma_scale(&[-1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(gamma_scale(&[3.0, 3.0]), Err(SvrError::DegenerateFeature));
    }

    #[test]
    fn gamma_scale_of_uniform_ordinals() {
        let n = 4001usize;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        // Discrete uniform on {0, 1/(n-1), ..., 1}: variance (n+1) / (12 (n-1)).
        let var = (n as f64 + 1.0) / (12.0 * (n as f64 - 1.0));
        let g = gamma_scale(&xs).unwrap();
        assert!((g - 1.0 / var).abs() < 1e-9);
        assert!((g - 12.0).abs() < 0.01);
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(rbf_kernel(0.3, 7.0, 0.0), 1.0);
        assert_eq!(rbf_kernel(0.3, 0.3, 5.0), 1.0);
        assert!((rbf_kernel(0.0, 1.0, 1.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn constant_targets_give_constant_model() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y = vec![0.42; 20];
        let p = SvrHyperParams::new(1.0, 0.1, 1.0).unwrap();
        let (m, r) = train_svr(&x, &y, p, &settings()).unwrap();
        assert!(r.converged);
        assert!(m.beta().is_empty());
        assert!((m.bias() - 0.42).abs() < 1e-15);
        assert!((m.predict(3.0) - 0.42).abs() < 1e-15);
    }

    #[test]
    fn single_sample() {
        let p = SvrHyperParams::new(0.5, 0.0, 2.0).unwrap();
        let (m, r) = train_svr(&[0.2], &[0.7], p, &settings()).unwrap();
        assert!(r.converged);
        assert!(m.beta().is_empty());
        assert_eq!(m.bias(), 0.7);
    }

    #[test]
    fn zero_epsilon_is_accepted() {
        let x = [0.0, 0.5, 1.0];
        let y = [0.0, 1.0, 0.0];
        let p = SvrHyperParams::new(10.0, 0.0, 4.0).unwrap();
        let (m, r) = train_svr(&x, &y, p, &settings()).unwrap();
        assert!(r.converged);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict(*xi) - yi).abs() < 1e-2);
        }
    }

    #[test]
    fn zero_gamma_predicts_constant() {
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let p = SvrHyperParams::new(1.0, 0.1, 0.0).unwrap();
        let (m, _) = train_svr(&x, &y, p, &settings()).unwrap();
        let v0 = m.predict(-100.0);
        for probe in [-1.0, 0.0, 0.5, 2.0, 1e6] {
            assert!((m.predict(probe) - v0).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_kernel_expansion() {
        let p = SvrHyperParams::new(1.0, 0.1, 1.5).unwrap();
        let m = SvrModel::from_parts(vec![0.1, 0.8], vec![0.6, -0.6], 0.25, p).unwrap();
        let x: f64 = 0.45;
        let by_hand =
            0.6 * (-1.5 * (0.1 - x).powi(2)).exp() - 0.6 * (-1.5 * (0.8 - x).powi(2)).exp() + 0.25;
        assert_eq!(m.predict(x), by_hand);
        // Far from every support input the expansion decays to the bias.
        assert!((m.predict(1e3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SvrHyperParams::new(0.0, 0.1, 1.0).is_err());
        assert!(SvrHyperParams::new(1.0, -0.1, 1.0).is_err());
        assert!(SvrHyperParams::new(1.0, 0.1, -1.0).is_err());
        let p = SvrHyperParams::new(1.0, 0.1, 1.0).unwrap();
        assert!(train_svr(&[0.0, 1.0], &[0.0], p, &settings()).is_err());
        assert!(train_svr(&[], &[], p, &settings()).is_err());
        let bad = SolverSettings {
            tol: 0.0,
            max_iter: None,
        };
        assert!(train_svr(&[0.0], &[0.0], p, &bad).is_err());
    }

    #[test]
    fn budget_exhaustion_returns_feasible_model() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() * 0.5 + 0.5).collect();
        let p = SvrHyperParams::new(1.0, 0.01, 5.0).unwrap();
        let s = SolverSettings {
            tol: 1e-3,
            max_iter: Some(3),
        };
        let (m, r) = train_svr(&x, &y, p, &s).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(r.kkt_violation > 1e-3);
        assert!(m.beta().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn toeplitz_and_dense_paths_agree() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + 0.1 * (20.0 * v).sin()).collect();
        let p = SvrHyperParams::new(0.8, 0.05, 3.0).unwrap();
        let tight = SolverSettings {
            tol: 1e-9,
            max_iter: None,
        };
        let (uniform, _) = train_svr(&x, &y, p, &tight).unwrap();
        // Perturb one input by less than float noise elsewhere to force the dense path.
        let mut xj = x.clone();
        xj[7] += 1e-9;
        let (dense, _) = train_svr(&xj, &y, p, &tight).unwrap();
        for v in [0.0, 0.3, 0.77, 1.1] {
            assert!((uniform.predict(v) - dense.predict(v)).abs() < 1e-6);
        }
    }

    #[test]
    fn dump_lists_parameters() {
        let p = SvrHyperParams::new(1.0, 0.1, 1.5).unwrap();
        let m = SvrModel::from_parts(vec![0.1], vec![0.0], 0.25, p).unwrap();
        let d = m.dump();
        assert!(d.contains("bias = 2.5e-1"));
        assert!(d.contains("support_vectors = 1"));
    }

    #[test]
    fn fitted_values_match_prediction() {
        let x: Vec<f64> = (0..300).map(|i| i as f64 / 299.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| (3.0 * v).sin() + 0.2 * (40.0 * v).cos())
            .collect();
        let p = SvrHyperParams::new(5.0, 0.02, 8.0).unwrap();
        let (m, r) = train_svr(&x, &y, p, &settings()).unwrap();
        let direct = m.predict_many(&x);
        for (a, b) in r.fitted.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn lattice_prediction_matches_direct() {
        let step = 1.0 / 199.0;
        let x: Vec<f64> = (0..200).map(|i| i as f64 * step).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v - 0.3 * (9.0 * v).sin()).collect();
        let p = SvrHyperParams::new(0.7, 0.01, 4.0).unwrap();
        let (m, _) = train_svr(&x, &y, p, &settings()).unwrap();
        let ahead: Vec<f64> = (200..300).map(|i| i as f64 * step).collect();
        let fast = m.predict_on_lattice(&ahead, step).unwrap();
        for (a, b) in fast.iter().zip(m.predict_many(&ahead)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.predict_on_lattice(&[0.5 * step], step).is_none());
    }
}
