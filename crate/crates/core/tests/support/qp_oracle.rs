//! Dense primal-dual interior-point solver for the epsilon-SVR dual in its
//! split `(alpha, alpha*)` form:
//!
//! ```text
//! min 1/2 z'Hz + q'z   s.t.  a'z = 0,  0 <= z <= C
//! H = [K -K; -K K],  q = [eps - y; eps + y],  a = [1; -1]
//! ```
//!
//! Completely independent of the pairwise solver under test.

use nalgebra::{DMatrix, DVector};

pub struct OracleSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub bias: f64,
}

fn kernel(x: f64, z: f64, gamma: f64) -> f64 {
    (-gamma * (x - z) * (x - z)).exp()
}

pub fn solve(x: &[f64], y: &[f64], c: f64, eps: f64, gamma: f64) -> OracleSolution {
    let n = x.len();
    let m = 2 * n;
    let k = DMatrix::from_fn(n, n, |i, j| kernel(x[i], x[j], gamma));
    let h = DMatrix::from_fn(m, m, |i, j| {
        let s = if (i < n) == (j < n) { 1.0 } else { -1.0 };
        s * k[(i % n, j % n)]
    });
    let q = DVector::from_fn(m, |i, _| if i < n { eps - y[i] } else { eps + y[i - n] });
    let a = DVector::from_fn(m, |i, _| if i < n { 1.0 } else { -1.0 });

    let mut z = DVector::from_element(m, 0.5 * c);
    let mut w1 = DVector::from_element(m, 1.0);
    let mut w2 = DVector::from_element(m, 1.0);
    let mut nu = 0.0;

    for _ in 0..500 {
        let s = DVector::from_fn(m, |i, _| c - z[i]);
        let mu = (z.dot(&w1) + s.dot(&w2)) / (2 * m) as f64;
        let r_d = &h * &z + &q - &a * nu - &w1 + &w2;
        let r_p = a.dot(&z);
        if mu < 1e-15 && r_d.amax() < 1e-13 && r_p.abs() < 1e-13 {
            break;
        }
        let sigma_mu = 0.1 * mu;

        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for i in 0..m {
            for j in 0..m {
                kkt[(i, j)] = h[(i, j)];
            }
            kkt[(i, i)] += w1[i] / z[i] + w2[i] / s[i];
            kkt[(i, m)] = -a[i];
            kkt[(m, i)] = a[i];
            rhs[i] = -r_d[i] + sigma_mu / z[i] - w1[i] - sigma_mu / s[i] + w2[i];
        }
        rhs[m] = -r_p;
        let step = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
        let dz = step.rows(0, m).into_owned();
        let dnu = step[m];
        let dw1 = DVector::from_fn(m, |i, _| (sigma_mu - z[i] * w1[i] - w1[i] * dz[i]) / z[i]);
        let dw2 = DVector::from_fn(m, |i, _| (sigma_mu - s[i] * w2[i] + w2[i] * dz[i]) / s[i]);

        let mut alpha: f64 = 1.0;
        for i in 0..m {
            let limits = [
                (z[i], dz[i]),
                (s[i], -dz[i]),
                (w1[i], dw1[i]),
                (w2[i], dw2[i]),
            ];
            for (v, dv) in limits {
                if dv < 0.0 {
                    alpha = alpha.min(-v / dv);
                }
            }
        }
        let alpha = (0.995 * alpha).min(1.0);
        z += &dz * alpha;
        w1 += &dw1 * alpha;
        w2 += &dw2 * alpha;
        nu += dnu * alpha;
    }

    // Collapse the split variables and clean interior-point residue.
    let floor = 1e-9 * c;
    let beta: Vec<f64> = (0..n)
        .map(|i| {
            let b = z[i] - z[i + n];
            if b.abs() < floor {
                0.0
            } else if b > c - floor {
                c
            } else if b < -c + floor {
                -c
            } else {
                b
            }
        })
        .collect();
    let objective = beta_objective(x, y, &beta, eps, gamma);
    let bias = bias_rule(x, y, &beta, c, eps, gamma);
    OracleSolution {
        beta,
        objective,
        bias,
    }
}

/// `-1/2 beta'K beta - eps |beta|_1 + y'beta`.
pub fn beta_objective(x: &[f64], y: &[f64], beta: &[f64], eps: f64, gamma: f64) -> f64 {
    let n = x.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * beta[j] * kernel(x[i], x[j], gamma);
        }
    }
    -0.5 * quad - eps * beta.iter().map(|b| b.abs()).sum::<f64>()
        + y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

/// Bias by the KKT rule: mean over free coefficients of `y - Kbeta -+ eps`,
/// otherwise the midpoint of the admissible interval.
pub fn bias_rule(x: &[f64], y: &[f64], beta: &[f64], c: f64, eps: f64, gamma: f64) -> f64 {
    let n = x.len();
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            y[i] - (0..n)
                .map(|j| beta[j] * kernel(x[i], x[j], gamma))
                .sum::<f64>()
        })
        .collect();
    let free: Vec<f64> = (0..n)
        .filter(|&i| beta[i] != 0.0 && beta[i].abs() < c)
        .map(|i| resid[i] - eps * beta[i].signum())
        .collect();
    if !free.is_empty() {
        return free.iter().sum::<f64>() / free.len() as f64;
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..n {
        if beta[i] == 0.0 {
            lo = lo.max(resid[i] - eps);
            hi = hi.min(resid[i] + eps);
        } else if beta[i] >= c {
            hi = hi.min(resid[i] - eps);
        } else {
            lo = lo.max(resid[i] + eps);
        }
    }
    0.5 * (lo + hi)
}

pub fn predict(x: &[f64], beta: &[f64], bias: f64, gamma: f64, at: f64) -> f64 {
    x.iter()
        .zip(beta)
        .map(|(xi, b)| b * kernel(*xi, at, gamma))
        .sum::<f64>()
        + bias
}
