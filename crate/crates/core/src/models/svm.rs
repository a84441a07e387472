//! RBF-kernel C-SVM trained by SMO on the dual, with a two-parameter
//! sigmoid (Platt) mapping from decision values to probabilities.

use serde::{Deserialize, Serialize};

/// KKT violation tolerance for SMO termination.
pub const KKT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;
const MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub params: SvmParams,
    pub support_vectors: Vec<Vec<f64>>,
    /// alpha_i * y_i for each support vector.
    pub coefficients: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl Svm {
    /// `x` is record-major (already standardized); `y[i]` is true for LosNec.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: SvmParams) -> Self {
        let n = x.len();
        assert!(n > 0 && n == y.len());
        let ys: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| rbf(&x[i], &x[j], params.gamma)).collect())
            .collect();
        let q = |i: usize, j: usize| ys[i] * ys[j] * k[i][j];
        let c = params.c;

        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let upper = |a: f64| a >= c;
        let lower = |a: f64| a <= 0.0;

        let mut iterations = 0;
        while iterations < MAX_ITER {
            // maximal violating pair with second-order selection of j
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..n {
                let in_up = if ys[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
                if in_up && -ys[t] * grad[t] >= gmax {
                    gmax = -ys[t] * grad[t];
                    i_sel = Some(t);
                }
            }
            let Some(i) = i_sel else { break };
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = None;
            let mut obj_min = f64::INFINITY;
            for t in 0..n {
                let (in_low, g) = if ys[t] > 0.0 {
                    (!lower(alpha[t]), grad[t])
                } else {
                    (!upper(alpha[t]), -grad[t])
                };
                if !in_low {
                    continue;
                }
                gmax2 = gmax2.max(g);
                let grad_diff = gmax + g;
                if grad_diff > 0.0 {
                    let quad = k[i][i] + k[t][t] - 2.0 * k[i][t];
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
            let Some(j) = j_sel else { break };
            if gmax + gmax2 < KKT_TOL {
                break;
            }
            iterations += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            if ys[i] != ys[j] {
                let quad = (k[i][i] + k[j][j] + 2.0 * q(i, j)).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (k[i][i] + k[j][j] - 2.0 * q(i, j)).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += q(i, t) * di + q(j, t) * dj;
            }
        }

        // offset from free vectors, or the midpoint of the feasible interval
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut free_sum) = (0usize, 0.0);
        for t in 0..n {
            let yg = ys[t] * grad[t];
            if upper(alpha[t]) {
                if ys[t] < 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else if lower(alpha[t]) {
                if ys[t] > 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 { free_sum / free as f64 } else { 0.5 * (ub + lb) };

        let mut support_vectors = Vec::new();
        let mut coefficients = Vec::new();
        for t in 0..n {
            if alpha[t] > 0.0 {
                support_vectors.push(x[t].clone());
                coefficients.push(alpha[t] * ys[t]);
            }
        }
        Self {
            params,
            support_vectors,
            coefficients,
            rho,
            iterations,
        }
    }

    /// Signed distance proxy; positive means LosNec.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, a)| a * rbf(sv, x, self.params.gamma))
            .sum::<f64>()
            - self.rho
    }
}

/// `P(LosNec | f) = 1 / (1 + exp(a * f + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigmoid {
    pub a: f64,
    pub b: f64,
}

impl Sigmoid {
    pub fn apply(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    /// Newton fit with backtracking on regularized targets (Lin, Lin and
    /// Weng's formulation of Platt scaling).
    pub fn fit(decisions: &[f64], positive: &[bool]) -> Self {
        let prior1 = positive.iter().filter(|&&p| p).count() as f64;
        let prior0 = positive.len() as f64 - prior1;
        let hi = (prior1 + 1.0) / (prior1 + 2.0);
        let lo = 1.0 / (prior0 + 2.0);
        let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

        let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);
        let mut a = 0.0;
        let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
        let objective = |a: f64, b: f64| -> f64 {
            decisions
                .iter()
                .zip(&t)
                .map(|(&f, &ti)| {
                    let z = f * a + b;
                    if z >= 0.0 {
                        ti * z + (1.0 + (-z).exp()).ln()
                    } else {
                        (ti - 1.0) * z + (1.0 + z.exp()).ln()
                    }
                })
                .sum()
        };
        let mut fval = objective(a, b);
        for _ in 0..max_iter {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
            for (&f, &ti) in decisions.iter().zip(&t) {
                let z = f * a + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = ti - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < eps && g2.abs() < eps {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            while step >= min_step {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < min_step {
                break;
            }
        }
        Self { a, b }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..10 {
            let o = (i as f64) * 0.1;
            x.push(vec![-1.0 - o, 0.3 * o]);
            y.push(false);
            x.push(vec![1.0 + o, -0.3 * o]);
            y.push(true);
        }
        (x, y)
    }

    #[test]
    fn separates_blobs() {
        let (x, y) = blobs();
        let m = Svm::fit(&x, &y, SvmParams { c: 10.0, gamma: 0.5 });
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.decision(xi) > 0.0, yi);
        }
        assert!(!m.support_vectors.is_empty());
        let sum: f64 = m.coefficients.iter().sum();
        assert!(sum.abs() < 1e-9, "sum(alpha*y) = {sum}");
    }

    #[test]
    fn box_constraint_holds() {
        let mut x = vec![vec![0.0], vec![0.1], vec![0.2], vec![0.3]];
        x.push(vec![0.15]);
        let y = vec![false, true, false, true, false];
        let m = Svm::fit(&x, &y, SvmParams { c: 0.5, gamma: 1.0 });
        for a in &m.coefficients {
            assert!(a.abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_zero_is_intercept_point() {
        let s = Sigmoid { a: -2.0, b: 0.3 };
        assert!((s.apply(0.0) - 1.0 / (1.0 + 0.3f64.exp())).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_fit_is_monotone_increasing() {
        let f: Vec<f64> = (-10..10).map(|i| i as f64 / 3.0).collect();
        let y: Vec<bool> = f.iter().enumerate().map(|(i, &v)| v > 0.0 || i % 7 == 0).collect();
        let s = Sigmoid::fit(&f, &y);
        assert!(s.a < 0.0);
        assert!(s.apply(2.0) > s.apply(-2.0));
    }
}
