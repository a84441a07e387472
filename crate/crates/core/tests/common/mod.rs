//! Independent reference evaluators. Each one recomputes a quantity the
//! straightforward way, sharing no code with the library implementation.

#![allow(dead_code)]

pub mod checks;

use contesta_core::cohort::{Demographics, Gender, Label};
use contesta_core::models::Classifier;

pub fn mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let sd = var.sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Largest signed lagged correlation of the z-scored series, each lag's
/// inner product averaged over its overlap.
pub fn max_xc(hr: &[f64], spo2: &[f64], max_lag: usize) -> f64 {
    let a = zscore(hr);
    let b = zscore(spo2);
    let n = a.len() as i64;
    let mut best = f64::NEG_INFINITY;
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        let mut s = 0.0;
        let mut count = 0;
        for i in 0..n {
            let j = i + lag;
            if j >= 0 && j < n {
                s += a[i as usize] * b[j as usize];
                count += 1;
            }
        }
        best = best.max(s / count as f64);
    }
    best.clamp(-1.0, 1.0)
}

pub fn sample_asymmetry(hr: &[f64]) -> f64 {
    let mut s = hr.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let m = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    let mut dec = 0.0;
    let mut acc = 0.0;
    for &x in hr {
        if x < m {
            dec += (m - x) * (m - x);
        } else if x > m {
            acc += (x - m) * (x - m);
        }
    }
    (dec / n as f64) / (acc / n as f64)
}

pub fn gower(a: &Demographics, b: &Demographics, ranges: [(f64, f64); 3], weights: [f64; 4]) -> f64 {
    let d = |x: f64, y: f64, r: (f64, f64)| ((x - y).abs() / (r.1 - r.0)).min(1.0);
    let parts = [
        d(a.ga, b.ga, ranges[0]),
        d(a.w, b.w, ranges[1]),
        d(a.pna, b.pna, ranges[2]),
        if a.gen == b.gen { 0.0 } else { 1.0 },
    ];
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..4 {
        num += weights[k] * parts[k];
        den += weights[k];
    }
    num / den
}

/// Pairwise concordance with half credit for ties.
pub fn auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, li) in labels.iter().enumerate() {
        if *li != Label::LosNec {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if *lj != Label::Healthy {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

/// Partial dependence by the double loop over grid values and records.
pub fn pdp(model: &dyn Classifier, rows: &[Vec<f64>], cols: &[usize], grid: &[Vec<f64>]) -> Vec<f64> {
    grid.iter()
        .map(|point| {
            let mut total = 0.0;
            for row in rows {
                let mut x = row.clone();
                for (c, v) in cols.iter().zip(point) {
                    x[*c] = *v;
                }
                total += model.score(&x);
            }
            total / rows.len() as f64
        })
        .collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// VIF of each column from the normal equations of an intercept model.
pub fn vif_normal_equations(columns: &[Vec<f64>]) -> Vec<f64> {
    let n = columns[0].len();
    (0..columns.len())
        .map(|k| {
            let y = &columns[k];
            let design: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut row = vec![1.0];
                    row.extend(columns.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, c)| c[i]));
                    row
                })
                .collect();
            let p = design[0].len();
            let xtx: Vec<Vec<f64>> = (0..p)
                .map(|a| (0..p).map(|b| design.iter().map(|r| r[a] * r[b]).sum()).collect())
                .collect();
            let xty: Vec<f64> = (0..p).map(|a| design.iter().zip(y).map(|(r, v)| r[a] * v).sum()).collect();
            let beta = solve(xtx, xty);
            let ym = mean(y);
            let mut ss_res = 0.0;
            let mut ss_tot = 0.0;
            for (r, v) in design.iter().zip(y) {
                let fit: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
                ss_res += (v - fit) * (v - fit);
                ss_tot += (v - ym) * (v - ym);
            }
            ss_tot / ss_res
        })
        .collect()
}

pub fn gender(female: bool) -> Gender {
    if female {
        Gender::Female
    } else {
        Gender::Male
    }
}
