//! Pearson and partial Pearson correlation, and the Wilcoxon signed-rank test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest effective sample size for which the exact null distribution is
/// used; beyond it the normal approximation takes over.
pub const WILCOXON_EXACT_CUTOFF: usize = 20;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("not enough samples: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("covariate design is rank deficient")]
    RankDeficient,
    #[error("input contains non-finite values")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation. Inputs must have equal length ≥ 3 and
/// non-zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::InsufficientData(format!("pearson needs ≥ 3 samples, got {}", x.len())));
    }
    check_finite(x)?;
    check_finite(y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    for (name, ss, xs) in [("x", sxx, x), ("y", syy, y)] {
        // Relative to the data's magnitude so that rounding residue around a
        // constant column is still recognised as zero variance.
        let scale = xs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if ss.sqrt() <= 1e-12 * scale * (xs.len() as f64).sqrt() || ss == 0.0 {
            return Err(StatsError::Degenerate(format!("{name} has zero variance")));
        }
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialCorrelationResult {
    pub r: f64,
    pub n: usize,
    pub n_covariates: usize,
}

/// Residuals of `ys` (one column per target) after least-squares regression
/// on `[1, covariates]`, via Householder QR of the design.
fn residualize(targets: &[&[f64]], covariates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = targets[0].len();
    let k = covariates.len() + 1;
    let design = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { covariates[j - 1][i] });
    let col_scale = (0..k).map(|j| design.column(j).norm()).fold(0.0f64, f64::max);
    let qr = design.qr();
    let r = qr.r();
    let tol = 1e-10 * col_scale.max(1.0);
    if (0..k).any(|j| r[(j, j)].abs() <= tol) {
        return Err(StatsError::RankDeficient);
    }
    let q = qr.q();
    Ok(targets
        .iter()
        .map(|t| {
            let v = DVector::from_column_slice(t);
            let fitted = &q * (q.transpose() * &v);
            (v - fitted).iter().copied().collect()
        })
        .collect())
}

/// Pearson correlation of `x` and `y` after regressing both on an intercept
/// plus the covariate columns in `z`.
pub fn partial_pearson(x: &[f64], y: &[f64], z: &[Vec<f64>]) -> Result<PartialCorrelationResult> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if let Some(bad) = z.iter().find(|c| c.len() != n) {
        return Err(StatsError::LengthMismatch(n, bad.len()));
    }
    if n <= z.len() + 2 {
        return Err(StatsError::InsufficientData(format!(
            "{n} samples for {} covariates",
            z.len()
        )));
    }
    if z.is_empty() {
        return Ok(PartialCorrelationResult {
            r: pearson(x, y)?,
            n,
            n_covariates: 0,
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    for col in z {
        check_finite(col)?;
    }
    let residuals = residualize(&[x, y], z)?;
    for (name, res, orig) in [("x", &residuals[0], x), ("y", &residuals[1], y)] {
        let m = mean(orig);
        let spread = orig.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt();
        let left = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        if left <= 1e-9 * spread || spread == 0.0 {
            return Err(StatsError::Degenerate(format!(
                "{name} is fully explained by the covariates"
            )));
        }
    }
    Ok(PartialCorrelationResult {
        r: pearson(&residuals[0], &residuals[1])?,
        n,
        n_covariates: z.len(),
    })
}

/// 1-based ranks with ties receiving the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences `a - b`.
    pub w_statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
}

/// Paired two-sided Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are discarded. Tied absolute differences get average
/// ranks. For `n_effective ≤ 20` the p-value comes from the exact null
/// distribution of W⁺ over all 2ⁿ sign assignments; otherwise from the
/// normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(a, b, None)
}

/// Largest `n_effective` the exact null distribution is computed for.
pub const WILCOXON_EXACT_MAX: usize = 60;

/// As [`wilcoxon_signed_rank`], optionally forcing the p-value method.
/// Forcing `Exact` beyond [`WILCOXON_EXACT_MAX`] non-zero differences is an
/// error.
pub fn wilcoxon_signed_rank_with(a: &[f64], b: &[f64], method: Option<WilcoxonMethod>) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(StatsError::Degenerate("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let method = method.unwrap_or(if n <= WILCOXON_EXACT_CUTOFF {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::NormalApprox
    });
    if method == WilcoxonMethod::Exact {
        if n > WILCOXON_EXACT_MAX {
            return Err(StatsError::InsufficientData(format!(
                "exact test supports at most {WILCOXON_EXACT_MAX} non-zero differences, got {n}"
            )));
        }
        let p = exact_two_sided(&ranks, w_plus);
        return Ok(WilcoxonResult {
            w_statistic: w_plus,
            p_value: p,
            n_effective: n,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let p = statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
    Ok(WilcoxonResult {
        w_statistic: w_plus,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        n_effective: n,
        method: WilcoxonMethod::NormalApprox,
    })
}

/// Exact two-sided p-value of W⁺ under the sign-flip null, counted by
/// subset-sum over doubled ranks (average ranks are multiples of ½).
fn exact_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed = (w_plus * 2.0).round() as usize;
    let all = (1u64 << ranks.len()) as f64;
    let lower: u64 = counts[..=observed].iter().sum();
    let upper: u64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}
