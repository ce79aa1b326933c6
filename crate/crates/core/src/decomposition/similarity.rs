//! Representation and distribution similarity diagnostics.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

fn centered(m: ArrayView2<f64>) -> Array2<f64> {
    let mean = m.mean_axis(Axis(0)).unwrap();
    &m - &mean
}

fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Linear centered kernel alignment between two output matrices with the
/// same rows (samples).
pub fn cka_similarity(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    if a.nrows() < 2 {
        return Err(Error::InvalidArgument("CKA needs at least 2 rows".into()));
    }
    let (ac, bc) = (centered(a), centered(b));
    let cross = frobenius_sq(&ac.t().dot(&bc));
    let aa = frobenius_sq(&ac.t().dot(&ac)).sqrt();
    let bb = frobenius_sq(&bc.t().dot(&bc)).sqrt();
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Degenerate("CKA of a zero-variance matrix".into()));
    }
    Ok((cross / (aa * bb)).clamp(0.0, 1.0))
}

/// Mean CKA over all unordered pairs of output matrices.
pub fn mean_pairwise_cka(outputs: &[Array2<f64>]) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two output matrices".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            sum += cka_similarity(outputs[i].view(), outputs[j].view())?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows.
pub fn median_heuristic(xa: ArrayView2<f64>, xb: ArrayView2<f64>) -> f64 {
    let rows: Vec<_> = xa.rows().into_iter().chain(xb.rows()).collect();
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    /// Estimator value, may dip below zero for the unbiased variant.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub value: f64,
    pub bandwidth: f64,
}

fn kernel_mean(x: ArrayView2<f64>, y: ArrayView2<f64>, gamma: f64, skip_diagonal: bool) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            sum += (-gamma * sq_dist(xi, yj)).exp();
            count += 1;
        }
    }
    sum / count as f64
}

fn mmd(xa: ArrayView2<f64>, xb: ArrayView2<f64>, bandwidth: Option<f64>, unbiased: bool) -> Result<MmdEstimate> {
    if xa.nrows() < 2 || xb.nrows() < 2 {
        return Err(Error::InvalidArgument("MMD needs at least 2 rows per set".into()));
    }
    if xa.ncols() != xb.ncols() {
        return Err(Error::DimensionMismatch {
            expected: xa.ncols(),
            actual: xb.ncols(),
        });
    }
    let sigma = match bandwidth {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {s}"))),
        None => {
            let m = median_heuristic(xa, xb);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let raw = kernel_mean(xa, xa, gamma, unbiased) + kernel_mean(xb, xb, gamma, unbiased)
        - 2.0 * kernel_mean(xa, xb, gamma, false);
    Ok(MmdEstimate {
        raw,
        value: raw.max(0.0),
        bandwidth: sigma,
    })
}

/// Unbiased squared MMD with a Gaussian kernel `exp(-||x - x'||^2 / (2 sigma^2))`.
/// `bandwidth = None` uses the median pairwise distance.
pub fn mmd_rbf(xa: ArrayView2<f64>, xb: ArrayView2<f64>, bandwidth: Option<f64>) -> Result<MmdEstimate> {
    mmd(xa, xb, bandwidth, true)
}

/// Biased (V-statistic) squared MMD; exactly zero for identical sets.
pub fn mmd_rbf_biased(xa: ArrayView2<f64>, xb: ArrayView2<f64>, bandwidth: Option<f64>) -> Result<MmdEstimate> {
    mmd(xa, xb, bandwidth, false)
}
