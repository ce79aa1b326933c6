//! Savitzky–Golay smoothing of metric series.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Window lengths are bumped to the nearest odd value of at least 3.
pub fn effective_window(window: usize) -> usize {
    let w = window.max(3);
    if w.is_multiple_of(2) {
        w + 1
    } else {
        w
    }
}

/// Weights `c` such that `sum_j c[j] * y[j]` is the least-squares polynomial
/// of degree `order` through `y[0..len]`, evaluated at index `at`.
fn fit_weights(len: usize, order: usize, at: usize) -> Result<Vec<f64>> {
    let half = (len - 1) as f64 / 2.0;
    let x = |j: usize| (j as f64 - half) / half.max(1.0);
    let design = DMatrix::from_fn(len, order + 1, |j, p| x(j).powi(p as i32));
    let pinv = design
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Degenerate(format!("smoothing fit: {e}")))?;
    let xa = x(at);
    Ok((0..len)
        .map(|j| (0..=order).map(|p| xa.powi(p as i32) * pinv[(p, j)]).sum())
        .collect())
}

/// Interior points use the centered window. The first and last `window / 2`
/// points are read off the polynomial fitted to the first or last full
/// window, so polynomials up to `poly_order` pass through unchanged.
pub fn smooth_series(values: &[f64], window: usize, poly_order: usize) -> Result<Vec<f64>> {
    let w = effective_window(window);
    if poly_order >= w {
        return Err(Error::InvalidArgument(format!(
            "polynomial order {poly_order} must be below the window length {w}"
        )));
    }
    if values.len() < w {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is shorter than the smoothing window {w}",
            values.len()
        )));
    }
    let h = w / 2;
    let n = values.len();
    let center = fit_weights(w, poly_order, h)?;
    let apply = |c: &[f64], start: usize| c.iter().zip(&values[start..start + w]).map(|(a, b)| a * b).sum::<f64>();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(h).min(n - w);
        let y = if start + h == i {
            apply(&center, start)
        } else {
            apply(&fit_weights(w, poly_order, i - start)?, start)
        };
        out.push(y);
    }
    Ok(out)
}
