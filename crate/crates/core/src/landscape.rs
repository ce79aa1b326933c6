//! Loss and error of models along a line segment or over a plane in weight
//! space.
//!
//! The plane through anchors `w1, w2, w3` uses the orthonormal basis
//! `u = (w2 - w1) / ||w2 - w1||` and `v` = the component of `w3 - w1`
//! orthogonal to `u`, normalized. Point `(a, b)` is `w1 + a u + b v`.

use std::io::Write;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, ModelSpec, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneBasis {
    pub origin: ParamVector,
    pub u_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub coords_w2: (f64, f64),
    pub coords_w3: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Line,
    Plane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub name: String,
    pub coords: (f64, f64),
    /// Nearest lattice cell `(ia, ib)`.
    pub cell: (usize, usize),
}

/// Loss and error values on a 1D or 2D lattice. `loss[[ib, ia]]` is the
/// value at `(a_values[ia], b_values[ib])`; line grids have a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub kind: GridKind,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub loss: ndarray::Array2<f64>,
    pub error: ndarray::Array2<f64>,
    pub anchors: Vec<Anchor>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn eval_point(params: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<(f64, f64)> {
    let (loss, acc) = evaluate(
        params,
        spec,
        data.features.view(),
        data.one_hot_targets.view(),
        &data.labels,
    )?;
    Ok((loss, 1.0 - acc))
}

/// `beta * w1 + (1 - beta) * w2`.
pub fn interpolate(w1: &ParamVector, w2: &ParamVector, beta: f64) -> ParamVector {
    let values = w1
        .values
        .iter()
        .zip(&w2.values)
        .map(|(a, b)| beta * a + (1.0 - beta) * b)
        .collect();
    ParamVector::new(values, w1.spec_fingerprint)
}

/// Loss and error along the segment; `beta = 1` is `w1`, `beta = 0` is `w2`.
pub fn interpolate_1d(
    w1: &ParamVector,
    w2: &ParamVector,
    betas: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<LandscapeGrid> {
    w1.check_compatible(w2)?;
    w1.check_spec(spec)?;
    if betas.is_empty() {
        return Err(Error::InvalidArgument("no interpolation coefficients".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let points: Vec<(f64, f64)> = betas
        .par_iter()
        .map(|&b| eval_point(&interpolate(w1, w2, b), spec, data))
        .collect::<Result<_>>()?;
    let n = betas.len();
    let nearest = |target: f64| {
        (0..n)
            .min_by(|&i, &j| (betas[i] - target).abs().total_cmp(&(betas[j] - target).abs()))
            .unwrap()
    };
    Ok(LandscapeGrid {
        kind: GridKind::Line,
        a_values: betas.to_vec(),
        b_values: vec![0.0],
        loss: ndarray::Array2::from_shape_fn((1, n), |(_, i)| points[i].0),
        error: ndarray::Array2::from_shape_fn((1, n), |(_, i)| points[i].1),
        anchors: vec![
            Anchor { name: "w1".into(), coords: (1.0, 0.0), cell: (nearest(1.0), 0) },
            Anchor { name: "w2".into(), coords: (0.0, 0.0), cell: (nearest(0.0), 0) },
        ],
    })
}

pub fn build_plane(w1: &ParamVector, w2: &ParamVector, w3: &ParamVector) -> Result<PlaneBasis> {
    w1.check_compatible(w2)?;
    w1.check_compatible(w3)?;
    let u = w2.sub(w1);
    let u_norm = dot(&u, &u).sqrt();
    if u_norm == 0.0 {
        return Err(Error::Degenerate("w1 and w2 coincide".into()));
    }
    let u_hat: Vec<f64> = u.iter().map(|x| x / u_norm).collect();
    let d3 = w3.sub(w1);
    let d3_norm = dot(&d3, &d3).sqrt();
    let proj = dot(&d3, &u_hat);
    let mut v: Vec<f64> = d3.iter().zip(&u_hat).map(|(d, uh)| d - proj * uh).collect();
    // second Gram-Schmidt pass for orthogonality at rounding level
    let again = dot(&v, &u_hat);
    v.iter_mut().zip(&u_hat).for_each(|(x, uh)| *x -= again * uh);
    let v_norm = dot(&v, &v).sqrt();
    if d3_norm == 0.0 || v_norm <= 1e-8 * d3_norm {
        return Err(Error::Degenerate("w3 lies on the line through w1 and w2".into()));
    }
    let v_hat = v.iter().map(|x| x / v_norm).collect();
    Ok(PlaneBasis {
        origin: w1.clone(),
        u_hat,
        v_hat,
        coords_w2: (u_norm, 0.0),
        coords_w3: (proj + again, v_norm),
    })
}

/// `w1 + a u_hat + b v_hat`.
pub fn reconstruct_at(basis: &PlaneBasis, a: f64, b: f64) -> ParamVector {
    let values = basis
        .origin
        .values
        .iter()
        .zip(basis.u_hat.iter().zip(&basis.v_hat))
        .map(|(w, (u, v))| w + a * u + b * v)
        .collect();
    ParamVector::new(values, basis.origin.spec_fingerprint)
}

/// `res` evenly spaced points from `lo` to `hi` inclusive.
pub fn lattice(range: (f64, f64), res: usize) -> Vec<f64> {
    let (lo, hi) = range;
    let span = hi - lo;
    let steps = (res - 1) as f64;
    (0..res).map(|i| lo + (i as f64 * span) / steps).collect()
}

/// Anchor bounding box extended by 20% of its span on each side.
pub fn default_ranges(basis: &PlaneBasis) -> ((f64, f64), (f64, f64)) {
    let xs = [0.0, basis.coords_w2.0, basis.coords_w3.0];
    let ys = [0.0, basis.coords_w2.1, basis.coords_w3.1];
    let extend = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        (lo - 0.2 * span, hi + 0.2 * span)
    };
    (extend(&xs), extend(&ys))
}

fn nearest_index(values: &[f64], target: f64) -> usize {
    (0..values.len())
        .min_by(|&i, &j| (values[i] - target).abs().total_cmp(&(values[j] - target).abs()))
        .unwrap()
}

pub fn eval_plane(
    basis: &PlaneBasis,
    a_range: (f64, f64),
    b_range: (f64, f64),
    res_a: usize,
    res_b: usize,
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<LandscapeGrid> {
    if res_a < 2 || res_b < 2 {
        return Err(Error::InvalidArgument("plane resolution must be >= 2 per axis".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    basis.origin.check_spec(spec)?;
    let a_values = lattice(a_range, res_a);
    let b_values = lattice(b_range, res_b);
    let anchors_at = [
        ("w1", (0.0, 0.0)),
        ("w2", basis.coords_w2),
        ("w3", basis.coords_w3),
    ];
    for (name, (a, b)) in anchors_at {
        let inside = |v: f64, r: (f64, f64)| v >= r.0.min(r.1) && v <= r.0.max(r.1);
        if !inside(a, a_range) || !inside(b, b_range) {
            eprintln!("warning: anchor {name} at ({a:.4}, {b:.4}) lies outside the plotted range");
        }
    }
    let points: Vec<(f64, f64)> = (0..res_a * res_b)
        .into_par_iter()
        .map(|cell| {
            let (ib, ia) = (cell / res_a, cell % res_a);
            eval_point(&reconstruct_at(basis, a_values[ia], b_values[ib]), spec, data)
        })
        .collect::<Result<_>>()?;
    let anchors = anchors_at
        .iter()
        .map(|(name, c)| Anchor {
            name: name.to_string(),
            coords: *c,
            cell: (nearest_index(&a_values, c.0), nearest_index(&b_values, c.1)),
        })
        .collect();
    Ok(LandscapeGrid {
        kind: GridKind::Plane,
        loss: ndarray::Array2::from_shape_fn((res_b, res_a), |(ib, ia)| points[ib * res_a + ia].0),
        error: ndarray::Array2::from_shape_fn((res_b, res_a), |(ib, ia)| points[ib * res_a + ia].1),
        a_values,
        b_values,
        anchors,
    })
}

impl LandscapeGrid {
    /// Metadata header line, then `beta,loss,error` (line) or
    /// `a,b,loss,error` (plane) rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let range = |v: &[f64]| (v[0], *v.last().unwrap());
        let anchors = self
            .anchors
            .iter()
            .map(|a| format!("{}=({:?};{:?})", a.name, a.coords.0, a.coords.1))
            .collect::<Vec<_>>()
            .join(" ");
        match self.kind {
            GridKind::Line => {
                let (lo, hi) = range(&self.a_values);
                writeln!(w, "# kind=line beta_range=({lo:?};{hi:?}) points={} anchors: {anchors}", self.a_values.len())?;
                writeln!(w, "beta,loss,error")?;
                for (i, b) in self.a_values.iter().enumerate() {
                    writeln!(w, "{b:?},{:?},{:?}", self.loss[[0, i]], self.error[[0, i]])?;
                }
            }
            GridKind::Plane => {
                let (alo, ahi) = range(&self.a_values);
                let (blo, bhi) = range(&self.b_values);
                writeln!(
                    w,
                    "# kind=plane a_range=({alo:?};{ahi:?}) b_range=({blo:?};{bhi:?}) res=({};{}) anchors: {anchors}",
                    self.a_values.len(),
                    self.b_values.len()
                )?;
                writeln!(w, "a,b,loss,error")?;
                for (ib, b) in self.b_values.iter().enumerate() {
                    for (ia, a) in self.a_values.iter().enumerate() {
                        writeln!(w, "{a:?},{b:?},{:?},{:?}", self.loss[[ib, ia]], self.error[[ib, ia]])?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic_classification;
    use crate::nn::{init_params, Activation, LossKind};

    fn setup() -> (ModelSpec, Dataset) {
        (
            ModelSpec::mlp(&[2, 5, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap(),
            gen_synthetic_classification(2, 3, 15, 2, 3.0).unwrap(),
        )
    }

    #[test]
    fn endpoints_are_exact() {
        let (spec, data) = setup();
        let (w1, w2) = (init_params(&spec, 1), init_params(&spec, 2));
        let g = interpolate_1d(&w1, &w2, &[0.0, 0.5, 1.0], &spec, &data).unwrap();
        let l1 = eval_point(&w1, &spec, &data).unwrap();
        let l2 = eval_point(&w2, &spec, &data).unwrap();
        assert_eq!(g.loss[[0, 2]], l1.0);
        assert_eq!(g.loss[[0, 0]], l2.0);
        assert_eq!(g.error[[0, 2]], l1.1);
        assert!(g.error.iter().all(|e| (0.0..=1.0).contains(e)));
    }

    #[test]
    fn same_models_give_flat_curve() {
        let (spec, data) = setup();
        let w = init_params(&spec, 4);
        let g = interpolate_1d(&w, &w, &[0.0, 0.3, 0.7, 1.0], &spec, &data).unwrap();
        assert!(g.loss.iter().all(|&l| (l - g.loss[[0, 0]]).abs() < 1e-12));
    }

    #[test]
    fn degenerate_planes() {
        let (spec, _) = setup();
        let w1 = init_params(&spec, 1);
        let w2 = init_params(&spec, 2);
        assert!(build_plane(&w1, &w1, &w2).is_err());
        let mid = interpolate(&w1, &w2, 0.3);
        assert!(matches!(build_plane(&w1, &w2, &mid), Err(Error::Degenerate(_))));
        assert!(build_plane(&w1, &w2, &w1).is_err());
    }

    #[test]
    fn orthogonal_third_anchor() {
        let (spec, _) = setup();
        let n = spec.param_count();
        let w1 = ParamVector::new(vec![1.0; n], spec.fingerprint());
        let mut v2 = vec![1.0; n];
        v2[0] += 3.0;
        let mut v3 = vec![1.0; n];
        v3[1] -= 2.0;
        let b = build_plane(&w1, &ParamVector::new(v2, spec.fingerprint()), &ParamVector::new(v3, spec.fingerprint())).unwrap();
        assert_eq!(b.coords_w2, (3.0, 0.0));
        assert!(b.coords_w3.0.abs() < 1e-15);
        assert!((b.coords_w3.1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_identities() {
        let (spec, _) = setup();
        let b = build_plane(&init_params(&spec, 1), &init_params(&spec, 2), &init_params(&spec, 3)).unwrap();
        assert_eq!(reconstruct_at(&b, 0.0, 0.0), b.origin);
        let r1 = reconstruct_at(&b, 0.7, 0.0);
        let r2 = reconstruct_at(&b, 1.4, 0.0);
        for ((x, y), u) in r2.values.iter().zip(&r1.values).zip(&b.u_hat) {
            assert!((x - y - 0.7 * u).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_refinement_is_bitwise_stable() {
        let coarse = lattice((-0.37, 1.91), 5);
        let fine = lattice((-0.37, 1.91), 9);
        for (i, c) in coarse.iter().enumerate() {
            assert_eq!(c.to_bits(), fine[2 * i].to_bits());
        }
    }

    #[test]
    fn plane_rejects_tiny_resolution() {
        let (spec, data) = setup();
        let b = build_plane(&init_params(&spec, 1), &init_params(&spec, 2), &init_params(&spec, 3)).unwrap();
        assert!(eval_plane(&b, (0.0, 1.0), (0.0, 1.0), 1, 3, &spec, &data).is_err());
    }

    #[test]
    fn csv_shapes() {
        let (spec, data) = setup();
        let b = build_plane(&init_params(&spec, 1), &init_params(&spec, 2), &init_params(&spec, 3)).unwrap();
        let (ar, br) = default_ranges(&b);
        let g = eval_plane(&b, ar, br, 3, 4, &spec, &data).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with("# kind=plane"));
        assert_eq!(lines[1], "a,b,loss,error");
        assert_eq!(lines.len(), 2 + 12);
        assert_eq!(g.anchors[0].cell, (nearest_index(&g.a_values, 0.0), nearest_index(&g.b_values, 0.0)));
    }
}
