//! Synthetic datasets and heterogeneous client partitions.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub one_hot_targets: Array2<f64>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset needs n >= 1 and d >= 1".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument("dataset needs at least 2 classes".into()));
        }
        if labels.len() != features.nrows() {
            return Err(Error::LengthMismatch {
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        let mut one_hot = Array2::zeros((labels.len(), n_classes));
        for (i, &y) in labels.iter().enumerate() {
            one_hot[[i, y]] = 1.0;
        }
        Ok(Dataset {
            features,
            labels,
            one_hot_targets: one_hot,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.n_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Header row, then `d` feature columns followed by the label column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},label",
            (0..self.dim()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",")
        )?;
        for (row, y) in self.features.rows().into_iter().zip(&self.labels) {
            for v in row {
                write!(w, "{v:?},")?;
            }
            writeln!(w, "{y}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, n_classes: usize) -> Result<Dataset> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let d = fields.len() - 1;
            if *dim.get_or_insert(d) != d || d == 0 {
                return Err(Error::Format(format!("ragged dataset row at line {}", lineno + 1)));
            }
            for f in &fields[..d] {
                rows.push(f.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("line {}: {e}", lineno + 1))
                })?);
            }
            labels.push(fields[d].trim().parse::<usize>().map_err(|e| {
                Error::Format(format!("line {}: {e}", lineno + 1))
            })?);
        }
        let d = dim.ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let features = Array2::from_shape_vec((labels.len(), d), rows)
            .map_err(|e| Error::Format(e.to_string()))?;
        Dataset::new(features, labels, n_classes)
    }
}

/// Mean direction of class `c`: `+e_{c mod d}` for the first `d` classes,
/// `-e_{c mod d}` for the next `d`, and fixed pseudo-random unit vectors
/// beyond `2d` classes. Independent of the data seed.
fn class_direction(c: usize, dim: usize) -> Array1<f64> {
    let mut dir = Array1::<f64>::zeros(dim);
    if c < 2 * dim {
        dir[c % dim] = if c < dim { 1.0 } else { -1.0 };
    } else {
        let mut rng = derived_rng(0x5EED_D1EC, &[c as u64, dim as u64]);
        for v in dir.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm: f64 = dir.dot(&dir).sqrt();
        dir /= norm;
    }
    dir
}

/// Isotropic unit-variance Gaussian blobs with class means at
/// `separation * direction(c)`, shuffled.
pub fn gen_synthetic_classification(
    seed: u64,
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    class_separation: f64,
) -> Result<Dataset> {
    if n_classes < 2 || dim < 2 || n_per_class < 1 || !(class_separation > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need n_classes >= 2, dim >= 2, n_per_class >= 1, separation > 0 \
             (got {n_classes}, {dim}, {n_per_class}, {class_separation})"
        )));
    }
    let mut rng = rng_from(seed);
    let n = n_classes * n_per_class;
    let mut order: Vec<usize> = (0..n).map(|i| i / n_per_class).collect();
    order.shuffle(&mut rng);
    let means: Vec<Array1<f64>> = (0..n_classes)
        .map(|c| class_direction(c, dim) * class_separation)
        .collect();
    let mut features = Array2::zeros((n, dim));
    for (i, &c) in order.iter().enumerate() {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = means[c][j] + z;
        }
    }
    Dataset::new(features, order, n_classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMethod {
    Iid,
    Shards { classes_per_client: usize },
    Dirichlet { alpha: f64 },
}

/// Assignment of sample indices to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub method: PartitionMethod,
    pub seed: u64,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Rows `(client_id, sample_index)` with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "client_id,sample_index")?;
        for (k, idx) in self.client_indices.iter().enumerate() {
            for i in idx {
                writeln!(w, "{k},{i}")?;
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`Partition::write_csv`]; `method` and
    /// `seed` are not stored in the file and must be supplied.
    pub fn read_csv<R: BufRead>(r: R, method: PartitionMethod, seed: u64) -> Result<Partition> {
        let mut clients: Vec<Vec<usize>> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad partition row at line {}", lineno + 1)))
            };
            let mut it = line.split(',');
            let k = parse(it.next())?;
            let i = parse(it.next())?;
            if clients.len() <= k {
                clients.resize(k + 1, Vec::new());
            }
            clients[k].push(i);
        }
        Ok(Partition {
            client_indices: clients,
            method,
            seed,
        })
    }
}

fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.n_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

pub fn partition_iid(dataset: &Dataset, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} samples over {k} clients",
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng_from(seed));
    let n = idx.len();
    let clients = (0..k)
        .map(|c| idx[c * n / k..(c + 1) * n / k].to_vec())
        .collect();
    Ok(Partition {
        client_indices: clients,
        method: PartitionMethod::Iid,
        seed,
    })
}

/// Equal-size class shards, `classes_per_client` per client.
///
/// Shards are dealt round-robin over a class-grouped, shuffled shard list, so
/// every client holds `classes_per_client` distinct classes whenever
/// `classes_per_client <= n_classes`.
pub fn partition_shards(
    dataset: &Dataset,
    k: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    let n_classes = dataset.n_classes;
    if k == 0 || classes_per_client == 0 || classes_per_client > n_classes {
        return Err(Error::InfeasibleShards(format!(
            "K={k}, classes_per_client={classes_per_client}, n_classes={n_classes}"
        )));
    }
    let total_shards = k * classes_per_client;
    if !total_shards.is_multiple_of(n_classes) {
        return Err(Error::InfeasibleShards(format!(
            "{total_shards} shards (K={k} x C={classes_per_client}) not divisible by {n_classes} classes"
        )));
    }
    let shards_per_class = total_shards / n_classes;
    let mut by_class = indices_by_class(dataset);
    let class_size = by_class[0].len();
    if by_class.iter().any(|c| c.len() != class_size) {
        return Err(Error::InfeasibleShards(format!(
            "unequal class sizes {:?}",
            by_class.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    if !class_size.is_multiple_of(shards_per_class) || class_size < shards_per_class {
        return Err(Error::InfeasibleShards(format!(
            "class size {class_size} not divisible into {shards_per_class} shards"
        )));
    }
    let shard_size = class_size / shards_per_class;
    let mut rng = rng_from(seed);
    let mut class_order: Vec<usize> = (0..n_classes).collect();
    class_order.shuffle(&mut rng);
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total_shards);
    for &c in &class_order {
        by_class[c].shuffle(&mut rng);
        shards.extend(by_class[c].chunks(shard_size).map(<[usize]>::to_vec));
    }
    let mut client_order: Vec<usize> = (0..k).collect();
    client_order.shuffle(&mut rng);
    let mut clients = vec![Vec::new(); k];
    for (s, shard) in shards.into_iter().enumerate() {
        clients[client_order[s % k]].extend(shard);
    }
    Ok(Partition {
        client_indices: clients,
        method: PartitionMethod::Shards { classes_per_client },
        seed,
    })
}

/// Integer split of `total` proportional to `props`, preserving the total
/// exactly (largest remainder, ties to the lower index).
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_sample(rng: &mut crate::rng::Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|d| *d /= sum);
    } else {
        // every gamma draw underflowed: all mass on one uniformly chosen client
        let pick = rand::Rng::random_range(rng, 0..k);
        draws = vec![0.0; k];
        draws[pick] = 1.0;
    }
    draws
}

/// Per-class Dirichlet(alpha) label skew.
pub fn partition_dirichlet(dataset: &Dataset, k: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    if k == 0 || k > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} samples over {k} clients",
            dataset.len()
        )));
    }
    let mut rng = rng_from(seed);
    let mut clients = vec![Vec::new(); k];
    for mut members in indices_by_class(dataset) {
        members.shuffle(&mut rng);
        let props = dirichlet_sample(&mut rng, alpha, k);
        let counts = largest_remainder(&props, members.len());
        let mut start = 0;
        for (client, &cnt) in clients.iter_mut().zip(&counts) {
            client.extend_from_slice(&members[start..start + cnt]);
            start += cnt;
        }
    }
    // empty-client repair: take one sample from the current largest client
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let largest = (0..k)
            .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
            .unwrap();
        let moved = clients[largest].pop().unwrap();
        clients[empty].push(moved);
    }
    Ok(Partition {
        client_indices: clients,
        method: PartitionMethod::Dirichlet { alpha },
        seed,
    })
}

/// Per-client affine feature transform: rotation in the plane of the first
/// two features, then isotropic scaling, then an offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSkewSpec {
    pub rotation: f64,
    pub scale: f64,
    pub offset: Vec<f64>,
}

impl FeatureSkewSpec {
    pub fn identity(dim: usize) -> Self {
        FeatureSkewSpec {
            rotation: 0.0,
            scale: 1.0,
            offset: vec![0.0; dim],
        }
    }
}

pub fn apply_feature_skew(
    dataset: &Dataset,
    partition: &Partition,
    specs: &[FeatureSkewSpec],
) -> Result<Dataset> {
    if specs.len() != partition.num_clients() {
        return Err(Error::LengthMismatch {
            expected: partition.num_clients(),
            actual: specs.len(),
        });
    }
    let d = dataset.dim();
    for s in specs {
        if !(s.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be > 0, got {}", s.scale)));
        }
        if s.offset.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: s.offset.len(),
            });
        }
    }
    let mut out = dataset.clone();
    for (spec, idx) in specs.iter().zip(&partition.client_indices) {
        let (sin, cos) = spec.rotation.sin_cos();
        for &i in idx {
            let mut row = out.features.row_mut(i);
            if spec.rotation != 0.0 {
                let (a, b) = (row[0], row[1]);
                row[0] = cos * a - sin * b;
                row[1] = sin * a + cos * b;
            }
            if spec.scale != 1.0 {
                row.mapv_inplace(|v| v * spec.scale);
            }
            for (v, o) in row.iter_mut().zip(&spec.offset) {
                if *o != 0.0 {
                    *v += o;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub disjoint: bool,
    pub in_range: bool,
    pub all_nonempty: bool,
    /// Number of distinct dataset indices assigned to some client.
    pub coverage: usize,
    pub sizes: Vec<usize>,
    pub class_histograms: Vec<Vec<usize>>,
}

impl PartitionReport {
    pub fn is_valid(&self) -> bool {
        self.disjoint && self.in_range && self.all_nonempty
    }
}

impl std::fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "disjoint: {}", self.disjoint)?;
        writeln!(f, "in_range: {}", self.in_range)?;
        writeln!(f, "all_nonempty: {}", self.all_nonempty)?;
        writeln!(f, "coverage: {}", self.coverage)?;
        for (k, (size, hist)) in self.sizes.iter().zip(&self.class_histograms).enumerate() {
            writeln!(f, "client {k}: size {size} classes {hist:?}")?;
        }
        Ok(())
    }
}

pub fn validate_partition(dataset: &Dataset, partition: &Partition) -> PartitionReport {
    let n = dataset.len();
    let mut seen = vec![false; n];
    let mut disjoint = true;
    let mut in_range = true;
    let mut class_histograms = Vec::with_capacity(partition.num_clients());
    for idx in &partition.client_indices {
        let mut hist = vec![0; dataset.n_classes];
        for &i in idx {
            if i >= n {
                in_range = false;
                continue;
            }
            if seen[i] {
                disjoint = false;
            }
            seen[i] = true;
            hist[dataset.labels[i]] += 1;
        }
        class_histograms.push(hist);
    }
    PartitionReport {
        disjoint,
        in_range,
        all_nonempty: partition.client_indices.iter().all(|c| !c.is_empty()),
        coverage: seen.iter().filter(|&&s| s).count(),
        sizes: partition.sizes(),
        class_histograms,
    }
}

/// Nearest-class-mean training accuracy; a sanity oracle for generated data.
pub fn nearest_mean_accuracy(features: ArrayView2<f64>, labels: &[usize], n_classes: usize) -> f64 {
    let d = features.ncols();
    let mut means = Array2::<f64>::zeros((n_classes, d));
    let mut counts = vec![0usize; n_classes];
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let mut m = means.row_mut(y);
        m += &row;
        counts[y] += 1;
    }
    for (mut m, &c) in means.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            m /= c as f64;
        }
    }
    let correct = features
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let best = (0..n_classes)
                .min_by(|&a, &b| {
                    let da = (&means.row(a) - row).mapv(|v| v * v).sum();
                    let db = (&means.row(b) - row).mapv(|v| v * v).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            best == y
        })
        .count();
    correct as f64 / labels.len() as f64
}
