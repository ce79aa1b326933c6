//! Materializes datasets, partitions and models from a config.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use fima_core::data::{
    gen_synthetic_classification, partition_dirichlet, partition_iid, partition_shards, validate_partition,
    Dataset, Partition,
};
use fima_core::nn::{load_checkpoint, ModelSpec, ParamVector};
use fima_core::rng::derive_seed;

use crate::config::{DatasetConfig, ExperimentConfig, PartitionMethodConfig};
use crate::error::{CliError, CliResult};

const DATA_STREAM: u64 = 0xDA7A;
const PARTITION_STREAM: u64 = 0x9A27;

pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub spec: ModelSpec,
}

pub fn load_datasets(cfg: &ExperimentConfig) -> CliResult<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            n_classes,
            n_per_class,
            test_per_class,
            dim,
            separation,
        } => {
            let gen = |stream: u64, per_class: usize| {
                gen_synthetic_classification(derive_seed(cfg.seed, &[DATA_STREAM, stream]), *n_classes, per_class, *dim, *separation)
            };
            Ok((gen(0, *n_per_class)?, gen(1, *test_per_class)?))
        }
        DatasetConfig::Csv { train, test, n_classes } => {
            let read = |p: &Path| -> CliResult<Dataset> {
                let f = File::open(p).map_err(|e| CliError::io(p, e))?;
                Dataset::read_csv(BufReader::new(f), *n_classes).map_err(|e| match e {
                    fima_core::Error::Io(source) => CliError::io(p, source),
                    other => CliError::Config(format!("{}: {other}", p.display())),
                })
            };
            let (tr, te) = (read(train)?, read(test)?);
            if tr.dim() != te.dim() {
                return Err(CliError::Config(format!(
                    "train and test dimensions differ: {} vs {}",
                    tr.dim(),
                    te.dim()
                )));
            }
            Ok((tr, te))
        }
    }
}

pub fn make_partition(cfg: &ExperimentConfig, train: &Dataset) -> CliResult<Partition> {
    let seed = derive_seed(cfg.seed, &[PARTITION_STREAM]);
    let k = cfg.partition.num_clients;
    let p = match cfg.partition.method {
        PartitionMethodConfig::Iid => partition_iid(train, k, seed)?,
        PartitionMethodConfig::Shards { classes_per_client } => partition_shards(train, k, classes_per_client, seed)?,
        PartitionMethodConfig::Dirichlet { alpha } => partition_dirichlet(train, k, alpha, seed)?,
    };
    let report = validate_partition(train, &p);
    if !report.is_valid() {
        return Err(CliError::Invariant(format!("partition failed validation: {report}")));
    }
    Ok(p)
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        let (train, test) = load_datasets(cfg)?;
        let partition = make_partition(cfg, &train)?;
        let spec = cfg.model_spec_for(train.dim())?;
        Ok(Experiment { train, test, partition, spec })
    }

    pub fn task(&self) -> fima_core::federation::FederationTask<'_> {
        fima_core::federation::FederationTask {
            spec: &self.spec,
            train: &self.train,
            partition: &self.partition,
            test: &self.test,
        }
    }
}

/// Loads a checkpoint and checks it belongs to `spec`.
pub fn load_model(path: &Path, spec: &ModelSpec) -> CliResult<ParamVector> {
    let params = load_checkpoint(path).map_err(|e| match e {
        fima_core::Error::Io(source) => CliError::io(path, source),
        other => CliError::Invariant(format!("{}: {other}", path.display())),
    })?;
    params
        .check_spec(spec)
        .map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))?;
    Ok(params)
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes a file through a buffered writer, attaching the path to errors.
pub fn write_file(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> fima_core::Result<()>) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    fill(&mut w).map_err(|e| match e {
        fima_core::Error::Io(source) => CliError::io(path, source),
        other => CliError::from(other),
    })?;
    w.flush().map_err(|e| CliError::io(path, e))
}
