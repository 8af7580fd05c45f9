//! Federated runs driven by a [`RunConfig`]: data assembly, metrics streaming
//! and the run directory.

use std::path::{Path, PathBuf};

use super::config::{DataSource, RunConfig};
use super::manifest::{RunDir, RunManifest, METRICS_FILE};
use crate::error::{Error, Result};
use crate::federation::{run_federation, ClientSetup};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::models::DataRole;
use crate::numerics::Matrix;
use crate::synthdata::read_dataset_csv;

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub rounds: usize,
    /// Records of the last synchronization, one per client.
    pub final_records: Vec<MetricsRecord>,
}

/// Client datasets of `cfg` with a zero frozen weight (the synthetic task
/// trains the whole regression matrix through the adapters).
pub fn build_setups(cfg: &RunConfig) -> Result<Vec<ClientSetup>> {
    match &cfg.data {
        DataSource::Synthetic(spec) => Ok(spec
            .generate(cfg.federation.seed)?
            .into_iter()
            .map(|c| ClientSetup {
                w0: Matrix::zeros(spec.m, spec.n),
                train: c.train,
                test: c.test,
                ground_truth: Some(c.ground_truth.w_star),
            })
            .collect()),
        DataSource::Files { train, test } => train
            .iter()
            .zip(test)
            .map(|(tr, te)| {
                let train = read_dataset_csv(tr, DataRole::Train)?;
                let test = read_dataset_csv(te, DataRole::Test)?;
                Ok(ClientSetup {
                    w0: Matrix::zeros(train.input_dim(), train.output_dim()),
                    train,
                    test,
                    ground_truth: None,
                })
            })
            .collect(),
    }
}

/// Trains `cfg` and returns every round's records without touching disk.
pub fn run_in_memory(cfg: &RunConfig, threads: Option<usize>) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let setups = build_setups(cfg)?;
    let mut records = Vec::new();
    run_federation(&cfg.federation, &setups, threads, &mut |log| {
        records.extend(log.records.iter().cloned());
        Ok(())
    })?;
    Ok(records)
}

/// Trains `cfg`, streaming metrics to `<out_dir>/metrics.csv` between a
/// manifest and a completion marker.
pub fn execute_run(command: &str, cfg: &RunConfig, out_dir: impl AsRef<Path>, threads: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    let setups = build_setups(cfg)?;
    let manifest = RunManifest::new(command, cfg.to_toml()?, cfg.federation.seed, &[METRICS_FILE]);
    let dir = RunDir::begin(out_dir, manifest)?;
    let metrics_path = dir.file(METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let mut last = Vec::new();
    let mut rounds = 0;
    run_federation(&cfg.federation, &setups, threads, &mut |log| {
        writer.append_round(&log.records)?;
        last = log.records.clone();
        rounds += 1;
        Ok(())
    })?;
    drop(writer);
    let out_dir = dir.path.clone();
    dir.finish()?;
    Ok(RunSummary {
        out_dir,
        metrics_path,
        rounds,
        final_records: last,
    })
}

/// Re-runs the configuration embedded in a manifest.
pub fn config_from_manifest(path: impl AsRef<Path>) -> Result<RunConfig> {
    let manifest = RunManifest::load(path.as_ref())?;
    if manifest.command == "theory" {
        return Err(Error::Config("theory manifests do not hold a federated run".into()));
    }
    RunConfig::parse(&manifest.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::synth_defaults;
    use crate::experiments::manifest::{is_complete, MANIFEST_FILE};
    use crate::federation::Algorithm;
    use crate::metrics::read_metrics;

    fn small(alg: Algorithm) -> RunConfig {
        let mut cfg = synth_defaults(alg, 3);
        cfg.federation.total_steps = 25;
        cfg
    }

    #[test]
    fn manifest_echo_reproduces_metrics() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(Algorithm::Pf2lora);
        let first = execute_run("synth", &cfg, tmp.path().join("a"), Some(1)).unwrap();
        assert!(is_complete(&first.out_dir));
        assert_eq!(first.rounds, 3);
        assert_eq!(first.final_records.len(), 2);
        assert_eq!(first.final_records[0].step, 25);

        let again = config_from_manifest(first.out_dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(again, cfg);
        let second = execute_run("fed", &again, tmp.path().join("b"), Some(2)).unwrap();
        let a = std::fs::read(&first.metrics_path).unwrap();
        let b = std::fs::read(&second.metrics_path).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_metrics(&first.metrics_path).unwrap(), run_in_memory(&cfg, None).unwrap());
    }
}
