//! On-disk formats: expert datasets and curves as CSV, checkpoints and run
//! manifests as versioned JSON. Every write goes through a temporary file in
//! the destination directory followed by a rename.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{sum_rate_raw, ChannelConfig, ChannelState, PowerAllocation};
use crate::config::{DiffusionSection, SimConfig};
use crate::drl::PolicyModel;
use crate::error::{Error, Result};
use crate::gdm::{make_schedule, Denoiser, DiffusionSchedule, EpochLoss};
use crate::lifecycle::{ExpertDataset, ExpertSample, Method, Phase, PhaseMetrics};
use crate::nn::{DenseNet, NetSnapshot};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const GDM_KIND: &str = "gdm_denoiser";
pub const POLICY_KIND: &str = "drl_policy";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `bytes` to `path` atomically.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Header `gain_1..gain_M, power_1..power_M, sum_rate`; one row per sample.
/// Values are written in shortest round-trip form.
pub fn dataset_csv(dataset: &ExpertDataset) -> Result<Vec<u8>> {
    let m = dataset.samples.first().map_or(0, |s| s.state.len());
    let header: Vec<String> = (1..=m)
        .map(|i| format!("gain_{i}"))
        .chain((1..=m).map(|i| format!("power_{i}")))
        .chain(std::iter::once("sum_rate".to_string()))
        .collect();
    csv_bytes(
        &header,
        dataset.samples.iter().map(|s| {
            s.state
                .gains()
                .iter()
                .chain(s.allocation.powers())
                .chain(std::iter::once(&s.sum_rate))
                .map(|v| v.to_string())
                .collect()
        }),
    )
}

/// Parses and validates a dataset file against `cfg`: column count, positive
/// gains, feasible powers.
pub fn read_dataset(path: &Path, cfg: &ChannelConfig, source_phase: Phase) -> Result<ExpertDataset> {
    let m = cfg.num_channels;
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header_len = reader.headers()?.len();
    if header_len != 2 * m + 1 {
        return Err(Error::DimensionMismatch {
            expected: 2 * m + 1,
            actual: header_len,
            context: "dataset columns",
        });
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != 2 * m + 1 {
            return Err(Error::InvalidDataset(format!(
                "line {line}: {} fields, expected {}",
                record.len(),
                2 * m + 1
            )));
        }
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::InvalidDataset(format!("line {line}: {e}")))?;
        let state = ChannelState::new(values[..m].to_vec())
            .map_err(|e| Error::InvalidDataset(format!("line {line}: {e}")))?;
        let allocation = PowerAllocation::new(values[m..2 * m].to_vec(), cfg)
            .map_err(|e| Error::InvalidDataset(format!("line {line}: {e}")))?;
        let sum_rate = sum_rate_raw(state.gains(), allocation.powers(), cfg.noise_power);
        samples.push(ExpertSample {
            state,
            allocation,
            sum_rate,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ExpertDataset {
        samples,
        source_phase,
    })
}

pub fn loss_curve_csv(curve: &[EpochLoss]) -> Result<Vec<u8>> {
    let header = ["epoch", "train_loss", "val_loss"].map(String::from);
    csv_bytes(
        &header,
        curve
            .iter()
            .map(|e| vec![e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()]),
    )
}

pub fn reward_curve_csv(curve: &[f64]) -> Result<Vec<u8>> {
    let header = ["iteration", "mean_reward"].map(String::from);
    csv_bytes(
        &header,
        curve
            .iter()
            .enumerate()
            .map(|(i, r)| vec![(i + 1).to_string(), r.to_string()]),
    )
}

pub const METRICS_HEADER: [&str; 7] = [
    "phase",
    "method",
    "mean_sum_rate",
    "ratio_to_expert",
    "mean_ratio_to_expert",
    "improvement_over_uniform",
    "virtuous_gain",
];

fn fmt(v: f64) -> String {
    format!("{v:.10}")
}

/// One row per (phase, method). The virtuous-gain column is filled for the
/// phases evaluated on the shifted distribution.
pub fn metrics_rows(phases: &[&PhaseMetrics]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for p in phases {
        for method in Method::ALL {
            let s = p.method(method);
            let vg = match p.phase {
                Phase::T1 => String::new(),
                Phase::T2 | Phase::T3 => fmt(s.improvement_over_uniform),
            };
            rows.push(vec![
                p.phase.label().to_string(),
                method.label().to_string(),
                fmt(s.mean_sum_rate),
                fmt(s.ratio_to_expert),
                fmt(s.mean_ratio_to_expert),
                fmt(s.improvement_over_uniform),
                vg,
            ]);
        }
    }
    rows
}

pub fn metrics_csv(phases: &[&PhaseMetrics]) -> Result<Vec<u8>> {
    let header = METRICS_HEADER.map(String::from);
    csv_bytes(&header, metrics_rows(phases).into_iter())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdmCheckpoint {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    pub seed: u64,
    /// Normalization constants: `x0 = 2 p / power_budget - 1`.
    pub channel: ChannelConfig,
    pub diffusion: DiffusionSection,
    pub time_embedding_dim: usize,
    pub net: NetSnapshot,
}

impl GdmCheckpoint {
    pub fn new(denoiser: &Denoiser, channel: ChannelConfig, diffusion: DiffusionSection, seed: u64) -> Self {
        GdmCheckpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: GDM_KIND.into(),
            tool_version: TOOL_VERSION.into(),
            seed,
            channel,
            diffusion,
            time_embedding_dim: denoiser.embed_dim(),
            net: NetSnapshot::from(denoiser.net()),
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.diffusion.steps, self.diffusion.beta_start, self.diffusion.beta_end)
    }

    pub fn denoiser(&self) -> Result<Denoiser> {
        let net = DenseNet::try_from(self.net.clone())?;
        Denoiser::from_net(net, self.channel.num_channels, self.time_embedding_dim, self.diffusion.steps)
            .map_err(|e| Error::Schema(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    pub seed: u64,
    pub channel: ChannelConfig,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub net: NetSnapshot,
}

impl PolicyCheckpoint {
    pub fn new(policy: &PolicyModel, channel: ChannelConfig, seed: u64) -> Self {
        let (lo, hi) = policy.log_std_bounds();
        PolicyCheckpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: POLICY_KIND.into(),
            tool_version: TOOL_VERSION.into(),
            seed,
            channel,
            log_std_min: lo,
            log_std_max: hi,
            net: NetSnapshot::from(policy.net()),
        }
    }

    pub fn policy(&self) -> Result<PolicyModel> {
        let net = DenseNet::try_from(self.net.clone())?;
        PolicyModel::from_net(net, self.log_std_min, self.log_std_max).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Parses a checkpoint of the given kind, reporting any structural problem
/// as a schema error.
fn parse_checkpoint<T: for<'de> Deserialize<'de>>(text: &str, kind: &str) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("not a checkpoint: {e}")))?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_SCHEMA_VERSION as u64) {
        return Err(Error::Schema(format!(
            "unsupported checkpoint schema_version {version:?}, expected {CHECKPOINT_SCHEMA_VERSION}"
        )));
    }
    let found = value.get("kind").and_then(|v| v.as_str());
    if found != Some(kind) {
        return Err(Error::Schema(format!("expected a {kind} checkpoint, found {found:?}")));
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
}

pub fn parse_gdm_checkpoint(text: &str) -> Result<GdmCheckpoint> {
    let ckpt: GdmCheckpoint = parse_checkpoint(text, GDM_KIND)?;
    ckpt.denoiser()?;
    ckpt.schedule().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(ckpt)
}

pub fn parse_policy_checkpoint(text: &str) -> Result<PolicyCheckpoint> {
    let ckpt: PolicyCheckpoint = parse_checkpoint(text, POLICY_KIND)?;
    ckpt.policy()?;
    Ok(ckpt)
}

pub fn load_gdm_checkpoint(path: &Path) -> Result<GdmCheckpoint> {
    parse_gdm_checkpoint(&read_to_string(path)?)
}

pub fn load_policy_checkpoint(path: &Path) -> Result<PolicyCheckpoint> {
    parse_policy_checkpoint(&read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Everything needed to reproduce a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: SimConfig,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub completed_phases: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &SimConfig, master_seed: u64) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            master_seed,
            config: config.clone(),
            started_unix_s: unix_now(),
            finished_unix_s: None,
            completed_phases: Vec::new(),
        }
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::GainDistribution;
    use crate::lifecycle::collect_dataset;
    use crate::seed::{SeedStreams, StreamName};

    fn small_dataset() -> (ExpertDataset, ChannelConfig) {
        let cfg = ChannelConfig::default();
        let s = SeedStreams::new(4).substream(StreamName::Collect);
        (
            collect_dataset(&GainDistribution::calm(20), 30, &cfg, 1e-10, Phase::T1, s).unwrap(),
            cfg,
        )
    }

    #[test]
    fn dataset_file_round_trips() {
        let (ds, cfg) = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        atomic_write(&path, &dataset_csv(&ds).unwrap()).unwrap();
        let back = read_dataset(&path, &cfg, Phase::T1).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_dataset_rejected() {
        let (ds, cfg) = small_dataset();
        let bytes = dataset_csv(&ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        atomic_write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(read_dataset(&path, &cfg, Phase::T1).is_err());
    }

    #[test]
    fn wrong_width_rejected() {
        let (ds, _) = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        atomic_write(&path, &dataset_csv(&ds).unwrap()).unwrap();
        let narrow = ChannelConfig::new(10, 1.0, 0.3).unwrap();
        assert!(matches!(
            read_dataset(&path, &narrow, Phase::T1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_schema_errors() {
        let d = Denoiser::new(20, &[16], 16, 50, 1).unwrap();
        let ck = GdmCheckpoint::new(&d, ChannelConfig::default(), DiffusionSection::default(), 9);
        let text = serde_json::to_string(&ck).unwrap();
        let back = parse_gdm_checkpoint(&text).unwrap();
        assert_eq!(back.denoiser().unwrap(), d);

        assert!(matches!(parse_gdm_checkpoint("{not json"), Err(Error::Schema(_))));
        let wrong_version = text.replacen("\"schema_version\":1", "\"schema_version\":7", 1);
        assert!(matches!(parse_gdm_checkpoint(&wrong_version), Err(Error::Schema(_))));
        let p = PolicyModel::new(20, &Default::default(), 2).unwrap();
        let ptext = serde_json::to_string(&PolicyCheckpoint::new(&p, ChannelConfig::default(), 2)).unwrap();
        assert!(matches!(parse_gdm_checkpoint(&ptext), Err(Error::Schema(_))));
        assert_eq!(parse_policy_checkpoint(&ptext).unwrap().policy().unwrap(), p);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
