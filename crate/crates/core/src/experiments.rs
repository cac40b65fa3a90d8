//! Experiment drivers and artifact emission.
//!
//! Every artifact is written below the configured output directory. CSV
//! files open with a `# schema=...` line; JSON-lines files open with a
//! schema object. Only `metrics.csv` carries a wall-clock timestamp, in its
//! last column, and per-round durations go to a separate `timings.csv`.

use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::fl::{mean_std, run_seed, summarize, Federation, RoundReport, SeedRun, TrainingSummary};
use crate::graph::{louvain_partition, stratified_split, Graph};
use crate::ppr::sis_partitioned;
use crate::rng::{derive_seed, stream};
use crate::spectral::{spectral_kl_heatmap, structural_histogram};
use crate::tensor::DenseMatrix;

pub const METRICS_SCHEMA: &str = "# schema=s2fgl.metrics.v1";
pub const SERIES_SCHEMA: &str = "# schema=s2fgl.series.v1";
pub const TIMINGS_SCHEMA: &str = "# schema=s2fgl.timings.v1";
pub const SIS_SCHEMA: &str = "# schema=s2fgl.sis_curve.v1";
pub const HEATMAP_SCHEMA: &str = "# schema=s2fgl.spectral_heatmap.v1";
pub const ABLATION_SCHEMA: &str = "# schema=s2fgl.ablation.v1";
pub const SENSITIVITY_SCHEMA: &str = "# schema=s2fgl.sensitivity.v1";
pub const ROUNDS_SCHEMA: &str = r#"{"schema":"s2fgl.rounds.v1"}"#;

pub const RUNNING_MARKER: &str = "RUNNING";
pub const FAILED_MARKER: &str = "FAILED";

/// A directory that artifacts may be written into. Relative names with
/// `..`, roots or prefixes are rejected.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if name.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(Error::invalid(format!("artifact name `{name}` escapes the output directory")));
        }
        Ok(self.root.join(rel))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    pub fn subdir(&self, name: &str) -> Result<OutputDir> {
        OutputDir::create(self.path(name)?)
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        let path = self.path(name)?;
        if path.exists() {
            std::fs::remove_file(path)?;
        }
        Ok(())
    }

    /// Runs `f` between a `RUNNING` marker and either its removal or a
    /// `FAILED` marker holding the error.
    pub fn guarded<T>(&self, f: impl FnOnce(&OutputDir) -> Result<T>) -> Result<T> {
        self.remove(FAILED_MARKER)?;
        self.write(RUNNING_MARKER, "")?;
        let out = f(self);
        self.remove(RUNNING_MARKER)?;
        if let Err(e) = &out {
            self.write(FAILED_MARKER, &format!("{e}\n"))?;
        }
        out
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn unix_timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Serialize)]
struct SeededReport<'a> {
    seed: u64,
    #[serde(flatten)]
    report: &'a RoundReport,
}

/// `metrics.csv` text: schema, header and one row.
pub fn metrics_csv(cfg: &ExperimentConfig, summary: &TrainingSummary, timestamp: u64) -> String {
    let seeds: Vec<u64> = summary.runs.iter().map(|r| r.seed).collect();
    let finals: Vec<String> = summary.runs.iter().map(|r| float(r.final_accuracy)).collect();
    format!(
        "{METRICS_SCHEMA}\nexperiment,method,backbone,num_clients,rounds,seeds,finals,mean,std,timestamp\n{},{},{},{},{},{},{},{},{},{timestamp}\n",
        cfg.name,
        cfg.method,
        cfg.backbone,
        cfg.num_clients,
        cfg.rounds,
        join(&seeds),
        finals.join(";"),
        float(summary.mean),
        float(summary.std),
    )
}

/// Trains every seed of `cfg` and writes the run artifacts into `out`.
pub fn run_experiment_in(cfg: &ExperimentConfig, out: &OutputDir) -> Result<TrainingSummary> {
    out.guarded(|out| {
        out.write("config.resolved", &cfg.snapshot())?;
        let mut jsonl = format!("{ROUNDS_SCHEMA}\n");
        let mut series = format!("{SERIES_SCHEMA}\nseed,round,test_accuracy\n");
        let mut timings = format!("{TIMINGS_SCHEMA}\nseed,round,wall_ms\n");
        let mut runs: Vec<SeedRun> = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let run = run_seed(cfg, seed, &mut |report| {
                log::info!(
                    "{} seed {seed} round {}: accuracy {:.4}",
                    cfg.name,
                    report.round,
                    report.test_accuracy
                );
                let line = serde_json::to_string(&SeededReport { seed, report })
                    .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))?;
                jsonl.push_str(&line);
                jsonl.push('\n');
                let _ = writeln!(series, "{seed},{},{}", report.round, float(report.test_accuracy));
                let _ = writeln!(timings, "{seed},{},{:.3}", report.round, report.wall_ms);
                out.write("rounds.jsonl", &jsonl)?;
                Ok(())
            })?;
            runs.push(run);
        }
        let summary = summarize(runs);
        out.write("series.csv", &series)?;
        out.write("timings.csv", &timings)?;
        out.write("metrics.csv", &metrics_csv(cfg, &summary, unix_timestamp()))?;
        Ok(summary)
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainingSummary> {
    run_experiment_in(cfg, &OutputDir::create(&cfg.output_dir)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SisRow {
    pub seed: u64,
    pub clients: usize,
    pub sis_sum: f64,
    pub sis_per_node: f64,
}

/// Partitioned SIS of one graph and split at each client count.
pub fn sis_curve_for_graph(g: &Graph, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SisRow>> {
    let masks = stratified_split(g, cfg.split, derive_seed(seed, &[stream::SPLIT]))?;
    cfg.sis_client_counts
        .iter()
        .map(|&clients| {
            let plan = louvain_partition(g, clients, derive_seed(seed, &[stream::PARTITION]))?;
            let sis_sum = sis_partitioned(g, &plan, &masks, cfg.damping_alpha)?;
            Ok(SisRow {
                seed,
                clients,
                sis_sum,
                sis_per_node: sis_sum / g.num_nodes() as f64,
            })
        })
        .collect()
}

pub fn emit_sis_curve(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<SisRow>> {
    out.guarded(|out| {
        out.write("config.resolved", &cfg.snapshot())?;
        let mut rows = Vec::new();
        for &seed in &cfg.seeds {
            let g = cfg.dataset.load(derive_seed(seed, &[stream::DATASET]))?;
            rows.extend(sis_curve_for_graph(&g, cfg, seed)?);
        }
        let mut csv = format!("{SIS_SCHEMA}\nseed,clients,sis_sum,sis_per_node\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{},{},{}", r.seed, r.clients, float(r.sis_sum), float(r.sis_per_node));
        }
        out.write("sis_curve.csv", &csv)?;
        Ok(rows)
    })
}

/// Pairwise KL divergence between the normalized-Laplacian eigenvalue
/// histograms of the Louvain clients of `g`.
pub fn spectral_heatmap_for_graph(g: &Graph, num_clients: usize, bins: usize, seed: u64) -> Result<DenseMatrix> {
    if num_clients < 2 {
        return Err(Error::invalid("spectral heatmap needs at least two clients"));
    }
    let plan = louvain_partition(g, num_clients, derive_seed(seed, &[stream::PARTITION]))?;
    let histograms = plan
        .members()
        .iter()
        .map(|nodes| structural_histogram(&g.induced_subgraph(nodes)?.graph, bins))
        .collect::<Result<Vec<_>>>()?;
    spectral_kl_heatmap(&histograms)
}

pub fn heatmap_csv(m: &DenseMatrix) -> String {
    let mut csv = format!("{HEATMAP_SCHEMA}\nclient");
    for j in 0..m.cols() {
        let _ = write!(csv, ",c{j}");
    }
    csv.push('\n');
    for i in 0..m.rows() {
        let _ = write!(csv, "c{i}");
        for &x in m.row(i) {
            let _ = write!(csv, ",{}", float(x));
        }
        csv.push('\n');
    }
    csv
}

/// Heatmap for the first configured seed.
pub fn emit_spectral_heatmap(cfg: &ExperimentConfig, out: &OutputDir) -> Result<DenseMatrix> {
    out.guarded(|out| {
        out.write("config.resolved", &cfg.snapshot())?;
        let seed = cfg.seeds[0];
        let g = cfg.dataset.load(derive_seed(seed, &[stream::DATASET]))?;
        let m = spectral_heatmap_for_graph(&g, cfg.num_clients, cfg.heatmap_bins, seed)?;
        out.write("spectral_heatmap.csv", &heatmap_csv(&m))?;
        Ok(m)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub method: Method,
    pub summary: TrainingSummary,
}

pub const ABLATION_VARIANTS: [(&str, Method); 4] = [
    ("neither", Method::FedAvg),
    ("nlir-only", Method::NlirOnly),
    ("fgma-only", Method::FgmaOnly),
    ("both", Method::S2fgl),
];

fn finals(s: &TrainingSummary) -> String {
    s.runs.iter().map(|r| float(r.final_accuracy)).collect::<Vec<_>>().join(";")
}

pub fn run_ablation(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<AblationRow>> {
    out.guarded(|out| {
        out.write("config.resolved", &cfg.snapshot())?;
        let mut rows = Vec::with_capacity(4);
        let mut csv = format!("{ABLATION_SCHEMA}\nvariant,method,lambda1,lambda2,finals,mean,std\n");
        for (variant, method) in ABLATION_VARIANTS {
            let run_cfg = cfg.with("method", method)?.with("name", format!("{}-{variant}", cfg.name))?;
            let summary = run_experiment_in(&run_cfg, &out.subdir(&format!("ablation/{variant}"))?)?;
            let w = run_cfg.loss_weights();
            let _ = writeln!(
                csv,
                "{variant},{method},{},{},{},{},{}",
                float(w.lambda1),
                float(w.lambda2),
                finals(&summary),
                float(summary.mean),
                float(summary.std)
            );
            rows.push(AblationRow { variant, method, summary });
        }
        out.write("ablation.csv", &csv)?;
        Ok(rows)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityRow {
    pub factor: &'static str,
    pub scale: f64,
    pub summary: TrainingSummary,
    /// Mean accuracy minus the FedAvg baseline mean.
    pub delta: f64,
}

/// FedAvg baseline plus one S²FGL run per scale. The scaled weight replaces
/// its configured value while the other weight keeps its configured value.
pub fn run_sensitivity(cfg: &ExperimentConfig, out: &OutputDir) -> Result<(TrainingSummary, Vec<SensitivityRow>)> {
    out.guarded(|out| {
        out.write("config.resolved", &cfg.snapshot())?;
        let base_cfg = cfg.with("method", Method::FedAvg)?.with("name", format!("{}-baseline", cfg.name))?;
        let baseline = run_experiment_in(&base_cfg, &out.subdir("sensitivity/baseline")?)?;
        let mut csv = format!("{SENSITIVITY_SCHEMA}\nfactor,scale,lambda1,lambda2,finals,mean,std,delta_vs_fedavg\n");
        let mut rows = Vec::new();
        let grid = cfg
            .nlir_scales
            .iter()
            .map(|&s| ("nlir", "lambda1", s))
            .chain(cfg.fgma_scales.iter().map(|&s| ("fgma", "lambda2", s)));
        for (factor, key, scale) in grid {
            let label = format!("{factor}-{scale}");
            let run_cfg = cfg
                .with("method", Method::S2fgl)?
                .with(key, scale)?
                .with("name", format!("{}-{label}", cfg.name))?;
            let summary = run_experiment_in(&run_cfg, &out.subdir(&format!("sensitivity/{label}"))?)?;
            let delta = summary.mean - baseline.mean;
            let _ = writeln!(
                csv,
                "{factor},{},{},{},{},{},{},{}",
                float(scale),
                float(run_cfg.lambda1),
                float(run_cfg.lambda2),
                finals(&summary),
                float(summary.mean),
                float(summary.std),
                float(delta)
            );
            rows.push(SensitivityRow { factor, scale, summary, delta });
        }
        out.write("sensitivity.csv", &csv)?;
        Ok((baseline, rows))
    })
}

/// Structural statistics of a federation, for quick inspection.
pub fn describe(cfg: &ExperimentConfig, seed: u64) -> Result<String> {
    let fed = Federation::new(cfg, seed)?;
    let sizes: Vec<usize> = fed.clients.iter().map(|c| c.num_nodes()).collect();
    let trains: Vec<usize> = fed.clients.iter().map(|c| c.masks.train.len()).collect();
    let (mean, std) = mean_std(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>());
    Ok(format!(
        "nodes {} edges {} classes {} | clients {} size {mean:.1}±{std:.1} | train per client {} | sis {:.4}",
        fed.graph.num_nodes(),
        fed.graph.num_edges(),
        fed.graph.num_classes(),
        sizes.len(),
        join(&trains),
        fed.server.sis
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dir_rejects_escapes() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        for bad in ["../x", "/etc/x", "a/../../x", ""] {
            assert!(out.write(bad, "").is_err(), "{bad}");
        }
        assert!(out.write("a/b.csv", "x").unwrap().starts_with(tmp.path()));
    }

    #[test]
    fn guarded_markers() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        out.guarded(|_| Ok(())).unwrap();
        assert!(!tmp.path().join(RUNNING_MARKER).exists());
        assert!(out.guarded(|_| Err::<(), _>(Error::invalid("boom"))).is_err());
        assert!(std::fs::read_to_string(tmp.path().join(FAILED_MARKER)).unwrap().contains("boom"));
        assert!(!tmp.path().join(RUNNING_MARKER).exists());
    }

    #[test]
    fn heatmap_csv_shape() {
        let csv = heatmap_csv(&DenseMatrix::zeros(2, 2));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with(HEATMAP_SCHEMA));
    }
}
