//! Experiment configuration: a flat `key = value` file, named presets and
//! `--key value` overrides.
//!
//! Resolution order, lowest first: built-in defaults, the preset named by
//! `preset`, the config file, the `S2FGL_OUTPUT_ROOT` environment variable
//! (for `output_dir` only), then command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gnn::Backbone;
use crate::graph::{load_graph, sbm_generate, Graph, SbmParams, SplitRatios};
use crate::losses::LossWeights;

pub const OUTPUT_ROOT_ENV: &str = "S2FGL_OUTPUT_ROOT";

/// Every accepted key with its default value and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("name", "experiment", "experiment id written into metrics rows"),
    ("preset", "", "named bundle of defaults: sbm, cora-like, cora-like-500"),
    ("dataset", "sbm", "`sbm` for the generator or a path to a graph file"),
    ("sbm_blocks", "50,50,50,50", "block sizes; one class per block"),
    ("sbm_p_in", "0.1", "within-block edge probability, one value or one per block"),
    ("sbm_p_out", "0.01", "between-block edge probability"),
    ("sbm_feature_dim", "16", "feature dimension"),
    ("sbm_mean_scale", "1.0", "standard deviation of the per-block feature means"),
    ("num_clients", "4", "number of Louvain clients"),
    ("backbone", "gcn", "gcn or acm"),
    ("method", "s2fgl", "fedavg, fedprox, s2fgl, nlir-only or fgma-only"),
    ("lambda1", "10", "distillation loss weight"),
    ("lambda2", "0.5", "spectral alignment loss weight"),
    ("mu", "0.01", "proximal weight for fedprox"),
    ("damping_alpha", "0.85", "PageRank restart probability"),
    ("k_fraction", "0.3333333333333333", "fraction of client nodes selected by centrality"),
    ("k_sim", "10", "neighbors kept in the similarity graph"),
    ("k_eig", "4", "eigenpairs taken from each end of the spectrum"),
    ("proto_fraction", "0.5", "fraction of holder clients sampled per anchor"),
    ("anchors_per_class", "4", "global anchors per class"),
    ("temperature", "1.0", "softmax temperature of the distillation loss"),
    ("rounds", "100", "communication rounds"),
    ("local_epochs", "3", "full-batch local epochs per round"),
    ("lr", "0.2", "SGD learning rate"),
    ("weight_decay", "0.0005", "L2 weight decay"),
    ("hidden", "64", "hidden width"),
    ("seeds", "0,1,2", "experiment seeds"),
    ("split", "0.6,0.2,0.2", "train,val,test ratios"),
    ("output_dir", "runs", "artifact directory"),
    ("sis_client_counts", "1,5,10,20", "client counts for sis-curve"),
    ("heatmap_bins", "20", "eigenvalue histogram bins for spectral-heatmap"),
    ("nlir_scales", "100,50,10,1", "lambda1 values for sensitivity"),
    ("fgma_scales", "0.01,0.05,0.5,1", "lambda2 values for sensitivity"),
];

fn preset(name: &str) -> Result<&'static [(&'static str, &'static str)]> {
    Ok(match name {
        "" | "sbm" => &[],
        "cora-like" => &[
            ("sbm_blocks", "351,217,418,818,426,298,180"),
            ("sbm_p_in", "0.008"),
            ("sbm_p_out", "0.0003"),
            ("sbm_feature_dim", "32"),
            ("sbm_mean_scale", "0.25"),
            ("num_clients", "10"),
        ],
        "cora-like-500" => &[
            ("sbm_blocks", "65,40,77,151,79,55,33"),
            ("sbm_p_in", "0.045"),
            ("sbm_p_out", "0.0016"),
            ("sbm_feature_dim", "32"),
            ("sbm_mean_scale", "0.25"),
            ("num_clients", "10"),
        ],
        other => return Err(Error::Config(format!("unknown preset `{other}`"))),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    FedAvg,
    FedProx,
    S2fgl,
    NlirOnly,
    FgmaOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::FedAvg, Method::FedProx, Method::S2fgl, Method::NlirOnly, Method::FgmaOnly];

    /// Loss weights actually applied for this method.
    pub fn effective_weights(self, lambda1: f64, lambda2: f64) -> LossWeights {
        let (l1, l2) = match self {
            Method::FedAvg | Method::FedProx => (0.0, 0.0),
            Method::S2fgl => (lambda1, lambda2),
            Method::NlirOnly => (lambda1, 0.0),
            Method::FgmaOnly => (0.0, lambda2),
        };
        LossWeights { lambda1: l1, lambda2: l2 }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::S2fgl => "s2fgl",
            Method::NlirOnly => "nlir-only",
            Method::FgmaOnly => "fgma-only",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Sbm(SbmParams),
    File(PathBuf),
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<Graph> {
        match self {
            DatasetSpec::Sbm(p) => sbm_generate(p, seed),
            DatasetSpec::File(path) => load_graph(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub num_clients: usize,
    pub backbone: Backbone,
    pub method: Method,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub damping_alpha: f64,
    pub k_fraction: f64,
    pub k_sim: usize,
    pub k_eig: usize,
    pub proto_fraction: f64,
    pub anchors_per_class: usize,
    pub temperature: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seeds: Vec<u64>,
    pub split: SplitRatios,
    pub output_dir: PathBuf,
    pub sis_client_counts: Vec<usize>,
    pub heatmap_bins: usize,
    pub nlir_scales: Vec<f64>,
    pub fgma_scales: Vec<f64>,
    resolved: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ConfigBuilder::new().build().expect("built-in defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn loss_weights(&self) -> LossWeights {
        self.method.effective_weights(self.lambda1, self.lambda2)
    }

    /// Resolved values in `key = value` form, sorted by key. Parsing this text
    /// reproduces the configuration.
    pub fn snapshot(&self) -> String {
        let mut out = String::from("# schema=s2fgl.config.v1\n");
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Copy with one key replaced and everything revalidated.
    pub fn with(&self, key: &str, value: impl ToString) -> Result<Self> {
        let mut b = ConfigBuilder::new();
        b.layers.push(self.resolved.clone());
        b.set(key, value.to_string())?;
        b.build()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.resolved.get(key).map(String::as_str)
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
        let key = k.trim().to_string();
        check_key(&key)?;
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key `{key}` given twice", ln + 1)));
        }
    }
    Ok(out)
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key `{key}`")))
    }
}

/// Layered configuration sources.
#[derive(Clone, Debug, Default)]
pub struct ConfigBuilder {
    layers: Vec<BTreeMap<String, String>>,
    overrides: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.layers.push(parse_config_text(&text)?);
        Ok(self)
    }

    pub fn text(mut self, text: &str) -> Result<Self> {
        self.layers.push(parse_config_text(text)?);
        Ok(self)
    }

    /// Reads `S2FGL_OUTPUT_ROOT` into `output_dir` when set.
    pub fn env(mut self) -> Self {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            if !root.is_empty() {
                self.layers.push(BTreeMap::from([("output_dir".to_string(), root)]));
            }
        }
        self
    }

    /// Highest-precedence value for `key`.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key)?;
        self.overrides.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies `--key value` and `--key=value` pairs.
    pub fn cli_overrides(mut self, args: &[String]) -> Result<Self> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{arg}`")))?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.replace('-', "_"), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("override `{arg}` is missing a value")))?;
                    (flag.replace('-', "_"), v.clone())
                }
            };
            self.set(&key, value)?;
        }
        Ok(self)
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let mut merged: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        let preset_name = self
            .overrides
            .get("preset")
            .or_else(|| self.layers.iter().rev().find_map(|l| l.get("preset")))
            .cloned()
            .unwrap_or_default();
        for (k, v) in preset(&preset_name)? {
            merged.insert(k.to_string(), v.to_string());
        }
        for layer in self.layers.iter().chain(std::iter::once(&self.overrides)) {
            for (k, v) in layer {
                merged.insert(k.clone(), v.clone());
            }
        }
        from_map(merged)
    }
}

fn field<T: FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = &m[key];
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{raw}`")))
}

fn list<T: FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    let raw = &m[key];
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{s}` in `{raw}`")))
        })
        .collect()
}

fn ensure(ok: bool, key: &str, rule: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("key `{key}` must be {rule}")))
    }
}

fn from_map(m: BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let dataset = match m["dataset"].as_str() {
        "sbm" => {
            let p = SbmParams {
                block_sizes: list(&m, "sbm_blocks")?,
                p_in: list(&m, "sbm_p_in")?,
                p_out: field(&m, "sbm_p_out")?,
                feature_dim: field(&m, "sbm_feature_dim")?,
                mean_scale: field(&m, "sbm_mean_scale")?,
            };
            ensure(!p.block_sizes.is_empty() && p.block_sizes.iter().all(|&b| b > 0), "sbm_blocks", "non-empty positive sizes")?;
            ensure(
                p.p_in.len() == 1 || p.p_in.len() == p.block_sizes.len(),
                "sbm_p_in",
                "one value or one per block",
            )?;
            ensure(p.p_in.iter().chain([&p.p_out]).all(|x| (0.0..=1.0).contains(x)), "sbm_p_in", "probabilities in [0, 1]")?;
            ensure(p.feature_dim >= 1, "sbm_feature_dim", ">= 1")?;
            ensure(p.mean_scale >= 0.0 && p.mean_scale.is_finite(), "sbm_mean_scale", "finite and >= 0")?;
            DatasetSpec::Sbm(p)
        }
        path => DatasetSpec::File(PathBuf::from(path)),
    };
    let split: Vec<f64> = list(&m, "split")?;
    ensure(split.len() == 3, "split", "three ratios train,val,test")?;
    let split = SplitRatios::new(split[0], split[1], split[2]).map_err(|e| Error::Config(format!("key `split`: {e}")))?;
    let backbone: Backbone = m["backbone"]
        .parse()
        .map_err(|_| Error::Config(format!("key `backbone`: unknown backbone `{}`", m["backbone"])))?;
    let cfg = ExperimentConfig {
        name: m["name"].clone(),
        dataset,
        num_clients: field(&m, "num_clients")?,
        backbone,
        method: m["method"].parse()?,
        lambda1: field(&m, "lambda1")?,
        lambda2: field(&m, "lambda2")?,
        mu: field(&m, "mu")?,
        damping_alpha: field(&m, "damping_alpha")?,
        k_fraction: field(&m, "k_fraction")?,
        k_sim: field(&m, "k_sim")?,
        k_eig: field(&m, "k_eig")?,
        proto_fraction: field(&m, "proto_fraction")?,
        anchors_per_class: field(&m, "anchors_per_class")?,
        temperature: field(&m, "temperature")?,
        rounds: field(&m, "rounds")?,
        local_epochs: field(&m, "local_epochs")?,
        lr: field(&m, "lr")?,
        weight_decay: field(&m, "weight_decay")?,
        hidden: field(&m, "hidden")?,
        seeds: list(&m, "seeds")?,
        split,
        output_dir: PathBuf::from(&m["output_dir"]),
        sis_client_counts: list(&m, "sis_client_counts")?,
        heatmap_bins: field(&m, "heatmap_bins")?,
        nlir_scales: list(&m, "nlir_scales")?,
        fgma_scales: list(&m, "fgma_scales")?,
        resolved: BTreeMap::new(),
    };
    let nonneg = |x: f64| x >= 0.0 && x.is_finite();
    let unit = |x: f64| x > 0.0 && x <= 1.0;
    ensure(!cfg.name.is_empty() && !cfg.name.contains(','), "name", "non-empty without commas")?;
    ensure(cfg.num_clients >= 1, "num_clients", ">= 1")?;
    ensure(nonneg(cfg.lambda1), "lambda1", "finite and >= 0")?;
    ensure(nonneg(cfg.lambda2), "lambda2", "finite and >= 0")?;
    ensure(nonneg(cfg.mu), "mu", "finite and >= 0")?;
    ensure(unit(cfg.damping_alpha), "damping_alpha", "in (0, 1]")?;
    ensure(unit(cfg.k_fraction), "k_fraction", "in (0, 1]")?;
    ensure(cfg.k_sim >= 1, "k_sim", ">= 1")?;
    ensure(cfg.k_eig >= 1, "k_eig", ">= 1")?;
    ensure(unit(cfg.proto_fraction), "proto_fraction", "in (0, 1]")?;
    ensure(cfg.anchors_per_class >= 1, "anchors_per_class", ">= 1")?;
    ensure(cfg.temperature > 0.0 && cfg.temperature.is_finite(), "temperature", "finite and > 0")?;
    ensure(cfg.rounds >= 1, "rounds", ">= 1")?;
    ensure(cfg.local_epochs >= 1, "local_epochs", ">= 1")?;
    ensure(cfg.lr > 0.0 && cfg.lr.is_finite(), "lr", "finite and > 0")?;
    ensure(nonneg(cfg.weight_decay), "weight_decay", "finite and >= 0")?;
    ensure(cfg.hidden >= 1, "hidden", ">= 1")?;
    ensure(!cfg.seeds.is_empty(), "seeds", "a non-empty list")?;
    ensure(cfg.sis_client_counts.iter().all(|&c| c >= 1), "sis_client_counts", ">= 1 each")?;
    ensure(cfg.heatmap_bins >= 1, "heatmap_bins", ">= 1")?;
    ensure(cfg.nlir_scales.iter().all(|&x| nonneg(x)), "nlir_scales", "finite and >= 0")?;
    ensure(cfg.fgma_scales.iter().all(|&x| nonneg(x)), "fgma_scales", "finite and >= 0")?;
    Ok(ExperimentConfig { resolved: m, ..cfg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        assert_eq!(c.method, Method::S2fgl);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.k_sim, 10);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ConfigBuilder::new().text("lambda3 = 1").unwrap_err();
        assert!(err.to_string().contains("lambda3"));
        let err = ConfigBuilder::new().cli_overrides(&["--bogus".into(), "1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn precedence_cli_over_file_over_preset() {
        let c = ConfigBuilder::new()
            .text("preset = cora-like-500\nrounds = 7\nlr = 0.5")
            .unwrap()
            .cli_overrides(&["--lr".into(), "0.1".into(), "--local-epochs=2".into()])
            .unwrap()
            .build()
            .unwrap();
        assert_eq!((c.rounds, c.lr, c.local_epochs, c.num_clients), (7, 0.1, 2, 10));
        match &c.dataset {
            DatasetSpec::Sbm(p) => assert_eq!(p.block_sizes.iter().sum::<usize>(), 500),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let c = ConfigBuilder::new().text("method = fgma-only\nseeds = 4,5").unwrap().build().unwrap();
        let again = ConfigBuilder::new().text(&c.snapshot()).unwrap().build().unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn validation() {
        for bad in ["lambda1 = -1", "damping_alpha = 0", "k_fraction = 1.5", "rounds = 0", "method = fedsgd", "split = 0.5,0.5,0.5", "seeds = "] {
            assert!(matches!(ConfigBuilder::new().text(bad).and_then(|b| b.build()), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn method_weights() {
        assert_eq!(Method::FedProx.effective_weights(1.0, 2.0), LossWeights { lambda1: 0.0, lambda2: 0.0 });
        assert_eq!(Method::NlirOnly.effective_weights(1.0, 2.0), LossWeights { lambda1: 1.0, lambda2: 0.0 });
        assert_eq!("fgma-only".parse::<Method>().unwrap(), Method::FgmaOnly);
    }
}
