//! Flat key=value run configuration with file loading, override layering
//! (CLI > file > defaults) and a canonical hash that names the run
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::{CellConfig, GridSpec};
use crate::fusion::{FeatureSet, LossWeights, TrainConfig};
use crate::neighborhood::NeighborhoodTrainConfig;
use crate::seeding::sub_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // synthetic dataset
    pub n_users: usize,
    pub attach_edges: usize,
    pub edge_keep_prob: f64,
    pub name_noise: f64,
    pub name_drop_prob: f64,
    pub vocab_size: usize,
    pub topics: usize,
    pub doc_length: usize,
    pub content_drift: f64,
    // model
    pub dim: usize,
    pub hidden: usize,
    // fusion training
    pub theta: f64,
    pub negatives: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_structure: f64,
    pub weight_profile: f64,
    pub weight_content: f64,
    pub weight_label: f64,
    // neighborhood
    pub tau: f64,
    pub nei_epochs: usize,
    pub nei_lr: f64,
    // scoring / evaluation
    pub lambda: f64,
    pub candidates: usize,
    pub k: usize,
    pub eta: f64,
    // run
    pub seed: u64,
    pub features: String,
    pub threads: usize,
    // grid
    pub grid_variants: Vec<String>,
    pub grid_etas: Vec<f64>,
    pub grid_lambdas: Vec<f64>,
    pub grid_seeds: Vec<u64>,
    // io
    pub out_dir: PathBuf,
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_users: 200,
            attach_edges: 4,
            edge_keep_prob: 0.8,
            name_noise: 0.1,
            name_drop_prob: 0.1,
            vocab_size: 400,
            topics: 16,
            doc_length: 50,
            content_drift: 0.2,
            dim: 256,
            hidden: 512,
            theta: 0.99,
            negatives: 5,
            lr: 1e-3,
            epochs: 50,
            batch_size: 256,
            weight_structure: 1.0,
            weight_profile: 1.0,
            weight_content: 1.0,
            weight_label: 1.0,
            tau: 0.5,
            nei_epochs: 30,
            nei_lr: 1e-3,
            lambda: 0.2,
            candidates: 250,
            k: 30,
            eta: 0.5,
            seed: 7,
            features: "spc".to_string(),
            threads: 0,
            grid_variants: ["s", "p", "c", "sp", "sc", "pc", "spc"]
                .map(str::to_string)
                .to_vec(),
            grid_etas: (1..=9).map(|i| i as f64 / 10.0).collect(),
            grid_lambdas: vec![0.2],
            grid_seeds: vec![7],
            out_dir: PathBuf::from("runs"),
            data_dir: None,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by an optional config file, overlaid by explicit
    /// `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: "expected `key=value`".to_string(),
                })?;
                cfg.set(key.trim(), value.trim())?;
            }
        }
        for pair in overrides {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{pair}` is not of the form key=value"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: `{value}`")))
        }
        match key {
            "n_users" => self.n_users = num(key, value)?,
            "attach_edges" => self.attach_edges = num(key, value)?,
            "edge_keep_prob" => self.edge_keep_prob = num(key, value)?,
            "name_noise" => self.name_noise = num(key, value)?,
            "name_drop_prob" => self.name_drop_prob = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "topics" => self.topics = num(key, value)?,
            "doc_length" => self.doc_length = num(key, value)?,
            "content_drift" => self.content_drift = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "negatives" => self.negatives = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "weight_structure" => self.weight_structure = num(key, value)?,
            "weight_profile" => self.weight_profile = num(key, value)?,
            "weight_content" => self.weight_content = num(key, value)?,
            "weight_label" => self.weight_label = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "nei_epochs" => self.nei_epochs = num(key, value)?,
            "nei_lr" => self.nei_lr = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "candidates" => self.candidates = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "features" => self.features = value.to_string(),
            "threads" => self.threads = num(key, value)?,
            "grid_variants" => {
                self.grid_variants = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "grid_etas" => self.grid_etas = parse_list(key, value)?,
            "grid_lambdas" => self.grid_lambdas = parse_list(key, value)?,
            "grid_seeds" => self.grid_seeds = parse_list(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data_dir" => {
                self.data_dir = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        self.train_config()?.validate()?;
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.k == 0 || self.candidates == 0 {
            return Err(Error::Config("k and candidates must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!(
                "eta must be in (0, 1), got {}",
                self.eta
            )));
        }
        for v in &self.grid_variants {
            FeatureSet::parse(v)?;
        }
        Ok(())
    }

    /// Canonical key/value view; feeds both the manifest and the hash.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("n_users", self.n_users.to_string());
        put("attach_edges", self.attach_edges.to_string());
        put("edge_keep_prob", self.edge_keep_prob.to_string());
        put("name_noise", self.name_noise.to_string());
        put("name_drop_prob", self.name_drop_prob.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("topics", self.topics.to_string());
        put("doc_length", self.doc_length.to_string());
        put("content_drift", self.content_drift.to_string());
        put("dim", self.dim.to_string());
        put("hidden", self.hidden.to_string());
        put("theta", self.theta.to_string());
        put("negatives", self.negatives.to_string());
        put("lr", self.lr.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("weight_structure", self.weight_structure.to_string());
        put("weight_profile", self.weight_profile.to_string());
        put("weight_content", self.weight_content.to_string());
        put("weight_label", self.weight_label.to_string());
        put("tau", self.tau.to_string());
        put("nei_epochs", self.nei_epochs.to_string());
        put("nei_lr", self.nei_lr.to_string());
        put("lambda", self.lambda.to_string());
        put("candidates", self.candidates.to_string());
        put("k", self.k.to_string());
        put("eta", self.eta.to_string());
        put("seed", self.seed.to_string());
        put("features", self.features.clone());
        put("grid_variants", self.grid_variants.join(","));
        put("grid_etas", join_list(&self.grid_etas));
        put("grid_lambdas", join_list(&self.grid_lambdas));
        put("grid_seeds", join_list(&self.grid_seeds));
        put(
            "data_dir",
            self.data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m
    }

    /// Hash over the canonical pairs. Execution details that cannot change
    /// results (out_dir, threads) stay out of the hash.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (k, v) in self.to_pairs() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.n_users,
            attach_edges: self.attach_edges,
            edge_keep_prob: self.edge_keep_prob,
            name_noise: self.name_noise,
            name_drop_prob: self.name_drop_prob,
            vocab_size: self.vocab_size,
            topics: self.topics,
            doc_length: self.doc_length,
            content_drift: self.content_drift,
            seed: sub_seed(self.seed, "generate"),
        }
    }

    pub fn feature_set(&self) -> Result<FeatureSet> {
        FeatureSet::parse(&self.features)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            dim: self.dim,
            hidden: self.hidden,
            theta: self.theta,
            negatives: self.negatives,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            features: self.feature_set()?,
            weights: LossWeights {
                structure: self.weight_structure,
                profile: self.weight_profile,
                content: self.weight_content,
                label: self.weight_label,
            },
            ..TrainConfig::default()
        })
    }

    pub fn nei_config(&self) -> NeighborhoodTrainConfig {
        NeighborhoodTrainConfig {
            hidden: self.hidden,
            negatives: self.negatives,
            lr: self.nei_lr,
            epochs: self.nei_epochs,
            batch_size: self.batch_size,
            tau: self.tau,
            seed: self.seed,
            ..NeighborhoodTrainConfig::default()
        }
    }

    pub fn cell_config(&self) -> Result<CellConfig> {
        Ok(CellConfig {
            train: self.train_config()?,
            nei: self.nei_config(),
            candidates: self.candidates,
            k: self.k,
            config_hash: self.hash(),
        })
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            variants: self.grid_variants.clone(),
            etas: self.grid_etas.clone(),
            lambdas: self.grid_lambdas.clone(),
            seeds: self.grid_seeds.clone(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value in {key}: `{s}`")))
        })
        .collect()
}

fn join_list<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_then_override_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed=41\ndim=32\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["seed=99".to_string()]).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.dim, 32);
        assert_eq!(cfg.hidden, 512);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("not_a_key", "1").is_err());
    }

    #[test]
    fn hash_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.theta = 0.5;
        assert_ne!(a.hash(), b.hash());
        // out_dir and threads are execution details, not results inputs.
        let mut c = RunConfig::default();
        c.out_dir = PathBuf::from("elsewhere");
        c.threads = 3;
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn grid_lists_parse() {
        let mut cfg = RunConfig::default();
        cfg.set("grid_etas", "0.3, 0.5,0.7").unwrap();
        assert_eq!(cfg.grid_etas, vec![0.3, 0.5, 0.7]);
        cfg.set("grid_seeds", "1,2,3").unwrap();
        assert_eq!(cfg.grid_seeds, vec![1, 2, 3]);
        assert!(cfg.set("grid_etas", "0.3,abc").is_err());
    }

    #[test]
    fn invalid_variant_in_grid_rejected() {
        let mut cfg = RunConfig::default();
        cfg.set("grid_variants", "s,xyz").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
