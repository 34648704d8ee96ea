//! Pipeline stages behind the CLI subcommands. Every stage works inside a
//! run directory named by the config hash, records its outputs in the run
//! manifest, and fails with a pointer to the missing upstream stage when
//! artifacts are absent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{generate_pair, AnchorSet, SocialNetwork};
use crate::error::{Error, Result};
use crate::eval::{
    rank_candidates, run_experiment_grid, write_results_csv, Experiment, GridRow, NodeScorer,
    RunMeta, ScoreReport,
};
use crate::fusion::{train_fusion, EncoderBank, GroundSet};
use crate::ground::{
    content_ground, label_ground, load_ground, profile_ground, save_ground, structure_ground,
    Side, SimilarityGround,
};
use crate::neighborhood::{
    train_neighborhood, CandidateIndex, NeighborhoodEncoder, NeighborhoodScorer,
};
use crate::seeding::sub_seed;
use crate::tensor::checkpoint;

pub const DATASET_FILES: [&str; 7] = [
    "edges_src.tsv",
    "edges_tgt.tsv",
    "profiles_src.tsv",
    "profiles_tgt.tsv",
    "contents_src.jsonl",
    "contents_tgt.jsonl",
    "anchors.tsv",
];

/// Locations inside one run directory.
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &RunConfig) -> RunPaths {
        RunPaths {
            root: cfg.out_dir.join(format!("run-{}", cfg.hash())),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn grounds_dir(&self) -> PathBuf {
        self.root.join("grounds")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn enhance_dir(&self) -> PathBuf {
        self.root.join("enhance")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn grid_dir(&self) -> PathBuf {
        self.root.join("grid")
    }
}

#[derive(Serialize, Deserialize, Default)]
pub struct Manifest {
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub stages: BTreeMap<String, Vec<String>>,
}

impl Manifest {
    fn load_or_new(paths: &RunPaths, cfg: &RunConfig) -> Result<Manifest> {
        let path = paths.manifest();
        if path.exists() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
            if manifest.config_hash != cfg.hash() {
                return Err(Error::Invalid(format!(
                    "run directory {} belongs to config {} but the current config hashes to {}",
                    paths.root().display(),
                    manifest.config_hash,
                    cfg.hash()
                )));
            }
            Ok(manifest)
        } else {
            Ok(Manifest {
                config_hash: cfg.hash(),
                config: cfg.to_pairs(),
                stages: BTreeMap::new(),
            })
        }
    }

    fn record(&mut self, stage: &str, files: Vec<String>) {
        self.stages.insert(stage.to_string(), files);
    }

    fn save(&self, paths: &RunPaths) -> Result<()> {
        let path = paths.manifest();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("serializing manifest: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn require(stage: &str, path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            stage: stage.to_string(),
            path,
            hint: hint.to_string(),
        })
    }
}

/// Sample the synthetic network pair and write the dataset files plus the
/// manifest. Returns the paths written.
pub fn stage_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    let dir = paths.dataset_dir();
    ensure_dir(&dir)?;
    let (src, tgt, anchors) = generate_pair(&cfg.synth_config())?;
    src.save_edges(&dir.join("edges_src.tsv"))?;
    tgt.save_edges(&dir.join("edges_tgt.tsv"))?;
    src.save_profiles(&dir.join("profiles_src.tsv"))?;
    tgt.save_profiles(&dir.join("profiles_tgt.tsv"))?;
    src.save_contents(&dir.join("contents_src.jsonl"))?;
    tgt.save_contents(&dir.join("contents_tgt.jsonl"))?;
    anchors.save(&dir.join("anchors.tsv"), &src, &tgt)?;

    let mut manifest = Manifest::load_or_new(&paths, cfg)?;
    manifest.record(
        "generate",
        DATASET_FILES.iter().map(|f| format!("dataset/{f}")).collect(),
    );
    manifest.save(&paths)?;
    Ok(DATASET_FILES.iter().map(|f| dir.join(f)).collect())
}

/// Load the network pair and anchors, either from `data_dir` or from the
/// run's generated dataset.
pub fn load_dataset(cfg: &RunConfig, stage: &str) -> Result<(SocialNetwork, SocialNetwork, AnchorSet)> {
    let dir = match &cfg.data_dir {
        Some(d) => d.clone(),
        None => RunPaths::new(cfg).dataset_dir(),
    };
    let hint = "netalign generate";
    let edges_src = require(stage, dir.join("edges_src.tsv"), hint)?;
    let edges_tgt = require(stage, dir.join("edges_tgt.tsv"), hint)?;
    let opt = |name: &str| {
        let p = dir.join(name);
        p.exists().then_some(p)
    };
    let src = SocialNetwork::load(
        &edges_src,
        opt("profiles_src.tsv").as_deref(),
        opt("contents_src.jsonl").as_deref(),
    )?;
    let tgt = SocialNetwork::load(
        &edges_tgt,
        opt("profiles_tgt.tsv").as_deref(),
        opt("contents_tgt.jsonl").as_deref(),
    )?;
    let anchors = AnchorSet::load(&require(stage, dir.join("anchors.tsv"), hint)?, &src, &tgt)?;
    Ok((src, tgt, anchors))
}

/// Fingerprint of the dataset files; ground caches embed it so editing the
/// data invalidates them.
fn dataset_fingerprint(cfg: &RunConfig) -> Result<String> {
    let dir = match &cfg.data_dir {
        Some(d) => d.clone(),
        None => RunPaths::new(cfg).dataset_dir(),
    };
    let mut hasher = Sha256::new();
    for name in DATASET_FILES {
        let path = dir.join(name);
        if path.exists() {
            let bytes = std::fs::read(&path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            hasher.update(name.as_bytes());
            hasher.update(&bytes);
        }
    }
    let digest = hasher.finalize();
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

pub struct PreparedGrounds {
    pub structure_src: SimilarityGround,
    pub structure_tgt: SimilarityGround,
    pub profile: SimilarityGround,
    pub content: SimilarityGround,
    pub label: SimilarityGround,
}

/// Build (or reuse) the ground-truth caches. A cache file whose embedded
/// key matches is loaded instead of recomputed, so a warm rerun is a no-op.
pub fn stage_prepare(cfg: &RunConfig) -> Result<PreparedGrounds> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    let dir = paths.grounds_dir();
    ensure_dir(&dir)?;
    let (src, tgt, anchors) = load_dataset(cfg, "prepare")?;
    let fingerprint = dataset_fingerprint(cfg)?;

    let feature_key = format!("data={fingerprint} theta={}", cfg.theta);
    let label_key = format!(
        "data={fingerprint} theta={} eta={} seed={}",
        cfg.theta, cfg.eta, cfg.seed
    );

    let cached = |path: &Path, key: &str, build: &dyn Fn() -> SimilarityGround| -> Result<SimilarityGround> {
        if path.exists() {
            if let Ok((ground, stored_key)) = load_ground(path) {
                if stored_key == key {
                    log::info!("cache hit: {}", path.display());
                    return Ok(ground);
                }
            }
            log::info!("cache stale: {}", path.display());
        }
        let ground = build();
        save_ground(path, &ground, key)?;
        Ok(ground)
    };

    let structure_src = cached(&dir.join("structure_src.ground"), &feature_key, &|| {
        structure_ground(&src, Side::Source, cfg.theta)
    })?;
    let structure_tgt = cached(&dir.join("structure_tgt.ground"), &feature_key, &|| {
        structure_ground(&tgt, Side::Target, cfg.theta)
    })?;
    let profile = cached(&dir.join("profile.ground"), &feature_key, &|| {
        profile_ground(&src, &tgt, cfg.theta)
    })?;
    let content = cached(&dir.join("content.ground"), &feature_key, &|| {
        content_ground(&src, &tgt, cfg.theta)
    })?;
    let label = cached(&dir.join("label.ground"), &label_key, &|| {
        let tagged = anchors
            .split(cfg.eta, sub_seed(cfg.seed, "anchor.split"))
            .expect("eta validated");
        label_ground(&tagged, src.n_users(), tgt.n_users(), cfg.theta)
    })?;

    let mut manifest = Manifest::load_or_new(&paths, cfg)?;
    manifest.record(
        "prepare",
        [
            "structure_src",
            "structure_tgt",
            "profile",
            "content",
            "label",
        ]
        .iter()
        .map(|n| format!("grounds/{n}.ground"))
        .collect(),
    );
    manifest.save(&paths)?;
    Ok(PreparedGrounds {
        structure_src,
        structure_tgt,
        profile,
        content,
        label,
    })
}

fn load_cached_ground(stage: &str, path: PathBuf) -> Result<SimilarityGround> {
    let path = require(stage, path, "netalign prepare")?;
    Ok(load_ground(&path)?.0)
}

/// Train the fusion component from the prepared grounds; write the
/// parameter checkpoint, the embedding exports and the training log.
pub fn stage_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    let dir = paths.model_dir();
    ensure_dir(&dir)?;
    let (src, tgt, _) = load_dataset(cfg, "train")?;
    let grounds_dir = paths.grounds_dir();
    let features = cfg.feature_set()?;
    let grounds = GroundSet {
        structure_src: features
            .structure
            .then(|| load_cached_ground("train", grounds_dir.join("structure_src.ground")))
            .transpose()?,
        structure_tgt: features
            .structure
            .then(|| load_cached_ground("train", grounds_dir.join("structure_tgt.ground")))
            .transpose()?,
        profile: features
            .profile
            .then(|| load_cached_ground("train", grounds_dir.join("profile.ground")))
            .transpose()?,
        content: features
            .content
            .then(|| load_cached_ground("train", grounds_dir.join("content.ground")))
            .transpose()?,
        label: load_cached_ground("train", grounds_dir.join("label.ground"))?,
    };

    let (bank, embeddings, report) = train_fusion(&grounds, &cfg.train_config()?)?;

    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), cfg.hash());
    meta.insert("stage".to_string(), "train".to_string());
    meta.insert("features".to_string(), features.name());
    checkpoint::save(&dir.join("fusion.ckpt"), bank.store(), &meta)?;
    embeddings.src.save_tsv(&dir.join("embeddings_src.tsv"), &src)?;
    embeddings.tgt.save_tsv(&dir.join("embeddings_tgt.tsv"), &tgt)?;

    let log_path = dir.join("train_log.csv");
    {
        use std::io::Write;
        let file = std::fs::File::create(&log_path)
            .map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "epoch,ground,loss")
            .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
        for row in &report.log {
            writeln!(w, "{},{},{:.9}", row.epoch, row.ground, row.loss)
                .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
        }
    }

    let mut manifest = Manifest::load_or_new(&paths, cfg)?;
    manifest.record(
        "train",
        vec![
            "model/fusion.ckpt".into(),
            "model/embeddings_src.tsv".into(),
            "model/embeddings_tgt.tsv".into(),
            "model/train_log.csv".into(),
        ],
    );
    manifest.save(&paths)?;
    Ok(())
}

fn load_bank(stage: &str, paths: &RunPaths) -> Result<EncoderBank> {
    let path = require(stage, paths.model_dir().join("fusion.ckpt"), "netalign train")?;
    let (store, _) = checkpoint::load(&path)?;
    EncoderBank::from_store(store)
}

fn split_pairs(cfg: &RunConfig, anchors: &AnchorSet) -> Result<(Vec<(u32, u32)>, Vec<(u32, u32)>)> {
    let tagged = anchors.split(cfg.eta, sub_seed(cfg.seed, "anchor.split"))?;
    Ok((
        tagged.train_pairs().map(|p| (p.source, p.target)).collect(),
        tagged.test_pairs().map(|p| (p.source, p.target)).collect(),
    ))
}

/// Build the candidate index and train the neighborhood encoder on the
/// frozen node embeddings.
pub fn stage_enhance(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    let dir = paths.enhance_dir();
    ensure_dir(&dir)?;
    let (src, tgt, anchors) = load_dataset(cfg, "enhance")?;
    let bank = load_bank("enhance", &paths)?;
    let embeddings = bank.node_embeddings();
    let (train_pairs, _) = split_pairs(cfg, &anchors)?;

    let candidates = CandidateIndex::build(&embeddings, cfg.candidates);
    candidates.save_tsv(&dir.join("candidates.tsv"), &src, &tgt)?;

    let (encoder, _report) = train_neighborhood(
        &train_pairs,
        &candidates,
        &embeddings,
        &src,
        &tgt,
        &cfg.nei_config(),
    )?;
    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), cfg.hash());
    meta.insert("stage".to_string(), "enhance".to_string());
    checkpoint::save(&dir.join("nei.ckpt"), encoder.store(), &meta)?;

    let mut manifest = Manifest::load_or_new(&paths, cfg)?;
    manifest.record(
        "enhance",
        vec!["enhance/candidates.tsv".into(), "enhance/nei.ckpt".into()],
    );
    manifest.save(&paths)?;
    Ok(())
}

/// Score the test anchors and write results + per-user detail.
pub fn stage_eval(cfg: &RunConfig) -> Result<ScoreReport> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    let dir = paths.eval_dir();
    ensure_dir(&dir)?;
    let (src, tgt, anchors) = load_dataset(cfg, "eval")?;
    let bank = load_bank("eval", &paths)?;
    let embeddings = bank.node_embeddings();
    let (_, test_pairs) = split_pairs(cfg, &anchors)?;
    let node = NodeScorer::new(&embeddings);
    let meta = RunMeta {
        variant: cfg.feature_set()?.name(),
        eta: cfg.eta,
        lambda: cfg.lambda,
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };

    let report = if cfg.lambda > 0.0 {
        let nei_path = require("eval", paths.enhance_dir().join("nei.ckpt"), "netalign enhance")?;
        let (store, _) = checkpoint::load(&nei_path)?;
        let encoder = NeighborhoodEncoder::from_store(store)?;
        let candidates = CandidateIndex::build(&embeddings, cfg.candidates);
        let scorer = NeighborhoodScorer::new(&encoder, &embeddings, &src, &tgt, cfg.tau);
        rank_candidates(
            &test_pairs,
            &node,
            Some((&scorer, &candidates)),
            cfg.lambda,
            cfg.k,
            meta,
        )?
    } else {
        rank_candidates(&test_pairs, &node, None, cfg.lambda, cfg.k, meta)?
    };

    let row = GridRow {
        variant: report.meta.variant.clone(),
        eta: cfg.eta,
        lambda: cfg.lambda,
        seed: cfg.seed,
        hit_precision: report.hit_precision,
        n_test: report.rankings.len(),
    };
    write_results_csv(&dir.join("results.csv"), &[row])?;
    report.save_detail_csv(&dir.join("detail.csv"), &src, &tgt)?;

    let mut manifest = Manifest::load_or_new(&paths, cfg)?;
    manifest.record(
        "eval",
        vec!["eval/results.csv".into(), "eval/detail.csv".into()],
    );
    manifest.save(&paths)?;
    Ok(report)
}

/// Full factorial experiment; one results CSV over all cells.
pub fn stage_grid(cfg: &RunConfig) -> Result<Vec<GridRow>> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg);
    let dir = paths.grid_dir();
    ensure_dir(&dir)?;
    let (src, tgt, anchors) = load_dataset(cfg, "grid")?;
    let experiment = Experiment::prepare(&src, &tgt, &anchors, cfg.theta);
    let rows = run_experiment_grid(&experiment, &cfg.grid_spec(), &cfg.cell_config()?)?;
    write_results_csv(&dir.join("results.csv"), &rows)?;

    let mut manifest = Manifest::load_or_new(&paths, cfg)?;
    manifest.record("grid", vec!["grid/results.csv".into()]);
    manifest.save(&paths)?;
    Ok(rows)
}
