//! Information fusion: learn per-network unified embeddings and a bank of
//! shared encoders by reconstructing the ground-truth similarity matrices
//! under a negative-sampled squared loss, producing common-space node
//! embeddings for preliminary matching.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ground::{NegativeSampler, Side, SimilarityGround};
use crate::seeding::sub_seed;
use crate::tensor::kernels;
use crate::tensor::{Grads, NodeId, ParamId, ParamStore, Tape, Tensor};

/// Which feature similarities participate in training; the label ground is
/// always included.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSet {
    pub structure: bool,
    pub profile: bool,
    pub content: bool,
}

impl FeatureSet {
    pub fn all() -> Self {
        FeatureSet {
            structure: true,
            profile: true,
            content: true,
        }
    }

    pub fn none() -> Self {
        FeatureSet {
            structure: false,
            profile: false,
            content: false,
        }
    }

    /// Parse variant names like "s", "pc" or "spc".
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = FeatureSet::none();
        if s.is_empty() {
            return Err(Error::Config("empty feature variant".into()));
        }
        for ch in s.chars() {
            let flag = match ch {
                's' => &mut set.structure,
                'p' => &mut set.profile,
                'c' => &mut set.content,
                other => {
                    return Err(Error::Config(format!(
                        "invalid feature variant `{s}`: unknown feature `{other}`"
                    )))
                }
            };
            if *flag {
                return Err(Error::Config(format!(
                    "invalid feature variant `{s}`: repeated feature `{ch}`"
                )));
            }
            *flag = true;
        }
        Ok(set)
    }

    /// Canonical name in "spc" order.
    pub fn name(&self) -> String {
        let mut out = String::new();
        if self.structure {
            out.push('s');
        }
        if self.profile {
            out.push('p');
        }
        if self.content {
            out.push('c');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub structure: f64,
    pub profile: f64,
    pub content: f64,
    pub label: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            structure: 1.0,
            profile: 1.0,
            content: 1.0,
            label: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub theta: f64,
    pub negatives: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub features: FeatureSet,
    pub weights: LossWeights,
    /// Stop when the mean total loss of one window improves on the previous
    /// window by less than `early_stop_tol`.
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 256,
            hidden: 512,
            theta: 0.99,
            negatives: 5,
            lr: 1e-3,
            epochs: 50,
            batch_size: 256,
            seed: 7,
            features: FeatureSet::all(),
            weights: LossWeights::default(),
            early_stop_window: 5,
            early_stop_tol: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("dim and hidden must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "theta must be in [0, 1], got {}",
                self.theta
            )));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.early_stop_window == 0 {
            return Err(Error::Config("early_stop_window must be positive".into()));
        }
        Ok(())
    }
}

/// One similarity-reconstruction path through the bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    /// Intra-network, asymmetric via the edge transformation.
    Structure(Side),
    Profile,
    Content,
    Label,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Parameter ids and dimensions of a bank; `Copy`, so loss closures can
/// recompute values from a bare store reference.
#[derive(Clone, Copy, Debug)]
pub struct BankLayout {
    pub dim: usize,
    pub hidden: usize,
    pub n_src: usize,
    pub n_tgt: usize,
    pub x_src: ParamId,
    pub x_tgt: ParamId,
    pub enc_s: MlpIds,
    pub enc_p: MlpIds,
    pub enc_c: MlpIds,
    pub phi: MlpIds,
    pub enc_s2c: MlpIds,
    pub enc_t2c: MlpIds,
}

impl BankLayout {
    fn role_params(&self, feature: Feature, i_role: bool) -> (ParamId, MlpIds) {
        match feature {
            Feature::Structure(side) => (self.x_param(side), self.enc_s),
            Feature::Profile => (
                if i_role { self.x_src } else { self.x_tgt },
                self.enc_p,
            ),
            Feature::Content => (
                if i_role { self.x_src } else { self.x_tgt },
                self.enc_c,
            ),
            Feature::Label => {
                if i_role {
                    (self.x_src, self.enc_s2c)
                } else {
                    (self.x_tgt, self.enc_t2c)
                }
            }
        }
    }

    pub fn x_param(&self, side: Side) -> ParamId {
        match side {
            Side::Source => self.x_src,
            Side::Target => self.x_tgt,
        }
    }

    fn mlp_plain(&self, store: &ParamStore, m: &MlpIds, x: &[f64]) -> Vec<f64> {
        kernels::mlp2(
            store.get(m.w1).data(),
            store.get(m.b1).data(),
            store.get(m.w2).data(),
            store.get(m.b2).data(),
            self.hidden,
            x.len(),
            store.get(m.w2).rows(),
            x,
        )
    }

    fn encode_plain(&self, store: &ParamStore, feature: Feature, i_role: bool, user: u32) -> Vec<f64> {
        let (x, enc) = self.role_params(feature, i_role);
        let emb = store.get(x).row(user as usize);
        let z = self.mlp_plain(store, &enc, emb);
        if matches!(feature, Feature::Structure(_)) && !i_role {
            self.mlp_plain(store, &self.phi, &z)
        } else {
            z
        }
    }

    fn encode_taped(
        &self,
        tape: &mut Tape,
        cache: &mut HashMap<u32, NodeId>,
        feature: Feature,
        i_role: bool,
        user: u32,
    ) -> NodeId {
        if let Some(&id) = cache.get(&user) {
            return id;
        }
        let (x, enc) = self.role_params(feature, i_role);
        let emb = tape.gather_row(x, user as usize);
        let mut z = tape.mlp2(enc.w1, enc.b1, enc.w2, enc.b2, emb);
        if matches!(feature, Feature::Structure(_)) && !i_role {
            z = tape.mlp2(self.phi.w1, self.phi.b1, self.phi.w2, self.phi.b2, z);
        }
        cache.insert(user, z);
        z
    }

    /// Negative-sampled squared loss over a batch with pre-drawn negatives,
    /// computed with the plain kernels (no tape). `scale` is weight / M.
    pub fn batch_loss_value(
        &self,
        store: &ParamStore,
        feature: Feature,
        ground: &SimilarityGround,
        batch: &[(u32, u32, f64)],
        negatives: &[Vec<u32>],
        scale: f64,
    ) -> f64 {
        let mut total = 0.0;
        for ((i, j, g), negs) in batch.iter().zip(negatives) {
            let ei = self.encode_plain(store, feature, true, *i);
            let ej = self.encode_plain(store, feature, false, *j);
            let r = kernels::cos_plus(&ei, &ej);
            total += (r - g) * (r - g);
            for n in negs {
                let en = self.encode_plain(store, feature, false, *n);
                let rn = kernels::cos_plus(&ei, &en);
                let gn = ground.g(*i, *n);
                total += (rn - gn) * (rn - gn);
            }
        }
        total * scale
    }
}

/// All trainable fusion parameters: the two unified-embedding matrices, per
/// feature encoders, the edge transformation and the two common-space
/// encoders. Encoders are shared by both networks' users.
pub struct EncoderBank {
    store: ParamStore,
    layout: BankLayout,
}

const MLP_NAMES: [&str; 6] = ["enc_s", "enc_p", "enc_c", "phi", "enc_s2c", "enc_t2c"];

impl EncoderBank {
    pub fn new(n_src: usize, n_tgt: usize, dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if n_src == 0 || n_tgt == 0 {
            return Err(Error::Config("both networks need at least one user".into()));
        }
        if dim == 0 || hidden == 0 {
            return Err(Error::Config("dim and hidden must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let x_src = store.register("x_src", Tensor::gaussian_init(n_src, dim, 0.1, &mut rng))?;
        let x_tgt = store.register("x_tgt", Tensor::gaussian_init(n_tgt, dim, 0.1, &mut rng))?;
        let mut mlps = Vec::with_capacity(MLP_NAMES.len());
        for name in MLP_NAMES {
            mlps.push(register_mlp(&mut store, name, dim, hidden, dim, &mut rng)?);
        }
        let [enc_s, enc_p, enc_c, phi, enc_s2c, enc_t2c]: [MlpIds; 6] =
            mlps.try_into().expect("six encoders");
        Ok(EncoderBank {
            store,
            layout: BankLayout {
                dim,
                hidden,
                n_src,
                n_tgt,
                x_src,
                x_tgt,
                enc_s,
                enc_p,
                enc_c,
                phi,
                enc_s2c,
                enc_t2c,
            },
        })
    }

    /// Rebind a bank from a loaded parameter store (checkpoint restore).
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let x_src = store
            .id_of("x_src")
            .ok_or_else(|| Error::Invalid("checkpoint missing x_src".into()))?;
        let x_tgt = store
            .id_of("x_tgt")
            .ok_or_else(|| Error::Invalid("checkpoint missing x_tgt".into()))?;
        let mut mlps = Vec::with_capacity(MLP_NAMES.len());
        for name in MLP_NAMES {
            mlps.push(lookup_mlp(&store, name)?);
        }
        let hidden = store.get(mlps[0].w1).rows();
        let [enc_s, enc_p, enc_c, phi, enc_s2c, enc_t2c]: [MlpIds; 6] =
            mlps.try_into().expect("six encoders");
        let layout = BankLayout {
            dim: store.get(x_src).cols(),
            hidden,
            n_src: store.get(x_src).rows(),
            n_tgt: store.get(x_tgt).rows(),
            x_src,
            x_tgt,
            enc_s,
            enc_p,
            enc_c,
            phi,
            enc_s2c,
            enc_t2c,
        };
        Ok(EncoderBank { store, layout })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn layout(&self) -> BankLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Reconstructed similarity for one user pair under one feature path.
    /// Structure pairs both users within the named network; the other
    /// features pair a source-network row user with a target-network
    /// column user.
    pub fn reconstruct(&self, feature: Feature, i: u32, j: u32) -> f64 {
        let a = self.layout.encode_plain(&self.store, feature, true, i);
        let b = self.layout.encode_plain(&self.store, feature, false, j);
        kernels::cos_plus(&a, &b)
    }

    /// Taped batch loss and its gradients. `scale` is weight / M.
    pub fn batch_loss_and_grads(
        &self,
        feature: Feature,
        ground: &SimilarityGround,
        batch: &[(u32, u32, f64)],
        negatives: &[Vec<u32>],
        scale: f64,
    ) -> Result<(f64, Grads)> {
        let mut tape = Tape::new(&self.store);
        let mut i_cache = HashMap::new();
        let mut j_cache = HashMap::new();
        let mut terms =
            Vec::with_capacity(batch.len() * (1 + negatives.first().map_or(0, Vec::len)));
        for ((i, j, g), negs) in batch.iter().zip(negatives) {
            let ei = self
                .layout
                .encode_taped(&mut tape, &mut i_cache, feature, true, *i);
            let ej = self
                .layout
                .encode_taped(&mut tape, &mut j_cache, feature, false, *j);
            let r = tape.cos_plus(ei, ej);
            terms.push(tape.sq_err(r, *g));
            for n in negs {
                let en = self
                    .layout
                    .encode_taped(&mut tape, &mut j_cache, feature, false, *n);
                let rn = tape.cos_plus(ei, en);
                terms.push(tape.sq_err(rn, ground.g(*i, *n)));
            }
        }
        let loss_id = tape.sum_scaled(&terms, scale);
        let loss = tape.scalar(loss_id);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite batch loss on the {feature:?} ground"
            )));
        }
        Ok((loss, tape.backward(loss_id)))
    }

    /// Plain-kernel twin of [`EncoderBank::batch_loss_and_grads`].
    pub fn batch_loss_value(
        &self,
        feature: Feature,
        ground: &SimilarityGround,
        batch: &[(u32, u32, f64)],
        negatives: &[Vec<u32>],
        scale: f64,
    ) -> f64 {
        self.layout
            .batch_loss_value(&self.store, feature, ground, batch, negatives, scale)
    }

    /// Common-space node embeddings for every user of both networks.
    pub fn node_embeddings(&self) -> NodeEmbeddings {
        let src = Embeddings::from_rows(
            (0..self.layout.n_src as u32)
                .into_par_iter()
                .map(|u| self.layout.encode_plain(&self.store, Feature::Label, true, u))
                .collect(),
            self.layout.dim,
        );
        let tgt = Embeddings::from_rows(
            (0..self.layout.n_tgt as u32)
                .into_par_iter()
                .map(|u| self.layout.encode_plain(&self.store, Feature::Label, false, u))
                .collect(),
            self.layout.dim,
        );
        NodeEmbeddings { src, tgt }
    }
}

// Weights start uniform in +/- 1/sqrt(fan_in), biases at zero. Zero biases
// keep freshly encoded users spread around the origin instead of clustered
// on a shared bias vector; a cluster whose cosine against its decoder
// counterpart starts negative would put the whole path in the truncation
// zone with no gradient to escape.
fn register_mlp(
    store: &mut ParamStore,
    name: &str,
    input: usize,
    hidden: usize,
    output: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MlpIds> {
    Ok(MlpIds {
        w1: store.register(&format!("{name}.w1"), Tensor::uniform_init(hidden, input, rng))?,
        b1: store.register(&format!("{name}.b1"), Tensor::zeros(hidden, 1))?,
        w2: store.register(&format!("{name}.w2"), Tensor::uniform_init(output, hidden, rng))?,
        b2: store.register(&format!("{name}.b2"), Tensor::zeros(output, 1))?,
    })
}

fn lookup_mlp(store: &ParamStore, name: &str) -> Result<MlpIds> {
    let get = |suffix: &str| {
        store
            .id_of(&format!("{name}.{suffix}"))
            .ok_or_else(|| Error::Invalid(format!("checkpoint missing {name}.{suffix}")))
    };
    Ok(MlpIds {
        w1: get("w1")?,
        b1: get("b1")?,
        w2: get("w2")?,
        b2: get("b2")?,
    })
}

/// Dense per-user vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Embeddings {
    pub fn from_rows(rows: Vec<Vec<f64>>, d: usize) -> Embeddings {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            debug_assert_eq!(r.len(), d);
            data.extend_from_slice(&r);
        }
        Embeddings { n, d, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, u: u32) -> &[f64] {
        &self.data[u as usize * self.d..(u as usize + 1) * self.d]
    }

    /// Unit-normalized copy; zero rows stay zero.
    pub fn normalized(&self) -> Embeddings {
        let mut data = self.data.clone();
        for u in 0..self.n {
            let row = &mut data[u * self.d..(u + 1) * self.d];
            let norm = kernels::norm(row);
            if norm > 0.0 {
                for v in row {
                    *v /= norm;
                }
            }
        }
        Embeddings {
            n: self.n,
            d: self.d,
            data,
        }
    }

    /// `user_id<TAB>v1 v2 ... vD` per line.
    pub fn save_tsv(
        &self,
        path: &std::path::Path,
        net: &crate::dataset::SocialNetwork,
    ) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        for u in 0..self.n as u32 {
            let values: Vec<String> = self.row(u).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}\t{}", net.user_id(u), values.join(" "))
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// Common-space vectors for both networks.
#[derive(Clone, Debug)]
pub struct NodeEmbeddings {
    pub src: Embeddings,
    pub tgt: Embeddings,
}

impl NodeEmbeddings {
    /// Truncated cosine between a source and a target user.
    pub fn similarity(&self, i: u32, j: u32) -> f64 {
        kernels::cos_plus(self.src.row(i), self.tgt.row(j))
    }
}

/// The ground truths available to one training run.
pub struct GroundSet {
    pub structure_src: Option<SimilarityGround>,
    pub structure_tgt: Option<SimilarityGround>,
    pub profile: Option<SimilarityGround>,
    pub content: Option<SimilarityGround>,
    pub label: SimilarityGround,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ground: String,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub log: Vec<EpochLoss>,
    /// Ground names that contributed loss terms, in schedule order.
    pub grounds_trained: Vec<String>,
    /// Positive pairs consumed per ground over the whole run.
    pub term_counts: Vec<(String, usize)>,
}

struct Task<'g> {
    name: &'static str,
    feature: Feature,
    ground: &'g SimilarityGround,
    sampler: NegativeSampler<'g>,
    pairs: Vec<(u32, u32, f64)>,
    scale: f64,
    consumed: usize,
}

/// Minimize the summed negative-sampled losses over all active grounds by
/// interleaved mini-batch Adam steps (one batch per ground per round).
/// Returns the trained bank, the node embeddings and the loss log.
pub fn train_fusion(
    grounds: &GroundSet,
    cfg: &TrainConfig,
) -> Result<(EncoderBank, NodeEmbeddings, TrainReport)> {
    cfg.validate()?;
    let n_src = grounds.label.n_rows();
    let n_tgt = grounds.label.n_cols();
    let mut bank = EncoderBank::new(
        n_src,
        n_tgt,
        cfg.dim,
        cfg.hidden,
        sub_seed(cfg.seed, "fusion.init"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "fusion.train"));

    let mut tasks = active_tasks(grounds, cfg)?;
    let mut report = TrainReport {
        grounds_trained: tasks.iter().map(|t| t.name.to_string()).collect(),
        ..TrainReport::default()
    };

    let mut epoch_totals: Vec<f64> = Vec::with_capacity(cfg.epochs);
    let mut prev_window_mean: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        for task in &mut tasks {
            task.pairs.shuffle(&mut rng);
        }
        let rounds = tasks
            .iter()
            .map(|t| t.pairs.len().div_ceil(cfg.batch_size))
            .max()
            .unwrap_or(0);
        let mut epoch_losses = vec![0.0; tasks.len()];
        for round in 0..rounds {
            for (ti, task) in tasks.iter_mut().enumerate() {
                let lo = round * cfg.batch_size;
                if lo >= task.pairs.len() {
                    continue;
                }
                let hi = (lo + cfg.batch_size).min(task.pairs.len());
                let batch = &task.pairs[lo..hi];
                let negs: Vec<Vec<u32>> = batch
                    .iter()
                    .map(|(i, _, _)| task.sampler.draw_k(*i, cfg.negatives, &mut rng))
                    .collect();
                let (loss, grads) =
                    bank.batch_loss_and_grads(task.feature, task.ground, batch, &negs, task.scale)?;
                bank.store.adam_step(&grads, cfg.lr)?;
                epoch_losses[ti] += loss;
                task.consumed += batch.len();
            }
        }
        let total: f64 = epoch_losses.iter().sum();
        for (task, loss) in tasks.iter().zip(&epoch_losses) {
            report.log.push(EpochLoss {
                epoch,
                ground: task.name.to_string(),
                loss: *loss,
            });
        }
        report.epochs_run = epoch + 1;
        epoch_totals.push(total);

        // Windowed early stop on the total loss.
        if (epoch + 1) % cfg.early_stop_window == 0 {
            let window = &epoch_totals[epoch + 1 - cfg.early_stop_window..];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            if let Some(prev) = prev_window_mean {
                if prev - mean < cfg.early_stop_tol {
                    break;
                }
            }
            prev_window_mean = Some(mean);
        }
    }

    report.term_counts = tasks
        .iter()
        .map(|t| (t.name.to_string(), t.consumed))
        .collect();
    let embeddings = bank.node_embeddings();
    Ok((bank, embeddings, report))
}

fn active_tasks<'g>(grounds: &'g GroundSet, cfg: &TrainConfig) -> Result<Vec<Task<'g>>> {
    let mut tasks = Vec::new();
    let push = |name: &'static str,
                    feature: Feature,
                    ground: &'g SimilarityGround,
                    weight: f64,
                    tasks: &mut Vec<Task<'g>>| {
        let m = ground.normalization_m(cfg.negatives);
        if m == 0 {
            log::warn!("{name} ground has no positive entries; skipping");
            return;
        }
        tasks.push(Task {
            name,
            feature,
            ground,
            sampler: NegativeSampler::new(ground),
            pairs: ground.positive_pairs(),
            scale: weight / m as f64,
            consumed: 0,
        });
    };

    if cfg.features.structure {
        let s_src = grounds.structure_src.as_ref().ok_or_else(|| {
            Error::Config("structure feature enabled but source structure ground missing".into())
        })?;
        let s_tgt = grounds.structure_tgt.as_ref().ok_or_else(|| {
            Error::Config("structure feature enabled but target structure ground missing".into())
        })?;
        expect_sides(s_src, Side::Source, Side::Source)?;
        expect_sides(s_tgt, Side::Target, Side::Target)?;
        push(
            "structure_src",
            Feature::Structure(Side::Source),
            s_src,
            cfg.weights.structure,
            &mut tasks,
        );
        push(
            "structure_tgt",
            Feature::Structure(Side::Target),
            s_tgt,
            cfg.weights.structure,
            &mut tasks,
        );
    }
    if cfg.features.profile {
        let p = grounds.profile.as_ref().ok_or_else(|| {
            Error::Config("profile feature enabled but profile ground missing".into())
        })?;
        expect_sides(p, Side::Source, Side::Target)?;
        push("profile", Feature::Profile, p, cfg.weights.profile, &mut tasks);
    }
    if cfg.features.content {
        let c = grounds.content.as_ref().ok_or_else(|| {
            Error::Config("content feature enabled but content ground missing".into())
        })?;
        expect_sides(c, Side::Source, Side::Target)?;
        push("content", Feature::Content, c, cfg.weights.content, &mut tasks);
    }
    expect_sides(&grounds.label, Side::Source, Side::Target)?;
    push("label", Feature::Label, &grounds.label, cfg.weights.label, &mut tasks);
    Ok(tasks)
}

fn expect_sides(ground: &SimilarityGround, rows: Side, cols: Side) -> Result<()> {
    if ground.row_side != rows || ground.col_side != cols {
        return Err(Error::Config(format!(
            "{} ground indexes {:?} x {:?} users, expected {:?} x {:?}",
            ground.kind, ground.row_side, ground.col_side, rows, cols
        )));
    }
    Ok(())
}

/// Negative-sampled loss estimate for an arbitrary reconstruction function;
/// the batch normally holds every positive pair of the ground.
pub fn sampled_loss_with<R: Rng, F: Fn(u32, u32) -> f64>(
    ground: &SimilarityGround,
    r_fn: F,
    batch: &[(u32, u32, f64)],
    negatives: usize,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> f64 {
    let m = ground.normalization_m(negatives);
    if m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, j, g) in batch {
        let r = r_fn(*i, *j);
        total += (r - g) * (r - g);
        for n in sampler.draw_k(*i, negatives, rng) {
            let rn = r_fn(*i, n);
            let gn = ground.g(*i, n);
            total += (rn - gn) * (rn - gn);
        }
    }
    total / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AnchorSet;
    use crate::ground::label_ground;

    fn tiny_bank(seed: u64) -> EncoderBank {
        EncoderBank::new(6, 6, 8, 12, seed).unwrap()
    }

    fn tiny_label_ground(n: usize) -> SimilarityGround {
        let anchors = AnchorSet::new((0..n as u32).map(|i| (i, i)).collect()).unwrap();
        label_ground(&anchors, n, n, 0.99)
    }

    #[test]
    fn reconstruct_stays_in_unit_interval() {
        let bank = tiny_bank(3);
        for feature in [
            Feature::Structure(Side::Source),
            Feature::Structure(Side::Target),
            Feature::Profile,
            Feature::Content,
            Feature::Label,
        ] {
            for i in 0..6 {
                for j in 0..6 {
                    let r = bank.reconstruct(feature, i, j);
                    assert!((0.0..=1.0).contains(&r), "{feature:?} r({i},{j}) = {r}");
                }
            }
        }
    }

    #[test]
    fn structure_reconstruction_is_asymmetric() {
        let bank = tiny_bank(5);
        let mut diffs = 0;
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    continue;
                }
                let a = bank.reconstruct(Feature::Structure(Side::Source), i, j);
                let b = bank.reconstruct(Feature::Structure(Side::Source), j, i);
                if (a - b).abs() > 1e-9 {
                    diffs += 1;
                }
            }
        }
        assert!(diffs > 0, "edge transformation should break symmetry");
    }

    #[test]
    fn reconstruct_is_deterministic_for_fixed_seed() {
        let a = tiny_bank(11);
        let b = tiny_bank(11);
        for i in 0..6 {
            assert_eq!(
                a.reconstruct(Feature::Label, i, (i + 1) % 6),
                b.reconstruct(Feature::Label, i, (i + 1) % 6)
            );
        }
    }

    #[test]
    fn perfect_reconstruction_gives_zero_loss() {
        let ground = tiny_label_ground(5);
        let sampler = NegativeSampler::new(&ground);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = ground.positive_pairs();
        let loss = sampled_loss_with(&ground, |i, j| ground.g(i, j), &batch, 3, &sampler, &mut rng);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_pair_loss_matches_hand_arithmetic() {
        // One training anchor (0, 0) in a 2x2 universe. The noise mass sits
        // entirely on column 0, so the negative draw always collides, gets
        // retried and is finally kept with its true target 1.0.
        // r = 0.3 everywhere: loss = ((0.3-1)^2 + (0.3-1)^2) / M with M = 2.
        let anchors = AnchorSet::new(vec![(0, 0)]).unwrap();
        let ground = label_ground(&anchors, 2, 2, 0.99);
        let sampler = NegativeSampler::new(&ground);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = ground.positive_pairs();
        let loss = sampled_loss_with(&ground, |_, _| 0.3, &batch, 1, &sampler, &mut rng);
        assert!((loss - 0.49).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn taped_loss_equals_plain_loss() {
        let bank = tiny_bank(7);
        let ground = tiny_label_ground(6);
        let sampler = NegativeSampler::new(&ground);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = ground.positive_pairs();
        let negs: Vec<Vec<u32>> = batch
            .iter()
            .map(|(i, _, _)| sampler.draw_k(*i, 4, &mut rng))
            .collect();
        let scale = 1.0 / ground.normalization_m(4) as f64;
        let plain = bank.batch_loss_value(Feature::Label, &ground, &batch, &negs, scale);
        let (taped, _) = bank
            .batch_loss_and_grads(Feature::Label, &ground, &batch, &negs, scale)
            .unwrap();
        assert_eq!(plain, taped);
    }

    #[test]
    fn gradients_match_finite_differences_through_encoder_stack() {
        use crate::tensor::gradcheck::{finite_difference, max_rel_err};
        let mut bank = EncoderBank::new(4, 4, 4, 6, 13).unwrap();
        let ground = tiny_label_ground(4);
        let batch = vec![(0u32, 0u32, 1.0), (1, 1, 1.0)];
        let negs = vec![vec![2u32, 3], vec![0, 2]];
        let scale = 0.25;

        let (_, grads) = bank
            .batch_loss_and_grads(Feature::Label, &ground, &batch, &negs, scale)
            .unwrap();
        let layout = bank.layout();
        let targets: Vec<ParamId> = bank.store.ids().collect();
        let numeric = finite_difference(
            &mut bank.store,
            &targets,
            |store| layout.batch_loss_value(store, Feature::Label, &ground, &batch, &negs, scale),
            1e-5,
        );
        for (id, num) in targets.iter().zip(&numeric) {
            let mut ana = grads
                .get(*id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; num.len()]);
            ana.resize(num.len(), 0.0);
            let err = max_rel_err(&ana, num, 1e-6);
            assert!(err < 1e-4, "param {} rel err {err}", id.index());
        }
    }

    #[test]
    fn source_structure_step_never_touches_target_embeddings() {
        let bank = tiny_bank(17);
        let net = crate::dataset::SocialNetwork::from_parts(
            (0..6).map(|i| format!("u{i}")).collect(),
            vec![(0, 1), (1, 2), (3, 4), (4, 5), (2, 0)],
            vec![],
            vec![],
        )
        .unwrap();
        let ground = crate::ground::structure_ground(&net, Side::Source, 0.99);
        let sampler = NegativeSampler::new(&ground);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = ground.positive_pairs();
        let negs: Vec<Vec<u32>> = batch
            .iter()
            .map(|(i, _, _)| sampler.draw_k(*i, 2, &mut rng))
            .collect();
        let (_, grads) = bank
            .batch_loss_and_grads(
                Feature::Structure(Side::Source),
                &ground,
                &batch,
                &negs,
                1.0,
            )
            .unwrap();
        assert!(grads.get(bank.layout.x_tgt).is_none());
        assert!(grads.get(bank.layout.x_src).is_some());
    }

    #[test]
    fn variant_parsing_accepts_known_sets_and_rejects_junk() {
        assert_eq!(FeatureSet::parse("spc").unwrap(), FeatureSet::all());
        assert_eq!(FeatureSet::parse("p").unwrap().name(), "p");
        assert_eq!(FeatureSet::parse("sc").unwrap().name(), "sc");
        assert!(FeatureSet::parse("").is_err());
        assert!(FeatureSet::parse("sx").is_err());
        assert!(FeatureSet::parse("ss").is_err());
    }

    #[test]
    fn ablation_trains_exactly_label_plus_selected_features() {
        let n = 8;
        let net = crate::dataset::SocialNetwork::from_parts(
            (0..n).map(|i| format!("u{i}")).collect(),
            vec![(0, 1), (1, 2), (2, 3), (4, 5), (6, 7), (3, 0)],
            (0..n).map(|i| format!("name{i}")).collect(),
            (0..n).map(|i| vec![format!("w{}", i % 3)]).collect(),
        )
        .unwrap();
        let tgt = net.clone();
        let grounds = GroundSet {
            structure_src: Some(crate::ground::structure_ground(&net, Side::Source, 0.99)),
            structure_tgt: Some(crate::ground::structure_ground(&tgt, Side::Target, 0.99)),
            profile: Some(crate::ground::profile_ground(&net, &tgt, 0.5)),
            content: Some(crate::ground::content_ground(&net, &tgt, 0.5)),
            label: tiny_label_ground(n as usize),
        };
        let cfg = TrainConfig {
            dim: 4,
            hidden: 6,
            epochs: 1,
            batch_size: 16,
            negatives: 2,
            features: FeatureSet::parse("pc").unwrap(),
            ..TrainConfig::default()
        };
        let (_, _, report) = train_fusion(&grounds, &cfg).unwrap();
        assert_eq!(report.grounds_trained, vec!["profile", "content", "label"]);
        assert!(report.term_counts.iter().all(|(_, n)| *n > 0));
    }

    #[test]
    fn zero_epochs_returns_initialization_embeddings() {
        let grounds = GroundSet {
            structure_src: None,
            structure_tgt: None,
            profile: None,
            content: None,
            label: tiny_label_ground(5),
        };
        let cfg = TrainConfig {
            dim: 4,
            hidden: 6,
            epochs: 0,
            features: FeatureSet::none(),
            ..TrainConfig::default()
        };
        let (bank, emb, report) = train_fusion(&grounds, &cfg).unwrap();
        assert_eq!(report.epochs_run, 0);
        let fresh = EncoderBank::new(5, 5, 4, 6, sub_seed(cfg.seed, "fusion.init")).unwrap();
        let fresh_emb = fresh.node_embeddings();
        assert_eq!(emb.src, fresh_emb.src);
        assert_eq!(emb.tgt, fresh_emb.tgt);
        assert_eq!(bank.store.step(), 0);
    }

    #[test]
    fn label_only_toy_training_pulls_anchors_together() {
        let n = 10;
        let grounds = GroundSet {
            structure_src: None,
            structure_tgt: None,
            profile: None,
            content: None,
            label: tiny_label_ground(n),
        };
        let cfg = TrainConfig {
            dim: 8,
            hidden: 16,
            epochs: 300,
            batch_size: 16,
            negatives: 3,
            lr: 5e-3,
            seed: 23,
            features: FeatureSet::none(),
            early_stop_window: 50,
            early_stop_tol: 1e-7,
            ..TrainConfig::default()
        };
        let (_, emb, _) = train_fusion(&grounds, &cfg).unwrap();
        let mut anchor_mean = 0.0;
        for u in 0..n as u32 {
            anchor_mean += emb.similarity(u, u);
        }
        anchor_mean /= n as f64;
        let mut off_mean = 0.0;
        let mut off_count = 0;
        for i in 0..n as u32 {
            for j in 0..n as u32 {
                if i != j {
                    off_mean += emb.similarity(i, j);
                    off_count += 1;
                }
            }
        }
        off_mean /= off_count as f64;
        assert!(anchor_mean >= 0.9, "anchor similarity too low: {anchor_mean}");
        assert!(
            anchor_mean > off_mean,
            "anchors ({anchor_mean}) should beat non-anchors ({off_mean})"
        );
    }

    #[test]
    fn node_similarity_ranking_invariant_to_positive_rescaling() {
        let bank = tiny_bank(29);
        let emb = bank.node_embeddings();
        let i = 2u32;
        let mut scores: Vec<(u32, f64)> = (0..6u32).map(|j| (j, emb.similarity(i, j))).collect();
        scores.sort_by(|a, b| b.1.total_cmp(&a.1));
        // Rescale z_i by 3: cosine unchanged.
        let mut scaled_rows: Vec<Vec<f64>> = (0..6u32).map(|u| emb.src.row(u).to_vec()).collect();
        for v in &mut scaled_rows[i as usize] {
            *v *= 3.0;
        }
        let scaled = NodeEmbeddings {
            src: Embeddings::from_rows(scaled_rows, emb.src.dim()),
            tgt: emb.tgt.clone(),
        };
        let mut rescored: Vec<(u32, f64)> =
            (0..6u32).map(|j| (j, scaled.similarity(i, j))).collect();
        rescored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let order_a: Vec<u32> = scores.iter().map(|(j, _)| *j).collect();
        let order_b: Vec<u32> = rescored.iter().map(|(j, _)| *j).collect();
        assert_eq!(order_a, order_b);
    }
}
