//! Neighborhood enhancement: partition the neighborhoods of a candidate
//! pair into potential matched/unmatched sets under a one-to-one-at-most
//! constraint, aggregate each set by an unweighted mean, encode the
//! pair-adaptive neighborhood embeddings and score their truncated cosine.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SocialNetwork;
use crate::error::{Error, Result};
use crate::fusion::{Embeddings, MlpIds, NodeEmbeddings};
use crate::ground::NEGATIVE_RETRY_CAP;
use crate::seeding::sub_seed;
use crate::tensor::kernels;
use crate::tensor::{NodeId, ParamStore, Tape, Tensor};

/// Neighbor split for one candidate pair (i, j): matched pairs plus the
/// leftovers on each side. Matched source and target sets always have equal
/// size, one entry per matched pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborPartition {
    pub matched: Vec<(u32, u32)>,
    pub unmatched_src: Vec<u32>,
    pub unmatched_tgt: Vec<u32>,
}

impl NeighborPartition {
    pub fn matched_src(&self) -> impl Iterator<Item = u32> + '_ {
        self.matched.iter().map(|(s, _)| *s)
    }

    pub fn matched_tgt(&self) -> impl Iterator<Item = u32> + '_ {
        self.matched.iter().map(|(_, t)| *t)
    }
}

/// Greedy maximum-similarity matching between two neighbor sets: enumerate
/// cross pairs scoring at least `tau`, sweep in descending similarity and
/// accept a pair iff both endpoints are still unassigned.
pub fn match_neighbors<F>(
    neighbors_i: &[u32],
    neighbors_j: &[u32],
    node_sim: F,
    tau: f64,
) -> NeighborPartition
where
    F: Fn(u32, u32) -> f64,
{
    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    for &s in neighbors_i {
        for &t in neighbors_j {
            let sim = node_sim(s, t);
            if sim >= tau {
                candidates.push((sim, s, t));
            }
        }
    }
    // Descending similarity; index tie-break keeps the sweep deterministic.
    candidates.sort_unstable_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
    });

    let mut used_src: HashMap<u32, ()> = HashMap::new();
    let mut used_tgt: HashMap<u32, ()> = HashMap::new();
    let mut matched = Vec::new();
    for (_, s, t) in candidates {
        if used_src.contains_key(&s) || used_tgt.contains_key(&t) {
            continue;
        }
        used_src.insert(s, ());
        used_tgt.insert(t, ());
        matched.push((s, t));
    }
    let unmatched_src = neighbors_i
        .iter()
        .copied()
        .filter(|s| !used_src.contains_key(s))
        .collect();
    let unmatched_tgt = neighbors_j
        .iter()
        .copied()
        .filter(|t| !used_tgt.contains_key(t))
        .collect();
    NeighborPartition {
        matched,
        unmatched_src,
        unmatched_tgt,
    }
}

/// Mean of the members' node embeddings; the empty set aggregates to the
/// zero vector, keeping the downstream concatenation shape fixed.
pub fn aggregate(members: &[u32], z: &Embeddings) -> Vec<f64> {
    let rows: Vec<&[f64]> = members.iter().map(|&u| z.row(u)).collect();
    kernels::mean_rows(&rows, z.dim())
}

/// Two-layer perceptron from 3 * dim (node embedding plus the two
/// aggregated neighborhoods) down to dim, shared by both networks.
pub struct NeighborhoodEncoder {
    store: ParamStore,
    mlp: MlpIds,
    dim: usize,
    hidden: usize,
}

impl NeighborhoodEncoder {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Config("dim and hidden must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let mlp = MlpIds {
            w1: store.register("enc_nei.w1", Tensor::uniform_init(hidden, 3 * dim, &mut rng))?,
            b1: store.register("enc_nei.b1", Tensor::zeros(hidden, 1))?,
            w2: store.register("enc_nei.w2", Tensor::uniform_init(dim, hidden, &mut rng))?,
            b2: store.register("enc_nei.b2", Tensor::zeros(dim, 1))?,
        };
        Ok(NeighborhoodEncoder {
            store,
            mlp,
            dim,
            hidden,
        })
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let get = |name: &str| {
            store
                .id_of(name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint missing {name}")))
        };
        let mlp = MlpIds {
            w1: get("enc_nei.w1")?,
            b1: get("enc_nei.b1")?,
            w2: get("enc_nei.w2")?,
            b2: get("enc_nei.b2")?,
        };
        let hidden = store.get(mlp.w1).rows();
        let dim = store.get(mlp.w2).rows();
        if store.get(mlp.w1).cols() != 3 * dim {
            return Err(Error::Invalid(
                "neighborhood encoder input is not 3x the embedding dim".into(),
            ));
        }
        Ok(NeighborhoodEncoder {
            store,
            mlp,
            dim,
            hidden,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// h = MLP(z ++ h_pos ++ h_neg).
    pub fn embed(&self, z: &[f64], h_pos: &[f64], h_neg: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim, "node embedding dim");
        assert_eq!(h_pos.len(), self.dim, "matched aggregate dim");
        assert_eq!(h_neg.len(), self.dim, "unmatched aggregate dim");
        let mut input = Vec::with_capacity(3 * self.dim);
        input.extend_from_slice(z);
        input.extend_from_slice(h_pos);
        input.extend_from_slice(h_neg);
        kernels::mlp2(
            self.store.get(self.mlp.w1).data(),
            self.store.get(self.mlp.b1).data(),
            self.store.get(self.mlp.w2).data(),
            self.store.get(self.mlp.b2).data(),
            self.hidden,
            3 * self.dim,
            self.dim,
            &input,
        )
    }

    fn embed_taped(
        &self,
        tape: &mut Tape,
        z: &[f64],
        members_pos: &[&[f64]],
        members_neg: &[&[f64]],
    ) -> NodeId {
        let zn = tape.constant(z.to_vec());
        let pos = self.aggregate_taped(tape, members_pos);
        let neg = self.aggregate_taped(tape, members_neg);
        let input = tape.concat(&[zn, pos, neg]);
        tape.mlp2(self.mlp.w1, self.mlp.b1, self.mlp.w2, self.mlp.b2, input)
    }

    fn aggregate_taped(&self, tape: &mut Tape, members: &[&[f64]]) -> NodeId {
        if members.is_empty() {
            return tape.constant(vec![0.0; self.dim]);
        }
        let nodes: Vec<NodeId> = members.iter().map(|m| tape.constant(m.to_vec())).collect();
        tape.mean(&nodes)
    }
}

/// Weighted sum of node and neighborhood similarity:
/// (r_node + lambda * r_nei) / (1 + lambda).
pub fn total_similarity(r_node: f64, r_nei: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0, "lambda must be non-negative");
    (r_node + lambda * r_nei) / (1.0 + lambda)
}

/// Per-source-user candidate lists: the top-C target users by node
/// similarity, descending, index tie-break.
#[derive(Clone, Debug, Default)]
pub struct CandidateIndex {
    per_source: Vec<Vec<(u32, f64)>>,
}

impl CandidateIndex {
    /// Rank all targets for every source user and keep the top `c`.
    pub fn build(embeddings: &NodeEmbeddings, c: usize) -> CandidateIndex {
        use rayon::prelude::*;
        let zs = embeddings.src.normalized();
        let zt = embeddings.tgt.normalized();
        let n_tgt = zt.n() as u32;
        let per_source = (0..zs.n() as u32)
            .into_par_iter()
            .map(|i| {
                let zi = zs.row(i);
                let mut scored: Vec<(u32, f64)> = (0..n_tgt)
                    .map(|j| (j, kernels::dot(zi, zt.row(j)).max(0.0)))
                    .collect();
                scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                scored.truncate(c);
                scored
            })
            .collect();
        CandidateIndex { per_source }
    }

    pub fn row(&self, i: u32) -> &[(u32, f64)] {
        &self.per_source[i as usize]
    }

    pub fn n_rows(&self) -> usize {
        self.per_source.len()
    }

    /// `source_id<TAB>rank<TAB>target_id<TAB>r_node` per line.
    pub fn save_tsv(
        &self,
        path: &std::path::Path,
        src: &SocialNetwork,
        tgt: &SocialNetwork,
    ) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        for (i, row) in self.per_source.iter().enumerate() {
            for (rank, (j, score)) in row.iter().enumerate() {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{score}",
                    src.user_id(i as u32),
                    rank + 1,
                    tgt.user_id(*j)
                )
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
        }
        Ok(())
    }
}

/// Read-only scoring context: frozen node embeddings, adjacency of both
/// networks and the trained neighborhood encoder.
pub struct NeighborhoodScorer<'a> {
    encoder: &'a NeighborhoodEncoder,
    z_src: &'a Embeddings,
    z_tgt: &'a Embeddings,
    zn_src: Embeddings,
    zn_tgt: Embeddings,
    adj_src: Vec<Vec<u32>>,
    adj_tgt: Vec<Vec<u32>>,
    tau: f64,
}

impl<'a> NeighborhoodScorer<'a> {
    pub fn new(
        encoder: &'a NeighborhoodEncoder,
        embeddings: &'a NodeEmbeddings,
        src: &SocialNetwork,
        tgt: &SocialNetwork,
        tau: f64,
    ) -> NeighborhoodScorer<'a> {
        let adj_src = (0..src.n_users() as u32)
            .map(|u| src.neighbors(u).to_vec())
            .collect();
        let adj_tgt = (0..tgt.n_users() as u32)
            .map(|u| tgt.neighbors(u).to_vec())
            .collect();
        NeighborhoodScorer {
            encoder,
            z_src: &embeddings.src,
            z_tgt: &embeddings.tgt,
            zn_src: embeddings.src.normalized(),
            zn_tgt: embeddings.tgt.normalized(),
            adj_src,
            adj_tgt,
            tau,
        }
    }

    fn node_sim(&self, s: u32, t: u32) -> f64 {
        kernels::dot(self.zn_src.row(s), self.zn_tgt.row(t)).max(0.0)
    }

    pub fn partition(&self, i: u32, j: u32) -> NeighborPartition {
        match_neighbors(
            &self.adj_src[i as usize],
            &self.adj_tgt[j as usize],
            |s, t| self.node_sim(s, t),
            self.tau,
        )
    }

    /// Pair-adaptive neighborhood embeddings for both sides of (i, j).
    fn pair_embeddings(&self, i: u32, j: u32, partition: &NeighborPartition) -> (Vec<f64>, Vec<f64>) {
        let matched_src: Vec<u32> = partition.matched_src().collect();
        let matched_tgt: Vec<u32> = partition.matched_tgt().collect();
        let h_i = self.encoder.embed(
            self.z_src.row(i),
            &aggregate(&matched_src, self.z_src),
            &aggregate(&partition.unmatched_src, self.z_src),
        );
        let h_j = self.encoder.embed(
            self.z_tgt.row(j),
            &aggregate(&matched_tgt, self.z_tgt),
            &aggregate(&partition.unmatched_tgt, self.z_tgt),
        );
        (h_i, h_j)
    }

    /// r_nei: truncated cosine of the two neighborhood embeddings.
    pub fn score(&self, i: u32, j: u32) -> f64 {
        let partition = self.partition(i, j);
        let (h_i, h_j) = self.pair_embeddings(i, j, &partition);
        kernels::cos_plus(&h_i, &h_j)
    }
}

#[derive(Clone, Debug)]
pub struct NeighborhoodTrainConfig {
    pub hidden: usize,
    pub negatives: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub seed: u64,
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
}

impl Default for NeighborhoodTrainConfig {
    fn default() -> Self {
        NeighborhoodTrainConfig {
            hidden: 512,
            negatives: 5,
            lr: 1e-3,
            epochs: 30,
            batch_size: 256,
            tau: 0.5,
            seed: 7,
            early_stop_window: 5,
            early_stop_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NeighborhoodTrainReport {
    pub epochs_run: usize,
    pub losses: Vec<f64>,
}

/// Train the neighborhood encoder against the anchor indicator with the
/// same negative-sampled squared loss, drawing negatives uniformly from
/// each source user's candidate list. Node embeddings stay frozen: only the
/// encoder's parameters are registered for gradients.
pub fn train_neighborhood(
    train_anchors: &[(u32, u32)],
    candidates: &CandidateIndex,
    embeddings: &NodeEmbeddings,
    src: &SocialNetwork,
    tgt: &SocialNetwork,
    cfg: &NeighborhoodTrainConfig,
) -> Result<(NeighborhoodEncoder, NeighborhoodTrainReport)> {
    if train_anchors.is_empty() {
        return Err(Error::Config(
            "neighborhood training needs at least one training anchor".into(),
        ));
    }
    if !(cfg.tau >= 0.0) {
        return Err(Error::Config(format!("tau must be non-negative, got {}", cfg.tau)));
    }
    let mut encoder = NeighborhoodEncoder::new(
        embeddings.src.dim(),
        cfg.hidden,
        sub_seed(cfg.seed, "neighborhood.init"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "neighborhood.train"));
    let adj_src: Vec<Vec<u32>> = (0..src.n_users() as u32)
        .map(|u| src.neighbors(u).to_vec())
        .collect();
    let adj_tgt: Vec<Vec<u32>> = (0..tgt.n_users() as u32)
        .map(|u| tgt.neighbors(u).to_vec())
        .collect();
    let zn_src = embeddings.src.normalized();
    let zn_tgt = embeddings.tgt.normalized();

    let m = ((cfg.negatives + 1) * train_anchors.len()) as f64;
    let scale = 1.0 / m;
    let mut pairs: Vec<(u32, u32)> = train_anchors.to_vec();
    let mut partition_cache: HashMap<(u32, u32), NeighborPartition> = HashMap::new();
    let mut report = NeighborhoodTrainReport::default();
    let mut prev_window_mean: Option<f64> = None;

    // The encoder parameters move between epochs but z stays frozen, so
    // partitions are computed once per pair and cached.
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let mut batch: Vec<(u32, u32, f64)> = Vec::with_capacity(chunk.len() * (cfg.negatives + 1));
            for &(i, j_pos) in chunk {
                batch.push((i, j_pos, 1.0));
                for _ in 0..cfg.negatives {
                    let j = draw_candidate_negative(candidates, i, j_pos, &mut rng);
                    let g = if j == j_pos { 1.0 } else { 0.0 };
                    batch.push((i, j, g));
                }
            }
            let (loss, grads) = {
                let mut tape = Tape::new(&encoder.store);
                let mut terms = Vec::with_capacity(batch.len());
                for &(i, j, g) in &batch {
                    let partition = partition_cache
                        .entry((i, j))
                        .or_insert_with(|| {
                            match_neighbors(
                                &adj_src[i as usize],
                                &adj_tgt[j as usize],
                                |s, t| kernels::dot(zn_src.row(s), zn_tgt.row(t)).max(0.0),
                                cfg.tau,
                            )
                        })
                        .clone();
                    let matched_src: Vec<u32> = partition.matched_src().collect();
                    let matched_tgt: Vec<u32> = partition.matched_tgt().collect();
                    let h_i = encoder.embed_taped(
                        &mut tape,
                        embeddings.src.row(i),
                        &member_rows(&matched_src, &embeddings.src),
                        &member_rows(&partition.unmatched_src, &embeddings.src),
                    );
                    let h_j = encoder.embed_taped(
                        &mut tape,
                        embeddings.tgt.row(j),
                        &member_rows(&matched_tgt, &embeddings.tgt),
                        &member_rows(&partition.unmatched_tgt, &embeddings.tgt),
                    );
                    let r = tape.cos_plus(h_i, h_j);
                    terms.push(tape.sq_err(r, g));
                }
                let loss_id = tape.sum_scaled(&terms, scale);
                let loss = tape.scalar(loss_id);
                if !loss.is_finite() {
                    return Err(Error::Diverged(
                        "non-finite neighborhood batch loss".into(),
                    ));
                }
                (loss, tape.backward(loss_id))
            };
            encoder.store.adam_step(&grads, cfg.lr)?;
            epoch_loss += loss;
        }
        report.losses.push(epoch_loss);
        report.epochs_run = epoch + 1;

        if (epoch + 1) % cfg.early_stop_window == 0 {
            let window = &report.losses[epoch + 1 - cfg.early_stop_window..];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            if let Some(prev) = prev_window_mean {
                if prev - mean < cfg.early_stop_tol {
                    break;
                }
            }
            prev_window_mean = Some(mean);
        }
    }
    Ok((encoder, report))
}

fn member_rows<'z>(members: &[u32], z: &'z Embeddings) -> Vec<&'z [f64]> {
    members.iter().map(|&u| z.row(u)).collect()
}

fn draw_candidate_negative<R: Rng>(
    candidates: &CandidateIndex,
    i: u32,
    j_pos: u32,
    rng: &mut R,
) -> u32 {
    let row = candidates.row(i);
    if row.is_empty() {
        return j_pos;
    }
    let mut j = row[rng.gen_range(0..row.len())].0;
    for _ in 0..NEGATIVE_RETRY_CAP {
        if j != j_pos {
            return j;
        }
        j = row[rng.gen_range(0..row.len())].0;
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Embeddings;

    fn emb(rows: Vec<Vec<f64>>) -> Embeddings {
        let d = rows[0].len();
        Embeddings::from_rows(rows, d)
    }

    #[test]
    fn empty_neighborhoods_give_empty_partition() {
        let p = match_neighbors(&[], &[], |_, _| 1.0, 0.5);
        assert_eq!(p, NeighborPartition::default());
    }

    #[test]
    fn single_confident_pair_matches() {
        let p = match_neighbors(&[4], &[9], |_, _| 0.9, 0.5);
        assert_eq!(p.matched, vec![(4, 9)]);
        assert!(p.unmatched_src.is_empty());
        assert!(p.unmatched_tgt.is_empty());
    }

    #[test]
    fn greedy_two_by_two_blocks_below_threshold() {
        // Similarities [[0.9, 0.8], [0.8, 0.1]]: greedy takes (0,0); the
        // leftover pair (1,1) scores below tau and stays unmatched.
        let sims = [[0.9, 0.8], [0.8, 0.1]];
        let p = match_neighbors(&[0, 1], &[0, 1], |s, t| sims[s as usize][t as usize], 0.5);
        assert_eq!(p.matched, vec![(0, 0)]);
        assert_eq!(p.unmatched_src, vec![1]);
        assert_eq!(p.unmatched_tgt, vec![1]);
    }

    #[test]
    fn aggregate_single_neighbor_is_its_embedding() {
        let z = emb(vec![vec![1.0, 2.0], vec![3.0, -4.0]]);
        assert_eq!(aggregate(&[1], &z), vec![3.0, -4.0]);
    }

    #[test]
    fn aggregate_empty_set_is_zero_vector() {
        let z = emb(vec![vec![1.0, 2.0]]);
        assert_eq!(aggregate(&[], &z), vec![0.0, 0.0]);
    }

    #[test]
    fn aggregate_two_neighbors_averages_componentwise() {
        let z = emb(vec![vec![1.0, 3.0], vec![5.0, -1.0]]);
        assert_eq!(aggregate(&[0, 1], &z), vec![3.0, 1.0]);
    }

    #[test]
    fn zero_weight_encoder_outputs_bias() {
        let mut enc = NeighborhoodEncoder::new(2, 3, 0).unwrap();
        // Zero the weights; biases are already zero, then set b2 by hand.
        for name in ["enc_nei.w1", "enc_nei.w2"] {
            let id = enc.store.id_of(name).unwrap();
            for v in enc.store.get_mut(id).data_mut() {
                *v = 0.0;
            }
        }
        let b2 = enc.store.id_of("enc_nei.b2").unwrap();
        enc.store.get_mut(b2).data_mut().copy_from_slice(&[0.6, -0.25]);
        let out = enc.embed(&[9.0, 9.0], &[1.0, 1.0], &[2.0, 2.0]);
        assert_eq!(out, vec![0.6, -0.25]);
    }

    #[test]
    fn total_similarity_formula() {
        assert_eq!(total_similarity(0.8, 0.5, 0.0), 0.8);
        let v = total_similarity(0.8, 0.5, 0.2);
        assert!((v - 0.75).abs() < 1e-12);
        for lambda in [0.0, 0.3, 1.0, 4.0] {
            assert!((total_similarity(0.4, 0.4, lambda) - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_sides_score_one() {
        // Shared encoder plus identical inputs on both sides must give
        // cosine exactly 1 (unless the embedding degenerates to zero).
        let enc = NeighborhoodEncoder::new(3, 5, 42).unwrap();
        let z = [0.4, -0.2, 0.9];
        let hp = [0.1, 0.1, 0.0];
        let hn = [0.0; 3];
        let h = enc.embed(&z, &hp, &hn);
        assert!(kernels::norm(&h) > 0.0);
        assert!((kernels::cos_plus(&h, &h) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_through_concat_and_mean_matches_finite_differences() {
        use crate::tensor::gradcheck::{finite_difference, max_rel_err};
        let mut enc = NeighborhoodEncoder::new(3, 4, 7).unwrap();
        let z = vec![0.3, -0.5, 0.8];
        let n1 = vec![0.2, 0.2, -0.1];
        let n2 = vec![-0.4, 0.6, 0.5];
        let un = vec![0.9, 0.0, -0.3];
        let other = vec![0.1, 0.4, -0.6];

        let (analytic, ids): (Vec<Vec<f64>>, Vec<_>) = {
            let mut tape = Tape::new(&enc.store);
            let h_i = enc.embed_taped(&mut tape, &z, &[&n1, &n2], &[&un]);
            let h_j = enc.embed_taped(&mut tape, &other, &[], &[&n1]);
            let r = tape.cos_plus(h_i, h_j);
            let loss = tape.sq_err(r, 1.0);
            let grads = tape.backward(loss);
            let ids: Vec<_> = enc.store.ids().collect();
            (
                ids.iter()
                    .map(|id| {
                        let mut g = grads.get(*id).map(|g| g.to_vec()).unwrap_or_default();
                        g.resize(enc.store.get(*id).len(), 0.0);
                        g
                    })
                    .collect(),
                ids,
            )
        };
        let mlp = enc.mlp;
        let dim = enc.dim;
        let hidden = enc.hidden;
        let numeric = finite_difference(
            &mut enc.store,
            &ids,
            |store| {
                let fwd = |z: &[f64], pos: &[&[f64]], neg: &[&[f64]]| {
                    let agg = |mem: &[&[f64]]| kernels::mean_rows(mem, dim);
                    let mut input = z.to_vec();
                    input.extend(agg(pos));
                    input.extend(agg(neg));
                    kernels::mlp2(
                        store.get(mlp.w1).data(),
                        store.get(mlp.b1).data(),
                        store.get(mlp.w2).data(),
                        store.get(mlp.b2).data(),
                        hidden,
                        3 * dim,
                        dim,
                        &input,
                    )
                };
                let h_i = fwd(&z, &[&n1, &n2], &[&un]);
                let h_j = fwd(&other, &[], &[&n1]);
                let r = kernels::cos_plus(&h_i, &h_j);
                (r - 1.0) * (r - 1.0)
            },
            1e-5,
        );
        for ((id, ana), num) in ids.iter().zip(&analytic).zip(&numeric) {
            let err = max_rel_err(ana, num, 1e-6);
            assert!(err < 1e-4, "param {:?} rel err {err}", id);
        }
    }

    #[test]
    fn embedding_adapts_to_candidate() {
        // 3 source neighbors of i; two different candidates j with different
        // neighborhoods must induce different partitions and embeddings.
        let enc = NeighborhoodEncoder::new(2, 4, 3).unwrap();
        let z_src = emb(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.7, 0.7],
            vec![0.5, 0.1],
        ]);
        let z_tgt = emb(vec![
            vec![1.0, 0.05],
            vec![0.05, 1.0],
            vec![-0.9, 0.1],
            vec![0.6, 0.6],
        ]);
        let node_sim = |s: u32, t: u32| {
            kernels::cos_plus(z_src.row(s), z_tgt.row(t))
        };
        let n_i = [1u32, 2];
        let p_a = match_neighbors(&n_i, &[0, 1], node_sim, 0.5);
        let p_b = match_neighbors(&n_i, &[2, 3], node_sim, 0.5);
        assert_ne!(p_a, p_b);

        let h_a = enc.embed(
            z_src.row(0),
            &aggregate(&p_a.matched_src().collect::<Vec<_>>(), &z_src),
            &aggregate(&p_a.unmatched_src, &z_src),
        );
        let h_b = enc.embed(
            z_src.row(0),
            &aggregate(&p_b.matched_src().collect::<Vec<_>>(), &z_src),
            &aggregate(&p_b.unmatched_src, &z_src),
        );
        assert_ne!(h_a, h_b);
    }
}
