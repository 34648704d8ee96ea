//! Synthetic paired-network generator.
//!
//! One base graph is sampled by directed preferential attachment; the two
//! platform views keep each base edge independently with `edge_keep_prob`.
//! Screen names and documents start from shared per-user bases; each view
//! perturbs names by character edits/drops, and the target view re-rolls
//! each document token toward uniform noise with `content_drift`. The full
//! anchor set is the identity correspondence, with the target user order
//! permuted so indices carry no alignment signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnchorSet, SocialNetwork};
use crate::error::{Error, Result};
use crate::seeding::sub_seed;

const NAME_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Out-edges attached per new node (preferential attachment).
    pub attach_edges: usize,
    pub edge_keep_prob: f64,
    /// Per-character probability mass split evenly over substitute /
    /// insert / delete.
    pub name_noise: f64,
    /// Probability that a view's copy of a screen name goes missing.
    pub name_drop_prob: f64,
    pub vocab_size: usize,
    pub topics: usize,
    pub doc_length: usize,
    /// Probability that a target-view token is re-rolled from uniform noise.
    pub content_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            attach_edges: 4,
            edge_keep_prob: 0.8,
            name_noise: 0.1,
            name_drop_prob: 0.1,
            vocab_size: 400,
            topics: 16,
            doc_length: 50,
            content_drift: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be positive".into()));
        }
        for (name, p) in [
            ("edge_keep_prob", self.edge_keep_prob),
            ("name_noise", self.name_noise),
            ("name_drop_prob", self.name_drop_prob),
            ("content_drift", self.content_drift),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.vocab_size == 0 || self.topics == 0 {
            return Err(Error::Config("vocab_size and topics must be positive".into()));
        }
        Ok(())
    }
}

/// Sample a source/target network pair plus the full (identity) anchor set.
/// The same seed always yields byte-identical networks.
pub fn generate_pair(cfg: &SynthConfig) -> Result<(SocialNetwork, SocialNetwork, AnchorSet)> {
    cfg.validate()?;
    let n = cfg.n_users;

    let base_edges = preferential_attachment(
        n,
        cfg.attach_edges,
        &mut ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "synth.graph")),
    );
    let base_names = base_names(n, &mut ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "synth.names")));
    let base_docs = base_documents(cfg, &mut ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "synth.docs")));

    // Target view permutation: position -> base user.
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "synth.perm")));
    let mut pos_of = vec![0u32; n];
    for (pos, &u) in perm.iter().enumerate() {
        pos_of[u as usize] = pos as u32;
    }

    let src = build_view(
        cfg,
        &base_edges,
        &base_names,
        &base_docs,
        None,
        "s",
        sub_seed(cfg.seed, "synth.view.source"),
    )?;
    let tgt = build_view(
        cfg,
        &base_edges,
        &base_names,
        &base_docs,
        Some((&perm, &pos_of)),
        "t",
        sub_seed(cfg.seed, "synth.view.target"),
    )?;

    let anchors = AnchorSet::new((0..n as u32).map(|u| (u, pos_of[u as usize])).collect())?;
    Ok((src, tgt, anchors))
}

fn build_view(
    cfg: &SynthConfig,
    base_edges: &[(u32, u32)],
    base_names: &[String],
    base_docs: &[Vec<u32>],
    relabel: Option<(&[u32], &[u32])>,
    id_prefix: &str,
    seed: u64,
) -> Result<SocialNetwork> {
    let n = cfg.n_users;
    let mut edge_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "edges"));
    let mut name_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "names"));
    let mut doc_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "docs"));

    // View index of a base user: identity for the source, permuted for the
    // target.
    let view_index = |u: u32| -> u32 {
        match relabel {
            Some((_, pos_of)) => pos_of[u as usize],
            None => u,
        }
    };
    let base_user_at = |pos: u32| -> u32 {
        match relabel {
            Some((perm, _)) => perm[pos as usize],
            None => pos,
        }
    };

    let mut edges = Vec::with_capacity(base_edges.len());
    for &(s, d) in base_edges {
        if edge_rng.gen::<f64>() < cfg.edge_keep_prob {
            edges.push((view_index(s), view_index(d)));
        }
    }

    let mut user_ids = Vec::with_capacity(n);
    let mut names = Vec::with_capacity(n);
    let mut docs = Vec::with_capacity(n);
    for pos in 0..n as u32 {
        let base_user = base_user_at(pos);
        user_ids.push(format!("{id_prefix}{base_user}"));
        names.push(perturb_name(
            &base_names[base_user as usize],
            cfg.name_noise,
            cfg.name_drop_prob,
            &mut name_rng,
        ));
        let drift = if relabel.is_some() { cfg.content_drift } else { 0.0 };
        docs.push(drift_document(
            &base_docs[base_user as usize],
            drift,
            cfg.vocab_size,
            &mut doc_rng,
        ));
    }

    SocialNetwork::from_parts(user_ids, edges, names, docs)
}

/// Directed preferential attachment: node v attaches `m` out-edges to
/// earlier nodes, biased by in-degree + 1. Heavy-tailed in-degrees, like
/// follower graphs.
fn preferential_attachment(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    let mut in_degree = vec![0usize; n];
    for v in 1..n as u32 {
        let existing = v as usize;
        let take = m.min(existing);
        let mut chosen: Vec<u32> = Vec::with_capacity(take);
        // Weight mass over nodes 0..v.
        let mut total: f64 = (0..existing).map(|u| in_degree[u] as f64 + 1.0).sum();
        let mut weights: Vec<f64> = (0..existing).map(|u| in_degree[u] as f64 + 1.0).collect();
        for _ in 0..take {
            let mut draw = rng.gen::<f64>() * total;
            let mut pick = existing - 1;
            for (u, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if draw < *w {
                    pick = u;
                    break;
                }
                draw -= *w;
            }
            chosen.push(pick as u32);
            total -= weights[pick];
            weights[pick] = 0.0; // without replacement
        }
        for t in chosen {
            in_degree[t as usize] += 1;
            edges.push((v, t));
        }
    }
    edges
}

fn base_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(5..=11);
            (0..len)
                .map(|_| NAME_ALPHABET[rng.gen_range(0..NAME_ALPHABET.len())] as char)
                .collect()
        })
        .collect()
}

fn perturb_name(base: &str, noise: f64, drop_prob: f64, rng: &mut ChaCha8Rng) -> String {
    if rng.gen::<f64>() < drop_prob {
        return String::new();
    }
    let p = noise / 3.0;
    let mut out = String::with_capacity(base.len() + 2);
    for c in base.chars() {
        if rng.gen::<f64>() < p {
            continue; // delete
        }
        if rng.gen::<f64>() < p {
            out.push(NAME_ALPHABET[rng.gen_range(0..NAME_ALPHABET.len())] as char); // insert
        }
        if rng.gen::<f64>() < p {
            out.push(NAME_ALPHABET[rng.gen_range(0..NAME_ALPHABET.len())] as char); // substitute
        } else {
            out.push(c);
        }
    }
    out
}

/// Per-user token documents from a two-topic mixture. Tokens are vocab ids;
/// rendering to strings happens in the view builder's caller via `tok`.
fn base_documents(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let v = cfg.vocab_size as u32;
    let t = cfg.topics as u32;
    let chunk = (v / t).max(1);
    let mut docs = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let primary = rng.gen_range(0..t);
        let secondary = rng.gen_range(0..t);
        let mut doc = Vec::with_capacity(cfg.doc_length);
        for _ in 0..cfg.doc_length {
            let topic = if rng.gen::<f64>() < 0.7 { primary } else { secondary };
            // 90% mass on the topic's vocab chunk, 10% uniform smoothing.
            let token = if rng.gen::<f64>() < 0.9 {
                let lo = (topic * chunk).min(v - 1);
                let hi = ((topic + 1) * chunk).min(v).max(lo + 1);
                rng.gen_range(lo..hi)
            } else {
                rng.gen_range(0..v)
            };
            doc.push(token);
        }
        docs.push(doc);
    }
    docs
}

fn drift_document(base: &[u32], drift: f64, vocab: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    base.iter()
        .map(|&t| {
            let t = if drift > 0.0 && rng.gen::<f64>() < drift {
                rng.gen_range(0..vocab as u32)
            } else {
                t
            };
            tok(t)
        })
        .collect()
}

fn tok(t: u32) -> String {
    format!("w{t}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn noiseless() -> SynthConfig {
        SynthConfig {
            n_users: 40,
            edge_keep_prob: 1.0,
            name_noise: 0.0,
            name_drop_prob: 0.0,
            content_drift: 0.0,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_views_identical_up_to_relabeling() {
        let (src, tgt, anchors) = generate_pair(&noiseless()).unwrap();
        assert_eq!(src.n_edges(), tgt.n_edges());
        let tgt_edges: HashSet<(u32, u32)> = tgt.edges().iter().copied().collect();
        for p in anchors.pairs() {
            assert_eq!(src.screen_name(p.source), tgt.screen_name(p.target));
            assert_eq!(src.document(p.source), tgt.document(p.target));
        }
        // Map each source edge through the anchors and find it in the target.
        let map: std::collections::HashMap<u32, u32> = anchors
            .pairs()
            .iter()
            .map(|p| (p.source, p.target))
            .collect();
        for &(s, d) in src.edges() {
            assert!(tgt_edges.contains(&(map[&s], map[&d])));
        }
    }

    #[test]
    fn zero_keep_prob_gives_empty_views() {
        let cfg = SynthConfig {
            edge_keep_prob: 0.0,
            n_users: 30,
            ..SynthConfig::default()
        };
        let (src, tgt, _) = generate_pair(&cfg).unwrap();
        assert_eq!(src.n_edges(), 0);
        assert_eq!(tgt.n_edges(), 0);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let cfg = SynthConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let mut dumps = Vec::new();
        for run in 0..2 {
            let (src, tgt, anchors) = generate_pair(&cfg).unwrap();
            let e = dir.path().join(format!("e{run}"));
            let p = dir.path().join(format!("p{run}"));
            let c = dir.path().join(format!("c{run}"));
            let a = dir.path().join(format!("a{run}"));
            src.save_edges(&e).unwrap();
            tgt.save_profiles(&p).unwrap();
            tgt.save_contents(&c).unwrap();
            anchors.save(&a, &src, &tgt).unwrap();
            let blob = [
                std::fs::read(&e).unwrap(),
                std::fs::read(&p).unwrap(),
                std::fs::read(&c).unwrap(),
                std::fs::read(&a).unwrap(),
            ]
            .concat();
            dumps.push(blob);
        }
        assert_eq!(dumps[0], dumps[1]);
    }

    #[test]
    fn degenerate_config_rejected() {
        let cfg = SynthConfig {
            n_users: 0,
            ..SynthConfig::default()
        };
        assert!(generate_pair(&cfg).is_err());
    }

    #[test]
    fn expected_edge_keep_fraction_within_binomial_bounds() {
        // Per-view edge count is Binomial(base, keep); check 3-sigma bounds
        // over a few seeds.
        let keep = 0.6;
        for seed in 0..5 {
            let cfg = SynthConfig {
                n_users: 150,
                edge_keep_prob: keep,
                seed,
                ..SynthConfig::default()
            };
            let base = {
                let full = SynthConfig {
                    edge_keep_prob: 1.0,
                    ..cfg.clone()
                };
                generate_pair(&full).unwrap().0.n_edges() as f64
            };
            let (src, tgt, _) = generate_pair(&cfg).unwrap();
            let sigma = (base * keep * (1.0 - keep)).sqrt();
            for got in [src.n_edges() as f64, tgt.n_edges() as f64] {
                assert!(
                    (got - base * keep).abs() <= 3.0 * sigma + 1.0,
                    "seed {seed}: edges {got} vs expected {}",
                    base * keep
                );
            }
        }
    }

    #[test]
    fn perturbed_names_stay_in_alphabet() {
        let cfg = SynthConfig {
            name_noise: 0.5,
            name_drop_prob: 0.2,
            n_users: 60,
            ..SynthConfig::default()
        };
        let (src, tgt, _) = generate_pair(&cfg).unwrap();
        for net in [&src, &tgt] {
            for u in 0..net.n_users() as u32 {
                assert!(net
                    .screen_name(u)
                    .bytes()
                    .all(|b| NAME_ALPHABET.contains(&b)));
            }
        }
    }

    #[test]
    fn anchor_set_covers_all_users_one_to_one() {
        let (src, tgt, anchors) = generate_pair(&SynthConfig::default()).unwrap();
        assert_eq!(anchors.len(), src.n_users());
        assert_eq!(anchors.len(), tgt.n_users());
        let targets: HashSet<u32> = anchors.pairs().iter().map(|p| p.target).collect();
        assert_eq!(targets.len(), anchors.len());
    }
}
