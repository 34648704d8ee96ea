//! In-memory model of a pair of social networks with anchor links, plus
//! line-oriented loaders/savers and the synthetic paired-network generator.

pub mod synth;

pub use synth::{generate_pair, SynthConfig};

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One platform: users, directed edges, screen names and token documents.
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct SocialNetwork {
    user_ids: Vec<String>,
    index: HashMap<String, u32>,
    edges: Vec<(u32, u32)>,
    screen_names: Vec<String>,
    documents: Vec<Vec<String>>,
    out_neighbors: Vec<Vec<u32>>,
    in_neighbors: Vec<Vec<u32>>,
    undirected: Vec<Vec<u32>>,
}

impl SocialNetwork {
    /// Build from raw parts. Self-loops are dropped (with a warning) and
    /// duplicate edges collapse to one.
    pub fn from_parts(
        user_ids: Vec<String>,
        raw_edges: Vec<(u32, u32)>,
        mut screen_names: Vec<String>,
        mut documents: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = user_ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in user_ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate user id `{id}`")));
            }
        }
        screen_names.resize(n, String::new());
        documents.resize(n, Vec::new());

        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(raw_edges.len());
        let mut dropped_loops = 0usize;
        for (s, d) in raw_edges {
            if s as usize >= n || d as usize >= n {
                return Err(Error::Invalid(format!("edge ({s}, {d}) out of range")));
            }
            if s == d {
                dropped_loops += 1;
                continue;
            }
            edges.push((s, d));
        }
        if dropped_loops > 0 {
            log::warn!("dropped {dropped_loops} self-loop(s)");
        }
        edges.sort_unstable();
        edges.dedup();

        let mut out_neighbors = vec![Vec::new(); n];
        let mut in_neighbors = vec![Vec::new(); n];
        for &(s, d) in &edges {
            out_neighbors[s as usize].push(d);
            in_neighbors[d as usize].push(s);
        }
        let mut undirected = vec![Vec::new(); n];
        for (u, nb) in undirected.iter_mut().enumerate() {
            let mut set: Vec<u32> = out_neighbors[u]
                .iter()
                .chain(&in_neighbors[u])
                .copied()
                .collect();
            set.sort_unstable();
            set.dedup();
            *nb = set;
        }

        Ok(SocialNetwork {
            user_ids,
            index,
            edges,
            screen_names,
            documents,
            out_neighbors,
            in_neighbors,
            undirected,
        })
    }

    /// Load from `edges.tsv` plus optional `profiles.tsv` / `contents.jsonl`.
    /// Users appearing in any file are unioned, in first-appearance order.
    pub fn load(
        edges_path: &Path,
        profiles_path: Option<&Path>,
        contents_path: Option<&Path>,
    ) -> Result<Self> {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        let intern = |id: &str, ids: &mut Vec<String>, index: &mut HashMap<String, u32>| {
            if let Some(&i) = index.get(id) {
                return i;
            }
            let i = ids.len() as u32;
            ids.push(id.to_string());
            index.insert(id.to_string(), i);
            i
        };

        let mut raw_edges = Vec::new();
        for (lineno, line) in read_lines(edges_path)?.enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", edges_path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let (src, dst) = match (parts.next(), parts.next()) {
                (Some(s), Some(d)) if !s.is_empty() && !d.is_empty() => (s, d),
                _ => {
                    return Err(Error::Parse {
                        path: edges_path.to_path_buf(),
                        line: lineno + 1,
                        msg: "expected `src<TAB>dst`".to_string(),
                    })
                }
            };
            let s = intern(src, &mut ids, &mut index);
            let d = intern(dst, &mut ids, &mut index);
            raw_edges.push((s, d));
        }

        let mut names: HashMap<u32, String> = HashMap::new();
        if let Some(path) = profiles_path {
            for (lineno, line) in read_lines(path)?.enumerate() {
                let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.splitn(2, '\t');
                let user = parts.next().unwrap_or("");
                if user.is_empty() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        msg: "expected `user_id<TAB>screen_name`".to_string(),
                    });
                }
                let name = parts.next().unwrap_or("");
                let u = intern(user, &mut ids, &mut index);
                names.insert(u, name.to_string());
            }
        }

        let mut docs: HashMap<u32, Vec<String>> = HashMap::new();
        if let Some(path) = contents_path {
            for (lineno, line) in read_lines(path)?.enumerate() {
                let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ContentRecord =
                    serde_json::from_str(&line).map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        msg: e.to_string(),
                    })?;
                let u = intern(&rec.user, &mut ids, &mut index);
                docs.insert(u, rec.tokens);
            }
        }

        let n = ids.len();
        let screen_names = (0..n as u32)
            .map(|u| names.remove(&u).unwrap_or_default())
            .collect();
        let documents = (0..n as u32)
            .map(|u| docs.remove(&u).unwrap_or_default())
            .collect();
        SocialNetwork::from_parts(ids, raw_edges, screen_names, documents)
    }

    pub fn save_edges(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        for &(s, d) in &self.edges {
            writeln!(w, "{}\t{}", self.user_ids[s as usize], self.user_ids[d as usize])
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn save_profiles(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        for (u, name) in self.screen_names.iter().enumerate() {
            writeln!(w, "{}\t{}", self.user_ids[u], name)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn save_contents(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        for (u, tokens) in self.documents.iter().enumerate() {
            let rec = ContentRecord {
                user: self.user_ids[u].clone(),
                tokens: tokens.clone(),
            };
            let line = serde_json::to_string(&rec)
                .map_err(|e| Error::Invalid(format!("serializing contents: {e}")))?;
            writeln!(w, "{line}")
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn user_id(&self, u: u32) -> &str {
        &self.user_ids[u as usize]
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn screen_name(&self, u: u32) -> &str {
        &self.screen_names[u as usize]
    }

    pub fn document(&self, u: u32) -> &[String] {
        &self.documents[u as usize]
    }

    pub fn documents(&self) -> impl Iterator<Item = &[String]> + Clone {
        self.documents.iter().map(|d| d.as_slice())
    }

    pub fn out_neighbors(&self, u: u32) -> &[u32] {
        &self.out_neighbors[u as usize]
    }

    pub fn in_neighbors(&self, u: u32) -> &[u32] {
        &self.in_neighbors[u as usize]
    }

    /// First-order neighbors: union of in- and out-neighbors.
    pub fn neighbors(&self, u: u32) -> &[u32] {
        &self.undirected[u as usize]
    }

    pub fn in_degree(&self, u: u32) -> usize {
        self.in_neighbors[u as usize].len()
    }
}

#[derive(Serialize, Deserialize)]
struct ContentRecord {
    user: String,
    tokens: Vec<String>,
}

fn read_lines(path: &Path) -> Result<std::io::Lines<BufReader<File>>> {
    let file =
        File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(BufReader::new(file).lines())
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(file))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorPair {
    pub source: u32,
    pub target: u32,
    pub split: Split,
}

/// Known cross-network correspondences. One-to-one: no user participates in
/// two pairs.
#[derive(Clone, Debug, Default)]
pub struct AnchorSet {
    pairs: Vec<AnchorPair>,
}

impl AnchorSet {
    pub fn new(pairs: Vec<(u32, u32)>) -> Result<Self> {
        let mut sources = HashSet::new();
        let mut targets = HashSet::new();
        for &(s, t) in &pairs {
            if !sources.insert(s) {
                return Err(Error::Invalid(format!(
                    "source user {s} appears in two anchor pairs"
                )));
            }
            if !targets.insert(t) {
                return Err(Error::Invalid(format!(
                    "target user {t} appears in two anchor pairs"
                )));
            }
        }
        Ok(AnchorSet {
            pairs: pairs
                .into_iter()
                .map(|(source, target)| AnchorPair {
                    source,
                    target,
                    split: Split::Train,
                })
                .collect(),
        })
    }

    pub fn load(path: &Path, src: &SocialNetwork, tgt: &SocialNetwork) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in read_lines(path)?.enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let (a, b) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => (a, b),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        msg: "expected `source_id<TAB>target_id`".to_string(),
                    })
                }
            };
            let s = src.index_of(a).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("unknown source user `{a}`"),
            })?;
            let t = tgt.index_of(b).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("unknown target user `{b}`"),
            })?;
            pairs.push((s, t));
        }
        AnchorSet::new(pairs)
    }

    pub fn save(&self, path: &Path, src: &SocialNetwork, tgt: &SocialNetwork) -> Result<()> {
        let mut w = writer(path)?;
        for p in &self.pairs {
            writeln!(w, "{}\t{}", src.user_id(p.source), tgt.user_id(p.target))
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[AnchorPair] {
        &self.pairs
    }

    pub fn train_pairs(&self) -> impl Iterator<Item = &AnchorPair> {
        self.pairs.iter().filter(|p| p.split == Split::Train)
    }

    pub fn test_pairs(&self) -> impl Iterator<Item = &AnchorPair> {
        self.pairs.iter().filter(|p| p.split == Split::Test)
    }

    /// Tag ceil(eta * n) pairs as train and the rest as test, with a
    /// seed-determined shuffle.
    pub fn split(&self, eta: f64, seed: u64) -> Result<AnchorSet> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Config(format!(
                "train ratio eta must be in (0, 1), got {eta}"
            )));
        }
        let n = self.pairs.len();
        let n_train = (eta * n as f64).ceil() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut pairs = self.pairs.clone();
        for (rank, idx) in order.into_iter().enumerate() {
            pairs[idx].split = if rank < n_train {
                Split::Train
            } else {
                Split::Test
            };
        }
        Ok(AnchorSet { pairs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_line_edge_file_loads_two_users_two_edges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        std::fs::write(&path, "a\tb\nb\ta\n").unwrap();
        let net = SocialNetwork::load(&path, None, None).unwrap();
        assert_eq!(net.n_users(), 2);
        assert_eq!(net.n_edges(), 2);
    }

    #[test]
    fn missing_profile_entry_imputes_empty_string() {
        let dir = tempfile::tempdir().unwrap();
        let edges = dir.path().join("edges.tsv");
        let profiles = dir.path().join("profiles.tsv");
        std::fs::write(&edges, "a\tb\n").unwrap();
        std::fs::write(&profiles, "a\talice\n").unwrap();
        let net = SocialNetwork::load(&edges, Some(&profiles), None).unwrap();
        let b = net.index_of("b").unwrap();
        assert_eq!(net.screen_name(b), "");
        let a = net.index_of("a").unwrap();
        assert_eq!(net.screen_name(a), "alice");
    }

    #[test]
    fn duplicate_edges_deduplicate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        std::fs::write(&path, "a\tb\na\tb\nb\tc\na\tb\n").unwrap();
        let net = SocialNetwork::load(&path, None, None).unwrap();
        // Set-based oracle over the file contents.
        let uniq: HashSet<(String, String)> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut p = l.split('\t');
                (p.next().unwrap().to_string(), p.next().unwrap().to_string())
            })
            .collect();
        assert_eq!(net.n_edges(), uniq.len());
    }

    #[test]
    fn malformed_edge_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        std::fs::write(&path, "a\tb\nnot-an-edge\n").unwrap();
        match SocialNetwork::load(&path, None, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn self_loops_are_dropped() {
        let net = SocialNetwork::from_parts(
            ids(&["a", "b"]),
            vec![(0, 0), (0, 1)],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(net.n_edges(), 1);
    }

    #[test]
    fn profile_user_not_in_edges_becomes_isolated_user() {
        let dir = tempfile::tempdir().unwrap();
        let edges = dir.path().join("edges.tsv");
        let profiles = dir.path().join("profiles.tsv");
        std::fs::write(&edges, "a\tb\n").unwrap();
        std::fs::write(&profiles, "c\tcarol\n").unwrap();
        let net = SocialNetwork::load(&edges, Some(&profiles), None).unwrap();
        assert_eq!(net.n_users(), 3);
        let c = net.index_of("c").unwrap();
        assert!(net.neighbors(c).is_empty());
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let net = SocialNetwork::from_parts(
            ids(&["u1", "u2", "u3"]),
            vec![(0, 1), (2, 0), (1, 2)],
            vec!["alpha".into(), String::new(), "gamma".into()],
            vec![
                vec!["hello".into(), "world".into()],
                vec![],
                vec!["graph".into()],
            ],
        )
        .unwrap();
        let e = dir.path().join("edges.tsv");
        let p = dir.path().join("profiles.tsv");
        let c = dir.path().join("contents.jsonl");
        net.save_edges(&e).unwrap();
        net.save_profiles(&p).unwrap();
        net.save_contents(&c).unwrap();
        let again = SocialNetwork::load(&e, Some(&p), Some(&c)).unwrap();
        again.save_edges(&e).unwrap();
        again.save_profiles(&p).unwrap();
        again.save_contents(&c).unwrap();
        let third = SocialNetwork::load(&e, Some(&p), Some(&c)).unwrap();
        assert_eq!(third.edges(), again.edges());
        for u in 0..net.n_users() as u32 {
            assert_eq!(third.screen_name(u), again.screen_name(u));
            assert_eq!(third.document(u), again.document(u));
        }
    }

    #[test]
    fn anchor_one_to_one_violation_rejected() {
        assert!(AnchorSet::new(vec![(0, 1), (0, 2)]).is_err());
        assert!(AnchorSet::new(vec![(0, 1), (2, 1)]).is_err());
    }

    #[test]
    fn split_respects_ceiling_and_seed() {
        let anchors = AnchorSet::new((0..10).map(|i| (i, i)).collect()).unwrap();
        let a = anchors.split(0.5, 3).unwrap();
        assert_eq!(a.train_pairs().count(), 5);
        assert_eq!(a.test_pairs().count(), 5);
        let b = anchors.split(0.5, 3).unwrap();
        assert_eq!(a.pairs(), b.pairs());
    }

    #[test]
    fn split_ceiling_matches_large_case() {
        let anchors = AnchorSet::new((0..9514).map(|i| (i, i)).collect()).unwrap();
        let s = anchors.split(0.9, 1).unwrap();
        assert_eq!(s.train_pairs().count(), 8563);
    }

    #[test]
    fn split_rejects_out_of_range_eta() {
        let anchors = AnchorSet::new(vec![(0, 0)]).unwrap();
        assert!(anchors.split(0.0, 1).is_err());
        assert!(anchors.split(1.0, 1).is_err());
    }
}
