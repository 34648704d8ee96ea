//! Ground-truth similarity structures in sparse form.
//!
//! Each ground stores, per row, the entries at or above the row's
//! theta-quantile (the positive set) plus a column noise distribution
//! proportional to d_j^(3/4), where d_j sums the materialized column mass.
//! Dense inter-network grounds drop entries below 1e-6 at storage time;
//! binary grounds (structure, label) store their nonzero entries directly.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{AnchorSet, SocialNetwork};
use crate::error::{Error, Result};
use crate::text::{name_similarity, TfIdf};

/// Entries below this are not materialized in dense grounds.
pub const MATERIALIZE_EPS: f64 = 1e-6;

/// Negative draws colliding with the positive set are resampled at most
/// this many times; the final draw is kept either way, with its true ground
/// value as the regression target.
pub const NEGATIVE_RETRY_CAP: usize = 10;

const NOISE_EXPONENT: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundKind {
    Structure,
    Profile,
    Content,
    Label,
}

impl GroundKind {
    fn as_str(self) -> &'static str {
        match self {
            GroundKind::Structure => "structure",
            GroundKind::Profile => "profile",
            GroundKind::Content => "content",
            GroundKind::Label => "label",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "structure" => Some(GroundKind::Structure),
            "profile" => Some(GroundKind::Profile),
            "content" => Some(GroundKind::Content),
            "label" => Some(GroundKind::Label),
            _ => None,
        }
    }
}

impl fmt::Display for GroundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which network indexes a ground's rows or columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    fn as_str(self) -> &'static str {
        match self {
            Side::Source => "source",
            Side::Target => "target",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Side::Source),
            "target" => Some(Side::Target),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroundStats {
    /// Rows whose theta-quantile degenerated to the row minimum, making the
    /// entire row positive under the literal split rule. Stored positives
    /// for such rows are the materialized entries only.
    pub degenerate_rows: usize,
}

#[derive(Clone, Debug)]
pub struct SimilarityGround {
    pub kind: GroundKind,
    pub row_side: Side,
    pub col_side: Side,
    pub theta: f64,
    n_rows: usize,
    n_cols: usize,
    positives: Vec<Vec<(u32, f64)>>,
    noise_weights: Vec<f64>,
    pub stats: GroundStats,
}

impl SimilarityGround {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn positives_row(&self, i: u32) -> &[(u32, f64)] {
        &self.positives[i as usize]
    }

    /// Ground value for (i, j): the stored positive value, else 0.
    pub fn g(&self, i: u32, j: u32) -> f64 {
        let row = &self.positives[i as usize];
        match row.binary_search_by_key(&j, |(c, _)| *c) {
            Ok(k) => row[k].1,
            Err(_) => 0.0,
        }
    }

    pub fn is_positive(&self, i: u32, j: u32) -> bool {
        self.positives[i as usize]
            .binary_search_by_key(&j, |(c, _)| *c)
            .is_ok()
    }

    /// Total number of positive entries over all rows.
    pub fn positive_count(&self) -> usize {
        self.positives.iter().map(|r| r.len()).sum()
    }

    /// Normalization constant of the negative-sampled loss:
    /// (K + 1) * sum_i |positives(i)|.
    pub fn normalization_m(&self, k: usize) -> usize {
        (k + 1) * self.positive_count()
    }

    pub fn noise_weights(&self) -> &[f64] {
        &self.noise_weights
    }

    /// All positive entries as (row, col, g) triples, row-major.
    pub fn positive_pairs(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(self.positive_count());
        for (i, row) in self.positives.iter().enumerate() {
            for &(j, g) in row {
                out.push((i as u32, j, g));
            }
        }
        out
    }
}

/// Linear-interpolation quantile (inclusive) over raw values.
pub fn theta_quantile(values: &[f64], theta: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty row");
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    interp_quantile_sorted(&sorted, theta)
}

fn interp_quantile_sorted(sorted: &[f64], theta: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * theta;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Quantile of a sparse non-negative row: `materialized` holds the nonzero
/// values, the remaining `n_cols - materialized.len()` entries are zero.
fn sparse_theta_quantile(materialized: &[f64], n_cols: usize, theta: f64) -> f64 {
    let m = materialized.len();
    assert!(m <= n_cols && n_cols > 0);
    let z = n_cols - m;
    let mut sorted = materialized.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let at = |idx: usize| -> f64 {
        if idx < z {
            0.0
        } else {
            sorted[idx - z]
        }
    };
    let h = (n_cols - 1) as f64 * theta;
    let lo = h.floor() as usize;
    if lo + 1 >= n_cols {
        return at(n_cols - 1);
    }
    at(lo) + (h - lo as f64) * (at(lo + 1) - at(lo))
}

/// Per-row positive/negative split at the theta-quantile.
pub struct RowSplit {
    pub quantile: f64,
    pub positives: Vec<usize>,
}

/// Literal split of one dense row: indices with value >= the row's
/// theta-quantile. An all-equal row makes the entire row positive.
pub fn split_row(values: &[f64], theta: f64) -> RowSplit {
    let q = theta_quantile(values, theta);
    RowSplit {
        quantile: q,
        positives: values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v >= q)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Intra-network structure ground: g = 1 iff the directed edge exists.
/// Positives are the out-neighbors; the noise distribution follows
/// in-degree^(3/4).
pub fn structure_ground(net: &SocialNetwork, side: Side, theta: f64) -> SimilarityGround {
    let n = net.n_users();
    let positives = (0..n as u32)
        .map(|u| net.out_neighbors(u).iter().map(|&v| (v, 1.0)).collect())
        .collect();
    let d: Vec<f64> = (0..n as u32).map(|u| net.in_degree(u) as f64).collect();
    SimilarityGround {
        kind: GroundKind::Structure,
        row_side: side,
        col_side: side,
        theta,
        n_rows: n,
        n_cols: n,
        positives,
        noise_weights: normalize_noise(&d),
        stats: GroundStats::default(),
    }
}

/// Inter-network label ground from the training anchors: g = 1 iff the pair
/// is a training anchor.
pub fn label_ground(
    anchors: &AnchorSet,
    n_src: usize,
    n_tgt: usize,
    theta: f64,
) -> SimilarityGround {
    let mut positives = vec![Vec::new(); n_src];
    let mut d = vec![0.0; n_tgt];
    for p in anchors.train_pairs() {
        positives[p.source as usize].push((p.target, 1.0));
        d[p.target as usize] += 1.0;
    }
    SimilarityGround {
        kind: GroundKind::Label,
        row_side: Side::Source,
        col_side: Side::Target,
        theta,
        n_rows: n_src,
        n_cols: n_tgt,
        positives,
        noise_weights: normalize_noise(&d),
        stats: GroundStats::default(),
    }
}

/// Inter-network profile ground: normalized edit similarity of screen
/// names; pairs involving an empty name score 0.
pub fn profile_ground(
    src: &SocialNetwork,
    tgt: &SocialNetwork,
    theta: f64,
) -> SimilarityGround {
    let names_tgt: Vec<&str> = (0..tgt.n_users() as u32).map(|u| tgt.screen_name(u)).collect();
    build_dense_ground(
        GroundKind::Profile,
        src.n_users(),
        tgt.n_users(),
        theta,
        |i| {
            let name_i = src.screen_name(i);
            if name_i.is_empty() {
                return Vec::new();
            }
            names_tgt
                .iter()
                .enumerate()
                .filter_map(|(j, name_j)| {
                    let g = name_similarity(name_i, name_j);
                    (g >= MATERIALIZE_EPS).then_some((j as u32, g))
                })
                .collect()
        },
    )
}

/// Inter-network content ground: truncated cosine of TF-IDF document
/// vectors over the combined corpus. Users without documents get zero rows.
pub fn content_ground(
    src: &SocialNetwork,
    tgt: &SocialNetwork,
    theta: f64,
) -> SimilarityGround {
    let model = TfIdf::fit(src.documents().chain(tgt.documents()));
    let src_vecs: Vec<_> = (0..src.n_users() as u32)
        .map(|u| model.vectorize(src.document(u)))
        .collect();
    let tgt_vecs: Vec<_> = (0..tgt.n_users() as u32)
        .map(|u| model.vectorize(tgt.document(u)))
        .collect();
    build_dense_ground(
        GroundKind::Content,
        src.n_users(),
        tgt.n_users(),
        theta,
        |i| {
            let vi = &src_vecs[i as usize];
            if vi.is_empty() {
                return Vec::new();
            }
            tgt_vecs
                .iter()
                .enumerate()
                .filter_map(|(j, vj)| {
                    let g = vi.cosine(vj);
                    (g >= MATERIALIZE_EPS).then_some((j as u32, g))
                })
                .collect()
        },
    )
}

/// Shared path for dense inter-network grounds: materialize each row, take
/// the theta-quantile over the full row (implicit zeros included), keep the
/// materialized entries at or above it. Rows are independent and built in
/// parallel.
fn build_dense_ground<F>(
    kind: GroundKind,
    n_rows: usize,
    n_cols: usize,
    theta: f64,
    row_fn: F,
) -> SimilarityGround
where
    F: Fn(u32) -> Vec<(u32, f64)> + Sync,
{
    let rows: Vec<Vec<(u32, f64)>> = (0..n_rows as u32)
        .into_par_iter()
        .map(&row_fn)
        .collect();

    let mut d = vec![0.0; n_cols];
    for row in &rows {
        for &(j, g) in row {
            d[j as usize] += g.abs();
        }
    }

    let mut degenerate = 0usize;
    let positives = rows
        .into_iter()
        .map(|row| {
            let values: Vec<f64> = row.iter().map(|(_, g)| *g).collect();
            let q = sparse_theta_quantile(&values, n_cols, theta);
            let row_min = if row.len() < n_cols {
                0.0
            } else {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            };
            if row_min >= q {
                degenerate += 1;
                row
            } else {
                row.into_iter().filter(|(_, g)| *g >= q).collect()
            }
        })
        .collect();

    SimilarityGround {
        kind,
        row_side: Side::Source,
        col_side: Side::Target,
        theta,
        n_rows,
        n_cols,
        positives,
        noise_weights: normalize_noise(&d),
        stats: GroundStats {
            degenerate_rows: degenerate,
        },
    }
}

fn normalize_noise(d: &[f64]) -> Vec<f64> {
    let powered: Vec<f64> = d.iter().map(|x| x.abs().powf(NOISE_EXPONENT)).collect();
    let total: f64 = powered.iter().sum();
    if total > 0.0 {
        powered.iter().map(|x| x / total).collect()
    } else {
        vec![0.0; d.len()]
    }
}

/// Draws negative columns from the noise distribution, resampling draws
/// that land in a row's positive set (up to [`NEGATIVE_RETRY_CAP`] times).
pub struct NegativeSampler<'g> {
    ground: &'g SimilarityGround,
    dist: Option<WeightedIndex<f64>>,
}

impl<'g> NegativeSampler<'g> {
    pub fn new(ground: &'g SimilarityGround) -> Self {
        let total: f64 = ground.noise_weights.iter().sum();
        let dist = if total > 0.0 {
            Some(WeightedIndex::new(ground.noise_weights.iter().copied()).expect("valid weights"))
        } else {
            None // all-zero column mass: fall back to uniform
        };
        NegativeSampler { ground, dist }
    }

    pub fn draw<R: Rng>(&self, row: u32, rng: &mut R) -> u32 {
        let mut j = self.sample_col(rng);
        for _ in 0..NEGATIVE_RETRY_CAP {
            if !self.ground.is_positive(row, j) {
                return j;
            }
            j = self.sample_col(rng);
        }
        j
    }

    pub fn draw_k<R: Rng>(&self, row: u32, k: usize, rng: &mut R) -> Vec<u32> {
        (0..k).map(|_| self.draw(row, rng)).collect()
    }

    fn sample_col<R: Rng>(&self, rng: &mut R) -> u32 {
        match &self.dist {
            Some(d) => d.sample(rng) as u32,
            None => rng.gen_range(0..self.ground.n_cols as u32),
        }
    }
}

/// Ground cache file: header line, one line per positive entry, then the
/// noise-weight vector.
pub fn save_ground(path: &Path, ground: &SimilarityGround, cache_key: &str) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "#ground\tkind={}\trow_side={}\tcol_side={}\trows={}\tcols={}\ttheta={}\tdegenerate_rows={}\tcache_key={}",
        ground.kind,
        ground.row_side.as_str(),
        ground.col_side.as_str(),
        ground.n_rows,
        ground.n_cols,
        ground.theta,
        ground.stats.degenerate_rows,
        cache_key
    )
    .map_err(|e| Error::io(ctx(), e))?;
    for (i, row) in ground.positives.iter().enumerate() {
        for &(j, g) in row {
            writeln!(w, "{i}\t{j}\t{g}").map_err(|e| Error::io(ctx(), e))?;
        }
    }
    writeln!(w, "#noise_weights").map_err(|e| Error::io(ctx(), e))?;
    for (j, nw) in ground.noise_weights.iter().enumerate() {
        writeln!(w, "{j}\t{nw}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}

/// Reads a ground cache back; returns the ground and its stored cache key.
pub fn load_ground(path: &Path) -> Result<(SimilarityGround, String)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(line))) if line.starts_with("#ground\t") => line,
        _ => {
            return Err(Error::Invalid(format!(
                "{}: not a ground cache",
                path.display()
            )))
        }
    };
    let mut kind = None;
    let mut row_side = None;
    let mut col_side = None;
    let mut rows = 0usize;
    let mut cols = 0usize;
    let mut theta = 0.0f64;
    let mut degenerate = 0usize;
    let mut cache_key = String::new();
    for field in header.split('\t').skip(1) {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("{}: bad header field", path.display())))?;
        match k {
            "kind" => kind = GroundKind::parse(v),
            "row_side" => row_side = Side::parse(v),
            "col_side" => col_side = Side::parse(v),
            "rows" => rows = parse_num(path, 1, v)?,
            "cols" => cols = parse_num(path, 1, v)?,
            "theta" => theta = parse_num(path, 1, v)?,
            "degenerate_rows" => degenerate = parse_num(path, 1, v)?,
            "cache_key" => cache_key = v.to_string(),
            _ => {}
        }
    }
    let (kind, row_side, col_side) = match (kind, row_side, col_side) {
        (Some(k), Some(r), Some(c)) => (k, r, c),
        _ => {
            return Err(Error::Invalid(format!(
                "{}: incomplete ground header",
                path.display()
            )))
        }
    };

    let mut positives = vec![Vec::new(); rows];
    let mut noise_weights = vec![0.0; cols];
    let mut in_weights = false;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line == "#noise_weights" {
            in_weights = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        if in_weights {
            let j: usize = parse_num(path, lineno + 1, parts.next().unwrap_or(""))?;
            let w: f64 = parse_num(path, lineno + 1, parts.next().unwrap_or(""))?;
            if j >= cols {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("column {j} out of range"),
                });
            }
            noise_weights[j] = w;
        } else {
            let i: usize = parse_num(path, lineno + 1, parts.next().unwrap_or(""))?;
            let j: u32 = parse_num(path, lineno + 1, parts.next().unwrap_or(""))?;
            let g: f64 = parse_num(path, lineno + 1, parts.next().unwrap_or(""))?;
            if i >= rows || (j as usize) >= cols {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("entry ({i}, {j}) out of range"),
                });
            }
            positives[i].push((j, g));
        }
    }
    for row in &mut positives {
        row.sort_unstable_by_key(|(j, _)| *j);
    }

    Ok((
        SimilarityGround {
            kind,
            row_side,
            col_side,
            theta,
            n_rows: rows,
            n_cols: cols,
            positives,
            noise_weights,
            stats: GroundStats {
                degenerate_rows: degenerate,
            },
        },
        cache_key,
    ))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("expected a number, got `{s}`"),
    })
}
