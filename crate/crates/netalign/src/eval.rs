//! Ranked-matching evaluation: hit-precision@k over test anchors, candidate
//! ranking with optional neighborhood re-scoring, and the experiment grid
//! over variants, train ratios, lambdas and seeds.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{AnchorSet, SocialNetwork};
use crate::error::{Error, Result};
use crate::fusion::{
    train_fusion, Embeddings, FeatureSet, GroundSet, NodeEmbeddings, TrainConfig,
};
use crate::ground::{
    content_ground, label_ground, profile_ground, structure_ground, Side, SimilarityGround,
};
use crate::neighborhood::{
    total_similarity, train_neighborhood, CandidateIndex, NeighborhoodScorer,
    NeighborhoodTrainConfig,
};
use crate::seeding::sub_seed;
use crate::tensor::kernels;

/// Rank-discounted score of one test user: (k - (hit - 1)) / k for a hit at
/// position 1..=k, otherwise 0.
pub fn hit_precision_score(hit: Option<usize>, k: usize) -> f64 {
    match hit {
        Some(pos) if pos >= 1 && pos <= k => (k - (pos - 1)) as f64 / k as f64,
        _ => 0.0,
    }
}

/// Mean hit-precision over test users.
pub fn hit_precision(hits: &[Option<usize>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if hits.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    Ok(hits.iter().map(|h| hit_precision_score(*h, k)).sum::<f64>() / hits.len() as f64)
}

/// Node-similarity scorer over normalized embeddings.
pub struct NodeScorer {
    zs: Embeddings,
    zt: Embeddings,
}

impl NodeScorer {
    pub fn new(embeddings: &NodeEmbeddings) -> NodeScorer {
        NodeScorer {
            zs: embeddings.src.normalized(),
            zt: embeddings.tgt.normalized(),
        }
    }

    pub fn score(&self, i: u32, j: u32) -> f64 {
        kernels::dot(self.zs.row(i), self.zt.row(j)).max(0.0)
    }

    pub fn n_targets(&self) -> usize {
        self.zt.n()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedCandidate {
    pub target: u32,
    pub r_node: f64,
    pub r_nei: f64,
    pub r_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRanking {
    pub source: u32,
    pub true_target: u32,
    /// 1-based rank of the true target, `None` past the ranking.
    pub hit_position: Option<usize>,
    pub top: Vec<RankedCandidate>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMeta {
    pub variant: String,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct ScoreReport {
    pub rankings: Vec<UserRanking>,
    pub hit_precision: f64,
    pub k: usize,
    pub meta: RunMeta,
}

impl ScoreReport {
    /// `source_id,hit_position,top1_target,top1_score` per test user; the
    /// hit_position field is empty on a miss.
    pub fn save_detail_csv(
        &self,
        path: &Path,
        src: &SocialNetwork,
        tgt: &SocialNetwork,
    ) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "source_id,hit_position,top1_target,top1_score")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        for r in &self.rankings {
            let hit = r.hit_position.map(|p| p.to_string()).unwrap_or_default();
            let (t1, s1) = r
                .top
                .first()
                .map(|c| (tgt.user_id(c.target).to_string(), format!("{:.6}", c.r_total)))
                .unwrap_or_default();
            writeln!(w, "{},{},{},{}", src.user_id(r.source), hit, t1, s1)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// Rank every target for each test source user by node similarity; when the
/// neighborhood component is active (lambda > 0), re-score that user's
/// top-C candidates with the weighted total similarity and rank the union.
/// Ties break toward the smaller target index.
pub fn rank_candidates(
    test_anchors: &[(u32, u32)],
    node: &NodeScorer,
    enhancement: Option<(&NeighborhoodScorer, &CandidateIndex)>,
    lambda: f64,
    k: usize,
    meta: RunMeta,
) -> Result<ScoreReport> {
    if lambda < 0.0 {
        return Err(Error::Config(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if test_anchors.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let n_tgt = node.n_targets() as u32;
    let active = enhancement.filter(|_| lambda > 0.0);

    let rankings: Vec<UserRanking> = test_anchors
        .par_iter()
        .map(|&(i, true_target)| {
            let mut node_scores: Vec<f64> = (0..n_tgt).map(|j| node.score(i, j)).collect();
            let mut nei_scores: Vec<f64> = vec![0.0; n_tgt as usize];
            let mut totals = node_scores.clone();
            if let Some((scorer, candidates)) = active {
                for &(j, r_node) in candidates.row(i) {
                    let r_nei = scorer.score(i, j);
                    nei_scores[j as usize] = r_nei;
                    totals[j as usize] = total_similarity(r_node, r_nei, lambda);
                    node_scores[j as usize] = r_node;
                }
            }
            let mut order: Vec<u32> = (0..n_tgt).collect();
            order.sort_unstable_by(|a, b| {
                totals[*b as usize]
                    .total_cmp(&totals[*a as usize])
                    .then_with(|| a.cmp(b))
            });
            let hit_position = order
                .iter()
                .position(|&j| j == true_target)
                .map(|p| p + 1)
                .filter(|p| *p <= k);
            let top = order
                .iter()
                .take(k)
                .map(|&j| RankedCandidate {
                    target: j,
                    r_node: node_scores[j as usize],
                    r_nei: nei_scores[j as usize],
                    r_total: totals[j as usize],
                })
                .collect();
            UserRanking {
                source: i,
                true_target,
                hit_position,
                top,
            }
        })
        .collect();

    let hits: Vec<Option<usize>> = rankings.iter().map(|r| r.hit_position).collect();
    let hp = hit_precision(&hits, k)?;
    Ok(ScoreReport {
        rankings,
        hit_precision: hp,
        k,
        meta,
    })
}

/// Everything a grid cell needs besides the cell coordinates.
#[derive(Clone, Debug)]
pub struct CellConfig {
    pub train: TrainConfig,
    pub nei: NeighborhoodTrainConfig,
    /// Top-C candidate list length for neighborhood re-scoring.
    pub candidates: usize,
    pub k: usize,
    pub config_hash: String,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            train: TrainConfig::default(),
            nei: NeighborhoodTrainConfig::default(),
            candidates: 250,
            k: 30,
            config_hash: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub variant: String,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub hit_precision: f64,
    pub n_test: usize,
}

/// One dataset with its split-independent feature grounds built once and
/// shared across grid cells.
pub struct Experiment<'d> {
    pub src: &'d SocialNetwork,
    pub tgt: &'d SocialNetwork,
    pub anchors: &'d AnchorSet,
    structure_src: SimilarityGround,
    structure_tgt: SimilarityGround,
    profile: SimilarityGround,
    content: SimilarityGround,
}

impl<'d> Experiment<'d> {
    pub fn prepare(
        src: &'d SocialNetwork,
        tgt: &'d SocialNetwork,
        anchors: &'d AnchorSet,
        theta: f64,
    ) -> Experiment<'d> {
        Experiment {
            src,
            tgt,
            anchors,
            structure_src: structure_ground(src, Side::Source, theta),
            structure_tgt: structure_ground(tgt, Side::Target, theta),
            profile: profile_ground(src, tgt, theta),
            content: content_ground(src, tgt, theta),
        }
    }

    /// Build from pre-loaded ground caches instead of recomputing.
    pub fn from_grounds(
        src: &'d SocialNetwork,
        tgt: &'d SocialNetwork,
        anchors: &'d AnchorSet,
        structure_src: SimilarityGround,
        structure_tgt: SimilarityGround,
        profile: SimilarityGround,
        content: SimilarityGround,
    ) -> Experiment<'d> {
        Experiment {
            src,
            tgt,
            anchors,
            structure_src,
            structure_tgt,
            profile,
            content,
        }
    }

    pub fn grounds_for(&self, variant: FeatureSet, label: SimilarityGround) -> GroundSet {
        GroundSet {
            structure_src: variant.structure.then(|| self.structure_src.clone()),
            structure_tgt: variant.structure.then(|| self.structure_tgt.clone()),
            profile: variant.profile.then(|| self.profile.clone()),
            content: variant.content.then(|| self.content.clone()),
            label,
        }
    }

    /// Train once and evaluate at every lambda. The cell seed drives the
    /// anchor split and both training phases.
    pub fn run_cell(
        &self,
        variant: FeatureSet,
        eta: f64,
        lambdas: &[f64],
        seed: u64,
        cfg: &CellConfig,
    ) -> Result<Vec<GridRow>> {
        let tagged = self.anchors.split(eta, sub_seed(seed, "anchor.split"))?;
        let label = label_ground(
            &tagged,
            self.src.n_users(),
            self.tgt.n_users(),
            cfg.train.theta,
        );
        let grounds = self.grounds_for(variant, label);
        let train_cfg = TrainConfig {
            features: variant,
            seed,
            ..cfg.train.clone()
        };
        let (_bank, embeddings, _report) = train_fusion(&grounds, &train_cfg)?;

        let test: Vec<(u32, u32)> = tagged.test_pairs().map(|p| (p.source, p.target)).collect();
        let node = NodeScorer::new(&embeddings);

        let needs_ne = lambdas.iter().any(|l| *l > 0.0);
        let trained_ne = if needs_ne {
            let train_pairs: Vec<(u32, u32)> =
                tagged.train_pairs().map(|p| (p.source, p.target)).collect();
            let candidates = CandidateIndex::build(&embeddings, cfg.candidates);
            let nei_cfg = NeighborhoodTrainConfig {
                seed,
                ..cfg.nei.clone()
            };
            let (encoder, _) = train_neighborhood(
                &train_pairs,
                &candidates,
                &embeddings,
                self.src,
                self.tgt,
                &nei_cfg,
            )?;
            Some((encoder, candidates))
        } else {
            None
        };

        let mut rows = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let meta = RunMeta {
                variant: variant.name(),
                eta,
                lambda,
                seed,
                config_hash: cfg.config_hash.clone(),
            };
            let report = match &trained_ne {
                Some((encoder, candidates)) if lambda > 0.0 => {
                    let scorer =
                        NeighborhoodScorer::new(encoder, &embeddings, self.src, self.tgt, cfg.nei.tau);
                    rank_candidates(&test, &node, Some((&scorer, candidates)), lambda, cfg.k, meta)?
                }
                _ => rank_candidates(&test, &node, None, lambda, cfg.k, meta)?,
            };
            rows.push(GridRow {
                variant: variant.name(),
                eta,
                lambda,
                seed,
                hit_precision: report.hit_precision,
                n_test: test.len(),
            });
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub variants: Vec<String>,
    pub etas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Full factorial over variants x etas x seeds, evaluated at every lambda.
/// Cells run in parallel; rows come back sorted by (variant, eta, lambda,
/// seed) so regenerated CSVs are bit-identical.
pub fn run_experiment_grid(
    experiment: &Experiment,
    spec: &GridSpec,
    cfg: &CellConfig,
) -> Result<Vec<GridRow>> {
    let variants: Vec<FeatureSet> = spec
        .variants
        .iter()
        .map(|v| FeatureSet::parse(v))
        .collect::<Result<_>>()?;
    for lambda in &spec.lambdas {
        if *lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
    }
    let mut cells = Vec::new();
    for variant in &variants {
        for &eta in &spec.etas {
            for &seed in &spec.seeds {
                cells.push((*variant, eta, seed));
            }
        }
    }
    let results: Vec<Result<Vec<GridRow>>> = cells
        .par_iter()
        .map(|(variant, eta, seed)| experiment.run_cell(*variant, *eta, &spec.lambdas, *seed, cfg))
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then_with(|| a.eta.total_cmp(&b.eta))
            .then_with(|| a.lambda.total_cmp(&b.lambda))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

/// `variant,eta,lambda,seed,hit_precision,n_test` per row.
pub fn write_results_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "variant,eta,lambda,seed,hit_precision,n_test")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{}",
            r.variant, r.eta, r.lambda, r.seed, r.hit_precision, r.n_test
        )
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Embeddings;

    #[test]
    fn hit_precision_matches_formula() {
        assert_eq!(hit_precision_score(Some(1), 30), 1.0);
        let h30 = hit_precision_score(Some(30), 30);
        assert!((h30 - 1.0 / 30.0).abs() < 1e-12);
        assert_eq!(hit_precision_score(Some(31), 30), 0.0);
        assert_eq!(hit_precision_score(None, 30), 0.0);
    }

    #[test]
    fn hit_precision_rejects_empty_test_set() {
        assert!(hit_precision(&[], 30).is_err());
    }

    fn oracle_embeddings(n: usize) -> NodeEmbeddings {
        // Orthogonal one-hot embeddings make the true anchor the unique
        // best match.
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v
            })
            .collect();
        NodeEmbeddings {
            src: Embeddings::from_rows(rows.clone(), n),
            tgt: Embeddings::from_rows(rows, n),
        }
    }

    #[test]
    fn oracle_scorer_scores_one() {
        let emb = oracle_embeddings(12);
        let node = NodeScorer::new(&emb);
        let test: Vec<(u32, u32)> = (0..12).map(|i| (i, i)).collect();
        let report =
            rank_candidates(&test, &node, None, 0.0, 5, RunMeta::default()).unwrap();
        assert_eq!(report.hit_precision, 1.0);
        assert!(report.rankings.iter().all(|r| r.hit_position == Some(1)));
    }

    #[test]
    fn ties_break_toward_smaller_target_index() {
        // All-zero embeddings: every score ties at 0.
        let rows = vec![vec![0.0; 3]; 3];
        let emb = NodeEmbeddings {
            src: Embeddings::from_rows(rows.clone(), 3),
            tgt: Embeddings::from_rows(rows, 3),
        };
        let node = NodeScorer::new(&emb);
        let report = rank_candidates(&[(0, 0)], &node, None, 0.0, 3, RunMeta::default()).unwrap();
        let order: Vec<u32> = report.rankings[0].top.iter().map(|c| c.target).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn adding_score_to_true_match_never_decreases_hit_precision() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        for _ in 0..20 {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let truth = rng.gen_range(0..n);
            let rank = |scores: &[f64]| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
                order.iter().position(|&j| j == truth).unwrap() + 1
            };
            let before = hit_precision_score(Some(rank(&scores)), 10);
            let mut boosted = scores.clone();
            boosted[truth] += 0.05;
            let after = hit_precision_score(Some(rank(&boosted)), 10);
            assert!(after >= before);
        }
    }

    #[test]
    fn rank_based_metric_invariant_under_monotone_transform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 25usize;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let hit = |scores: &[f64], truth: usize| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
            order.iter().position(|&j| j == truth).unwrap() + 1
        };
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
        for truth in 0..n {
            assert_eq!(
                hit_precision_score(Some(hit(&scores, truth)), 7),
                hit_precision_score(Some(hit(&transformed, truth)), 7)
            );
        }
    }

    #[test]
    fn lambda_zero_report_equals_node_only_report() {
        use crate::neighborhood::NeighborhoodEncoder;
        let emb = oracle_embeddings(8);
        let node = NodeScorer::new(&emb);
        let test: Vec<(u32, u32)> = (0..8).map(|i| (i, i)).collect();
        let net = crate::dataset::SocialNetwork::from_parts(
            (0..8).map(|i| format!("u{i}")).collect(),
            vec![(0, 1), (2, 3), (4, 5)],
            vec![],
            vec![],
        )
        .unwrap();
        let encoder = NeighborhoodEncoder::new(8, 4, 0).unwrap();
        let scorer = NeighborhoodScorer::new(&encoder, &emb, &net, &net, 0.5);
        let candidates = CandidateIndex::build(&emb, 4);
        let with_ne = rank_candidates(
            &test,
            &node,
            Some((&scorer, &candidates)),
            0.0,
            5,
            RunMeta::default(),
        )
        .unwrap();
        let without = rank_candidates(&test, &node, None, 0.0, 5, RunMeta::default()).unwrap();
        assert_eq!(with_ne.rankings, without.rankings);
        assert_eq!(with_ne.hit_precision, without.hit_precision);
    }

    #[test]
    fn negative_lambda_is_a_config_error() {
        let emb = oracle_embeddings(4);
        let node = NodeScorer::new(&emb);
        let err = rank_candidates(&[(0, 0)], &node, None, -0.1, 3, RunMeta::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
