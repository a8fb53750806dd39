//! Neighborhood smoothing of generative anomaly scores: each observation's
//! score is averaged with the scores of its K-1 nearest neighbors in the
//! discriminative feature space, using a pool built from the observed set.
//!
//! Neighbor search is an exact brute-force scan; ties are broken by
//! ascending clip_id and the query excludes itself by clip_id identity, so
//! duplicate features from distinct clips are legitimate neighbors.

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::parallel;
use crate::table::{EmbeddingTable, RowMeta, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainFilter {
    SourceOnly,
    All,
}

impl DomainFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainFilter::SourceOnly => "source_only",
            DomainFilter::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source_only" => Ok(DomainFilter::SourceOnly),
            "all" => Ok(DomainFilter::All),
            other => Err(Error::Parse(format!("unknown domain filter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothConfig {
    /// Ensemble size: the query plus K-1 neighbors.
    pub k: usize,
    pub domain_filter: DomainFilter,
    pub metric: Metric,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            k: 8,
            domain_filter: DomainFilter::All,
            metric: Metric::Euclidean,
        }
    }
}

/// A clip's discriminative feature paired with its generative score.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub meta: RowMeta,
    pub feature: Vec<f64>,
    pub score_gen: f64,
}

/// Immutable neighbor-query pool, ordered by clip_id.
#[derive(Debug, Clone)]
pub struct FeaturePool {
    samples: Vec<ScoredSample>,
    metric: Metric,
}

fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

pub fn build_pool(
    samples: Vec<ScoredSample>,
    filter: DomainFilter,
    metric: Metric,
) -> Result<FeaturePool> {
    let mut kept: Vec<ScoredSample> = samples
        .into_iter()
        .filter(|s| filter == DomainFilter::All || s.meta.domain == Domain::Source)
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "feature pool is empty after domain filter {}",
            filter.as_str()
        )));
    }
    kept.sort_by(|a, b| a.meta.clip_id.cmp(&b.meta.clip_id));
    Ok(FeaturePool {
        samples: kept,
        metric,
    })
}

impl FeaturePool {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ScoredSample] {
        &self.samples
    }

    /// Indices of the k nearest pool samples to the query feature,
    /// excluding the query itself when it is a pool member.
    pub fn knn(&self, query: &ScoredSample, k: usize) -> Result<Vec<usize>> {
        let mut candidates: Vec<(f64, &str, usize)> = self
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.meta.clip_id != query.meta.clip_id)
            .map(|(i, s)| {
                (
                    distance(self.metric, &query.feature, &s.feature),
                    s.meta.clip_id.as_str(),
                    i,
                )
            })
            .collect();
        if k > candidates.len() {
            return Err(Error::Config(format!(
                "k={k} neighbors requested from a pool of {} (excluding the query, {} available)",
                self.samples.len(),
                candidates.len()
            )));
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        Ok(candidates[..k].iter().map(|&(_, _, i)| i).collect())
    }
}

/// Smoothed score per query: `(1/K) (a(q) + sum of K-1 neighbor scores)`.
/// Each query is independent; there is no iterative re-smoothing.
pub fn smooth(pool: &FeaturePool, queries: &[ScoredSample], cfg: &SmoothConfig) -> Result<Vec<f64>> {
    if cfg.k == 0 {
        return Err(Error::Config("smoothing needs k >= 1".into()));
    }
    parallel::try_map(queries, |q| {
        if cfg.k == 1 {
            return Ok(q.score_gen);
        }
        let neighbors = pool.knn(q, cfg.k - 1)?;
        let sum: f64 = q.score_gen + neighbors.iter().map(|&i| pool.samples[i].score_gen).sum::<f64>();
        Ok(sum / cfg.k as f64)
    })
}

/// Join a score table with an embedding table by clip_id, smooth per
/// machine, and append a `score_smooth` column.
pub fn batch_smooth_table(
    table: &ScoreTable,
    embeddings: &EmbeddingTable,
    cfg: &SmoothConfig,
) -> Result<ScoreTable> {
    let score_gen = table.column("score_gen")?;

    let missing: Vec<&str> = table
        .rows
        .iter()
        .filter(|r| embeddings.feature_of(&r.clip_id).is_none())
        .map(|r| r.clip_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::DataIntegrity(format!(
            "no embedding for clip_ids: {}",
            missing.join(", ")
        )));
    }

    let samples: Vec<ScoredSample> = table
        .rows
        .iter()
        .zip(score_gen)
        .map(|(r, &s)| ScoredSample {
            meta: r.clone(),
            feature: embeddings.feature_of(&r.clip_id).unwrap().to_vec(),
            score_gen: s,
        })
        .collect();

    let mut machines: Vec<&str> = table.rows.iter().map(|r| r.machine.as_str()).collect();
    machines.sort_unstable();
    machines.dedup();

    let mut smoothed = vec![0.0; samples.len()];
    for machine in machines {
        let idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].meta.machine == machine)
            .collect();
        let members: Vec<ScoredSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let pool = build_pool(members.clone(), cfg.domain_filter, cfg.metric)?;
        let scores = smooth(&pool, &members, cfg)?;
        for (slot, score) in idx.iter().zip(scores) {
            smoothed[*slot] = score;
        }
    }

    let mut out = table.clone();
    out.add_column("score_smooth", smoothed)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn sample(id: &str, feature: Vec<f64>, score: f64) -> ScoredSample {
        sample_in(id, feature, score, Domain::Source)
    }

    fn sample_in(id: &str, feature: Vec<f64>, score: f64, domain: Domain) -> ScoredSample {
        ScoredSample {
            meta: RowMeta {
                clip_id: id.to_string(),
                machine: "m".into(),
                section: 0,
                domain,
                label: Label::Normal,
            },
            feature,
            score_gen: score,
        }
    }

    fn line_pool() -> (FeaturePool, Vec<ScoredSample>) {
        let samples = vec![
            sample("a", vec![0.0], 1.0),
            sample("b", vec![0.1], 3.0),
            sample("c", vec![1.0], 10.0),
            sample("d", vec![1.1], 20.0),
        ];
        let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();
        (pool, samples)
    }

    #[test]
    fn domain_filter_counts() {
        let mut samples: Vec<_> = (0..6).map(|i| sample(&format!("s{i}"), vec![i as f64], 0.0)).collect();
        samples.extend((0..4).map(|i| sample_in(&format!("t{i}"), vec![i as f64], 0.0, Domain::Target)));
        let all = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();
        assert_eq!(all.len(), 10);
        let source = build_pool(samples, DomainFilter::SourceOnly, Metric::Euclidean).unwrap();
        assert_eq!(source.len(), 6);

        let only_target = vec![sample_in("t", vec![0.0], 0.0, Domain::Target)];
        assert!(matches!(
            build_pool(only_target, DomainFilter::SourceOnly, Metric::Euclidean),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn knn_basic_and_exhaustive() {
        let (pool, samples) = line_pool();
        let n = pool.knn(&samples[0], 1).unwrap();
        assert_eq!(pool.samples()[n[0]].meta.clip_id, "b");

        let all = pool.knn(&samples[0], 3).unwrap();
        let ids: Vec<_> = all.iter().map(|&i| pool.samples()[i].meta.clip_id.clone()).collect();
        assert_eq!(ids, vec!["b", "c", "d"]);

        assert!(matches!(pool.knn(&samples[0], 4), Err(Error::Config(_))));
    }

    #[test]
    fn ties_break_by_clip_id() {
        let samples = vec![
            sample("q", vec![0.0], 0.0),
            sample("z", vec![1.0], 0.0),
            sample("b", vec![-1.0], 0.0),
        ];
        let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();
        let n = pool.knn(&samples[0], 1).unwrap();
        assert_eq!(pool.samples()[n[0]].meta.clip_id, "b");
    }

    #[test]
    fn k1_is_identity() {
        let (pool, samples) = line_pool();
        let cfg = SmoothConfig {
            k: 1,
            domain_filter: DomainFilter::All,
            metric: Metric::Euclidean,
        };
        let out = smooth(&pool, &samples, &cfg).unwrap();
        for (s, o) in samples.iter().zip(out) {
            assert_eq!(s.score_gen, o); // bitwise
        }
    }

    #[test]
    fn constant_scores_stay_constant() {
        let samples: Vec<_> = (0..5).map(|i| sample(&format!("s{i}"), vec![i as f64], 2.5)).collect();
        let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();
        for k in 1..=5 {
            let cfg = SmoothConfig {
                k,
                domain_filter: DomainFilter::All,
                metric: Metric::Euclidean,
            };
            for v in smooth(&pool, &samples, &cfg).unwrap() {
                assert!((v - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn worked_example_k2() {
        let (pool, samples) = line_pool();
        let cfg = SmoothConfig {
            k: 2,
            domain_filter: DomainFilter::All,
            metric: Metric::Euclidean,
        };
        let out = smooth(&pool, &samples, &cfg).unwrap();
        assert_eq!(out, vec![2.0, 2.0, 15.0, 15.0]);
    }

    #[test]
    fn k_equals_pool_size_gives_global_mean() {
        let (pool, samples) = line_pool();
        let cfg = SmoothConfig {
            k: 4,
            domain_filter: DomainFilter::All,
            metric: Metric::Euclidean,
        };
        let mean = (1.0 + 3.0 + 10.0 + 20.0) / 4.0;
        for v in smooth(&pool, &samples, &cfg).unwrap() {
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_metric_ignores_magnitude() {
        let samples = vec![
            sample("a", vec![1.0, 0.0], 0.0),
            sample("b", vec![10.0, 0.1], 0.0),
            sample("c", vec![0.0, 1.0], 0.0),
        ];
        let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Cosine).unwrap();
        let n = pool.knn(&samples[0], 1).unwrap();
        assert_eq!(pool.samples()[n[0]].meta.clip_id, "b");
    }

    #[test]
    fn non_member_query_uses_k_minus_one_neighbors() {
        let (pool, _) = line_pool();
        let query = sample("zz", vec![0.05], 100.0);
        let cfg = SmoothConfig {
            k: 2,
            domain_filter: DomainFilter::All,
            metric: Metric::Euclidean,
        };
        let out = smooth(&pool, &[query], &cfg).unwrap();
        // Nearest neighbor is "a" (score 1) or "b" (score 3): |0.05| vs |0.05|
        // is an exact tie, broken by clip_id -> "a".
        assert!((out[0] - (100.0 + 1.0) / 2.0).abs() < 1e-12);
    }
}
