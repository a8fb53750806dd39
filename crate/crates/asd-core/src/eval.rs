//! Detection metrics and the evaluation protocol.
//!
//! AUC is computed per (machine, section, domain) cell: negatives are the
//! normal clips of that domain, positives are every anomalous clip of the
//! section regardless of domain. pAUC is computed per (machine, section)
//! over both domains with the low-FPR head of the ROC curve (FPR <= p),
//! rescaled by 1/p. Aggregate scores are harmonic means.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Label};
use crate::error::{Error, Result};
use crate::smooth::{self, DomainFilter, SmoothConfig};
use crate::table::{EmbeddingTable, RowMeta, ScoreTable};

pub const PAUC_P: f64 = 0.1;

/// Sections 0-2 tune hyperparameters, sections 3-5 report results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionSplit {
    Validation,
    Evaluation,
}

impl SectionSplit {
    pub fn contains(self, section: u8) -> bool {
        match self {
            SectionSplit::Validation => section <= 2,
            SectionSplit::Evaluation => (3..=5).contains(&section),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SectionSplit::Validation => "validation",
            SectionSplit::Evaluation => "evaluation",
        }
    }
}

/// ROC points in count units, highest scores first. Tied scores move as one
/// group so the curve is identical to pairwise counting with half-credit
/// for ties.
fn roc_points(scores: &[f64], labels: &[bool]) -> Result<(Vec<(f64, f64)>, f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::MetricUndefined(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        points.push((fp, tp));
        i = j;
    }
    Ok((points, pos, neg))
}

/// Area under the ROC curve, in percent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (points, pos, neg) = roc_points(scores, labels)?;
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area / (pos * neg) * 100.0)
}

/// Partial AUC over FPR in [0, p], rescaled by 1/p, in percent. The ROC
/// curve is linearly interpolated where FPR = p falls inside a segment.
pub fn pauc(scores: &[f64], labels: &[bool], p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 {
        return Err(Error::Config(format!("pAUC needs 0 < p <= 1, got {p}")));
    }
    let (points, pos, neg) = roc_points(scores, labels)?;
    let fp_max = p * neg;
    let mut area = 0.0;
    for w in points.windows(2) {
        let (fp0, tp0) = w[0];
        let (fp1, tp1) = w[1];
        if fp0 >= fp_max {
            break;
        }
        if fp1 <= fp_max {
            area += (fp1 - fp0) * (tp0 + tp1) / 2.0;
        } else {
            // Segment straddles the cutoff: vertical jumps (fp1 == fp0)
            // never land here, so the slope is finite.
            let t = (fp_max - fp0) / (fp1 - fp0);
            let tp_cut = tp0 + t * (tp1 - tp0);
            area += (fp_max - fp0) * (tp0 + tp_cut) / 2.0;
            break;
        }
    }
    Ok(area / (fp_max * pos) * 100.0)
}

/// Harmonic mean. Any value <= 0 makes the mean undefined; it is reported
/// as 0 with a warning rather than an error so summary tables stay usable.
pub fn hmean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if values.iter().any(|&v| v <= 0.0) {
        log::warn!("harmonic mean of values containing a non-positive entry, reporting 0");
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCell {
    pub machine: String,
    pub section: u8,
    pub domain: Domain,
    pub auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaucCell {
    pub machine: String,
    pub section: u8,
    pub pauc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    pub paucs: Vec<PaucCell>,
    pub hmean_auc: f64,
    pub hmean_pauc: f64,
    /// Harmonic mean over every AUC and pAUC cell, the headline score.
    pub hmean_all: f64,
}

/// Score one column of a table; `split` restricts which sections count.
pub fn evaluate(table: &ScoreTable, column: &str, split: Option<SectionSplit>) -> Result<EvalReport> {
    let scores = table.column(column)?;
    let keep: Vec<usize> = (0..table.rows.len())
        .filter(|&i| split.is_none_or(|s| s.contains(table.rows[i].section)))
        .collect();
    if keep.is_empty() {
        return Err(Error::MetricUndefined("no rows in the requested split".into()));
    }

    let mut groups: Vec<(String, u8)> = keep
        .iter()
        .map(|&i| (table.rows[i].machine.clone(), table.rows[i].section))
        .collect();
    groups.sort();
    groups.dedup();

    let mut cells = Vec::new();
    let mut paucs = Vec::new();
    for (machine, section) in groups {
        let idx: Vec<usize> = keep
            .iter()
            .copied()
            .filter(|&i| table.rows[i].machine == machine && table.rows[i].section == section)
            .collect();
        let anomalies: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| table.rows[i].label == Label::Anomalous)
            .collect();
        for domain in [Domain::Source, Domain::Target] {
            let normals: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| table.rows[i].domain == domain && table.rows[i].label == Label::Normal)
                .collect();
            if normals.is_empty() {
                continue;
            }
            let mut s = Vec::new();
            let mut l = Vec::new();
            for &i in normals.iter().chain(&anomalies) {
                s.push(scores[i]);
                l.push(table.rows[i].label == Label::Anomalous);
            }
            cells.push(EvalCell {
                machine: machine.clone(),
                section,
                domain,
                auc: auc(&s, &l).map_err(|e| {
                    Error::MetricUndefined(format!("{machine} section {section} {}: {e}", domain.as_str()))
                })?,
            });
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| table.rows[i].label == Label::Anomalous).collect();
        paucs.push(PaucCell {
            machine: machine.clone(),
            section,
            pauc: pauc(&s, &l, PAUC_P)
                .map_err(|e| Error::MetricUndefined(format!("{machine} section {section}: {e}")))?,
        });
    }

    let auc_values: Vec<f64> = cells.iter().map(|c| c.auc).collect();
    let pauc_values: Vec<f64> = paucs.iter().map(|c| c.pauc).collect();
    let all: Vec<f64> = auc_values.iter().chain(&pauc_values).copied().collect();
    Ok(EvalReport {
        hmean_auc: hmean(&auc_values),
        hmean_pauc: hmean(&pauc_values),
        hmean_all: hmean(&all),
        cells,
        paucs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub domain_filter: DomainFilter,
    pub validation_score: f64,
    pub evaluation_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// Index of the configuration picked on validation sections.
    pub chosen: usize,
    /// Index of the best configuration on evaluation sections (hindsight).
    pub oracle: usize,
}

impl SweepResult {
    pub fn chosen_entry(&self) -> &SweepEntry {
        &self.entries[self.chosen]
    }

    pub fn oracle_entry(&self) -> &SweepEntry {
        &self.entries[self.oracle]
    }
}

fn argmax_by(entries: &[SweepEntry], key: impl Fn(&SweepEntry) -> f64) -> usize {
    // Entries are ordered (k ascending, source_only before all), so taking
    // the first strict maximum realizes the tie-breaking rules.
    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if key(e) > key(&entries[best]) {
            best = i;
        }
    }
    best
}

/// Grid search over ensemble size and pool domain filter. The chosen
/// configuration maximizes the validation-section score; ties prefer a
/// smaller K, then a source-only pool.
pub fn sweep(
    table: &ScoreTable,
    embeddings: &EmbeddingTable,
    ks: &[usize],
    metric: smooth::Metric,
) -> Result<SweepResult> {
    if ks.is_empty() {
        return Err(Error::Config("sweep needs at least one K".into()));
    }
    let mut entries = Vec::new();
    for &k in ks {
        for filter in [DomainFilter::SourceOnly, DomainFilter::All] {
            let cfg = SmoothConfig {
                k,
                domain_filter: filter,
                metric,
            };
            let smoothed = smooth::batch_smooth_table(table, embeddings, &cfg)?;
            entries.push(SweepEntry {
                k,
                domain_filter: filter,
                validation_score: evaluate(&smoothed, "score_smooth", Some(SectionSplit::Validation))?
                    .hmean_all,
                evaluation_score: evaluate(&smoothed, "score_smooth", Some(SectionSplit::Evaluation))?
                    .hmean_all,
            });
        }
    }
    let chosen = argmax_by(&entries, |e| e.validation_score);
    let oracle = argmax_by(&entries, |e| e.evaluation_score);
    Ok(SweepResult {
        entries,
        chosen,
        oracle,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsampleRow {
    pub fraction: f64,
    pub trial: u32,
    pub score: f64,
}

/// Robustness of smoothing to observed-set size: repeatedly subsample the
/// test set (stratified per machine/section/domain/label cell), rebuild the
/// pool from the subsample only, and score it.
pub fn subsample_experiment(
    table: &ScoreTable,
    embeddings: &EmbeddingTable,
    cfg: &SmoothConfig,
    fractions: &[f64],
    trials: u32,
    seed: u64,
) -> Result<Vec<SubsampleRow>> {
    let mut strata: Vec<(String, u8, Domain, Label)> = table
        .rows
        .iter()
        .map(|r| (r.machine.clone(), r.section, r.domain, r.label))
        .collect();
    strata.sort();
    strata.dedup();

    let mut out = Vec::new();
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ ((fi as u64) << 32) ^ u64::from(trial),
            );
            let mut picked = Vec::new();
            for stratum in &strata {
                let mut members: Vec<usize> = (0..table.rows.len())
                    .filter(|&i| {
                        let r = &table.rows[i];
                        (&r.machine, r.section, r.domain, r.label)
                            == (&stratum.0, stratum.1, stratum.2, stratum.3)
                    })
                    .collect();
                let n = ((members.len() as f64 * fraction).ceil() as usize).max(1);
                members.shuffle(&mut rng);
                picked.extend(members.into_iter().take(n));
            }
            picked.sort_unstable();

            let rows: Vec<RowMeta> = picked.iter().map(|&i| table.rows[i].clone()).collect();
            let mut sub = ScoreTable::new(rows);
            for (name, values) in &table.columns {
                sub.add_column(name, picked.iter().map(|&i| values[i]).collect())?;
            }
            // Small observed sets cannot fill the configured ensemble, so K
            // is clamped to the tightest per-machine pool.
            let mut machines: Vec<&String> = sub.rows.iter().map(|r| &r.machine).collect();
            machines.sort();
            machines.dedup();
            let min_pool = machines
                .iter()
                .map(|m| {
                    sub.rows
                        .iter()
                        .filter(|r| {
                            &&r.machine == m
                                && (cfg.domain_filter == smooth::DomainFilter::All
                                    || r.domain == Domain::Source)
                        })
                        .count()
                })
                .min()
                .unwrap_or(0);
            let trial_cfg = SmoothConfig {
                k: cfg.k.min(min_pool).max(1),
                ..*cfg
            };
            let smoothed = smooth::batch_smooth_table(&sub, embeddings, &trial_cfg)?;
            out.push(SubsampleRow {
                fraction,
                trial,
                score: evaluate(&smoothed, "score_smooth", Some(SectionSplit::Evaluation))?.hmean_all,
            });
        }
    }
    Ok(out)
}
