//! Multi-label evaluation metrics.
//!
//! Label-based: ROC AUC and average precision per attribute, averaged over
//! attributes where they are defined. Example-based: average precision,
//! Hamming loss and ranking loss per instance, averaged over instances.
//!
//! Ties get half credit in AUC and ranking loss. Average precision ranks by
//! descending score with ties kept in index order.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationMatrix, ScoreMatrix};
use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Indices sorted by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Sum over (positive, negative) pairs of `[s_pos > s_neg] + 0.5 [s_pos = s_neg]`,
/// computed from tie-averaged ranks.
fn correctly_ordered_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let order = ascending(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    rank_sum - n_pos * (n_pos + 1.0) / 2.0
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting 0.5.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok(correctly_ordered_pairs(scores, labels) / (pos as f64 * neg as f64))
}

/// Mean over positives of precision at that positive's rank.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep index order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedAp);
    }
    Ok(total / hits as f64)
}

/// Fraction of cells where the two binary matrices differ.
pub fn hamming_loss(pred: &DMatrix<u8>, gt: &DMatrix<u8>) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::InvalidConfig(format!(
            "Hamming loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("Hamming loss input"));
    }
    let wrong = pred.iter().zip(gt.iter()).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Ranking loss of one instance, `None` when it has a single class.
pub fn instance_ranking_loss(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let pairs = pos as f64 * neg as f64;
    Ok(Some(
        (pairs - correctly_ordered_pairs(scores, labels)) / pairs,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingLoss {
    pub value: f64,
    /// Instances skipped for having only positive or only negative labels.
    pub skipped: usize,
}

/// Mean per-instance ranking loss; single-class instances are skipped.
pub fn ranking_loss(scores: &[Vec<f64>], gt: &[Vec<u8>]) -> Result<RankingLoss> {
    if scores.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            what: "instances",
            expected: scores.len(),
            found: gt.len(),
        });
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (s, y) in scores.iter().zip(gt) {
        if let Some(l) = instance_ranking_loss(s, y)? {
            sum += l;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Empty("ranking loss: no instance has both classes"));
    }
    Ok(RankingLoss {
        value: sum / used as f64,
        skipped: scores.len() - used,
    })
}

/// How continuous scores become binary predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BinarizePolicy {
    /// `score > 1 / Q`.
    #[default]
    UniformThreshold,
    /// `score > t`.
    FixedThreshold { threshold: f64 },
    /// The `k` highest scores per instance, ties in attribute order.
    TopK { k: usize },
}

impl fmt::Display for BinarizePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinarizePolicy::UniformThreshold => f.write_str("uniform"),
            BinarizePolicy::FixedThreshold { threshold } => write!(f, "fixed:{threshold}"),
            BinarizePolicy::TopK { k } => write!(f, "topk:{k}"),
        }
    }
}

impl TryFrom<String> for BinarizePolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BinarizePolicy> for String {
    fn from(p: BinarizePolicy) -> String {
        p.to_string()
    }
}

impl FromStr for BinarizePolicy {
    type Err = Error;

    /// `uniform`, `fixed:<t>` or `topk:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown binarize policy `{s}`"));
        match s.split_once(':') {
            None if s == "uniform" => Ok(BinarizePolicy::UniformThreshold),
            Some(("fixed", t)) => Ok(BinarizePolicy::FixedThreshold {
                threshold: t.parse().map_err(|_| bad())?,
            }),
            Some(("topk", k)) => Ok(BinarizePolicy::TopK {
                k: k.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

pub fn binarize(scores: &ScoreMatrix, policy: BinarizePolicy) -> Result<DMatrix<u8>> {
    let s = scores.scores();
    let q = s.nrows();
    match policy {
        BinarizePolicy::UniformThreshold => {
            let t = 1.0 / q as f64;
            Ok(s.map(|v| u8::from(v > t)))
        }
        BinarizePolicy::FixedThreshold { threshold } => {
            if !threshold.is_finite() {
                return Err(Error::InvalidConfig("threshold must be finite".into()));
            }
            Ok(s.map(|v| u8::from(v > threshold)))
        }
        BinarizePolicy::TopK { k } => {
            if k == 0 || k > q {
                return Err(Error::InvalidConfig(format!(
                    "top-k needs 1 <= k <= {q}, got {k}"
                )));
            }
            let mut out = DMatrix::zeros(q, s.ncols());
            for (c, col) in s.column_iter().enumerate() {
                let mut order: Vec<usize> = (0..q).collect();
                order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
                for &r in &order[..k] {
                    out[(r, c)] = 1;
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub attribute: String,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub label_ap: f64,
    pub example_ap: f64,
    pub hamming: f64,
    pub ranking: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_label: Option<Vec<LabelMetrics>>,
    /// Attributes without both classes in the evaluated instances.
    #[serde(default)]
    pub skipped_labels: Vec<String>,
    /// Instances skipped by the example-based ranking metrics.
    #[serde(default)]
    pub skipped_instances: usize,
}

impl MetricsReport {
    fn values(&self) -> [f64; 5] {
        [
            self.auc,
            self.label_ap,
            self.example_ap,
            self.hamming,
            self.ranking,
        ]
    }
}

/// Scores all five metrics of `scores` against `gt`.
///
/// `gt` must cover every scored attribute and instance, in any order.
/// `binary` overrides the binarisation policy for Hamming loss.
pub fn evaluate(
    scores: &ScoreMatrix,
    gt: &AnnotationMatrix,
    binary: Option<&DMatrix<u8>>,
    policy: BinarizePolicy,
) -> Result<MetricsReport> {
    let gt = gt
        .select_attributes(scores.vocabulary())
        .map_err(|e| Error::VocabularyMismatch(e.to_string()))?
        .select_instances(scores.instance_ids())?;
    let s = scores.scores();
    let y = gt.cells();
    let (q, n) = s.shape();
    if n == 0 {
        return Err(Error::Empty("no instances to evaluate"));
    }

    let mut per_label = Vec::with_capacity(q);
    let mut skipped_labels = Vec::new();
    let (mut auc_sum, mut auc_n, mut ap_sum, mut ap_n) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..q {
        let sr: Vec<f64> = s.row(r).iter().copied().collect();
        let yr: Vec<u8> = y.row(r).iter().copied().collect();
        let auc = roc_auc(&sr, &yr).ok();
        let ap = auc.and(average_precision(&sr, &yr).ok());
        match (auc, ap) {
            (Some(a), Some(p)) => {
                auc_sum += a;
                ap_sum += p;
                auc_n += 1;
                ap_n += 1;
            }
            _ => skipped_labels.push(scores.vocabulary().name(r).to_string()),
        }
        per_label.push(LabelMetrics {
            attribute: scores.vocabulary().name(r).to_string(),
            auc,
            ap,
        });
    }
    if auc_n == 0 {
        return Err(Error::UndefinedAuc);
    }

    let columns: Vec<Vec<f64>> = s
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let truth: Vec<Vec<u8>> = y
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut eap_sum = 0.0;
    let mut eap_n = 0usize;
    for (sc, yc) in columns.iter().zip(&truth) {
        if let Ok(ap) = average_precision(sc, yc) {
            eap_sum += ap;
            eap_n += 1;
        }
    }
    if eap_n == 0 {
        return Err(Error::UndefinedAp);
    }
    let ranking = ranking_loss(&columns, &truth)?;

    let owned;
    let pred = match binary {
        Some(b) => b,
        None => {
            owned = binarize(scores, policy)?;
            &owned
        }
    };
    let hamming = hamming_loss(pred, y)?;

    Ok(MetricsReport {
        auc: auc_sum / auc_n as f64,
        label_ap: ap_sum / ap_n as f64,
        example_ap: eap_sum / eap_n as f64,
        hamming,
        ranking: ranking.value,
        per_label: Some(per_label),
        skipped_labels,
        skipped_instances: ranking.skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub auc: MeanStd,
    pub label_ap: MeanStd,
    pub example_ap: MeanStd,
    pub hamming: MeanStd,
    pub ranking: MeanStd,
    pub per_split: Vec<MetricsReport>,
}

impl AggregateReport {
    pub fn fields(&self) -> [(&'static str, MeanStd); 5] {
        [
            ("auc", self.auc),
            ("label_ap", self.label_ap),
            ("example_ap", self.example_ap),
            ("hamming", self.hamming),
            ("ranking", self.ranking),
        ]
    }
}

/// Mean and population standard deviation of every metric.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to aggregate"));
    }
    let n = reports.len() as f64;
    let mut stats = [MeanStd {
        mean: 0.0,
        std: 0.0,
    }; 5];
    for (k, st) in stats.iter_mut().enumerate() {
        let mean = reports.iter().map(|r| r.values()[k]).sum::<f64>() / n;
        let var = reports
            .iter()
            .map(|r| (r.values()[k] - mean).powi(2))
            .sum::<f64>()
            / n;
        *st = MeanStd {
            mean,
            std: var.sqrt(),
        };
    }
    Ok(AggregateReport {
        auc: stats[0],
        label_ap: stats[1],
        example_ap: stats[2],
        hamming: stats[3],
        ranking: stats[4],
        per_split: reports.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AttributeVocabulary;

    #[test]
    fn auc_cases() {
        let s = [0.9, 0.8, 0.4, 0.3];
        assert_eq!(roc_auc(&s, &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&s, &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&s, &[1; 4]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn ap_cases() {
        let s = [0.9, 0.8, 0.7, 0.6];
        assert!((average_precision(&s, &[1, 0, 1, 0]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&s, &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(average_precision(&s, &[0, 0, 0, 1]).unwrap(), 0.25);
        assert!(matches!(
            average_precision(&s, &[0; 4]),
            Err(Error::UndefinedAp)
        ));
    }

    #[test]
    fn hamming_cases() {
        let gt = DMatrix::from_row_slice(3, 1, &[0, 1, 0]);
        let under = DMatrix::from_row_slice(3, 1, &[0, 0, 0]);
        let over = DMatrix::from_row_slice(3, 1, &[1, 1, 0]);
        assert!((hamming_loss(&under, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            hamming_loss(&under, &gt).unwrap(),
            hamming_loss(&over, &gt).unwrap()
        );
        assert_eq!(hamming_loss(&gt, &gt).unwrap(), 0.0);
        assert_eq!(hamming_loss(&gt.map(|v| 1 - v), &gt).unwrap(), 1.0);
        assert!(hamming_loss(&DMatrix::zeros(2, 1), &gt).is_err());
    }

    #[test]
    fn ranking_loss_cases() {
        let l = |s: &[f64], y: &[u8]| ranking_loss(&[s.to_vec()], &[y.to_vec()]).unwrap().value;
        assert_eq!(l(&[0.9, 0.1], &[1, 0]), 0.0);
        assert_eq!(l(&[0.1, 0.9], &[1, 0]), 1.0);
        assert_eq!(l(&[0.9, 0.5, 0.5, 0.1], &[1, 0, 1, 0]), 0.125);
        let r = ranking_loss(&[vec![0.9, 0.1], vec![0.3, 0.2]], &[vec![1, 0], vec![1, 1]]).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.value, 0.0);
    }

    fn sm(cols: &[&[f64]]) -> ScoreMatrix {
        let q = cols[0].len();
        let flat: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        ScoreMatrix::new(
            AttributeVocabulary::new((0..q).map(|i| format!("a{i}"))).unwrap(),
            (0..cols.len()).map(|i| format!("x{i}")).collect(),
            DMatrix::from_column_slice(q, cols.len(), &flat),
        )
        .unwrap()
    }

    #[test]
    fn binarize_policies() {
        let s = sm(&[&[0.4, 0.3, 0.2, 0.1]]);
        let u = binarize(&s, BinarizePolicy::UniformThreshold).unwrap();
        assert_eq!(u.as_slice(), &[1, 1, 0, 0]);
        let t = binarize(&s, BinarizePolicy::TopK { k: 1 }).unwrap();
        assert_eq!(t.as_slice(), &[1, 0, 0, 0]);
        let f = binarize(&s, BinarizePolicy::FixedThreshold { threshold: 1.0 }).unwrap();
        assert!(f.iter().all(|&v| v == 0));
        assert!(binarize(&s, BinarizePolicy::TopK { k: 0 }).is_err());
        assert!(binarize(&s, BinarizePolicy::TopK { k: 5 }).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "uniform".parse::<BinarizePolicy>().unwrap(),
            BinarizePolicy::UniformThreshold
        );
        assert_eq!(
            "fixed:0.5".parse::<BinarizePolicy>().unwrap(),
            BinarizePolicy::FixedThreshold { threshold: 0.5 }
        );
        assert_eq!(
            "topk:2".parse::<BinarizePolicy>().unwrap(),
            BinarizePolicy::TopK { k: 2 }
        );
        assert!("median".parse::<BinarizePolicy>().is_err());
    }

    fn report(auc: f64) -> MetricsReport {
        MetricsReport {
            auc,
            label_ap: 0.3,
            example_ap: 0.5,
            hamming: 0.2,
            ranking: 0.1,
            per_label: None,
            skipped_labels: vec![],
            skipped_instances: 0,
        }
    }

    #[test]
    fn aggregate_cases() {
        let one = aggregate(&[report(0.6)]).unwrap();
        assert_eq!(
            one.auc,
            MeanStd {
                mean: 0.6,
                std: 0.0
            }
        );
        let two = aggregate(&[report(0.6), report(0.8)]).unwrap();
        assert!((two.auc.mean - 0.7).abs() < 1e-15);
        assert!((two.auc.std - 0.1).abs() < 1e-15);
        assert_eq!(two.hamming.std, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn evaluate_perfect() {
        let s = sm(&[&[0.9, 0.1], &[0.2, 0.8], &[0.7, 0.3]]);
        let gt = AnnotationMatrix::new(
            s.vocabulary().clone(),
            s.instance_ids().to_vec(),
            DMatrix::from_column_slice(2, 3, &[1, 0, 0, 1, 1, 0]),
        )
        .unwrap();
        let r = evaluate(&s, &gt, None, BinarizePolicy::default()).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.ranking, 0.0);
        assert_eq!(r.label_ap, 1.0);
        assert_eq!(r.example_ap, 1.0);
        assert_eq!(r.hamming, 0.0);
    }
}
