//! Per-subgroup classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Metrics for one subgroup. `auroc` is `None` when the subgroup lacks one
/// of the two classes; `precision` is `None` when nothing is predicted
/// positive and `recall` when there are no positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub count: usize,
    pub prevalence: f64,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub groups: Vec<GroupMetrics>,
}

pub const REPORT_HEADER: &str = "group,count,prevalence,accuracy,auroc,precision,recall";

impl SubgroupReport {
    pub fn get(&self, name: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Undefined values are written as empty cells.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for g in &self.groups {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                g.group,
                g.count,
                g.prevalence,
                g.accuracy,
                cell(g.auroc),
                cell(g.precision),
                cell(g.recall)
            ));
        }
        out
    }
}

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting ½. `None` without both classes.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

fn binary_metrics(group: String, scores: &[f64], labels: &[bool]) -> GroupMetrics {
    let n = labels.len();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut correct = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        match (pred, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
        correct += usize::from(pred == l);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    GroupMetrics {
        group,
        count: n,
        prevalence: ratio(pos, n).unwrap_or(0.0),
        accuracy: ratio(correct, n).unwrap_or(0.0),
        auroc: auroc(scores, labels),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, pos),
    }
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || b != c {
        return Err(Error::dim("subgroup_metrics", format!("lengths {a}, {b}, {c}")));
    }
    Ok(())
}

/// Binary metrics (threshold 0.5 on `scores`) for each named subgroup plus
/// an `all` row. `groups[i]` indexes into `names`.
pub fn subgroup_metrics(scores: &[f64], labels: &[bool], groups: &[usize], names: &[&str]) -> Result<SubgroupReport> {
    check_lengths(scores.len(), labels.len(), groups.len())?;
    if let Some(&bad) = groups.iter().find(|&&g| g >= names.len()) {
        return Err(Error::Range { index: bad, len: names.len() });
    }
    let mut report = SubgroupReport::default();
    for (g, name) in names.iter().enumerate() {
        let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        report.groups.push(binary_metrics(name.to_string(), &s, &l));
    }
    report.groups.push(binary_metrics("all".into(), scores, labels));
    Ok(report)
}

/// Multiclass variant: accuracy from the arg-max class; AUROC, precision
/// and recall are one-vs-rest per class, macro-averaged over the classes
/// where they are defined. Prevalence is the subgroup's share of examples.
pub fn subgroup_metrics_multiclass(
    probs: &Matrix,
    labels: &[usize],
    groups: &[usize],
    names: &[&str],
) -> Result<SubgroupReport> {
    check_lengths(probs.rows(), labels.len(), groups.len())?;
    if let Some(&bad) = groups.iter().find(|&&g| g >= names.len()) {
        return Err(Error::Range { index: bad, len: names.len() });
    }
    let total = labels.len();
    let mut report = SubgroupReport::default();
    let all: Vec<usize> = (0..total).collect();
    let members: Vec<(String, Vec<usize>)> = names
        .iter()
        .enumerate()
        .map(|(g, name)| (name.to_string(), (0..total).filter(|&i| groups[i] == g).collect()))
        .chain(std::iter::once(("all".to_string(), all)))
        .collect();
    for (name, idx) in members {
        report.groups.push(multiclass_metrics(name, probs, labels, &idx, total));
    }
    Ok(report)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (c, &v)| if v > b.1 { (c, v) } else { b }).0
}

fn multiclass_metrics(group: String, probs: &Matrix, labels: &[usize], idx: &[usize], total: usize) -> GroupMetrics {
    let classes = probs.cols();
    let preds: Vec<usize> = idx.iter().map(|&i| argmax(probs.row(i))).collect();
    let correct = idx.iter().zip(&preds).filter(|(&i, &p)| labels[i] == p).count();
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut aurocs = Vec::new();
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for c in 0..classes {
        let scores: Vec<f64> = idx.iter().map(|&i| probs.get(i, c)).collect();
        let truth: Vec<bool> = idx.iter().map(|&i| labels[i] == c).collect();
        aurocs.extend(auroc(&scores, &truth));
        let tp = truth.iter().zip(&preds).filter(|(&t, &p)| t && p == c).count();
        let predicted = preds.iter().filter(|&&p| p == c).count();
        let actual = truth.iter().filter(|&&t| t).count();
        if predicted > 0 {
            precisions.push(tp as f64 / predicted as f64);
        }
        if actual > 0 {
            recalls.push(tp as f64 / actual as f64);
        }
    }
    let n = idx.len();
    GroupMetrics {
        group,
        count: n,
        prevalence: if total > 0 { n as f64 / total as f64 } else { 0.0 },
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        auroc: mean(aurocs),
        precision: mean(precisions),
        recall: mean(recalls),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_and_reversed_scorers() {
        let labels = [true, false, true, false, false];
        let scores: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let r = subgroup_metrics(&scores, &labels, &[0; 5], &["g"]).unwrap();
        let g = r.get("g").unwrap();
        assert_eq!((g.auroc, g.precision, g.recall), (Some(1.0), Some(1.0), Some(1.0)));
        let rev: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        assert_eq!(auroc(&rev, &labels), Some(0.0));
    }

    #[test]
    fn three_point_example() {
        let r = subgroup_metrics(&[0.9, 0.8, 0.4], &[true, false, false], &[0, 0, 0], &["g"]).unwrap();
        let g = &r.groups[0];
        assert_eq!(g.auroc, Some(1.0));
        assert_eq!(g.precision, Some(0.5));
        assert_eq!(g.recall, Some(1.0));
        assert!((g.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.prevalence - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_match_brute_force() {
        let scores = [0.3, 0.3, 0.7, 0.1, 0.7, 0.3, 0.5];
        let labels = [true, false, true, false, false, true, false];
        assert!((auroc(&scores, &labels).unwrap() - brute_auroc(&scores, &labels)).abs() < 1e-15);
        assert_eq!(auroc(&[0.2, 0.2], &[true, false]), Some(0.5));
    }

    #[test]
    fn single_class_subgroup_is_undefined() {
        let r = subgroup_metrics(&[0.2, 0.9, 0.6], &[true, true, false], &[0, 0, 1], &["a", "b"]).unwrap();
        assert_eq!(r.get("a").unwrap().auroc, None);
        assert_eq!(r.get("b").unwrap().recall, None);
        assert!(r.get("all").unwrap().auroc.is_some());
        assert!(r.to_csv().lines().nth(1).unwrap().starts_with("a,2,1,0.5,,1,0.5"));
    }

    #[test]
    fn multiclass_accuracy_by_group() {
        let probs = Matrix::from_rows(&[
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
            vec![0.5, 0.4, 0.1],
        ])
        .unwrap();
        let r = subgroup_metrics_multiclass(&probs, &[0, 1, 2, 1], &[0, 0, 1, 1], &["x", "y"]).unwrap();
        assert_eq!(r.get("x").unwrap().accuracy, 1.0);
        assert_eq!(r.get("y").unwrap().accuracy, 0.5);
        assert_eq!(r.get("all").unwrap().accuracy, 0.75);
        assert_eq!(r.get("x").unwrap().prevalence, 0.5);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(subgroup_metrics(&[0.1], &[true, false], &[0, 0], &["g"]).is_err());
        assert!(subgroup_metrics(&[0.1], &[true], &[3], &["g"]).is_err());
    }
}
