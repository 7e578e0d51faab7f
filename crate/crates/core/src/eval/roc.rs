use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (fpr, tpr) from (0,0) to (1,1), one point per distinct confidence.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Threshold sweep over distinct confidences, tied scores entering together,
/// with trapezoidal area. Ties therefore count one half, as in the
/// Mann–Whitney statistic.
pub fn roc_auc(confidences: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if confidences.len() != labels.len() {
        return Err(invalid("labels", format!("{} labels for {} confidences", labels.len(), confidences.len())));
    }
    if confidences.iter().any(|c| c.is_nan()) {
        return Err(invalid("confidences", "NaN confidence"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("labels", "need both positive and negative examples"));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));

    let (np, nn) = (n_pos as f64, n_neg as f64);
    let mut points = Vec::with_capacity(order.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let c = confidences[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && confidences[order[i]] == c {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Integrate in counts to keep the sum exact.
        area += (fp - fp0) as f64 * (tp + tp0) as f64;
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    Ok(RocCurve { points, auc: area / (2.0 * np * nn), n_pos, n_neg })
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            s.push_str(&format!("{f},{t}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]).unwrap().auc, 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn points_are_monotone() {
        let c = [0.3, 0.1, 0.3, 0.9, 0.5, 0.5, 0.2];
        let l = [true, false, false, true, false, true, false];
        let r = roc_auc(&c, &l).unwrap();
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        assert!(r.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }
}
