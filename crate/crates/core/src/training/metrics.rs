use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classification metrics derived from a confusion matrix.
///
/// `confusion[t][p]` counts samples of true class `t` predicted as `p`.
/// Any ratio with a zero denominator is defined as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::domain("confusion matrix must be square and non-empty"));
        }
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        let per_class = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted: usize = confusion.iter().map(|r| r[c]).sum();
                let actual: usize = confusion[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                // 2PR / (P + R) with a single rounding
                let f1 = ratio(2 * tp, predicted + actual);
                ClassMetrics { precision, recall, f1 }
            })
            .collect();
        Ok(Self {
            accuracy: ratio(trace, total),
            per_class,
            confusion,
        })
    }

    /// Builds the confusion matrix from `(true, predicted)` pairs.
    pub fn from_predictions(num_classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for &(t, p) in pairs {
            if t >= num_classes || p >= num_classes {
                return Err(Error::domain(format!(
                    "class index out of range for {num_classes} classes"
                )));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn macro_f1(&self) -> f64 {
        self.per_class.iter().map(|m| m.f1).sum::<f64>() / self.per_class.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_fixture() {
        let m = Metrics::from_confusion(vec![vec![5, 1], vec![2, 2]]).unwrap();
        assert_eq!(m.accuracy, 0.7);
        assert_eq!(m.per_class[0].precision, 5.0 / 7.0);
        assert_eq!(m.per_class[0].recall, 5.0 / 6.0);
        assert_eq!(m.per_class[1].precision, 2.0 / 3.0);
        assert_eq!(m.per_class[1].recall, 0.5);
        assert_eq!(m.per_class[0].f1, 10.0 / 13.0);
        assert_eq!(m.per_class[1].f1, 4.0 / 7.0);
    }

    #[test]
    fn all_correct() {
        let pairs: Vec<_> = (0..10).map(|i| (i % 3, i % 3)).collect();
        let m = Metrics::from_predictions(3, &pairs).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j);
            }
        }
    }

    #[test]
    fn zero_denominators_are_zero() {
        let m = Metrics::from_predictions(2, &[(0, 0), (0, 0), (0, 0)]).unwrap();
        assert_eq!(
            m.per_class[1],
            ClassMetrics {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0
            }
        );
        assert_eq!(m.per_class[0].precision, 1.0);
        let empty = Metrics::from_confusion(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert_eq!(empty.accuracy, 0.0);
        assert!(Metrics::from_predictions(2, &[(2, 0)]).is_err());
    }
}
