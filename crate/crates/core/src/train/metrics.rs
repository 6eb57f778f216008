use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Emotion, NUM_CLASSES};

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[usize; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Self {
        assert_eq!(truth.len(), predicted.len(), "one prediction per label");
        let mut m = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            m.0[t][p] += 1;
        }
        m
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|k| self.0[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> usize {
        self.0[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> usize {
        self.0.iter().map(|r| r[k]).sum()
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().flatten().zip(other.0.iter().flatten()) {
            *a += b;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for e in Emotion::ALL {
            let _ = write!(s, ",{e}");
        }
        s.push('\n');
        for (e, row) in Emotion::ALL.iter().zip(&self.0) {
            let _ = write!(s, "{e}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Diagonal over row sum, i.e. the recall.
    pub accuracy: f64,
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Ratios with an empty denominator are reported as 0.
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut per_class = [ClassMetrics::default(); NUM_CLASSES];
        for (k, c) in per_class.iter_mut().enumerate() {
            let tp = confusion.0[k][k];
            c.precision = ratio(tp, confusion.col_sum(k));
            c.recall = ratio(tp, confusion.row_sum(k));
            c.f1 = f1_score(c.precision, c.recall);
            c.accuracy = c.recall;
            c.support = confusion.row_sum(k);
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
        Self {
            accuracy: ratio(confusion.trace(), confusion.total()),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class,
            confusion,
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Self {
        Self::from_confusion(ConfusionMatrix::from_predictions(truth, predicted))
    }

    /// Per-class table: precision, recall, F1, accuracy.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>8}",
            "emotion", "precision", "recall", "f1-score", "accuracy", "support"
        );
        for (e, c) in Emotion::ALL.iter().zip(&self.per_class) {
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                e.name(),
                c.precision,
                c.recall,
                c.f1,
                c.accuracy,
                c.support
            );
        }
        let _ = writeln!(
            s,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "macro",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.accuracy,
            self.confusion.total()
        );
        s
    }
}
