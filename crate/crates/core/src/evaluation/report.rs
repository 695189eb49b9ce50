use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Bucket, Score, WildExample, THRESHOLDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub count: usize,
    /// AC at 0.1, 0.3, 0.5 and 1.0 m; `None` for an empty bucket.
    pub ac: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: [f64; 4],
    pub rows: Vec<BucketRow>,
    pub total: usize,
    pub misses: usize,
}

impl EvalReport {
    pub fn from_scores(examples: &[WildExample], scores: &[Score]) -> Self {
        assert_eq!(examples.len(), scores.len());
        let rows = Bucket::ALL
            .iter()
            .map(|&bucket| {
                let mine: Vec<&Score> = examples
                    .iter()
                    .zip(scores)
                    .filter(|(e, _)| e.bucket == bucket)
                    .map(|(_, s)| s)
                    .collect();
                let count = mine.len();
                let ac = (count > 0).then(|| {
                    THRESHOLDS.map(|t| mine.iter().filter(|s| s.within(t)).count() as f64 / count as f64)
                });
                BucketRow { bucket, count, ac }
            })
            .collect();
        Self {
            thresholds: THRESHOLDS,
            rows,
            total: examples.len(),
            misses: scores.iter().filter(|s| **s == Score::Miss).count(),
        }
    }

    pub fn row(&self, bucket: Bucket) -> Option<&BucketRow> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }

    /// True when every AC of `self` is at least the matching AC of `other`.
    pub fn dominates(&self, other: &EvalReport) -> bool {
        self.rows.iter().zip(&other.rows).all(|(a, b)| match (a.ac, b.ac) {
            (Some(x), Some(y)) => x.iter().zip(&y).all(|(p, q)| p >= q),
            (None, None) => true,
            _ => false,
        })
    }

    /// Aligned text table, one row per bucket.
    pub fn to_table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = write!(s, "{:<18}{:>16}", "Length (# frames)", "Segment Counts");
        for t in &self.thresholds {
            let _ = write!(s, "{:>8}", format!("AC{t}"));
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<18}{:>16}", r.bucket.label(), r.count);
            match r.ac {
                Some(ac) => {
                    for a in ac {
                        let _ = write!(s, "{a:>8.2}");
                    }
                }
                None => {
                    for _ in 0..4 {
                        let _ = write!(s, "{:>8}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}
