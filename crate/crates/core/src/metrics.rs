//! Multi-label tagging metrics.

use crate::error::{Error, Result};

/// `N × C` scores with matching boolean labels, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    classes: usize,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(classes: usize) -> Self {
        Self { rows: 0, classes, scores: Vec::new(), labels: Vec::new() }
    }

    pub fn from_rows(classes: usize, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if classes == 0 || scores.len() != labels.len() || !scores.len().is_multiple_of(classes) {
            return Err(Error::Shape(format!(
                "{} scores and {} labels do not form rows of {classes}",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(Self { rows: scores.len() / classes, classes, scores, labels })
    }

    pub fn push(&mut self, scores: &[f64], labels: &[bool]) -> Result<()> {
        if scores.len() != self.classes || labels.len() != self.classes {
            return Err(Error::Shape(format!("row of {} scores for {} classes", scores.len(), self.classes)));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
        self.rows += 1;
        Ok(())
    }

    pub fn append(&mut self, other: &ScoreMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("class counts differ".into()));
        }
        self.scores.extend_from_slice(&other.scores);
        self.labels.extend_from_slice(&other.labels);
        self.rows += other.rows;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn score(&self, row: usize, class: usize) -> f64 {
        self.scores[row * self.classes + class]
    }

    pub fn label(&self, row: usize, class: usize) -> bool {
        self.labels[row * self.classes + class]
    }

    fn column(&self, class: usize) -> (Vec<f64>, Vec<bool>) {
        (0..self.rows).map(|r| (self.score(r, class), self.label(r, class))).unzip()
    }
}

/// Non-interpolated average precision of one ranking. Ties keep input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
}

impl MapReport {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len()).filter(|&c| self.per_class[c].is_none()).collect()
    }
}

/// Macro mAP over classes that have at least one positive.
pub fn mean_average_precision_report(sm: &ScoreMatrix) -> Result<MapReport> {
    let per_class: Vec<Option<f64>> = (0..sm.classes)
        .map(|c| {
            let (s, l) = sm.column(c);
            average_precision(&s, &l)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyDataset("no class has a positive label".into()));
    }
    Ok(MapReport { map: present.iter().sum::<f64>() / present.len() as f64, per_class })
}

pub fn mean_average_precision(sm: &ScoreMatrix) -> Result<f64> {
    mean_average_precision_report(sm).map(|r| r.map)
}

/// `(FPR, FNR)` at "score ≥ threshold" for the threshold above every score and
/// then each distinct score in descending order.
fn operating_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("EER needs at least one positive and one negative label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, (pos - tp) as f64 / pos as f64));
    }
    Ok(points)
}

/// Linear interpolation at the first sign change of `FPR − FNR`.
fn crossing(points: &[(f64, f64)]) -> f64 {
    for w in points.windows(2) {
        let (d0, d1) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
        if d0 == 0.0 {
            return w[0].0;
        }
        if d0 < 0.0 && d1 >= 0.0 {
            let a = d0 / (d0 - d1);
            let fpr = w[0].0 + a * (w[1].0 - w[0].0);
            let fnr = w[0].1 + a * (w[1].1 - w[0].1);
            return 0.5 * (fpr + fnr);
        }
    }
    // the last point always has FNR = 0 and FPR = 1
    let last = points[points.len() - 1];
    0.5 * (last.0 + last.1)
}

/// Class-pooled equal error rate.
pub fn equal_error_rate(sm: &ScoreMatrix) -> Result<f64> {
    Ok(crossing(&operating_points(&sm.scores, &sm.labels)?))
}

pub fn equal_error_rate_of(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(crossing(&operating_points(scores, labels)?))
}
