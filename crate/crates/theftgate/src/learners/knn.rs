//! k-nearest-neighbour classification on standardized features.
//!
//! Distances are Euclidean over per-feature standardized values using
//! train-set means and variances (variance floored at 1e-12). Nulls are
//! imputed to the train-column mean before standardizing, which places them
//! at exactly 0 in standardized space.

use rayon::prelude::*;

use super::{check_labels, HyperParams, LearnError};
use crate::ingest::{FeatureFrame, Labels};

const VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    pub k: usize,
    means: Vec<f64>,
    inv_std: Vec<f64>,
    /// Standardized training matrix, row-major.
    train: Vec<f64>,
    labels: Vec<usize>,
}

impl KnnModel {
    fn standardize(&self, frame: &FeatureFrame, row: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let v = frame.get(row, c).unwrap_or(self.means[c]);
            *o = (v - self.means[c]) * self.inv_std[c];
        }
    }

    fn check_schema(&self, frame: &FeatureFrame) -> Result<(), LearnError> {
        if frame.columns() == &self.feature_names[..] {
            return Ok(());
        }
        let missing: Vec<String> = self
            .feature_names
            .iter()
            .filter(|f| frame.column_index(f).is_none())
            .cloned()
            .collect();
        let unexpected: Vec<String> = frame
            .columns()
            .iter()
            .filter(|c| !self.feature_names.contains(c))
            .cloned()
            .collect();
        let order_only = missing.is_empty() && unexpected.is_empty();
        Err(LearnError::SchemaMismatch {
            missing,
            unexpected,
            order_only,
        })
    }
}

pub fn fit_knn(
    frame: &FeatureFrame,
    labels: &Labels,
    hp: &HyperParams,
) -> Result<KnnModel, LearnError> {
    hp.validate()?;
    check_labels(frame, labels)?;
    let n = frame.n_rows();
    if hp.knn_k > n {
        return Err(LearnError::KTooLarge {
            k: hp.knn_k,
            rows: n,
        });
    }
    let p = frame.n_cols();
    let mut means = vec![0.0; p];
    let mut inv_std = vec![0.0; p];
    for c in 0..p {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..n {
            if let Some(v) = frame.get(r, c) {
                sum += v;
                count += 1;
            }
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        let mut var_sum = 0.0;
        for r in 0..n {
            if let Some(v) = frame.get(r, c) {
                var_sum += (v - mean) * (v - mean);
            }
        }
        let var = if count == 0 {
            0.0
        } else {
            var_sum / count as f64
        };
        means[c] = mean;
        inv_std[c] = 1.0 / var.max(VAR_FLOOR).sqrt();
    }
    let mut model = KnnModel {
        feature_names: frame.columns().to_vec(),
        classes: labels.classes.clone(),
        k: hp.knn_k,
        means,
        inv_std,
        train: vec![0.0; n * p],
        labels: labels.ids.clone(),
    };
    let mut row = vec![0.0; p];
    for r in 0..n {
        model.standardize(frame, r, &mut row);
        model.train[r * p..(r + 1) * p].copy_from_slice(&row);
    }
    Ok(model)
}

/// Majority class of the k nearest training rows. Neighbours order by
/// (distance, training index); a vote tie goes to the tied class whose
/// neighbour appears first in that order.
pub fn predict_knn(model: &KnnModel, frame: &FeatureFrame) -> Result<Vec<usize>, LearnError> {
    model.check_schema(frame)?;
    let p = model.feature_names.len();
    let n_train = model.labels.len();
    Ok((0..frame.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut query = vec![0.0; p];
            model.standardize(frame, r, &mut query);
            let mut dists: Vec<(f64, usize)> = (0..n_train)
                .map(|t| {
                    let base = t * p;
                    let d: f64 = query
                        .iter()
                        .zip(&model.train[base..base + p])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, t)
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let neighbours = &dists[..model.k];
            let mut votes = vec![0usize; model.classes.len()];
            for &(_, t) in neighbours {
                votes[model.labels[t]] += 1;
            }
            let top = *votes.iter().max().unwrap();
            neighbours
                .iter()
                .map(|&(_, t)| model.labels[t])
                .find(|&c| votes[c] == top)
                .unwrap()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RowLabel;
    use crate::telemetry::Timestamp;

    fn frame_2d(points: &[(Option<f64>, Option<f64>)]) -> FeatureFrame {
        let mut f = FeatureFrame::new(vec!["x".into(), "y".into()]).unwrap();
        for (i, (x, y)) in points.iter().enumerate() {
            f.push_row(
                "u".into(),
                Timestamp(i as i64),
                Some(RowLabel::Benign),
                &[*x, *y],
            )
            .unwrap();
        }
        f
    }

    fn labels(ids: &[usize]) -> Labels {
        Labels {
            ids: ids.to_vec(),
            classes: vec!["A".into(), "B".into()],
        }
    }

    #[test]
    fn k1_on_a_training_row_returns_its_label() {
        let frame = frame_2d(&[
            (Some(0.0), Some(0.0)),
            (Some(1.0), Some(1.0)),
            (Some(5.0), Some(5.0)),
        ]);
        let l = labels(&[0, 1, 0]);
        let hp = HyperParams {
            knn_k: 1,
            ..HyperParams::default()
        };
        let model = fit_knn(&frame, &l, &hp).unwrap();
        assert_eq!(predict_knn(&model, &frame).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn hand_layout_neighbourhood() {
        // {(0,0):A, (0,1):A, (5,5):B}, query (0, 0.4) with k=3 → A (2 votes).
        let frame = frame_2d(&[
            (Some(0.0), Some(0.0)),
            (Some(0.0), Some(1.0)),
            (Some(5.0), Some(5.0)),
        ]);
        let l = labels(&[0, 0, 1]);
        let hp = HyperParams {
            knn_k: 3,
            ..HyperParams::default()
        };
        let model = fit_knn(&frame, &l, &hp).unwrap();
        let query = frame_2d(&[(Some(0.0), Some(0.4))]);
        assert_eq!(predict_knn(&model, &query).unwrap(), vec![0]);
    }

    #[test]
    fn k_equal_to_train_size_gives_global_majority() {
        let frame = frame_2d(&[
            (Some(0.0), Some(0.0)),
            (Some(10.0), Some(10.0)),
            (Some(20.0), Some(20.0)),
        ]);
        let l = labels(&[1, 1, 0]);
        let hp = HyperParams {
            knn_k: 3,
            ..HyperParams::default()
        };
        let model = fit_knn(&frame, &l, &hp).unwrap();
        let query = frame_2d(&[(Some(-50.0), Some(-50.0))]);
        assert_eq!(predict_knn(&model, &query).unwrap(), vec![1]);
    }

    #[test]
    fn k_larger_than_train_errors() {
        let frame = frame_2d(&[(Some(0.0), Some(0.0))]);
        let l = labels(&[0]);
        let hp = HyperParams {
            knn_k: 2,
            ..HyperParams::default()
        };
        assert!(matches!(
            fit_knn(&frame, &l, &hp),
            Err(LearnError::KTooLarge { k: 2, rows: 1 })
        ));
    }

    #[test]
    fn zero_variance_column_and_nulls_are_tolerated() {
        // Column y is constant; nulls impute to the column mean.
        let frame = frame_2d(&[
            (Some(0.0), Some(7.0)),
            (Some(1.0), Some(7.0)),
            (None, Some(7.0)),
        ]);
        let l = labels(&[0, 1, 1]);
        let hp = HyperParams {
            knn_k: 1,
            ..HyperParams::default()
        };
        let model = fit_knn(&frame, &l, &hp).unwrap();
        let query = frame_2d(&[(None, None)]);
        // Null x standardizes to 0 = train mean; row 2 sits exactly there.
        assert_eq!(predict_knn(&model, &query).unwrap(), vec![1]);
    }

    #[test]
    fn vote_tie_breaks_by_distance_order() {
        // k=2, one neighbour of each class: the nearer one wins.
        let frame = frame_2d(&[(Some(0.0), Some(0.0)), (Some(2.0), Some(0.0))]);
        let l = labels(&[1, 0]);
        let hp = HyperParams {
            knn_k: 2,
            ..HyperParams::default()
        };
        let model = fit_knn(&frame, &l, &hp).unwrap();
        let query = frame_2d(&[(Some(0.5), Some(0.0))]);
        assert_eq!(predict_knn(&model, &query).unwrap(), vec![1]);
    }
}
