use serde::Serialize;

use crate::store::{parse_finite, ColumnKind, DatasetRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: ColumnKind,
    pub count: usize,
    /// `None` for text columns and for numeric columns without rows.
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

pub fn dataset_stats(dataset: &DatasetRecord) -> Vec<ColumnStats> {
    dataset
        .columns
        .iter()
        .enumerate()
        .map(|(i, col)| {
            let count = dataset.rows.len();
            if col.kind == ColumnKind::Text {
                return ColumnStats {
                    name: col.name.clone(),
                    kind: col.kind,
                    count,
                    mean: None,
                    min: None,
                    max: None,
                };
            }
            let values: Vec<f64> = dataset
                .rows
                .iter()
                .filter_map(|r| r.get(i).and_then(|c| parse_finite(c)))
                .collect();
            let (mean, min, max) = if values.is_empty() {
                (None, None, None)
            } else {
                let sum: f64 = values.iter().sum();
                (
                    Some(sum / values.len() as f64),
                    values.iter().copied().reduce(f64::min),
                    values.iter().copied().reduce(f64::max),
                )
            };
            ColumnStats {
                name: col.name.clone(),
                kind: col.kind,
                count: values.len(),
                mean,
                min,
                max,
            }
        })
        .collect()
}
