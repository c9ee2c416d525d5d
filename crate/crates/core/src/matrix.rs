use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense matrix with row and column labels. `None` marks an empty cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if cells.len() != row_labels.len() || cells.iter().any(|r| r.len() != col_labels.len()) {
            return Err(Error::Invalid(format!(
                "matrix shape does not match {} row and {} column labels",
                row_labels.len(),
                col_labels.len()
            )));
        }
        Ok(LabeledMatrix {
            row_labels,
            col_labels,
            cells,
        })
    }

    pub fn square(labels: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        Self::new(labels.clone(), labels, cells)
    }

    pub fn from_values(labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let cells = values
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        Self::square(labels, cells)
    }

    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells.get(row)?.get(col).copied().flatten()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().flatten().flatten().copied()
    }
}
