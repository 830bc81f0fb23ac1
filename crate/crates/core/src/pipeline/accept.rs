use thiserror::Error;

use crate::codec::Fixed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpreadDiagnostic {
    pub coordinate: usize,
    pub min: Fixed,
    pub max: Fixed,
}

impl SpreadDiagnostic {
    pub fn spread(&self) -> Fixed {
        Fixed::from_raw(self.max.raw() - self.min.raw())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AcceptError {
    #[error("need at least 3 operator outputs, got {0}")]
    TooFewOutputs(usize),
    #[error("output {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("spread exceeds tolerance on {} coordinate(s)", .0.len())]
    SpreadExceeded(Vec<SpreadDiagnostic>),
}

/// Accepts near-identical operator outputs. Every coordinate's max - min must
/// be within `tolerance` (inclusive); the canonical vector is the
/// coordinate-wise lower median.
pub fn structured_accept(outputs: &[Vec<Fixed>], tolerance: Fixed) -> Result<Vec<Fixed>, AcceptError> {
    if outputs.len() < 3 {
        return Err(AcceptError::TooFewOutputs(outputs.len()));
    }
    let dim = outputs[0].len();
    if let Some((index, v)) = outputs.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(AcceptError::DimensionMismatch {
            index,
            expected: dim,
            found: v.len(),
        });
    }
    let mut canonical = Vec::with_capacity(dim);
    let mut violations = Vec::new();
    for c in 0..dim {
        let mut column: Vec<Fixed> = outputs.iter().map(|v| v[c]).collect();
        column.sort();
        let (min, max) = (column[0], column[column.len() - 1]);
        if i128::from(max.raw()) - i128::from(min.raw()) > i128::from(tolerance.raw()) {
            violations.push(SpreadDiagnostic { coordinate: c, min, max });
        }
        canonical.push(column[(column.len() - 1) / 2]);
    }
    if violations.is_empty() {
        Ok(canonical)
    } else {
        Err(AcceptError::SpreadExceeded(violations))
    }
}
