//! The perturbed linear plant `x' = A x + B u + D w` with an ellipsoidal
//! disturbance bound `w^T Q w <= 1`.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum PlantError {
    #[error("inconsistent plant dimensions: {0}")]
    Dimension(String),
    #[error("non-finite entry in matrix {0}")]
    NonFinite(&'static str),
}

/// Plant matrices together with the disturbance shape.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl LinearPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
        q: DMatrix<f64>,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(PlantError::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(PlantError::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if d.nrows() != n {
            return Err(PlantError::Dimension(format!(
                "D has {} rows, expected {n}",
                d.nrows()
            )));
        }
        let p = d.ncols();
        if q.nrows() != p || q.ncols() != p {
            return Err(PlantError::Dimension(format!(
                "Q must be {p}x{p} to match D, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("D", &d), ("Q", &q)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(PlantError::NonFinite(name));
            }
        }
        Ok(Self { a, b, d, q })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Disturbance dimension.
    pub fn p(&self) -> usize {
        self.d.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_q() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DMatrix::<f64>::zeros(2, 1);
        let d = DMatrix::<f64>::identity(2, 2);
        let q = DMatrix::<f64>::identity(3, 3);
        assert!(LinearPlant::new(a, b, d, q).is_err());
    }

    #[test]
    fn rejects_non_finite_entries() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let b = DMatrix::<f64>::zeros(1, 1);
        let d = DMatrix::<f64>::identity(1, 1);
        let q = DMatrix::<f64>::identity(1, 1);
        assert!(matches!(
            LinearPlant::new(a, b, d, q),
            Err(PlantError::NonFinite("A"))
        ));
    }
}
