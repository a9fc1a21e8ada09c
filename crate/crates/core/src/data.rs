use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Plaintext features and response held by one agency.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Mat,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Mat, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimMismatch(format!(
                "{} feature rows but {} responses",
                x.rows(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite response".into()));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            x: self.x.rows_range(range.clone()),
            y: self.y[range].to_vec(),
        }
    }

    /// Row-stacks shards in order.
    pub fn stack(parts: &[Dataset]) -> Result<Dataset> {
        let x = Mat::vstack(&parts.iter().map(|d| &d.x).collect::<Vec<_>>())?;
        let y = parts.iter().flat_map(|d| d.y.iter().copied()).collect();
        Dataset::new(x, y)
    }
}
