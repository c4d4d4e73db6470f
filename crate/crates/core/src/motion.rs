//! Dense frame-major arrays of per-frame coordinate vectors.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// A `frames x dim` array stored row-major, one row per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Motion {
    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn filled(frames: usize, dim: usize, value: f64) -> Self {
        Self {
            frames,
            dim,
            data: vec![value; frames * dim],
        }
    }

    pub fn from_vec(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(shape_err(format!(
                "{} values cannot fill {frames}x{dim}",
                data.len()
            )));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(shape_err(format!(
                    "row {t} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            frames: rows.len(),
            dim,
            data,
        })
    }

    pub fn from_fn(frames: usize, dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(frames * dim);
        for t in 0..frames {
            for j in 0..dim {
                data.push(f(t, j));
            }
        }
        Self { frames, dim, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dim)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics
        self.data.chunks(self.dim.max(1)).take(self.frames)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.data[t * self.dim + j]
    }

    pub fn set(&mut self, t: usize, j: usize, value: f64) {
        self.data[t * self.dim + j] = value;
    }

    pub fn ensure_same_shape(&self, other: &Motion, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Motion, b: f64) -> Result<Motion> {
        self.ensure_same_shape(other, "lincomb")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Motion {
            frames: self.frames,
            dim: self.dim,
            data,
        })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Motion {
        Motion {
            frames: self.frames,
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Motion, f: impl Fn(f64, f64) -> f64) -> Result<Motion> {
        self.ensure_same_shape(other, "zip_map")?;
        Ok(Motion {
            frames: self.frames,
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Motion) -> Result<Motion> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Motion) -> Result<Motion> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
