use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An unordered set of 3D points in normalized model space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    pub label: Option<usize>,
    pub class_name: Option<String>,
}

impl PointCloud {
    /// Builds a cloud from raw points. At least one point is required and
    /// every coordinate must be finite.
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("point cloud is empty"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            label: None,
            class_name: None,
        })
    }

    pub fn with_label(mut self, label: usize, class_name: impl Into<String>) -> Self {
        self.label = Some(label);
        self.class_name = Some(class_name.into());
        self
    }

    pub fn from_array<T: Scalar>(arr: ArrayView2<'_, T>) -> Result<Self> {
        if arr.ncols() != 3 {
            return Err(Error::input(format!(
                "expected 3 coordinates per point, got {}",
                arr.ncols()
            )));
        }
        let points = arr
            .rows()
            .into_iter()
            .map(|r| [r[0].to_f64() as f32, r[1].to_f64() as f32, r[2].to_f64() as f32])
            .collect();
        Self::new(points)
    }

    pub fn to_array<T: Scalar>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.points.len(), 3), |(i, j)| {
            T::from_f64(self.points[i][j] as f64)
        })
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f32; 3]> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest absolute coordinate over all points and axes.
    pub fn max_abs_coord(&self) -> f32 {
        self.points
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_norm(&self) -> f32 {
        self.points.iter().map(norm).fold(0.0f32, f32::max)
    }

    /// Legal when every coordinate lies in `[-bound, bound]`.
    pub fn is_legal(&self, bound: f32) -> bool {
        self.points
            .iter()
            .all(|p| p.iter().all(|v| v.abs() <= bound))
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k] as f64;
            }
        }
        let n = self.points.len() as f64;
        c.map(|v| v / n)
    }

    /// Reorders points; `order[i]` is the source index of output point `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
            class_name: self.class_name.clone(),
        }
    }

    pub fn map_points(&self, f: impl Fn([f32; 3]) -> [f32; 3]) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
            label: self.label,
            class_name: self.class_name.clone(),
        }
    }
}

pub(crate) fn norm(p: &[f32; 3]) -> f32 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}
