use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Triangle mesh. Polygonal input faces are fan-triangulated on load.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f32; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::input(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i].map(f64::from));
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Appends another mesh, re-indexing its triangles.
    pub fn append(&mut self, other: &Mesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + off)));
    }

    pub fn transformed(&self, f: impl Fn([f32; 3]) -> [f32; 3]) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Area-weighted uniform samples drawn from `rng`.
    pub fn sample_with<R: Rng>(&self, n_points: usize, rng: &mut R) -> Result<Vec<[f32; 3]>> {
        if self.triangles.is_empty() {
            return Err(Error::input("mesh has no triangles"));
        }
        let areas: Vec<f64> = (0..self.triangles.len()).map(|t| self.triangle_area(t)).collect();
        let total: f64 = areas.iter().sum();
        if !(total > 0.0) {
            return Err(Error::input("mesh has zero surface area"));
        }
        let pick = WeightedIndex::new(&areas).map_err(|e| Error::input(e.to_string()))?;
        let mut out = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let t = pick.sample(rng);
            let [a, b, c] = self.triangles[t].map(|i| self.vertices[i].map(f64::from));
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
            out.push([0, 1, 2].map(|k| (wa * a[k] + wb * b[k] + wc * c[k]) as f32));
        }
        Ok(out)
    }
}

/// Area-weighted uniform surface sampling, deterministic given `seed`.
pub fn sample_points(mesh: &Mesh, n_points: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(mesh.sample_with(n_points, &mut rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn area_weighting_on_unit_square() {
        let n = 10_000;
        let cloud = sample_points(&unit_square(), n, 7).unwrap();
        // Triangle [0,1,2] is the half with x >= y.
        let lower = cloud.points().iter().filter(|p| p[0] >= p[1]).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((lower - 5000.0).abs() <= 3.0 * sigma, "lower half count {lower}");
    }

    #[test]
    fn samples_stay_inside_triangle() {
        let mesh = Mesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let cloud = sample_points(&mesh, 2000, 1).unwrap();
        for p in cloud.points() {
            // Barycentric validity for this right triangle: x >= 0, y >= 0, x/2 + y <= 1.
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] / 2.0 + p[1] <= 1.0 + 1e-6, "{p:?}");
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let a = sample_points(&unit_square(), 100, 3).unwrap();
        let b = sample_points(&unit_square(), 100, 3).unwrap();
        let c = sample_points(&unit_square(), 100, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let mesh = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_points(&mesh, 10, 0), Err(Error::Input(_))));
        assert!(Mesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).is_err());
    }
}
