//! Procedural shape families used as a desk-scale stand-in for CAD datasets.

use std::f32::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use crate::error::{Error, Result};

const SEGMENTS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Pyramid,
    Table,
    Chair,
    Vase,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 10] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
        ShapeFamily::Torus,
        ShapeFamily::Plane,
        ShapeFamily::Pyramid,
        ShapeFamily::Table,
        ShapeFamily::Chair,
        ShapeFamily::Vase,
    ];

    /// The eight families used by the default desk-scale experiments.
    pub const DESK: [ShapeFamily; 8] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
        ShapeFamily::Torus,
        ShapeFamily::Table,
        ShapeFamily::Chair,
        ShapeFamily::Vase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Cone => "cone",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Plane => "plane",
            ShapeFamily::Pyramid => "pyramid",
            ShapeFamily::Table => "table",
            ShapeFamily::Chair => "chair",
            ShapeFamily::Vase => "vase",
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = ShapeFamily::ALL.iter().map(|f| f.name()).collect();
                Error::config(format!("unknown shape class '{s}' (known: {})", known.join(", ")))
            })
    }
}

/// One raw (un-normalized) instance and the scale it was drawn at.
#[derive(Clone, Debug)]
pub struct RawInstance {
    pub points: Vec<[f32; 3]>,
    /// Overall size; for spheres this is the radius.
    pub scale: f32,
}

/// Samples one instance: random proportions, scale, rotation about the
/// vertical (z) axis, and per-point jitter of norm at most `jitter`.
pub fn sample_instance<R: Rng>(family: ShapeFamily, n_points: usize, jitter: f32, rng: &mut R) -> Result<RawInstance> {
    let scale = rng.random_range(0.6f32..1.0);
    let mut points = if family == ShapeFamily::Sphere {
        (0..n_points)
            .map(|_| {
                let d: [f32; 3] = UnitSphere.sample(rng);
                d.map(|v| v * scale)
            })
            .collect()
    } else {
        let mesh = family_mesh(family, rng).transformed(|p| p.map(|v| v * scale));
        mesh.sample_with(n_points, rng)?
    };
    let theta = rng.random_range(0.0..TAU);
    let (s, c) = theta.sin_cos();
    for p in &mut points {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
        if jitter > 0.0 {
            let d: [f32; 3] = UnitSphere.sample(rng);
            let r = rng.random_range(0.0..=jitter);
            for k in 0..3 {
                p[k] += d[k] * r;
            }
        }
    }
    Ok(RawInstance { points, scale })
}

fn family_mesh<R: Rng>(family: ShapeFamily, rng: &mut R) -> Mesh {
    let mut u = |lo: f32, hi: f32| rng.random_range(lo..hi);
    match family {
        ShapeFamily::Sphere => unreachable!("spheres are sampled analytically"),
        ShapeFamily::Cube => {
            let h = [u(0.45, 0.55), u(0.45, 0.55), u(0.45, 0.55)];
            cuboid([0.0; 3], h)
        }
        ShapeFamily::Cylinder => {
            let r = u(0.35, 0.5);
            let h = u(0.7, 1.0);
            revolution(&[(0.0, -h), (r, -h), (r, h), (0.0, h)])
        }
        ShapeFamily::Cone => {
            let r = u(0.5, 0.7);
            let h = u(0.7, 1.0);
            revolution(&[(0.0, -h / 2.0), (r, -h / 2.0), (0.0, h / 2.0)])
        }
        ShapeFamily::Torus => torus(u(0.55, 0.7), u(0.15, 0.25)),
        ShapeFamily::Plane => cuboid([0.0; 3], [u(0.8, 1.0), u(0.5, 0.8), 0.02]),
        ShapeFamily::Pyramid => {
            let b = u(0.5, 0.7);
            let h = u(0.6, 0.9);
            let z0 = -h / 3.0;
            Mesh {
                vertices: vec![
                    [-b, -b, z0],
                    [b, -b, z0],
                    [b, b, z0],
                    [-b, b, z0],
                    [0.0, 0.0, z0 + h],
                ],
                triangles: vec![[0, 2, 1], [0, 3, 2], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
            }
        }
        ShapeFamily::Table => {
            let (w, d) = (u(0.8, 1.0), u(0.5, 0.7));
            let h = u(0.5, 0.7);
            let leg = 0.05;
            let mut m = cuboid([0.0, 0.0, h], [w, d, 0.04]);
            m.append(&cuboid([0.0, 0.0, -h * 0.2], [w * 0.9, d * 0.9, 0.02]));
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                m.append(&cuboid([sx * (w - 2.0 * leg), sy * (d - 2.0 * leg), 0.0], [leg, leg, h]));
            }
            m
        }
        ShapeFamily::Chair => {
            let s = u(0.45, 0.55);
            let seat_z = u(0.0, 0.1);
            let back = u(0.6, 0.8);
            let leg_h = u(0.5, 0.6);
            let leg = 0.04;
            let mut m = cuboid([0.0, 0.0, seat_z], [s, s, 0.04]);
            m.append(&cuboid([-s + 0.03, 0.0, seat_z + back / 2.0], [0.03, s, back / 2.0]));
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                m.append(&cuboid(
                    [sx * (s - leg), sy * (s - leg), seat_z - leg_h / 2.0],
                    [leg, leg, leg_h / 2.0],
                ));
            }
            m
        }
        ShapeFamily::Vase => {
            let base = u(0.2, 0.3);
            let belly = u(0.45, 0.6);
            let neck = u(0.15, 0.25);
            let lip = neck + u(0.05, 0.15);
            let h = u(0.8, 1.0);
            let mut profile = vec![(0.0, -h)];
            for i in 0..=12 {
                let t = i as f32 / 12.0;
                let z = -h + 2.0 * h * t;
                // Base to belly to neck, then flaring lip.
                let r = if t < 0.4 {
                    base + (belly - base) * (t / 0.4 * PI / 2.0).sin()
                } else if t < 0.85 {
                    neck + (belly - neck) * (((t - 0.4) / 0.45) * PI / 2.0).cos()
                } else {
                    neck + (lip - neck) * ((t - 0.85) / 0.15)
                };
                profile.push((r, z));
            }
            revolution(&profile)
        }
    }
}

fn cuboid(c: [f32; 3], h: [f32; 3]) -> Mesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
        vertices.push([c[0] + s(0) * h[0], c[1] + s(1) * h[1], c[2] + s(2) * h[2]]);
    }
    let quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh { vertices, triangles }
}

/// Surface of revolution about z from a polyline of (radius, z) pairs.
fn revolution(profile: &[(f32, f32)]) -> Mesh {
    let rings = profile.len();
    let mut vertices = Vec::with_capacity(rings * SEGMENTS);
    for &(r, z) in profile {
        for s in 0..SEGMENTS {
            let a = TAU * s as f32 / SEGMENTS as f32;
            vertices.push([r * a.cos(), r * a.sin(), z]);
        }
    }
    let mut triangles = Vec::new();
    for i in 0..rings - 1 {
        for s in 0..SEGMENTS {
            let t = (s + 1) % SEGMENTS;
            let (a, b, c, d) = (i * SEGMENTS + s, i * SEGMENTS + t, (i + 1) * SEGMENTS + t, (i + 1) * SEGMENTS + s);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh { vertices, triangles }
}

fn torus(major: f32, minor: f32) -> Mesh {
    let tube = SEGMENTS / 2;
    let mut vertices = Vec::with_capacity(SEGMENTS * tube);
    for i in 0..SEGMENTS {
        let u = TAU * i as f32 / SEGMENTS as f32;
        for j in 0..tube {
            let v = TAU * j as f32 / tube as f32;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let mut triangles = Vec::new();
    for i in 0..SEGMENTS {
        for j in 0..tube {
            let a = i * tube + j;
            let b = ((i + 1) % SEGMENTS) * tube + j;
            let c = ((i + 1) % SEGMENTS) * tube + (j + 1) % tube;
            let d = i * tube + (j + 1) % tube;
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh { vertices, triangles }
}
