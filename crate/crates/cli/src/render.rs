//! Static PNG renders of point clouds.
//!
//! Points are rotated about one coordinate axis, projected orthographically
//! onto the image plane and painted back to front as filled discs whose
//! colour encodes depth.

use std::fmt;
use std::str::FromStr;

use flowam::data::PointCloud;
use flowam::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::Config(format!("unknown axis '{s}' (expected x, y or z)"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub axis: Axis,
    /// Rotation about `axis`, in degrees, applied before projection.
    pub angle: f64,
}

impl View {
    /// Viewpoint for a shape family. Families with a vertical symmetry axis
    /// are tilted so their top surfaces are visible; unknown names get a
    /// generic oblique view.
    pub fn for_class(name: Option<&str>) -> View {
        match name {
            Some("table" | "chair") => View { axis: Axis::X, angle: -25.0 },
            Some("torus") => View { axis: Axis::X, angle: -55.0 },
            Some("sphere") => View { axis: Axis::Y, angle: 0.0 },
            Some("cube" | "pyramid") => View { axis: Axis::Y, angle: 30.0 },
            _ => View { axis: Axis::X, angle: -20.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub view: View,
    /// Image width and height in pixels.
    pub size: u32,
    /// Half-width of the visible square in world units.
    pub extent: f64,
    /// Splat radius in pixels.
    pub radius: u32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            view: View { axis: Axis::X, angle: -20.0 },
            size: 256,
            extent: 1.25,
            radius: 2,
        }
    }
}

// Far (dark blue) to near (warm yellow).
const PALETTE: [[u8; 3]; 6] = [
    [38, 52, 110],
    [44, 92, 160],
    [40, 140, 170],
    [90, 180, 140],
    [200, 200, 90],
    [250, 215, 80],
];
const BACKGROUND: [u8; 3] = [255, 255, 255];

fn rotate(p: [f32; 3], view: View) -> [f64; 3] {
    let (s, c) = view.angle.to_radians().sin_cos();
    let [x, y, z] = p.map(f64::from);
    match view.axis {
        Axis::X => [x, c * y - s * z, s * y + c * z],
        Axis::Y => [c * x + s * z, y, -s * x + c * z],
        Axis::Z => [c * x - s * y, s * x + c * y, z],
    }
}

fn shade(depth: f64, extent: f64) -> [u8; 3] {
    let t = ((depth + extent) / (2.0 * extent)).clamp(0.0, 1.0);
    let f = t * (PALETTE.len() - 1) as f64;
    let i = (f.floor() as usize).min(PALETTE.len() - 2);
    let w = f - i as f64;
    let mut out = [0u8; 3];
    for k in 0..3 {
        let v = PALETTE[i][k] as f64 * (1.0 - w) + PALETTE[i + 1][k] as f64 * w;
        out[k] = v.round() as u8;
    }
    out
}

/// Rasterizes `cloud` into a row-major RGB8 buffer of `size * size` pixels.
pub fn rasterize(cloud: &PointCloud, opts: &RenderOptions) -> Result<Vec<u8>> {
    if opts.size == 0 || !(opts.extent > 0.0) {
        return Err(Error::Config("render size and extent must be positive".into()));
    }
    let size = opts.size as usize;
    let mut img: Vec<u8> = BACKGROUND.repeat(size * size);
    let mut pts: Vec<(usize, [f64; 3])> = cloud.points().iter().map(|&p| rotate(p, opts.view)).enumerate().collect();
    // Back to front; equal depths keep file order.
    pts.sort_by(|a, b| a.1[2].total_cmp(&b.1[2]).then(a.0.cmp(&b.0)));

    let half = size as f64 / 2.0;
    let scale = half / opts.extent;
    let r = opts.radius as i64;
    for (_, [x, y, z]) in pts {
        // Pixel centres sit at half-integers, so the origin lands on the
        // centre pixel of odd-sized images.
        let cx = (half + x * scale).floor() as i64;
        let cy = (half - y * scale).floor() as i64;
        let colour = shade(z, opts.extent);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (px, py) = (cx + dx, cy + dy);
                if px < 0 || py < 0 || px >= size as i64 || py >= size as i64 {
                    continue;
                }
                let o = (py as usize * size + px as usize) * 3;
                img[o..o + 3].copy_from_slice(&colour);
            }
        }
    }
    Ok(img)
}

/// Encodes `cloud` as a PNG image.
pub fn render_png(cloud: &PointCloud, opts: &RenderOptions) -> Result<Vec<u8>> {
    let img = rasterize(cloud, opts)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, opts.size, opts.size);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_image_data(&img)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}
