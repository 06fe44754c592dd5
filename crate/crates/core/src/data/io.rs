//! ASCII readers and writers for OFF meshes, PLY files and XYZ clouds.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::cloud::PointCloud;
use super::mesh::Mesh;
use crate::error::{Error, Result};

/// Either a bare point set or a mesh, depending on whether the PLY file
/// declares faces.
#[derive(Clone, Debug, PartialEq)]
pub enum PlyContent {
    Cloud(PointCloud),
    Mesh(Mesh),
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Iterates non-blank lines with comments removed. Line numbers are 1-based.
    fn new(text: &'a str, path: &'a Path, comment: Option<char>) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(move |(i, l)| {
                    let l = match comment.and_then(|c| l.find(c)) {
                        Some(pos) => &l[..pos],
                        None => l,
                    };
                    (i + 1, l.trim())
                })
                .filter(|(_, l)| !l.is_empty()),
        );
        Self {
            path,
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(self.err(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, lines: &Lines<'_>, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| lines.err(line, format!("invalid {what} '{tok}'")))
}

fn parse_coords(toks: &[&str], lines: &Lines<'_>, line: usize) -> Result<[f32; 3]> {
    if toks.len() < 3 {
        return Err(lines.err(line, format!("expected 3 coordinates, found {}", toks.len())));
    }
    let mut p = [0.0f32; 3];
    for k in 0..3 {
        let v: f32 = parse_num(toks[k], lines, line, "coordinate")?;
        if !v.is_finite() {
            return Err(lines.err(line, format!("non-finite coordinate '{}'", toks[k])));
        }
        p[k] = v;
    }
    Ok(p)
}

fn fan(indices: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..indices.len().saturating_sub(1)).map(move |k| [indices[0], indices[k], indices[k + 1]])
}

/// Parses an ASCII OFF document.
pub fn parse_off(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = Lines::new(text, path, Some('#'));
    let (n, head) = lines.next_line("OFF header")?;
    let rest = head
        .strip_prefix("OFF")
        .ok_or_else(|| lines.err(n, "missing 'OFF' magic"))?;
    // Some ModelNet files glue the counts onto the magic ("OFF490 518 0").
    let (count_line, counts) = if rest.trim().is_empty() {
        lines.next_line("vertex/face counts")?
    } else {
        (n, rest.trim())
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(lines.err(count_line, "expected vertex and face counts"));
    }
    let nv: usize = parse_num(toks[0], &lines, count_line, "vertex count")?;
    let nf: usize = parse_num(toks[1], &lines, count_line, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next_line("vertex")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        vertices.push(parse_coords(&toks, &lines, ln)?);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next_line("face")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let k: usize = parse_num(toks[0], &lines, ln, "face size")?;
        if k < 3 || toks.len() < k + 1 {
            return Err(lines.err(ln, format!("face declares {k} indices but has {}", toks.len() - 1)));
        }
        let mut idx = Vec::with_capacity(k);
        for t in &toks[1..=k] {
            let i: usize = parse_num(t, &lines, ln, "vertex index")?;
            if i >= nv {
                return Err(lines.err(ln, format!("face index {i} out of range for {nv} vertices")));
            }
            idx.push(i);
        }
        triangles.extend(fan(&idx));
    }
    Mesh::new(vertices, triangles)
}

pub fn load_off(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    parse_off(&fs::read_to_string(path)?, path)
}

#[derive(Debug)]
enum PlyProperty {
    Scalar(String),
    List(String),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

/// Parses an ASCII 1.0 PLY document with float `x`/`y`/`z` vertex properties.
pub fn parse_ply(text: &str, path: &Path) -> Result<PlyContent> {
    let mut lines = Lines::new(text, path, None);
    let (n, magic) = lines.next_line("'ply' magic")?;
    if magic != "ply" {
        return Err(lines.err(n, "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (ln, l) = lines.next_line("header line")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks[0] {
            "format" => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(lines.err(ln, format!("unsupported PLY format '{}'", toks[1..].join(" "))));
                }
                saw_format = true;
            }
            "comment" | "obj_info" => {}
            "element" => {
                if toks.len() != 3 {
                    return Err(lines.err(ln, "malformed element declaration"));
                }
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count: parse_num(toks[2], &lines, ln, "element count")?,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| lines.err(ln, "property before any element"))?;
                let prop = match toks.as_slice() {
                    ["property", "list", _, _, name] => PlyProperty::List(name.to_string()),
                    ["property", _, name] => PlyProperty::Scalar(name.to_string()),
                    _ => return Err(lines.err(ln, "malformed property declaration")),
                };
                el.props.push(prop);
            }
            "end_header" => break,
            other => return Err(lines.err(ln, format!("unknown header keyword '{other}'"))),
        }
    }
    if !saw_format {
        return Err(lines.err(lines.last, "missing format line"));
    }

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut has_faces = false;
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let col = |axis: &str| {
                    el.props.iter().position(|p| matches!(p, PlyProperty::Scalar(n) if n == axis))
                };
                let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
                    return Err(lines.err(lines.last, "vertex element lacks x/y/z properties"));
                };
                if el.props.iter().any(|p| matches!(p, PlyProperty::List(_))) {
                    return Err(lines.err(lines.last, "list properties on vertices are not supported"));
                }
                for _ in 0..el.count {
                    let (ln, l) = lines.next_line("vertex")?;
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    if toks.len() != el.props.len() {
                        return Err(lines.err(
                            ln,
                            format!("expected {} vertex fields, found {}", el.props.len(), toks.len()),
                        ));
                    }
                    vertices.push(parse_coords(&[toks[x], toks[y], toks[z]], &lines, ln)?);
                }
            }
            "face" => {
                has_faces = el.count > 0;
                for _ in 0..el.count {
                    let (ln, l) = lines.next_line("face")?;
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    let mut pos = 0;
                    for prop in &el.props {
                        match prop {
                            PlyProperty::Scalar(_) => pos += 1,
                            PlyProperty::List(name) => {
                                let k: usize = parse_num(
                                    toks.get(pos).copied().unwrap_or(""),
                                    &lines,
                                    ln,
                                    "list length",
                                )?;
                                if toks.len() < pos + 1 + k {
                                    return Err(lines.err(ln, "face list shorter than declared"));
                                }
                                if name == "vertex_indices" || name == "vertex_index" {
                                    let mut idx = Vec::with_capacity(k);
                                    for t in &toks[pos + 1..pos + 1 + k] {
                                        let i: usize = parse_num(t, &lines, ln, "vertex index")?;
                                        if i >= vertices.len() {
                                            return Err(lines.err(
                                                ln,
                                                format!("face index {i} out of range for {} vertices", vertices.len()),
                                            ));
                                        }
                                        idx.push(i);
                                    }
                                    triangles.extend(fan(&idx));
                                }
                                pos += 1 + k;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    lines.next_line(&el.name)?;
                }
            }
        }
    }
    if has_faces {
        Ok(PlyContent::Mesh(Mesh::new(vertices, triangles)?))
    } else {
        Ok(PlyContent::Cloud(PointCloud::new(vertices)?))
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PlyContent> {
    let path = path.as_ref();
    parse_ply(&fs::read_to_string(path)?, path)
}

/// Parses whitespace-separated `x y z` lines. Extra columns are ignored.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = Lines::new(text, path, Some('#'));
    let mut points = Vec::new();
    while let Some((ln, l)) = lines.inner.next() {
        lines.last = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        points.push(parse_coords(&toks, &lines, ln)?);
    }
    if points.is_empty() {
        return Err(Error::input(format!("{}: no points", path.display())));
    }
    PointCloud::new(points)
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_xyz(&fs::read_to_string(path)?, path)
}

/// Loads a point cloud from `.xyz`, `.ply` or `.off`; meshes are sampled.
pub fn load_cloud(path: impl AsRef<Path>, n_points: usize, seed: u64) -> Result<PointCloud> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "xyz" | "txt" => load_xyz(path),
        "ply" => match load_ply(path)? {
            PlyContent::Cloud(c) => Ok(c),
            PlyContent::Mesh(m) => super::mesh::sample_points(&m, n_points, seed),
        },
        "off" => super::mesh::sample_points(&load_off(path)?, n_points, seed),
        _ => Err(Error::input(format!("unsupported cloud file '{}'", path.display()))),
    }
}

/// XYZ text with shortest round-trip float formatting.
pub fn xyz_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 32);
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

pub fn ply_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    s.push_str(&xyz_string(cloud));
    s
}

pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), xyz_string(cloud).as_bytes())
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), ply_string(cloud).as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
pub(crate) fn memory_path() -> std::path::PathBuf {
    std::path::PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn off(text: &str) -> Result<Mesh> {
        parse_off(text, &memory_path())
    }

    fn parse_line(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_off() {
        let m = off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn off_quad_is_fan_triangulated_and_glued_header_accepted() {
        let m = off("OFF4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_face_index_out_of_range_names_line() {
        let e = off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 99\n").unwrap_err();
        assert!(e.to_string().contains("99"));
        assert_eq!(parse_line(e), 6);
    }

    #[test]
    fn off_malformed_inputs() {
        assert_eq!(parse_line(off("OBJ\n3 1 0\n").unwrap_err()), 1);
        assert_eq!(parse_line(off("OFF\nthree 1 0\n").unwrap_err()), 2);
        assert_eq!(parse_line(off("OFF\n2 0 0\n0 0 0\n1 x 0\n").unwrap_err()), 4);
        assert_eq!(parse_line(off("OFF\n3 1 0\n0 0 0\n1 0 0\n").unwrap_err()), 5);
        assert_eq!(parse_line(off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2\n").unwrap_err()), 6);
        assert!(off("").is_err());
    }

    #[test]
    fn ply_cloud_and_mesh() {
        let cloud = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nend_header\n1 2 3 255\n4 5 6 0\n";
        match parse_ply(cloud, &memory_path()).unwrap() {
            PlyContent::Cloud(c) => assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
            other => panic!("{other:?}"),
        }
        let mesh = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        match parse_ply(mesh, &memory_path()).unwrap() {
            PlyContent::Mesh(m) => assert_eq!(m.triangles, vec![[0, 1, 2]]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ply_malformed_inputs() {
        let p = |t: &str| parse_ply(t, &memory_path());
        assert_eq!(parse_line(p("plx\n").unwrap_err()), 1);
        assert_eq!(
            parse_line(p("ply\nformat binary_little_endian 1.0\nend_header\n").unwrap_err()),
            2
        );
        let bad_vertex = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n4 five 6\n";
        assert_eq!(parse_line(p(bad_vertex).unwrap_err()), 9);
        let bad_face = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
        assert_eq!(parse_line(p(bad_face).unwrap_err()), 13);
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(p(short).is_err());
    }

    #[test]
    fn xyz_lines_and_errors() {
        let c = parse_xyz("0 0 0\n# comment\n1 2 3\n\n4 5 6 0.1 0.2 0.3\n", &memory_path()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(parse_line(parse_xyz("0 0 0\n1 2\n", &memory_path()).unwrap_err()), 2);
        assert_eq!(parse_line(parse_xyz("0 0 0\n1 b 2\n", &memory_path()).unwrap_err()), 2);
        assert!(matches!(parse_xyz("\n# nothing\n", &memory_path()), Err(Error::Input(_))));
    }

    #[test]
    fn xyz_round_trip_is_exact() {
        let c = PointCloud::new(vec![[0.1, -1.0 / 3.0, 1e-7], [123.456, 0.0, -0.0]]).unwrap();
        let back = parse_xyz(&xyz_string(&c), &memory_path()).unwrap();
        assert_eq!(back, c);
        match parse_ply(&ply_string(&c), &memory_path()).unwrap() {
            PlyContent::Cloud(p) => assert_eq!(p, c),
            other => panic!("{other:?}"),
        }
    }
}
