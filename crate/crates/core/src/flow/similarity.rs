use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Pearson,
    Spearman,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cosine, Metric::Pearson, Metric::Spearman];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown metric {s:?} (expected cosine, pearson or spearman)")))
    }
}

/// A similarity value in [-1, 1]. `degenerate` marks a zero-norm operand,
/// for which the value is defined as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!("similarity of vectors with lengths {a} and {b}")));
    }
    Ok(())
}

// sqrt(nu * nv) rather than sqrt(nu) * sqrt(nv): exact 1 for u == v.
fn normalized(dot: f64, nu: f64, nv: f64) -> Similarity {
    if nu == 0.0 || nv == 0.0 {
        return Similarity {
            value: 0.0,
            degenerate: true,
        };
    }
    Similarity {
        value: (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

fn cosine_f64(u: &[f64], v: &[f64]) -> Similarity {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    normalized(dot, nu, nv)
}

fn centered(u: &[f64]) -> Vec<f64> {
    let mean = u.iter().sum::<f64>() / u.len().max(1) as f64;
    u.iter().map(|v| v - mean).collect()
}

/// Ranks starting at 1; tied values share their average rank.
fn ranks(u: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; u.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && u[idx[j + 1]] == u[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn to_f64<T: Scalar>(u: ArrayView1<'_, T>) -> Vec<f64> {
    u.iter().map(|&v| Scalar::to_f64(v)).collect()
}

pub fn cosine_similarity<T: Scalar>(u: ArrayView1<'_, T>, v: ArrayView1<'_, T>) -> Result<Similarity> {
    similarity(Metric::Cosine, u, v)
}

pub fn similarity<T: Scalar>(metric: Metric, u: ArrayView1<'_, T>, v: ArrayView1<'_, T>) -> Result<Similarity> {
    check_len(u.len(), v.len())?;
    let (u, v) = (to_f64(u), to_f64(v));
    Ok(match metric {
        Metric::Cosine => cosine_f64(&u, &v),
        Metric::Pearson => cosine_f64(&centered(&u), &centered(&v)),
        Metric::Spearman => cosine_f64(&centered(&ranks(&u)), &centered(&ranks(&v))),
    })
}
