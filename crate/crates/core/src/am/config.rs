use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::flow::AlignmentPlan;
use crate::nn::Widths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    L2,
    GaussianBlur,
    TotalVariation,
    Flow,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::L2,
        Method::GaussianBlur,
        Method::TotalVariation,
        Method::Flow,
    ];
    pub const BASELINES: [Method; 4] = [Method::Vanilla, Method::L2, Method::GaussianBlur, Method::TotalVariation];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::L2 => "l2",
            Method::GaussianBlur => "gaussian-blur",
            Method::TotalVariation => "total-variation",
            Method::Flow => "flow",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gblur" | "blur" => return Ok(Method::GaussianBlur),
            "tv" => return Ok(Method::TotalVariation),
            _ => {}
        }
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown method {s:?}; valid methods: vanilla, l2, gaussian-blur (gblur), total-variation (tv), flow"
            ))
        })
    }
}

/// Hyperparameters of the baseline regularizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRegConfig {
    /// Multiplicative decay: `x <- (1 - theta) (x + dx)`.
    pub theta_l2: f64,
    /// Gaussian kernel width of the neighbourhood blur.
    pub blur_sigma: f64,
    /// Neighbours averaged by the blur (besides the point itself).
    pub blur_k: usize,
    /// Weight of the nearest-neighbour L1 difference penalty.
    pub tv_weight: f64,
}

impl Default for BaselineRegConfig {
    fn default() -> Self {
        Self {
            theta_l2: 0.002,
            blur_sigma: 0.05,
            blur_k: 8,
            tv_weight: 1.0,
        }
    }
}

impl BaselineRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta_l2) {
            return Err(Error::config(format!("theta_l2 must lie in [0, 1), got {}", self.theta_l2)));
        }
        if !(self.blur_sigma > 0.0) || self.blur_k == 0 {
            return Err(Error::config("blur needs sigma > 0 and k >= 1"));
        }
        if !(self.tv_weight >= 0.0) {
            return Err(Error::config("tv weight must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum InitMode {
    /// Index-wise mean of the target class's reference instances.
    Average,
    /// Independent uniform coordinates in `[-B/2, B/2]`.
    UniformRandom,
    Given { cloud: PointCloud },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSite {
    #[default]
    None,
    Init,
    Latent,
    Iteration,
}

impl FromStr for NoiseSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => NoiseSite::None,
            "init" => NoiseSite::Init,
            "latent" => NoiseSite::Latent,
            "iteration" => NoiseSite::Iteration,
            _ => {
                return Err(Error::config(format!(
                    "unknown noise site {s:?} (expected none, init, latent or iteration)"
                )))
            }
        })
    }
}

/// Gaussian noise with standard deviation `amplitude` times the RMS of the
/// tensor it is added to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub site: NoiseSite,
    pub amplitude: f64,
}

/// Switches for the flow loss terms, used by the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub alignment: bool,
    pub continuity: bool,
    pub legal: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self {
            alignment: true,
            continuity: true,
            legal: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowAmConfig {
    pub target: usize,
    pub beta: f64,
    /// Legal boundary B of the continuity term.
    pub boundary: f64,
    /// Legal constraint C of the legality term.
    pub constraint: f64,
    pub plan: AlignmentPlan,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub window: usize,
    /// `None` picks the method default: average for flow, uniform otherwise.
    pub init: Option<InitMode>,
    pub n_points: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub terms: Terms,
}

impl FlowAmConfig {
    pub fn new(target: usize, widths: Widths) -> Self {
        Self {
            target,
            beta: 0.1,
            boundary: 1.0,
            constraint: 1.0,
            plan: AlignmentPlan::five_layer(widths),
            learning_rate: 1e-3,
            max_iterations: 500,
            tolerance: 1e-4,
            window: 20,
            init: None,
            n_points: 256,
            seed: 0,
            noise: NoiseConfig::default(),
            terms: Terms::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.boundary > 0.0 && self.constraint > 0.0) {
            return Err(Error::config("B and C must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.window == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::config("convergence window must be >= 1 and tolerance >= 0"));
        }
        if self.n_points < 2 {
            return Err(Error::config("explanations need at least two points"));
        }
        if !(self.noise.amplitude >= 0.0 && self.noise.amplitude.is_finite()) {
            return Err(Error::config("noise amplitude must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn resolved_init(&self, method: Method) -> InitMode {
        self.init.clone().unwrap_or(match method {
            Method::Flow => InitMode::Average,
            _ => InitMode::UniformRandom,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("tv".parse::<Method>().unwrap(), Method::TotalVariation);
        let e = "deepdream".parse::<Method>().unwrap_err().to_string();
        assert!(e.contains("vanilla") && e.contains("flow"));
    }

    #[test]
    fn validation() {
        let mut c = FlowAmConfig::new(0, Widths::desk());
        assert!(c.validate().is_ok());
        c.beta = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(matches!("sideways".parse::<NoiseSite>(), Err(Error::Config(_))));
        let b = BaselineRegConfig {
            theta_l2: 1.0,
            ..Default::default()
        };
        assert!(b.validate().is_err());
    }
}
