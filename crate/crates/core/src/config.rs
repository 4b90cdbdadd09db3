//! Run configuration in TOML.
//!
//! ```toml
//! t_final = 20.0
//! snapshot_every = 8      # steps between snapshots, 0 keeps only the last
//! seed = 0                # for seeded perturbations
//!
//! [grid]
//! L = 8.0
//! N = 32
//! eps = 1.0
//!
//! [initial]
//! kind = "perturbed_equilibrium"
//! rho = 1.0
//! p = [0.0, 0.0, 0.0]
//! E = 1.5
//! amplitude = 0.05
//!
//! [stepper]               # optional; unset keys take the grid defaults
//! tau = 0.25
//!
//! [output]
//! dir = "out/perturbed"
//! checkpoints = false
//! ```
//!
//! Unknown keys are rejected, and every error names the offending key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::SingularCorrection;
use crate::equilibrium::{evaluate_equilibrium, fit_fermi_dirac};
use crate::error::{Error, Result};
use crate::grid::{ball_fraction, Field, VelocityGrid};
use crate::stepper::StepConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub initial: InitialCondition,
    #[serde(default, skip_serializing_if = "StepperOverrides::is_empty")]
    pub stepper: StepperOverrides,
    pub t_final: f64,
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    #[serde(default)]
    pub correction: SingularCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Equilibrium {
        rho: f64,
        #[serde(default)]
        p: [f64; 3],
        #[serde(rename = "E")]
        energy: f64,
    },
    /// `clamp(M + amplitude · bump)`.
    PerturbedEquilibrium {
        rho: f64,
        #[serde(default)]
        p: [f64; 3],
        #[serde(rename = "E")]
        energy: f64,
        amplitude: f64,
        #[serde(default)]
        bump: Bump,
    },
    /// `height` times the indicator of a ball.
    Ball {
        #[serde(rename = "R")]
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
        height: f64,
    },
    /// `clamp(Σ weight · exp(-|v - center|²/width²))`.
    GaussianMixture { components: Vec<GaussianComponent> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bump {
    /// `exp(-|v - center|²/width²)`.
    Gaussian { center: [f64; 3], width: f64 },
    /// Mean of `count` Gaussians of the given width, centers drawn
    /// uniformly in `[-2, 2]³` from the run seed.
    Random { count: usize, width: f64 },
}

impl Default for Bump {
    fn default() -> Self {
        Bump::Gaussian {
            center: [1.0, 0.0, 0.0],
            width: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub center: [f64; 3],
    pub width: f64,
}

/// Partial [`StepConfig`]; missing values come from [`StepConfig::for_grid`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_loc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lin_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lin_max: Option<usize>,
}

impl StepperOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, base: StepConfig) -> StepConfig {
        StepConfig {
            tau: self.tau.unwrap_or(base.tau),
            delta1: self.delta1.unwrap_or(base.delta1),
            delta2: self.delta2.unwrap_or(base.delta2),
            m_loc: self.m_loc.unwrap_or(base.m_loc),
            picard_tol: self.picard_tol.unwrap_or(base.picard_tol),
            picard_max: self.picard_max.unwrap_or(base.picard_max),
            lin_tol: self.lin_tol.unwrap_or(base.lin_tol),
            lin_max: self.lin_max.unwrap_or(base.lin_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Write a checkpoint with every snapshot.
    #[serde(default)]
    pub checkpoints: bool,
    /// Also write the final field as CSV.
    #[serde(default)]
    pub field_csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            checkpoints: false,
            field_csv: false,
        }
    }
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

fn finite3(path: &str, x: [f64; 3]) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be finite, got {x:?}")))
    }
}

fn in_context(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." {
                "<document>".to_string()
            } else {
                path
            };
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn velocity_grid(&self) -> Result<VelocityGrid> {
        let g = &self.grid;
        VelocityGrid::new(g.half_width, g.n, g.eps).map_err(|e| in_context("grid", e))
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        let cfg = self
            .stepper
            .apply(StepConfig::for_grid(&self.velocity_grid()?));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of steps to reach `t_final`.
    pub fn steps(&self) -> Result<u64> {
        Ok((self.t_final / self.step_config()?.tau).round() as u64)
    }

    /// Checks every value that can be checked without building fields.
    pub fn validate(&self) -> Result<()> {
        self.velocity_grid()?;
        self.step_config()?;
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::config(
                "t_final",
                format!("must be nonnegative, got {}", self.t_final),
            ));
        }
        if self.output.dir.is_empty() {
            return Err(Error::config("output.dir", "must not be empty"));
        }
        match &self.initial {
            InitialCondition::Equilibrium { rho, p, energy } => {
                positive("initial.rho", *rho)?;
                finite3("initial.p", *p)?;
                positive("initial.E", *energy)?;
            }
            InitialCondition::PerturbedEquilibrium {
                rho,
                p,
                energy,
                amplitude,
                bump,
            } => {
                positive("initial.rho", *rho)?;
                finite3("initial.p", *p)?;
                positive("initial.E", *energy)?;
                if !amplitude.is_finite() {
                    return Err(Error::config("initial.amplitude", "must be finite"));
                }
                match bump {
                    Bump::Gaussian { center, width } => {
                        finite3("initial.bump.center", *center)?;
                        positive("initial.bump.width", *width)?;
                    }
                    Bump::Random { count, width } => {
                        if *count == 0 {
                            return Err(Error::config("initial.bump.count", "must be at least 1"));
                        }
                        positive("initial.bump.width", *width)?;
                    }
                }
            }
            InitialCondition::Ball {
                radius,
                center,
                height,
            } => {
                positive("initial.R", *radius)?;
                finite3("initial.center", *center)?;
                positive("initial.height", *height)?;
                let bound = self.velocity_grid()?.pauli_bound();
                if *height > bound {
                    return Err(Error::config(
                        "initial.height",
                        format!("exceeds the Pauli bound 1/eps = {bound}"),
                    ));
                }
            }
            InitialCondition::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::config("initial.components", "must not be empty"));
                }
                for (i, c) in components.iter().enumerate() {
                    let at = |k: &str| format!("initial.components[{i}].{k}");
                    if !(c.weight >= 0.0 && c.weight.is_finite()) {
                        return Err(Error::config(
                            at("weight"),
                            format!("must be nonnegative, got {}", c.weight),
                        ));
                    }
                    finite3(&at("center"), c.center)?;
                    positive(&at("width"), c.width)?;
                }
            }
        }
        Ok(())
    }

    /// The initial distribution on the configured grid.
    pub fn initial_field(&self) -> Result<Field> {
        let grid = self.velocity_grid()?;
        let gaussian = |c: [f64; 3], w: f64| {
            move |v: [f64; 3]| {
                let d2 = (v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2);
                (-d2 / (w * w)).exp()
            }
        };
        let f = match &self.initial {
            InitialCondition::Equilibrium { rho, p, energy } => {
                let fit = fit_fermi_dirac(*rho, *p, *energy, grid.eps())
                    .map_err(|e| in_context("initial", e))?;
                evaluate_equilibrium(&fit.params, &grid)?
            }
            InitialCondition::PerturbedEquilibrium {
                rho,
                p,
                energy,
                amplitude,
                bump,
            } => {
                let fit = fit_fermi_dirac(*rho, *p, *energy, grid.eps())
                    .map_err(|e| in_context("initial", e))?;
                let centers: Vec<([f64; 3], f64)> = match *bump {
                    Bump::Gaussian { center, width } => vec![(center, width)],
                    Bump::Random { count, width } => {
                        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                        (0..count)
                            .map(|_| (std::array::from_fn(|_| rng.random_range(-2.0..2.0)), width))
                            .collect()
                    }
                };
                let scale = amplitude / centers.len() as f64;
                let mut f = Field::from_fn(grid, |v| {
                    fit.params.value(v)
                        + scale * centers.iter().map(|&(c, w)| gaussian(c, w)(v)).sum::<f64>()
                });
                f.clamp_to_band();
                f
            }
            InitialCondition::Ball {
                radius,
                center,
                height,
            } => {
                let mut f = ball_fraction(&grid, *center, *radius);
                f.values_mut().iter_mut().for_each(|x| *x *= height);
                f
            }
            InitialCondition::GaussianMixture { components } => {
                let mut f = Field::from_fn(grid, |v| {
                    components
                        .iter()
                        .map(|c| c.weight * gaussian(c.center, c.width)(v))
                        .sum()
                });
                f.clamp_to_band();
                f
            }
        };
        f.ensure_distribution()
            .map_err(|e| in_context("initial", e))?;
        if f.integral() <= 0.0 {
            return Err(Error::config(
                "initial",
                "the initial distribution has no mass on this grid",
            ));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
t_final = 1.0

[grid]
L = 6.0
N = 8
eps = 1.0

[initial]
kind = "perturbed_equilibrium"
rho = 1.0
E = 1.5
amplitude = 0.05
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.grid.correction, SingularCorrection::Lattice);
        assert_eq!(
            cfg.step_config().unwrap(),
            StepConfig::for_grid(&cfg.velocity_grid().unwrap())
        );
        assert_eq!(cfg.output.dir, "out");
    }

    #[test]
    fn serialization_roundtrips() {
        let mut cfg = RunConfig::from_toml_str(BASE).unwrap();
        cfg.stepper.tau = Some(0.125);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_names_its_table() {
        let text = format!("{BASE}\n[stepper]\ntua = 0.1\n");
        let msg = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(msg.starts_with("stepper"), "{msg}");
        assert!(msg.contains("tua"), "{msg}");
    }

    #[test]
    fn negative_tau_names_the_key() {
        let text = format!("{BASE}\n[stepper]\ntau = -0.1\n");
        let msg = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(msg.starts_with("stepper.tau"), "{msg}");
    }

    #[test]
    fn wrong_type_names_the_key() {
        let text = BASE.replace("N = 8", "N = \"eight\"");
        let msg = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(msg.starts_with("grid.N"), "{msg}");
    }
}
