//! Run configuration: a TOML or JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use reldiff::fokker_planck::StationaryMethod;
use reldiff::randomfield::{Coherence, KuboConfig};
use reldiff::sde::SimConfig;
use reldiff::spectral::{bath_from_spectral, SpectralSpec};
use reldiff::{Advection, BathParams, FourVector, FrictionSign};
use serde::{Deserialize, Serialize};

/// Version of the config schema; bumped on incompatible changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub format: OutputFormat,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub advection: Advection,
    pub bath: BathConfig,
    pub spectral: Option<SpectralSpec>,
    pub alpha: AlphaConfig,
    pub sim: SimSection,
    pub kubo: KuboSection,
    pub grid: GridConfig,
    pub check: CheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            seed: 0,
            out: PathBuf::from("out"),
            format: OutputFormat::Both,
            threads: None,
            advection: Advection::Velocity,
            bath: BathConfig::default(),
            spectral: None,
            alpha: AlphaConfig::default(),
            sim: SimSection::default(),
            kubo: KuboSection::default(),
            grid: GridConfig::default(),
            check: CheckConfig::default(),
        }
    }
}

/// Which data files are written; metadata is always JSON.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn json(self) -> bool {
        self != OutputFormat::Csv
    }

    pub fn csv(self) -> bool {
        self != OutputFormat::Json
    }
}

/// Bath scalars. When `energy_density` and `pressure` are both absent they
/// are computed from the spectral density (Planck at `beta` by default).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    pub beta: f64,
    pub energy_density: Option<f64>,
    pub pressure: Option<f64>,
    pub tau_c: f64,
    pub w: [f64; 4],
    /// Overrides `λ = β(ε − π_ε)`.
    pub friction: Option<f64>,
    pub friction_sign: FrictionSign,
}

impl Default for BathConfig {
    fn default() -> Self {
        BathConfig {
            beta: 1.0,
            energy_density: None,
            pressure: None,
            tau_c: 1.0,
            w: [1.0, 0.0, 0.0, 0.0],
            friction: None,
            friction_sign: FrictionSign::FluxZero,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaConfig {
    /// Contravariant momentum; the particle at rest with unit mass if absent.
    pub p: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub mass: f64,
    pub initial: InitialSpec,
    /// Radial cells of the stationary reference profile.
    pub reference_cells: usize,
    #[serde(flatten)]
    pub run: SimConfig,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            mass: 1.0,
            initial: InitialSpec::Delta { p: [0.0; 3] },
            reference_cells: 512,
            run: SimConfig::default(),
        }
    }
}

/// Initial ensemble of `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// All particles with bath-frame spatial momentum `p`.
    Delta { p: [f64; 3] },
    /// Drawn from the Fokker–Planck stationary profile.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KuboSection {
    pub mass: f64,
    /// Bath-frame spatial momenta.
    pub momenta: Vec<[f64; 3]>,
    pub tau: f64,
    /// Proper-time window of the time-integrated estimator; skipped if absent.
    pub s_max: Option<f64>,
    pub coherence: Coherence,
    #[serde(flatten)]
    pub run: KuboConfig,
}

impl Default for KuboSection {
    fn default() -> Self {
        KuboSection {
            mass: 1.0,
            momenta: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 0.0, 5.0]],
            tau: 1e-6,
            s_max: None,
            coherence: Coherence::Undamped,
            run: KuboConfig {
                realizations: 20_000,
                ..KuboConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub mass: f64,
    pub cells: usize,
    /// Outer edge; the `β(p⁰ − m) = 40` point if absent.
    pub p_max: Option<f64>,
    pub tol: f64,
    pub method: StationaryMethod,
    /// Also solve at two and four times the cell count and report the order.
    pub refine: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            mass: 1.0,
            cells: 512,
            p_max: None,
            tol: 1e-8,
            method: StationaryMethod::ZeroFlux,
            refine: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub samples: usize,
    /// Range of particle masses.
    pub mass: [f64; 2],
    /// Largest spatial momentum component, in units of the mass.
    pub p_range: f64,
    /// Largest bath rapidity.
    pub rapidity: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            samples: 10_000,
            mass: [0.1, 10.0],
            p_range: 5.0,
            rapidity: 2.0,
        }
    }
}

impl RunConfig {
    /// Loads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        if cfg.schema != SCHEMA_VERSION {
            bail!("config schema {} is not supported (expected {SCHEMA_VERSION})", cfg.schema);
        }
        Ok(cfg)
    }

    /// Bath with the spectral scalars filled in, the sign switch applied and
    /// `ε`, `π_ε` echoed back into the config.
    pub fn resolve_bath(&mut self) -> reldiff::Result<BathParams<f64>> {
        let b = &self.bath;
        let w = FourVector(b.w);
        let bath = match (b.energy_density, b.pressure) {
            (Some(eps), Some(pi)) => BathParams::new(b.beta, eps, pi, b.tau_c, w)?,
            (None, None) => {
                let g = self.spectral_spec().build()?;
                bath_from_spectral(&g, b.beta, &w, b.tau_c)?
            }
            _ => {
                return Err(reldiff::Error::InvalidBath(
                    "set both energy_density and pressure, or neither".into(),
                ))
            }
        };
        let bath = match b.friction {
            Some(l) => bath.with_friction(l)?,
            None => bath,
        }
        .with_sign(b.friction_sign);
        self.bath.energy_density = Some(bath.energy_density);
        self.bath.pressure = Some(bath.pressure);
        Ok(bath)
    }

    /// Spectral density description, Planck at the bath temperature by
    /// default.
    pub fn spectral_spec(&self) -> SpectralSpec {
        self.spectral.clone().unwrap_or(SpectralSpec::Planck {
            beta: self.bath.beta,
            norm: 1.0,
        })
    }
}
