use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Exposure data-generating mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureDgm {
    NegBin,
    Poisson,
}

impl fmt::Display for ExposureDgm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExposureDgm::NegBin => write!(f, "negbin"),
            ExposureDgm::Poisson => write!(f, "poisson"),
        }
    }
}

impl FromStr for ExposureDgm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negbin" => Ok(ExposureDgm::NegBin),
            "poisson" => Ok(ExposureDgm::Poisson),
            _ => Err(Error::Config(format!(
                "unknown exposure_dgm '{s}' (expected negbin or poisson)"
            ))),
        }
    }
}

/// Missingness mechanism selector for a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingnessKind {
    None,
    Mcar,
    Mar,
    MarNoExposure,
}

impl fmt::Display for MissingnessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MissingnessKind::None => write!(f, "none"),
            MissingnessKind::Mcar => write!(f, "mcar"),
            MissingnessKind::Mar => write!(f, "mar"),
            MissingnessKind::MarNoExposure => write!(f, "mar_no_exposure"),
        }
    }
}

impl FromStr for MissingnessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MissingnessKind::None),
            "mcar" => Ok(MissingnessKind::Mcar),
            "mar" => Ok(MissingnessKind::Mar),
            "mar_no_exposure" => Ok(MissingnessKind::MarNoExposure),
            _ => Err(Error::Config(format!(
                "unknown missingness '{s}' (expected none, mcar, mar, or mar_no_exposure)"
            ))),
        }
    }
}

/// The seven estimators compared by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Unadjusted,
    Adjusted,
    Multinomial,
    Cbps,
    NpCbps,
    Gbm,
    Energy,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Unadjusted,
        MethodId::Adjusted,
        MethodId::Multinomial,
        MethodId::Cbps,
        MethodId::NpCbps,
        MethodId::Gbm,
        MethodId::Energy,
    ];

    /// True for methods that estimate a weight vector.
    pub fn is_weighting(self) -> bool {
        !matches!(self, MethodId::Unadjusted | MethodId::Adjusted)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodId::Unadjusted => "unadjusted",
            MethodId::Adjusted => "adjusted",
            MethodId::Multinomial => "multinomial",
            MethodId::Cbps => "cbps",
            MethodId::NpCbps => "npcbps",
            MethodId::Gbm => "gbm",
            MethodId::Energy => "energy",
        };
        write!(f, "{s}")
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unadjusted" => Ok(MethodId::Unadjusted),
            "adjusted" => Ok(MethodId::Adjusted),
            "multinomial" => Ok(MethodId::Multinomial),
            "cbps" => Ok(MethodId::Cbps),
            "npcbps" => Ok(MethodId::NpCbps),
            "gbm" => Ok(MethodId::Gbm),
            "energy" => Ok(MethodId::Energy),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

/// Full specification of one simulation scenario. See the repository README
/// for the on-disk `key = value` format.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n_obs: usize,
    pub n_reps: usize,
    pub exposure_dgm: ExposureDgm,
    /// True risk ratio per unit exposure; the estimand is ln(true_rr).
    pub true_rr: f64,
    pub missingness: MissingnessKind,
    pub phi_target: f64,
    pub methods: Vec<MethodId>,
    /// Weight-capping percentile in (0,1]; 1.0 disables winsorisation.
    pub winsorize_percentile: f64,
    pub seed: u64,
    pub m_cap: usize,
    pub mice_cycles: usize,
    /// Rows in the fixed reference sample used for MAR calibration.
    pub reference_n: usize,
    pub a_max: u32,
}

impl ScenarioConfig {
    pub fn theta_true(&self) -> f64 {
        self.true_rr.ln()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 {
            return Err(Error::Config("n_obs must be positive".into()));
        }
        if self.n_reps == 0 {
            return Err(Error::Config("n_reps must be positive".into()));
        }
        if !(self.true_rr > 0.0) {
            return Err(Error::Config("true_rr must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.phi_target) {
            return Err(Error::Config("phi_target must lie in [0,1)".into()));
        }
        let none = self.missingness == MissingnessKind::None;
        if none && self.phi_target != 0.0 {
            return Err(Error::Config(
                "phi_target > 0 requires a missingness mechanism".into(),
            ));
        }
        if !none && self.phi_target == 0.0 {
            return Err(Error::Config(
                "missingness mechanism requires phi_target > 0".into(),
            ));
        }
        if !(self.winsorize_percentile > 0.0 && self.winsorize_percentile <= 1.0) {
            return Err(Error::Config("winsorize_percentile must lie in (0,1]".into()));
        }
        if self.m_cap == 0 || self.mice_cycles == 0 || self.reference_n == 0 || self.a_max == 0 {
            return Err(Error::Config(
                "m_cap, mice_cycles, reference_n, and a_max must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical identifier used in output files; encodes the DGM, the true
    /// RR, and the missingness setting.
    pub fn scenario_id(&self) -> String {
        let miss = match self.missingness {
            MissingnessKind::None => "complete".to_string(),
            MissingnessKind::Mcar => format!("mcar{}", (self.phi_target * 100.0).round() as u32),
            MissingnessKind::Mar => format!("mar{}", (self.phi_target * 100.0).round() as u32),
            MissingnessKind::MarNoExposure => {
                format!("marnoexp{}", (self.phi_target * 100.0).round() as u32)
            }
        };
        format!("{}_rr{}_{miss}", self.exposure_dgm, self.true_rr)
    }

    /// Recover ln(true_rr) from a scenario id produced by
    /// [`ScenarioConfig::scenario_id`].
    pub fn theta_true_from_scenario_id(id: &str) -> Result<f64> {
        let rr_part = id
            .split('_')
            .find_map(|tok| tok.strip_prefix("rr"))
            .ok_or_else(|| {
                Error::Validation(format!("scenario id '{id}' carries no rr token"))
            })?;
        let rr: f64 = rr_part.parse().map_err(|_| {
            Error::Validation(format!("scenario id '{id}' has malformed rr token '{rr_part}'"))
        })?;
        if !(rr > 0.0) {
            return Err(Error::Validation(format!(
                "scenario id '{id}' has non-positive rr"
            )));
        }
        Ok(rr.ln())
    }

    /// Serialize to the on-disk key-value format.
    pub fn to_config_string(&self) -> String {
        let methods = self
            .methods
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "exposure_dgm = {}\ntrue_rr = {}\nmissingness = {}\nphi_target = {}\nmethods = {}\nn_obs = {}\nn_reps = {}\nwinsorize_percentile = {}\nseed = {}\nm_cap = {}\nmice_cycles = {}\nreference_n = {}\na_max = {}\n",
            self.exposure_dgm,
            self.true_rr,
            self.missingness,
            self.phi_target,
            methods,
            self.n_obs,
            self.n_reps,
            self.winsorize_percentile,
            self.seed,
            self.m_cap,
            self.mice_cycles,
            self.reference_n,
            self.a_max,
        )
    }
}

struct ConfigBuilder {
    exposure_dgm: Option<ExposureDgm>,
    true_rr: Option<f64>,
    methods: Option<Vec<MethodId>>,
    missingness: MissingnessKind,
    phi_target: f64,
    n_obs: usize,
    n_reps: usize,
    winsorize_percentile: f64,
    seed: u64,
    m_cap: usize,
    mice_cycles: usize,
    reference_n: usize,
    a_max: u32,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        ConfigBuilder {
            exposure_dgm: None,
            true_rr: None,
            methods: None,
            missingness: MissingnessKind::None,
            phi_target: 0.0,
            n_obs: 5000,
            n_reps: 2000,
            winsorize_percentile: 0.99,
            seed: 42,
            m_cap: 100,
            mice_cycles: 10,
            reference_n: 1_000_000,
            a_max: 10,
        }
    }
}

/// Parse a scenario configuration file (`key = value` lines, `#` comments;
/// defaults applied for every key except exposure_dgm, true_rr, methods).
pub fn load_scenario_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_scenario_config(&text)
}

pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig> {
    let mut b = ConfigBuilder::default();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", line_no + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let parse_err =
            |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", line_no + 1));
        match key {
            "exposure_dgm" => b.exposure_dgm = Some(value.parse()?),
            "true_rr" => {
                b.true_rr = Some(value.parse().map_err(|_| parse_err("true_rr"))?);
            }
            "missingness" => b.missingness = value.parse()?,
            "phi_target" => {
                b.phi_target = value.parse().map_err(|_| parse_err("phi_target"))?;
            }
            "methods" => {
                let methods = value
                    .split(',')
                    .map(|m| m.trim().parse::<MethodId>())
                    .collect::<Result<Vec<_>>>()?;
                b.methods = Some(methods);
            }
            "n_obs" => b.n_obs = value.parse().map_err(|_| parse_err("n_obs"))?,
            "n_reps" => b.n_reps = value.parse().map_err(|_| parse_err("n_reps"))?,
            "winsorize_percentile" => {
                b.winsorize_percentile =
                    value.parse().map_err(|_| parse_err("winsorize_percentile"))?;
            }
            "seed" => b.seed = value.parse().map_err(|_| parse_err("seed"))?,
            "m_cap" => b.m_cap = value.parse().map_err(|_| parse_err("m_cap"))?,
            "mice_cycles" => {
                b.mice_cycles = value.parse().map_err(|_| parse_err("mice_cycles"))?;
            }
            "reference_n" => {
                b.reference_n = value.parse().map_err(|_| parse_err("reference_n"))?;
            }
            "a_max" => b.a_max = value.parse().map_err(|_| parse_err("a_max"))?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }
    let config = ScenarioConfig {
        exposure_dgm: b
            .exposure_dgm
            .ok_or_else(|| Error::Config("missing required key 'exposure_dgm'".into()))?,
        true_rr: b
            .true_rr
            .ok_or_else(|| Error::Config("missing required key 'true_rr'".into()))?,
        methods: b
            .methods
            .ok_or_else(|| Error::Config("missing required key 'methods'".into()))?,
        missingness: b.missingness,
        phi_target: b.phi_target,
        n_obs: b.n_obs,
        n_reps: b.n_reps,
        winsorize_percentile: b.winsorize_percentile,
        seed: b.seed,
        m_cap: b.m_cap,
        mice_cycles: b.mice_cycles,
        reference_n: b.reference_n,
        a_max: b.a_max,
    };
    config.validate()?;
    Ok(config)
}
