//! Scenario file schema.
//!
//! A scenario is a TOML document (or the equivalent JSON object) with the
//! blocks `plant`, `structure`, `corridor`, `design`, `simulate` and
//! `numerics`. Every block except `corridor` has defaults; unknown keys are
//! rejected. [`ScenarioConfig::effective`] fills in everything that was left
//! out so the echoed config reproduces the run on its own.

use std::path::Path;

use corridor::design::{CorridorSpec, ModulationBounds, PeriodSearch};
use corridor::plant::{plant_from_nmb, NmbParams, PlantLTI, PlantStructure, StaticNonlinearity};
use corridor::{NumericsSettings, SmallVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub plant: PlantBlock,
    #[serde(default)]
    pub structure: StructureBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corridor: Option<CorridorBlock>,
    #[serde(default)]
    pub design: DesignBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub numerics: NumericsSettings,
}

/// Linear chain, either from the blockade parameterization or raw constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantBlock {
    Nmb(NmbParams),
    Chain(ChainConstants),
}

impl Default for PlantBlock {
    fn default() -> Self {
        PlantBlock::Nmb(NmbParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConstants {
    pub a: [f64; 3],
    pub g: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureBlock {
    Lti,
    /// `output` defaults to the Hill curve of an `nmb` plant.
    Wiener {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output: Option<StaticNonlinearity>,
    },
    Hammerstein {
        input: StaticNonlinearity,
    },
}

impl Default for StructureBlock {
    fn default() -> Self {
        StructureBlock::Wiener { output: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorridorKind {
    /// Bounds on the measured output, mapped back through the output map.
    Measured,
    /// Bounds on the linear output directly.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorBlock {
    pub source: CorridorKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignBlock {
    pub period: PeriodSearch,
    pub bounds: ModulationBounds,
    pub slopes: SlopeBlock,
    /// Points per axis of the emitted modulation curve.
    pub curve_points: usize,
}

impl Default for DesignBlock {
    fn default() -> Self {
        Self {
            period: PeriodSearch::default(),
            bounds: ModulationBounds::default(),
            slopes: SlopeBlock::default(),
            curve_points: 201,
        }
    }
}

/// Modulation slopes, fixed or found by grid search. Search ranges are
/// magnitudes `[from, to]`, signed automatically so that the dose falls and
/// the interval grows with the linear output; a zero endpoint includes the
/// open-loop slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlopeBlock {
    Fixed { k2: f64, k4: f64 },
    Search { k2: [f64; 2], k4: [f64; 2], points: usize },
}

impl Default for SlopeBlock {
    fn default() -> Self {
        SlopeBlock::Search {
            k2: [0.0, 1.0],
            k4: [0.0, 100.0],
            points: 33,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedState {
    Zero,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(NamedState),
    Explicit([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub x0: InitialState,
    pub n_firings: usize,
    pub sample_dt: f64,
    /// Fire with the designed constants regardless of the output.
    pub open_loop: bool,
    /// Convergence radius relative to `|X|`.
    pub convergence_rel: f64,
    pub convergence_window: usize,
    /// Allowed corridor excursion after convergence, in corridor units.
    pub corridor_tolerance: f64,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            x0: InitialState::Named(NamedState::Zero),
            n_firings: 30,
            sample_dt: 0.1,
            open_loop: false,
            convergence_rel: 1e-6,
            convergence_window: corridor::simulate::DEFAULT_CONVERGENCE_WINDOW,
            corridor_tolerance: 1e-3,
        }
    }
}

impl ScenarioConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The config with every implied value written out.
    pub fn effective(&self) -> Self {
        let mut out = self.clone();
        if let (StructureBlock::Wiener { output: output @ None }, PlantBlock::Nmb(p)) =
            (&mut out.structure, &self.plant)
        {
            *output = Some(p.hill());
        }
        out
    }

    pub fn linear_plant(&self) -> Result<PlantLTI, CliError> {
        Ok(match &self.plant {
            PlantBlock::Nmb(p) => plant_from_nmb(p, &self.numerics)?,
            PlantBlock::Chain(c) => PlantLTI::new(c.a, c.g, &self.numerics)?,
        })
    }

    pub fn structure(&self) -> Result<PlantStructure, CliError> {
        let linear = self.linear_plant()?;
        Ok(match &self.effective().structure {
            StructureBlock::Lti => PlantStructure::lti(linear),
            StructureBlock::Wiener { output: Some(nl) } => {
                nl.validate()?;
                PlantStructure::wiener(linear, nl.clone())
            }
            StructureBlock::Wiener { output: None } => {
                return Err(CliError::Schema(
                    "wiener structure on a chain plant needs `output`".into(),
                ))
            }
            StructureBlock::Hammerstein { input } => {
                input.validate()?;
                PlantStructure::hammerstein(linear, input.clone())
            }
        })
    }

    pub fn corridor_spec(&self, structure: &PlantStructure) -> Result<CorridorSpec, CliError> {
        let block = self
            .corridor
            .as_ref()
            .ok_or_else(|| CliError::Schema("missing `corridor` block".into()))?;
        Ok(match block.source {
            CorridorKind::Linear => CorridorSpec::linear(block.lower, block.upper)?,
            CorridorKind::Measured => {
                let nl = structure
                    .output_nl
                    .as_ref()
                    .ok_or_else(|| CliError::Schema("a measured corridor needs a wiener structure".into()))?;
                CorridorSpec::measured(block.lower, block.upper, nl)?
            }
        })
    }

    pub fn initial_state(&self, fixed_point: &SmallVector) -> SmallVector {
        match self.simulate.x0 {
            InitialState::Named(NamedState::Zero) => SmallVector::zeros(),
            InitialState::Named(NamedState::FixedPoint) => *fixed_point,
            InitialState::Explicit(x) => SmallVector::new(x[0], x[1], x[2]),
        }
    }
}
