//! CLI failures: exit code plus the name of the error that caused them.

use std::fmt;
use std::path::Path;

use helevel::graph::ValidationKind;
use helevel::mock::container::ContainerError;
use helevel::planner::PlanViolation;
use helevel::{ArchError, ConfigError, CostError, GraphError, LevelError, MockError, PlanError};

/// Bad input files, configs or paths.
pub const EXIT_CONFIG: u8 = 2;
/// A pipeline module rejected the input or a check failed.
pub const EXIT_MODULE: u8 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn module(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_MODULE,
            kind,
            message: message.into(),
        }
    }

    pub fn config(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::config("IoError", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        let kind = match &e {
            GraphError::Syntax { .. } => "SyntaxError",
            GraphError::Validation {
                kind: ValidationKind::Cycle,
                ..
            } => "CycleError",
            GraphError::Validation { .. } => "ValidationError",
            GraphError::Shape { .. } => "ShapeError",
        };
        CliError::module(kind, e.to_string())
    }
}

impl From<LevelError> for CliError {
    fn from(e: LevelError) -> Self {
        match e {
            LevelError::UnplannedOp { .. } => CliError::module("UnplannedOpError", e.to_string()),
            LevelError::NotHeFriendly { .. } => {
                CliError::module("UnsupportedOpError", e.to_string())
            }
            LevelError::Graph(g) => g.into(),
        }
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::UnsupportedOp { .. } => {
                CliError::module("UnsupportedOpError", e.to_string())
            }
            ArchError::UnknownPreset(_) => CliError::config("UnknownPresetError", e.to_string()),
            ArchError::Config(_) => CliError::config("ConfigError", e.to_string()),
            ArchError::Graph(g) => g.into(),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible { .. } => CliError::module("InfeasibleError", e.to_string()),
            PlanError::TooLarge { .. } => CliError::module("TooLargeError", e.to_string()),
            PlanError::Config(_) => CliError::config("ConfigError", e.to_string()),
            PlanError::AlreadyPlanned(_) => CliError::module("AlreadyPlannedError", e.to_string()),
            PlanError::Level(l) => l.into(),
            PlanError::Graph(g) => g.into(),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        let kind = match &e {
            CostError::RankDeficient { .. } => "RankDeficientError",
            CostError::InfeasibleNonNegativity(_) => "InfeasibleNonNegativityError",
            CostError::TooFewObservations { .. } => "TooFewObservationsError",
            CostError::Weights(_) => return CliError::config("ConfigError", e.to_string()),
        };
        CliError::module(kind, e.to_string())
    }
}

impl From<MockError> for CliError {
    fn from(e: MockError) -> Self {
        let kind = match &e {
            MockError::LevelOverflow { .. } => "LevelOverflowError",
            MockError::JoinMismatch { .. } => "JoinMismatchError",
            MockError::InvalidRescale { .. } => "InvalidRescaleError",
            MockError::Shape { .. } => "ShapeError",
            MockError::Missing(_) => "MissingTensorError",
            MockError::NoActivation { .. } => "NoActivationError",
            MockError::NotHeFriendly { .. } => "UnsupportedOpError",
            MockError::Graph(_) => {
                let MockError::Graph(g) = e else {
                    unreachable!()
                };
                return g.into();
            }
        };
        CliError::module(kind, e.to_string())
    }
}

impl From<PlanViolation> for CliError {
    fn from(e: PlanViolation) -> Self {
        let kind = match &e {
            PlanViolation::OverBudget { .. } => "LevelOverflowError",
            PlanViolation::LevelMismatch { .. } | PlanViolation::TileMismatch { .. } => {
                "JoinMismatchError"
            }
            PlanViolation::DownwardRescale { .. } => "InvalidRescaleError",
            PlanViolation::Counters(_) | PlanViolation::Trace(_) => "PlanViolationError",
            PlanViolation::Plan(_) => {
                let PlanViolation::Plan(p) = e else {
                    unreachable!()
                };
                return p.into();
            }
        };
        CliError::module(kind, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config("ConfigError", e.to_string())
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::config("ContainerError", e.to_string())
    }
}
