use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tuner::TraceEntry;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("base MVA must be positive and finite, got {0}")]
    InvalidBase(f64),
    #[error("case has no buses")]
    Empty,
    #[error("bus {0} is defined more than once")]
    DuplicateBus(u32),
    #[error("bus {bus} has invalid load {value}")]
    InvalidLoad { bus: u32, value: f64 },
    #[error("{referenced_by} references undefined bus {id}")]
    UndefinedBus { id: u32, referenced_by: &'static str },
    #[error("line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: u32 },
    #[error("line {line} has nonpositive reactance {value}")]
    NonPositiveReactance { line: usize, value: f64 },
    #[error("line {line} has nonpositive capacity {value}")]
    NonPositiveCapacity { line: usize, value: f64 },
    #[error("generator at bus {bus} has inconsistent limits or a negative quadratic cost")]
    InvalidGenerator { bus: u32 },
    #[error("grid is disconnected; buses {unreachable:?} are unreachable from the first bus")]
    Disconnected { unreachable: Vec<u32> },
    #[error("total capacity {capacity_mw} MW is below total load {load_mw} MW")]
    InsufficientCapacity { capacity_mw: f64, load_mw: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("slack bus id {0} does not exist")]
    InvalidSlack(u32),
    #[error("reduced susceptance matrix is singular; buses {component:?} are not connected to the slack")]
    Singular { component: Vec<u32> },
    #[error("injection imbalance {imbalance} exceeds tolerance")]
    Imbalance { imbalance: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("covariance is not symmetric positive semidefinite")]
    NotPsd,
    #[error("mixture weights must be in [0, 1] and sum to 1")]
    InvalidWeights,
    #[error("uniform bounds must satisfy lower <= upper")]
    InvalidBounds,
    #[error("distribution dimension {got} does not match the {expected} uncertain buses")]
    Dimension { expected: usize, got: usize },
    #[error("at least {required} samples are required")]
    TooFewSamples { required: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReformulationError {
    #[error("total generation capacity is zero; participation factors are undefined")]
    NoCapacity,
    #[error("safety parameter must be nonnegative and finite, got {0}")]
    InvalidSafety(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("sample set is empty")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error("desired violation probability must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid tuning configuration: {0}")]
    InvalidConfig(String),
    #[error("the program is infeasible even without tightening (s = {s_min})")]
    DeterministicInfeasible { s_min: f64 },
    #[error("no feasible conservative anchor: no iterate met the violation target")]
    NoConservativeAnchor { trace: Vec<TraceEntry> },
    #[error("solver failed at s = {s}: {reason}")]
    SolverFailure { s: f64, reason: String, trace: Vec<TraceEntry> },
    #[error(transparent)]
    Reformulation(#[from] ReformulationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
