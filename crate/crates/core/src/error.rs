use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: element count {expected} does not match shape {shape:?}")]
    Count {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("{perm:?} is not a permutation of {rank} axes")]
    Permutation { perm: Vec<usize>, rank: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("token length {got} does not match n_max {expected}")]
    TokenLength { got: usize, expected: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid timestep: {0}")]
    Timestep(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("masked frame {0} has no conditioning image")]
    MissingImage(usize),
    #[error("no start position keeps the trajectory inside the frame: {0}")]
    Trajectory(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("analysis: {0}")]
    Analysis(String),
}
