use thiserror::Error;

use crate::optim::AdvantageKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("no start/goal pair has shortest-path length in [{lo}, {hi}]")]
    InfeasibleLengthRange { lo: f64, hi: f64 },

    #[error("action targeting node {target} is not available at node {node}")]
    InvalidAction { node: usize, target: usize },

    #[error("group advantages are {found:?} but the objective expects {expected:?}")]
    AdvantageMismatch {
        expected: AdvantageKind,
        found: Option<AdvantageKind>,
    },

    #[error("a group needs at least two trajectories, got {0}")]
    GroupTooSmall(usize),

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("unknown graph id {0}")]
    UnknownGraph(usize),

    #[error("unknown episode id {0}")]
    UnknownEpisode(usize),

    #[error("no evaluation rows")]
    EmptyRows,

    #[error("unsupported document version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
