use crate::network::{Channel, LinkId, NodeId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("topology is disconnected: node {0} unreachable from node 0")]
    Disconnected(usize),
    #[error("node {0:?} does not exist")]
    UnknownNode(NodeId),
    #[error("source and destination are both {0:?}")]
    SameEndpoints(NodeId),
    #[error("no path from {0:?} to {1:?}")]
    Unreachable(NodeId, NodeId),
    #[error("link {0:?} is not a MUX link")]
    NotMux(LinkId),
    #[error("link {0:?} does not exist")]
    UnknownLink(LinkId),
    #[error("channel {1:?} on link {0:?}: {2}")]
    Channel(LinkId, Channel, &'static str),
    #[error("no available channel on link {0:?}")]
    NoAvailableChannel(LinkId),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("feature schema mismatch: {0}")]
    Schema(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] nsca_gbdt::GbdtError),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
