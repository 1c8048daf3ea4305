use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown attribute kind {0:?} (expected \"ip\" or \"domain\")")]
    UnknownAttributeKind(String),

    #[error("invalid IPv4 address {0:?}")]
    InvalidIp(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no attribute kinds requested")]
    NoAttributeKinds,

    #[error("device {0:?} is already present in the graph")]
    DuplicateDevice(String),

    #[error("unknown device {0:?}")]
    UnknownDevice(String),

    #[error("device {0:?} has no neighbors and cannot be linked")]
    UnlinkableDevice(String),

    #[error("empty threshold set: no labeled pair is ranked in its partner's candidate list")]
    EmptyThresholdSet,

    #[error("similarity graphs cover different device sets")]
    DeviceSetMismatch,

    #[error("cannot place {requested} new edges, only {available} device-attribute pairs are free")]
    GraphTooDense { requested: usize, available: usize },

    #[error("device type {0:?} has a single device, visits cannot be redistributed")]
    LoneDeviceType(String),

    #[error("confusion matrix is all zero")]
    EmptyConfusion,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
