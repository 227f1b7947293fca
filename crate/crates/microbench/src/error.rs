use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum MicrobenchError {
    #[error("workload needs at least one iteration")]
    ZeroIterations,
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("kernel checksum {actual} does not match expected {expected}; the kernel was elided or miscompiled")]
    KernelCorrupted { expected: String, actual: String },
    #[error("{jobs} jobs exceed {tasks} task units")]
    JobsExceedTasks { jobs: usize, tasks: usize },
    #[error("could not allocate {bytes} bytes")]
    AllocationFailure { bytes: usize },
    #[error("buffer of {bytes} bytes is below 1 MiB or not a multiple of {element} bytes")]
    BufferTooSmall { bytes: usize, element: usize },
    #[error("invalid workload: {0}")]
    Spec(String),
    #[error("I/O error on {}: {source} (os error {})", path.display(), source.raw_os_error().unwrap_or(0))]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not enough free space in {} for {needed} bytes", path.display())]
    InsufficientSpace { path: PathBuf, needed: u64 },
    #[error("file name generator produced '{0}' twice")]
    NameCollision(String),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot connect to {addr}: {source}")]
    ConnectFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("session aborted: {0}")]
    SessionAborted(String),
}

pub type Result<T> = std::result::Result<T, MicrobenchError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> MicrobenchError {
    let path = path.into();
    move |source| {
        if source.kind() == io::ErrorKind::StorageFull {
            MicrobenchError::InsufficientSpace { path, needed: 0 }
        } else {
            MicrobenchError::Io { path, source }
        }
    }
}
