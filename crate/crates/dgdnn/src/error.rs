use std::path::{Path, PathBuf};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input not found: {}", .0.display())]
    InputNotFound(PathBuf),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("incompatible inputs: {0}")]
    Compatibility(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dgdnn_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for anything the caller can fix by changing arguments or inputs,
    /// 1 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InputNotFound(_)
            | CliError::Parse { .. }
            | CliError::Alignment(_)
            | CliError::Compatibility(_)
            | CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                dgdnn_core::Error::Dimension { .. }
                | dgdnn_core::Error::Range { .. }
                | dgdnn_core::Error::Validation { .. } => 2,
                dgdnn_core::Error::NonFinite { .. } | dgdnn_core::Error::Evaluation(_) => 1,
            },
            CliError::Io { .. } | CliError::Runtime(_) => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::InputNotFound(path.to_path_buf())
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
