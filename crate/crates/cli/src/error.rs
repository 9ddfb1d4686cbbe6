use std::fmt;

use anchortraj::anchors::AnchorError;
use anchortraj::driftsim::DriftSimError;
use anchortraj::metrics::MetricsError;
use anchortraj::refine::RefineError;
use anchortraj::synthdb::SynthDbError;
use anchortraj::trajio::TrajIoError;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    Usage(String),
    /// The inputs were understood but could not be processed; exit code 1.
    Domain { module: &'static str, message: String, hint: Option<&'static str> },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn domain(module: &'static str, message: impl Into<String>, hint: Option<&'static str>) -> Self {
        CliError::Domain { module, message: message.into(), hint }
    }

    /// Prefixes the message with the file it concerns.
    pub fn in_file(self, path: &std::path::Path) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            CliError::Domain { module, message, hint } => {
                CliError::Domain { module, message: format!("{}: {message}", path.display()), hint }
            }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Domain { module, message, hint } => {
                write!(f, "error [{module}]: {message}")?;
                if let Some(h) = hint {
                    write!(f, "\nhint: {h}")?;
                }
                Ok(())
            }
        }
    }
}

impl From<TrajIoError> for CliError {
    fn from(e: TrajIoError) -> Self {
        let hint = match e {
            TrajIoError::Io(_) => Some("check that the path exists and is readable"),
            TrajIoError::Ply { .. } => Some("x/y/z must be float or double vertex properties"),
            TrajIoError::Parse { .. } | TrajIoError::Invariant { .. } => {
                Some("check the header lines and the column layout of the file")
            }
            TrajIoError::Json(_) => None,
        };
        CliError::domain("trajio", e.to_string(), hint)
    }
}

impl From<AnchorError> for CliError {
    fn from(e: AnchorError) -> Self {
        match e {
            AnchorError::InvalidConfig(m) => CliError::usage(format!("anchors: {m}")),
            AnchorError::Unsorted { .. } => {
                CliError::domain("anchors", e.to_string(), Some("candidate rows must be sorted by frame"))
            }
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Io(io) => io.into(),
            RefineError::NoAnchors => CliError::domain(
                "refine",
                e.to_string(),
                Some("lower --min-inlier-count / --min-inlier-ratio, or check the candidate file"),
            ),
            RefineError::CutLocus { .. } => {
                CliError::domain("refine", e.to_string(), Some("use --cut-locus split or add anchors inside the interval"))
            }
            RefineError::Gap { .. } => {
                CliError::domain("refine", e.to_string(), Some("the SLAM trajectory must contain every frame"))
            }
            other => CliError::domain("refine", other.to_string(), None),
        }
    }
}

impl From<SynthDbError> for CliError {
    fn from(e: SynthDbError) -> Self {
        match e {
            SynthDbError::InvalidConfig(m) => CliError::usage(format!("sample-db: {m}")),
            SynthDbError::Io(io) => io.into(),
            other => CliError::domain("synthdb", other.to_string(), None),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let hint = match e {
            MetricsError::FrameMismatch { .. } => Some("prediction and ground truth must cover the same frames"),
            MetricsError::ShapeMismatch(_) => Some("motion files need the same frames and joint layout"),
            MetricsError::Degenerate { .. } => None,
        };
        CliError::domain("metrics", e.to_string(), hint)
    }
}

impl From<DriftSimError> for CliError {
    fn from(e: DriftSimError) -> Self {
        match e {
            DriftSimError::InvalidConfig(m) => CliError::usage(format!("simulate: {m}")),
            DriftSimError::Anchors(a) => a.into(),
            DriftSimError::Refine(r) => r.into(),
        }
    }
}
