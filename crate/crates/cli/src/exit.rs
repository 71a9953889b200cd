use spatiospatial::Error;

pub const OK: i32 = 0;
pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const RUNTIME: i32 = 3;
pub const GEOMETRY: i32 = 4;
pub const ARCH_MISMATCH: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("architecture mismatch: checkpoint holds {found}, requested {requested}")]
    ArchitectureMismatch { found: String, requested: String },
}

fn library_code(e: &Error) -> i32 {
    match e.root() {
        Error::Parameter(_) => USAGE,
        Error::InvalidGeometry(_) => GEOMETRY,
        Error::Format { .. } | Error::Io { .. } | Error::Split(_) | Error::Shape(_) | Error::Surgery { .. } | Error::Json(_) => {
            DATA
        }
        Error::Numeric(_) | Error::DegenerateStatistics(_) | Error::Contract(_) | Error::Fold { .. } => RUNTIME,
    }
}

/// Exit code of the first recognised error in the chain.
pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return match c {
                CliError::Usage(_) => USAGE,
                CliError::ArchitectureMismatch { .. } => ARCH_MISMATCH,
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return DATA;
        }
    }
    RUNTIME
}
