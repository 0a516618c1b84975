#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty evaluation set")]
    EmptyManifest,
    #[error("McNemar test undefined: no discordant pairs")]
    NotApplicable,
    #[error("non-finite loss at epoch {epoch}, step {step}: l_cls={l_cls}, l_av={l_av}, tau={tau}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        l_cls: f64,
        l_av: f64,
        tau: f64,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("grid key `{0}` is not sweepable")]
    GridKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Core(#[from] colors_core::Error),
    #[error(transparent)]
    Data(#[from] colors_data::DataError),
}

pub type Result<T> = std::result::Result<T, CliError>;
