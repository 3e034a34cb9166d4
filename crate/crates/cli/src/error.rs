use hsrl_core::checkpoint::CheckpointError;
use hsrl_core::env::EnvError;
use hsrl_core::hpn::HpnError;
use hsrl_core::mlc::MlcError;
use hsrl_core::numerics::NumericsError;
use hsrl_core::tokenizer::TokenizerError;
use hsrl_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::InvalidVocab(_) | TokenizerError::VocabularyTooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Numerics(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<HpnError> for CliError {
    fn from(e: HpnError) -> Self {
        match e {
            HpnError::Numerics(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MlcError> for CliError {
    fn from(e: MlcError) -> Self {
        match e {
            MlcError::Numerics(_) => CliError::Numeric(e.to_string()),
            MlcError::Contract(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite(_) => CliError::Numeric(e.to_string()),
            TrainError::Numerics(n) => n.into(),
            TrainError::Policy(p) => p.into(),
            TrainError::Critic(c) => c.into(),
            TrainError::Env(v) => v.into(),
            TrainError::Checkpoint(c) => c.into(),
        }
    }
}
