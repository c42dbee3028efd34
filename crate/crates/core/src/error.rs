use thiserror::Error;

/// Problems found while loading or validating a scenario.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("malformed scenario XML: {0}")]
    Parse(String),
    #[error("invalid <{element}>: {message}")]
    Invalid { element: String, message: String },
}

impl ConfigError {
    pub fn invalid(element: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            element: element.into(),
            message: message.into(),
        }
    }

    /// Name of the element the error refers to, if any.
    pub fn element(&self) -> Option<&str> {
        match self {
            Self::Parse(_) => None,
            Self::Invalid { element, .. } => Some(element),
        }
    }
}
