use std::collections::HashMap;
use std::fmt;
use std::path::Path;

/// API keys looked up by environment-variable name.
///
/// Values never appear in `Debug` output.
#[derive(Clone, Default)]
pub struct Credentials {
    values: HashMap<String, String>,
}

impl Credentials {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Process environment, overlaid on `.env` in the working directory if present.
    pub fn from_env() -> Self {
        let mut creds = Self::from_dotenv(Path::new(".env")).unwrap_or_default();
        creds.values.extend(std::env::vars());
        creds
    }

    /// Parses a dot-env file without touching the process environment.
    pub fn from_dotenv(path: &Path) -> Option<Self> {
        let iter = dotenvy::from_path_iter(path).ok()?;
        let values = iter.filter_map(Result::ok).collect();
        Some(Credentials { values })
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.values.insert(name.into(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str).filter(|v| !v.is_empty())
    }

    /// Replaces any stored secret found in `text` with `***`.
    pub fn redact(&self, text: &str) -> String {
        let mut out = text.to_owned();
        for value in self.values.values() {
            if value.len() >= 8 && out.contains(value.as_str()) {
                out = out.replace(value.as_str(), "***");
            }
        }
        out
    }
}

impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<&String> = self.values.keys().collect();
        names.sort();
        f.debug_struct("Credentials").field("names", &names).finish()
    }
}
