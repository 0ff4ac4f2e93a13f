//! Engine configuration and its flat `key = value` file format.

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Parameters of one simulated execution. Immutable once a machine is built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EngineConfig {
    /// Enables LAR/mask/SCAR commit-time checks and the LAR store trap.
    pub extensions_enabled: bool,
    /// Track write-set membership per word for subscription-mode checks.
    pub word_bits: bool,
    /// Abort when a transaction fetches an instruction it has itself written.
    pub fetch_own_write_aborts: bool,
    /// Treat nontransactional stores issued inside a transaction as transactional.
    pub all_stores_transactional: bool,
    pub tx_length_bound: u64,
    pub max_slots: usize,
    pub line_words: u64,
    pub memory_size: u64,
    pub nt_wait_spins: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            extensions_enabled: false,
            word_bits: false,
            fetch_own_write_aborts: true,
            all_stores_transactional: false,
            tx_length_bound: 10_000,
            max_slots: 4,
            line_words: 8,
            memory_size: 65_536,
            nt_wait_spins: 100,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "extensions_enabled",
    "word_bits",
    "fetch_own_write_aborts",
    "all_stores_transactional",
    "tx_length_bound",
    "max_slots",
    "line_words",
    "memory_size",
    "nt_wait_spins",
];

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

/// Splits `key = value` text into trimmed pairs, checking each key and value
/// against a default config so errors surface with their line.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut probe = EngineConfig::default();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: idx + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        probe.set(key, value)?;
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    let cleaned = value.replace('_', "");
    let parsed = if let Some(hex) = cleaned.strip_prefix("0x") {
        u64::from_str_radix(hex, 16)
    } else {
        cleaned.parse()
    };
    parsed.map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl EngineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "extensions_enabled" => self.extensions_enabled = parse_bool(key, value)?,
            "word_bits" => self.word_bits = parse_bool(key, value)?,
            "fetch_own_write_aborts" => self.fetch_own_write_aborts = parse_bool(key, value)?,
            "all_stores_transactional" => {
                self.all_stores_transactional = parse_bool(key, value)?
            }
            "tx_length_bound" => self.tx_length_bound = parse_u64(key, value)?,
            "max_slots" => self.max_slots = parse_u64(key, value)? as usize,
            "line_words" => self.line_words = parse_u64(key, value)?,
            "memory_size" => self.memory_size = parse_u64(key, value)?,
            "nt_wait_spins" => self.nt_wait_spins = parse_u64(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.line_words == 0 {
            return Err(ConfigError::Invalid("line_words must be at least 1".into()));
        }
        if self.memory_size == 0 || self.memory_size > (1 << 32) {
            return Err(ConfigError::Invalid(
                "memory_size must be in 1..=2^32 words".into(),
            ));
        }
        Ok(())
    }

    /// Parses a flat `key = value` text. Blank lines and `#` comments are ignored;
    /// keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_pairs(text)? {
            self.set(&key, &value)?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// 64-bit FNV-1a over the canonical text rendering; stamped into traces.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::Hasher;
        let mut hasher = fnv::FnvHasher::default();
        hasher.write(self.to_string().as_bytes());
        hasher.finish()
    }
}

impl fmt::Display for EngineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "extensions_enabled = {}", self.extensions_enabled)?;
        writeln!(f, "word_bits = {}", self.word_bits)?;
        writeln!(f, "fetch_own_write_aborts = {}", self.fetch_own_write_aborts)?;
        writeln!(f, "all_stores_transactional = {}", self.all_stores_transactional)?;
        writeln!(f, "tx_length_bound = {}", self.tx_length_bound)?;
        writeln!(f, "max_slots = {}", self.max_slots)?;
        writeln!(f, "line_words = {}", self.line_words)?;
        writeln!(f, "memory_size = {}", self.memory_size)?;
        writeln!(f, "nt_wait_spins = {}", self.nt_wait_spins)
    }
}
