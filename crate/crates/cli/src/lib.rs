pub mod commands;
pub mod config;

/// Parse a command-line value through the type's serde names, so flags and
/// config files accept the same spellings.
pub fn parse_named<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}
