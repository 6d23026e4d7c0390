//! Flat `key = value` configuration text and `--key=value` overrides.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! List values are comma separated.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `(key, value)` pairs with unique keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let key = key.trim();
            if kv.get(key).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            kv.set(key, value.trim())?;
        }
        Ok(kv)
    }

    /// Parses one `--key=value` command-line override.
    pub fn parse_override(arg: &str) -> Result<(String, String)> {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::config(format!("override `{arg}` must look like --key=value")))?;
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{arg}` must look like --key=value")))?;
        Ok((key.trim().to_string(), value.trim().to_string()))
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty() || key.chars().any(|c| !(c.is_ascii_alphanumeric() || c == '_')) {
            return Err(Error::config(format!("invalid key `{key}`")));
        }
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.to_string(),
            None => self.entries.push((key.to_string(), value.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Renders as parseable text, one pair per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{value}`")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(Error::config(format!("`{key}`: expected true or false, got `{other}`"))),
    }
}

/// Comma-separated list, optionally of a fixed length.
pub fn parse_list<T: FromStr>(key: &str, value: &str, len: Option<usize>) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(|s| parse_value(key, s))
        .collect::<Result<Vec<T>>>()?;
    match len {
        Some(n) if items.len() != n => Err(Error::config(format!(
            "`{key}`: expected {n} comma-separated values, got {}",
            items.len()
        ))),
        _ => Ok(items),
    }
}

pub fn parse_array<T: FromStr + Copy + Default, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items = parse_list::<T>(key, value, Some(N))?;
    let mut out = [T::default(); N];
    out.copy_from_slice(&items);
    Ok(out)
}

pub fn format_list<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_whitespace() {
        let kv = KeyValues::parse("# run\n\nmode = photometric  # inline\n seed=3\nlist = 1, 2,3\n").unwrap();
        assert_eq!(kv.get("mode"), Some("photometric"));
        assert_eq!(kv.get("seed"), Some("3"));
        assert_eq!(parse_list::<u32>("list", kv.get("list").unwrap(), Some(3)).unwrap(), vec![1, 2, 3]);
        assert_eq!(kv.len(), 3);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(KeyValues::parse("a = 1\na = 2\n").is_err());
        assert!(KeyValues::parse("bad key = 1\n").is_err());
        assert!(KeyValues::parse_override("seed=3").is_err());
        assert!(KeyValues::parse_override("--seed").is_err());
        assert!(parse_bool("x", "maybe").is_err());
        assert!(parse_list::<f64>("x", "1,2", Some(3)).is_err());
        assert!(parse_value::<usize>("x", "-1").is_err());
    }

    #[test]
    fn overrides_replace_in_place() {
        let mut kv = KeyValues::parse("a = 1\nb = 2\n").unwrap();
        let (k, v) = KeyValues::parse_override("--a=7").unwrap();
        kv.set(&k, &v).unwrap();
        assert_eq!(kv.to_text(), "a = 7\nb = 2\n");
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn arrays_have_fixed_length() {
        let a: [f64; 3] = parse_array("bg", "1,0.5,0").unwrap();
        assert_eq!(a, [1.0, 0.5, 0.0]);
        assert_eq!(format_list(&a), "1,0.5,0");
        assert!(parse_array::<f64, 2>("bg", "1,2,3").is_err());
    }
}
