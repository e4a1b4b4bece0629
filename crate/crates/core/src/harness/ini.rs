//! Strict INI reader: `[section]` headers, `key = value` lines, `#` or `;`
//! comments. Keys outside a section, duplicate sections and duplicate keys
//! are errors.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::new();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| Error::Config(format!("line {line_no}: malformed section header `{line}`")))?;
                if ini.sections.contains_key(name) {
                    return Err(Error::Config(format!("line {line_no}: duplicate section [{name}]")));
                }
                ini.sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), strip_comment(value).trim());
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| Error::Config(format!("line {line_no}: key `{key}` outside any section")))?;
            let entries = ini.sections.get_mut(section).expect("section exists");
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{section}.{key}`")));
            }
        }
        Ok(ini)
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn keys(&self, section: &str) -> impl Iterator<Item = &str> {
        self.sections
            .get(section)
            .into_iter()
            .flat_map(|s| s.keys().map(String::as_str))
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl fmt::Display) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }
}

// trailing comments need whitespace before the marker so values may contain '#'
fn strip_comment(value: &str) -> &str {
    let bytes = value.as_bytes();
    for i in 1..bytes.len() {
        if (bytes[i] == b'#' || bytes[i] == b';') && bytes[i - 1].is_ascii_whitespace() {
            return &value[..i];
        }
    }
    value
}

impl fmt::Display for Ini {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, entries) in &self.sections {
            if !first {
                writeln!(f)?;
            }
            first = false;
            writeln!(f, "[{name}]")?;
            for (k, v) in entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_sections_and_comments() {
        let ini = Ini::parse("# top\n[a]\nx = 1 # trailing\ny=two\n\n; note\n[b]\nz = a#b\n").unwrap();
        assert_eq!(ini.get("a", "x"), Some("1"));
        assert_eq!(ini.get("a", "y"), Some("two"));
        assert_eq!(ini.get("b", "z"), Some("a#b"));
        assert_eq!(ini.get("b", "x"), None);
        assert_eq!(ini.sections().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in ["x = 1\n", "[a]\nx = 1\nx = 2\n", "[a]\n[a]\n", "[a]\nnovalue\n", "[a\n", "[]\n", "[a]\n= 3\n"] {
            let err = Ini::parse(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad:?}");
        }
        let err = Ini::parse("[a]\nx = 1\nx = 2\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("a.x"), "{err}");
    }

    proptest! {
        #[test]
        fn display_roundtrips(
            entries in prop::collection::btree_map("[a-z]{1,6}", prop::collection::btree_map("[a-z_]{1,8}", "[a-z0-9.,+-]{0,10}", 0..5), 0..4)
        ) {
            let mut ini = Ini::new();
            for (s, kv) in &entries {
                ini.sections.insert(s.clone(), BTreeMap::new());
                for (k, v) in kv {
                    ini.set(s, k, v);
                }
            }
            prop_assert_eq!(Ini::parse(&ini.to_string()).unwrap(), ini);
        }
    }
}
