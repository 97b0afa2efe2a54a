//! Flat `key=value` configuration shared by the model sidecar files and the
//! command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampling::Strategy;

/// A value that can be written to and read from a config line.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! fromstr_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

fromstr_value!(usize, u64, f64, String, Strategy, crate::generator::ModelSize, crate::rl::Algo);

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "1" | "yes" | "on" => Some(true),
            "false" | "0" | "no" | "off" => Some(false),
            _ => None,
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl<V: ConfigValue> ConfigValue for Option<V> {
    fn parse_value(s: &str) -> Option<Self> {
        if s == "none" || s.is_empty() {
            Some(None)
        } else {
            V::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        match self {
            Some(v) => v.render(),
            None => "none".into(),
        }
    }
}

/// Comma-separated list.
impl<V: ConfigValue> ConfigValue for Vec<V> {
    fn parse_value(s: &str) -> Option<Self> {
        if s.is_empty() {
            return Some(Vec::new());
        }
        s.split(',').map(|p| V::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(ConfigValue::render).collect::<Vec<_>>().join(",")
    }
}

pub fn parse_value<V: ConfigValue>(key: &str, value: &str) -> Result<V> {
    V::parse_value(value.trim()).ok_or_else(|| Error::Config(format!("bad value `{value}` for `{key}`")))
}

/// Struct whose fields are addressable by name.
pub trait KvConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in map {
            self.set(k, v)?;
        }
        Ok(())
    }

    fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

#[macro_export]
macro_rules! kv_config {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::KvConfig for $ty {
            fn set(&mut self, key: &str, value: &str) -> $crate::Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::config::parse_value(key, value)?;
                        Ok(())
                    })*
                    _ => Err($crate::Error::Config(format!("unknown key `{key}`"))),
                }
            }
            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), $crate::config::ConfigValue::render(&self.$field))),*]
            }
        }
    };
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_kv_text(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_kv_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_kv_text(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq)]
    struct Demo {
        a: usize,
        b: f64,
        c: bool,
        d: Option<u64>,
        e: Vec<String>,
    }
    kv_config!(Demo { a, b, c, d, e });

    #[test]
    fn round_trip() {
        let mut x = Demo::default();
        x.set("a", "3").unwrap();
        x.set("b", "0.5").unwrap();
        x.set("c", "true").unwrap();
        x.set("d", "7").unwrap();
        x.set("e", "AABB,ABAB").unwrap();
        let mut y = Demo::default();
        y.apply(&parse_kv_text(&x.to_text(), "t").unwrap()).unwrap();
        assert_eq!(x, y);
        assert!(x.set("zzz", "1").is_err());
        assert!(x.set("a", "-1").is_err());
    }
}
