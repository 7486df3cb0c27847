//! Line-oriented run configuration: `[section]` headers, `key = value`
//! pairs, `#` comments.  Parsing keeps line numbers so every diagnostic can
//! point at the offending line and field.

use std::fmt;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub field: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(line: usize, field: &str, msg: impl Into<String>) -> Self {
        ConfigError { line, field: field.to_string(), msg: msg.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config field `{}`: {}", self.field, self.msg)
        } else {
            write!(f, "config line {}, field `{}`: {}", self.line, self.field, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug)]
pub struct Section {
    pub name: String,
    pub line: usize,
    entries: Vec<Entry>,
}

#[derive(Debug)]
pub struct Config {
    sections: Vec<Section>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::new(lineno, "section", "missing closing `]`"))?
                    .trim();
                if name.is_empty() {
                    return Err(ConfigError::new(lineno, "section", "empty section name"));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(ConfigError::new(lineno, name, "duplicate section"));
                }
                sections.push(Section { name: name.to_string(), line: lineno, entries: Vec::new() });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(lineno, line, "expected `key = value` or `[section]`"))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::new(lineno, "key", "empty key"));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| ConfigError::new(lineno, &key, "key appears before any [section]"))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(ConfigError::new(lineno, &key, "duplicate key in this section"));
            }
            section.entries.push(Entry { key, value, line: lineno });
        }
        Ok(Config { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section, ConfigError> {
        self.section(name)
            .ok_or_else(|| ConfigError::new(0, name, format!("missing required section [{name}]")))
    }
}

impl Section {
    fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn field(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.entry(key)
            .map(|e| e.value.as_str())
            .ok_or_else(|| ConfigError::new(self.line, &self.field(key), "missing required key"))
    }

    fn parse_with<T, F>(&self, key: &str, parse: F) -> Result<Option<T>, ConfigError>
    where
        F: Fn(&str) -> Result<T, String>,
    {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => parse(&e.value)
                .map(Some)
                .map_err(|msg| ConfigError::new(e.line, &self.field(key), msg)),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self
            .parse_with(key, |v| v.parse::<f64>().map_err(|e| e.to_string()))?
            .unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self
            .parse_with(key, |v| v.parse::<usize>().map_err(|e| e.to_string()))?
            .unwrap_or(default))
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse_with(key, |v| v.parse::<u64>().map_err(|e| e.to_string()))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, |v| v.parse::<f64>().map_err(|e| e.to_string()))
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse_with(key, |v| v.parse::<usize>().map_err(|e| e.to_string()))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self
            .parse_with(key, |v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(format!("expected true/false, got `{other}`")),
            })?
            .unwrap_or(default))
    }

    /// Comma-separated positive integers, e.g. `2,4,8,16`.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        Ok(self
            .parse_with(key, |v| {
                v.split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|e| e.to_string()))
                    .collect::<Result<Vec<_>, _>>()
            })?
            .unwrap_or_else(|| default.to_vec()))
    }

    /// A grid of scalars: either `lo:hi:count` (evenly spaced, count ≥ 2 or
    /// lo = hi) or an explicit comma list `a,b,c`.
    pub fn scalar_grid(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.parse_with(key, |v| {
            if v.contains(':') {
                let parts: Vec<&str> = v.split(':').collect();
                if parts.len() != 3 {
                    return Err("range needs the form lo:hi:count".to_string());
                }
                let lo: f64 = parts[0].trim().parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
                let hi: f64 = parts[1].trim().parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
                let count: usize = parts[2].trim().parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
                if count == 0 {
                    return Err("count must be positive".to_string());
                }
                if count == 1 {
                    if (lo - hi).abs() > 0.0 {
                        return Err("count 1 needs lo = hi".to_string());
                    }
                    return Ok(vec![lo]);
                }
                Ok((0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect())
            } else {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
                    .collect::<Result<Vec<_>, _>>()
            }
        })
    }

    /// A grid of vectors: scalars as in `scalar_grid`, or semicolon-joined
    /// components per point, e.g. `0;0, 1;0.5`.
    pub fn vector_grid(&self, key: &str, dim: usize) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
        if let Some(raw) = self.get(key) {
            if raw.contains(';') {
                return self.parse_with(key, |v| {
                    v.split(',')
                        .map(|pt| {
                            let comps = pt
                                .split(';')
                                .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
                                .collect::<Result<Vec<_>, _>>()?;
                            if comps.len() != dim {
                                return Err(format!(
                                    "point `{}` has {} components, expected {dim}",
                                    pt.trim(),
                                    comps.len()
                                ));
                            }
                            Ok(comps)
                        })
                        .collect::<Result<Vec<_>, _>>()
                });
            }
        }
        match self.scalar_grid(key)? {
            None => Ok(None),
            Some(scalars) => {
                if dim != 1 {
                    let e = self.entry(key).unwrap();
                    return Err(ConfigError::new(
                        e.line,
                        &self.field(key),
                        format!("dimension is {dim}; use semicolon-joined components per point"),
                    ));
                }
                Ok(Some(scalars.into_iter().map(|v| vec![v]).collect()))
            }
        }
    }
}
