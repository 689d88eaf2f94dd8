//! Preset files.
//!
//! A preset is a small TOML document:
//!
//! ```toml
//! format_version = 1
//! tier = "t28"
//!
//! [params]
//! osc_mix_saw = 0.8
//! # ... one entry per free parameter, canonical order
//!
//! [metadata]          # optional
//! loss = 0.0123
//! description = "round-trip demo"
//! ```
//!
//! Values are physical units. Unknown keys anywhere are rejected.

use std::fmt::Write as _;
use std::path::Path;

use super::{Patch, Tier};
use crate::error::{Error, Result};

pub const PRESET_FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PresetMetadata {
    pub loss: Option<f64>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub patch: Patch,
    pub metadata: PresetMetadata,
}

impl Preset {
    pub fn new(patch: Patch) -> Self {
        Preset {
            patch,
            metadata: PresetMetadata::default(),
        }
    }

    pub fn with_loss(mut self, loss: f64) -> Self {
        self.metadata.loss = Some(loss);
        self
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.metadata.description = Some(text.into());
        self
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format_version = {PRESET_FORMAT_VERSION}");
        let _ = writeln!(out, "tier = \"{}\"", self.patch.tier().label());
        out.push_str("\n[params]\n");
        for (id, v) in self.patch.iter() {
            // `{:?}` is the shortest representation that parses back exactly.
            let _ = writeln!(out, "{} = {:?}", id.name(), v);
        }
        if self.metadata != PresetMetadata::default() {
            out.push_str("\n[metadata]\n");
            if let Some(loss) = self.metadata.loss {
                let _ = writeln!(out, "loss = {loss:?}");
            }
            if let Some(d) = &self.metadata.description {
                let _ = writeln!(out, "description = {}", toml::Value::String(d.clone()));
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_preset(&text)
    }
}

pub fn save_preset(patch: &Patch, path: impl AsRef<Path>) -> Result<()> {
    Preset::new(patch.clone()).save(path)
}

pub fn load_preset(path: impl AsRef<Path>) -> Result<Patch> {
    Preset::load(path).map(|p| p.patch)
}

fn as_number(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

pub fn parse_preset(text: &str) -> Result<Preset> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::PresetSyntax(e.message().to_string()))?;

    for key in table.keys() {
        if !matches!(key.as_str(), "format_version" | "tier" | "params" | "metadata") {
            return Err(Error::PresetUnknownKey(key.clone()));
        }
    }

    let version = table
        .get("format_version")
        .ok_or_else(|| Error::PresetMissingField("format_version".into()))?
        .as_integer()
        .ok_or_else(|| Error::PresetSyntax("format_version must be an integer".into()))?;
    if version != PRESET_FORMAT_VERSION {
        return Err(Error::PresetVersion {
            found: version,
            expected: PRESET_FORMAT_VERSION,
        });
    }

    let tier = table
        .get("tier")
        .ok_or_else(|| Error::PresetMissingField("tier".into()))?
        .as_str()
        .ok_or_else(|| Error::PresetSyntax("tier must be a string".into()))?;
    let tier = Tier::from_label(tier)?;

    let params = table
        .get("params")
        .ok_or_else(|| Error::PresetMissingField("params".into()))?
        .as_table()
        .ok_or_else(|| Error::PresetSyntax("params must be a table".into()))?;
    for key in params.keys() {
        if !tier.params().iter().any(|p| p.name() == key) {
            return Err(Error::PresetUnknownKey(format!("params.{key}")));
        }
    }
    let mut values = Vec::with_capacity(tier.dimension());
    for id in tier.params() {
        let v = params
            .get(id.name())
            .ok_or_else(|| Error::PresetMissingField(id.name().to_string()))?;
        let v = as_number(v)
            .ok_or_else(|| Error::PresetSyntax(format!("{} must be a number", id.name())))?;
        values.push(v);
    }
    let patch = Patch::from_values(tier, values)
        .map_err(|e| Error::PresetSyntax(e.to_string()))?;

    let mut metadata = PresetMetadata::default();
    if let Some(meta) = table.get("metadata") {
        let meta = meta
            .as_table()
            .ok_or_else(|| Error::PresetSyntax("metadata must be a table".into()))?;
        for (key, v) in meta {
            match key.as_str() {
                "loss" => {
                    metadata.loss = Some(as_number(v).ok_or_else(|| {
                        Error::PresetSyntax("metadata.loss must be a number".into())
                    })?)
                }
                "description" => {
                    metadata.description = Some(
                        v.as_str()
                            .ok_or_else(|| {
                                Error::PresetSyntax("metadata.description must be a string".into())
                            })?
                            .to_string(),
                    )
                }
                other => return Err(Error::PresetUnknownKey(format!("metadata.{other}"))),
            }
        }
    }

    Ok(Preset { patch, metadata })
}
