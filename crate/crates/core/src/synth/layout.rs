//! Electrode layouts: channel names with 2D scalp coordinates on the unit
//! disc.
//!
//! Text format, one electrode per line:
//!
//! ```text
//! # comment
//! CZ 0.0 0.0
//! ```

use std::path::Path;

use crate::error::{Error, Result};

/// Bundled 30-channel 10-20 montage.
pub const DEFAULT_LAYOUT: &str = include_str!("../../data/layout_30.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    electrodes: Vec<Electrode>,
}

impl ElectrodeLayout {
    /// Validate names and coordinates. Points on the rim count as inside.
    pub fn new(electrodes: Vec<Electrode>) -> Result<Self> {
        for (i, e) in electrodes.iter().enumerate() {
            if !(e.x.is_finite() && e.y.is_finite()) || e.x * e.x + e.y * e.y > 1.0 + 1e-12 {
                return Err(Error::OutOfDisc {
                    path: "<layout>".into(),
                    line: i + 1,
                    name: e.name.clone(),
                    x: e.x,
                    y: e.y,
                });
            }
            for prev in &electrodes[..i] {
                if prev.name.eq_ignore_ascii_case(&e.name) {
                    return Err(Error::InvalidArgument(format!(
                        "electrode name {} appears twice",
                        e.name
                    )));
                }
                if prev.x == e.x && prev.y == e.y {
                    return Err(Error::DuplicateCoordinate {
                        first: prev.name.clone(),
                        second: e.name.clone(),
                    });
                }
            }
        }
        Ok(ElectrodeLayout { electrodes })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut electrodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let malformed = |detail: String| Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("line {}: {detail}", lineno + 1),
            };
            if fields.len() != 3 {
                return Err(malformed(format!("expected `NAME x y`, got {line:?}")));
            }
            let coord = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| malformed(format!("bad coordinate {s:?}")))
            };
            let (x, y) = (coord(fields[1])?, coord(fields[2])?);
            if !(x.is_finite() && y.is_finite()) || x * x + y * y > 1.0 + 1e-12 {
                return Err(Error::OutOfDisc {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    name: fields[0].to_string(),
                    x,
                    y,
                });
            }
            electrodes.push(Electrode {
                name: fields[0].to_string(),
                x,
                y,
            });
        }
        if electrodes.is_empty() {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: "layout has no electrodes".into(),
            });
        }
        ElectrodeLayout::new(electrodes)
    }

    pub fn default_30() -> Self {
        ElectrodeLayout::parse(DEFAULT_LAYOUT, Path::new("<bundled layout>"))
            .expect("bundled layout is valid")
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.electrodes
            .iter()
            .position(|e| e.name.eq_ignore_ascii_case(name))
    }

    /// Keep the named electrodes, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let picked = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.electrodes[i].clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("electrode {n} not in layout")))
            })
            .collect::<Result<Vec<_>>>()?;
        ElectrodeLayout::new(picked)
    }
}

pub fn load_layout(path: &Path) -> Result<ElectrodeLayout> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ElectrodeLayout::parse(&text, path)
}
