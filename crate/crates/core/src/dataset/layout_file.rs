//! Layout plane lists: one `role nx ny nz offset` line per plane.
//!
//! The first `base` line is the base plane; any further `base` lines are
//! additional base-parallel layout planes (e.g. the ceiling above a floor).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::PlaneHypothesis;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayoutPlanes {
    pub base: Option<PlaneHypothesis>,
    pub parallel: Vec<PlaneHypothesis>,
    pub walls: Vec<PlaneHypothesis>,
}

impl LayoutPlanes {
    /// All planes: base first, then parallel planes, then walls.
    pub fn all(&self) -> Vec<PlaneHypothesis> {
        self.base
            .iter()
            .chain(&self.parallel)
            .chain(&self.walls)
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.base.iter().count() + self.parallel.len() + self.walls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn push_line(out: &mut String, role: &str, p: &PlaneHypothesis) {
    let n = p.normal();
    let _ = writeln!(out, "{role} {} {} {} {}", n.x, n.y, n.z, p.offset());
}

pub fn format_layout(layout: &LayoutPlanes) -> String {
    let mut out = String::new();
    for p in layout.base.iter().chain(&layout.parallel) {
        push_line(&mut out, "base", p);
    }
    for p in &layout.walls {
        push_line(&mut out, "wall", p);
    }
    out
}

pub fn write_layout(layout: &LayoutPlanes, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_layout(layout)).map_err(|e| Error::io(path, e))
}

pub fn read_layout(path: impl AsRef<Path>) -> Result<LayoutPlanes> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_layout(&text, path)
}

pub(crate) fn parse_layout(text: &str, path: &Path) -> Result<LayoutPlanes> {
    let mut layout = LayoutPlanes::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(Error::parse(path, lineno, format!("expected 5 fields, found {}", tokens.len())));
        }
        let mut v = [0.0; 4];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number '{tok}'")))?;
        }
        let plane = PlaneHypothesis::from_unit_normal(Vector3::new(v[0], v[1], v[2]), v[3])
            .ok_or_else(|| Error::parse(path, lineno, "degenerate plane normal"))?;
        match tokens[0] {
            "base" if layout.base.is_none() => layout.base = Some(plane),
            "base" => layout.parallel.push(plane),
            "wall" => layout.walls.push(plane),
            other => return Err(Error::parse(path, lineno, format!("unknown role '{other}'"))),
        }
    }
    Ok(layout)
}
