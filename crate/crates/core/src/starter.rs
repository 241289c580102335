//! Committed text fixtures: the starter structure and the default palette.

use std::sync::OnceLock;

use thiserror::Error;

use crate::types::{CellPos, Color, SizeClass};

const STARTER_TABLE: &str = include_str!("../fixtures/starter_table.txt");
const PALETTE: &str = include_str!("../fixtures/palette.txt");

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {detail}")]
pub struct FixtureError {
    pub line: usize,
    pub detail: String,
}

/// One entry of the starter template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateBlock {
    pub pos: CellPos,
    pub size: SizeClass,
    pub color: Color,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn channel(line: usize, s: &str) -> Result<u8, FixtureError> {
    s.parse().map_err(|_| FixtureError { line, detail: format!("bad color channel {s:?}") })
}

/// Parses `pos.x pos.y pos.z size r g b` lines.
pub fn parse_template(text: &str) -> Result<Vec<TemplateBlock>, FixtureError> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(FixtureError { line, detail: format!("expected 7 fields, got {}", f.len()) });
            }
            let coord = |s: &str| {
                s.parse::<i64>()
                    .map_err(|_| FixtureError { line, detail: format!("bad coordinate {s:?}") })
            };
            Ok(TemplateBlock {
                pos: CellPos::new(coord(f[0])?, coord(f[1])?, coord(f[2])?),
                size: f[3].parse().map_err(|detail| FixtureError { line, detail })?,
                color: Color::new(channel(line, f[4])?, channel(line, f[5])?, channel(line, f[6])?),
            })
        })
        .collect()
}

/// Parses `r g b` lines.
pub fn parse_palette(text: &str) -> Result<Vec<Color>, FixtureError> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 3 {
                return Err(FixtureError { line, detail: format!("expected 3 fields, got {}", f.len()) });
            }
            Ok(Color::new(channel(line, f[0])?, channel(line, f[1])?, channel(line, f[2])?))
        })
        .collect()
}

/// The committed starter structure: an incomplete table.
pub fn starter_template() -> &'static [TemplateBlock] {
    static CELL: OnceLock<Vec<TemplateBlock>> = OnceLock::new();
    CELL.get_or_init(|| parse_template(STARTER_TABLE).expect("committed starter fixture parses"))
}

/// The committed default-color palette.
pub fn palette() -> &'static [Color] {
    static CELL: OnceLock<Vec<Color>> = OnceLock::new();
    CELL.get_or_init(|| parse_palette(PALETTE).expect("committed palette fixture parses"))
}
