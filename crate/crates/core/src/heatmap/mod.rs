//! Similarity grids over (model, layer) axes, their CSV form, and SVG heatmaps.

mod csv;
mod ramp;
mod svg;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{Flags, Measure, Score};

pub use self::csv::{from_csv, to_csv};
pub use self::svg::{decode_color, ramp_color, to_svg, Annotation, ColorMap, SvgOptions};

/// One row or column of a grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AxisEntry {
    pub model: String,
    pub layer: u16,
}

impl AxisEntry {
    pub fn new(model: impl Into<String>, layer: u16) -> Self {
        AxisEntry { model: model.into(), layer }
    }

    /// Every layer of one model, in order.
    pub fn layers(model: &str, n_layers: u16) -> Vec<AxisEntry> {
        (0..n_layers).map(|l| AxisEntry::new(model, l)).collect()
    }
}

impl fmt::Display for AxisEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.model, self.layer)
    }
}

/// Scores of one measure over every (row, column) axis pair. Rows are the
/// source side (x), columns the target side (y).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    pub measure: Measure,
    pub axis_x: Vec<AxisEntry>,
    pub axis_y: Vec<AxisEntry>,
    /// Row-major, `axis_x.len() x axis_y.len()`.
    pub values: Vec<f64>,
    pub flags: Vec<Flags>,
    pub provenance: BTreeMap<String, String>,
}

impl SimilarityGrid {
    pub fn rows(&self) -> usize {
        self.axis_x.len()
    }

    pub fn cols(&self) -> usize {
        self.axis_y.len()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn flag(&self, i: usize, j: usize) -> Flags {
        self.flags[i * self.cols() + j]
    }

    /// Value range used for colouring: [-1, 1] for signed grids, else [0, 1].
    pub fn value_range(&self) -> (f64, f64) {
        if self.provenance.get("signed").map(String::as_str) == Some("true") {
            (-1.0, 1.0)
        } else {
            (0.0, 1.0)
        }
    }

    /// Indices where the model id changes along an axis.
    pub fn boundaries(axis: &[AxisEntry]) -> Vec<usize> {
        (1..axis.len()).filter(|&i| axis[i].model != axis[i - 1].model).collect()
    }

    /// The main diagonal, for grids comparing a model with its counterpart layer by layer.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows().min(self.cols())).map(|i| self.value(i, i)).collect()
    }
}

fn check_axis(axis: &[AxisEntry], name: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for e in axis {
        if e.model.is_empty() || e.model.contains([',', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!("model id {:?} cannot be used on a grid axis", e.model)));
        }
        if !seen.insert(e) {
            return Err(Error::InvalidArgument(format!("duplicate entry {e} on {name}")));
        }
    }
    Ok(())
}

/// Places per-pair scores into a grid. Every axis cell needs exactly one score.
pub fn assemble<I>(
    measure: Measure,
    axis_x: Vec<AxisEntry>,
    axis_y: Vec<AxisEntry>,
    results: I,
    provenance: BTreeMap<String, String>,
) -> Result<SimilarityGrid>
where
    I: IntoIterator<Item = (AxisEntry, AxisEntry, Score)>,
{
    check_axis(&axis_x, "axis_x")?;
    check_axis(&axis_y, "axis_y")?;
    let row: HashMap<&AxisEntry, usize> = axis_x.iter().enumerate().map(|(i, e)| (e, i)).collect();
    let col: HashMap<&AxisEntry, usize> = axis_y.iter().enumerate().map(|(j, e)| (e, j)).collect();
    let cols = axis_y.len();
    let mut cells: Vec<Option<Score>> = vec![None; axis_x.len() * cols];
    for (x, y, score) in results {
        let (i, j) = match (row.get(&x), col.get(&y)) {
            (Some(&i), Some(&j)) => (i, j),
            _ => return Err(Error::InvalidArgument(format!("pair ({x}, {y}) is not on the grid axes"))),
        };
        if !score.value.is_finite() {
            return Err(Error::Numerical(format!("non-finite score for pair ({x}, {y})")));
        }
        let slot = &mut cells[i * cols + j];
        if slot.is_some() {
            return Err(Error::DuplicateCell(format!("({x}, {y})")));
        }
        *slot = Some(score);
    }
    let mut values = Vec::with_capacity(cells.len());
    let mut flags = Vec::with_capacity(cells.len());
    for (k, cell) in cells.into_iter().enumerate() {
        let s = cell.ok_or_else(|| Error::MissingCell(format!("({}, {})", axis_x[k / cols], axis_y[k % cols])))?;
        values.push(s.value);
        flags.push(s.flags);
    }
    Ok(SimilarityGrid { measure, axis_x, axis_y, values, flags, provenance })
}

/// Joins per-model-pair grids of one measure into a grid over the union of
/// their axes. Models keep their order of first appearance.
pub fn combine(grids: &[SimilarityGrid]) -> Result<SimilarityGrid> {
    let first = grids.first().ok_or_else(|| Error::InvalidArgument("no grids to combine".into()))?;
    if let Some(g) = grids.iter().find(|g| g.measure != first.measure) {
        return Err(Error::InvalidArgument(format!("cannot combine {} with {}", first.measure, g.measure)));
    }
    let mut models: Vec<&str> = Vec::new();
    let mut layers: BTreeMap<&str, Vec<u16>> = BTreeMap::new();
    for e in grids.iter().flat_map(|g| g.axis_x.iter().chain(&g.axis_y)) {
        if !models.contains(&e.model.as_str()) {
            models.push(&e.model);
        }
        let ls = layers.entry(&e.model).or_default();
        if !ls.contains(&e.layer) {
            ls.push(e.layer);
        }
    }
    let axis: Vec<AxisEntry> = models
        .iter()
        .flat_map(|m| {
            let mut ls = layers[m].clone();
            ls.sort_unstable();
            ls.into_iter().map(move |l| AxisEntry::new(*m, l))
        })
        .collect();
    let mut provenance: BTreeMap<String, String> = BTreeMap::new();
    for g in grids {
        for (k, v) in &g.provenance {
            provenance
                .entry(k.clone())
                .and_modify(|cur| {
                    if !cur.split(';').any(|p| p == v) {
                        cur.push(';');
                        cur.push_str(v);
                    }
                })
                .or_insert_with(|| v.clone());
        }
    }
    let cells = grids.iter().flat_map(|g| {
        (0..g.rows()).flat_map(move |i| {
            (0..g.cols()).map(move |j| (g.axis_x[i].clone(), g.axis_y[j].clone(), Score::new(g.value(i, j), g.flag(i, j))))
        })
    });
    assemble(first.measure, axis.clone(), axis, cells, provenance)
}
