//! End-to-end helpers shared by the command line and the C interface: pair
//! selection, passes over dump files, scoring with shared layer spectra, and
//! output manifests.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attention_sim::{attention_moments, AttentionOptions};
use crate::cca::{cca_with, pwcca_from, svcca_with, Spectrum, DEFAULT_EIG_FLOOR, DEFAULT_VAR_THRESHOLD};
use crate::dumpio::{open_dump, DumpKind};
use crate::error::{Error, Result};
use crate::heatmap::{assemble, AxisEntry, SimilarityGrid};
use crate::measure::{Direction, Measure, Score};
use crate::neuron_sim::{corr_matrix, max_match, neu_lay, DEFAULT_RIDGE_EPS};
use crate::stats::{accumulate, plan_pairs, AccumulateOptions, MomentSet, PairMeta};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default memory budget when neither a flag nor the environment sets one.
pub const DEFAULT_BUDGET: u64 = 8 << 30;

/// Environment variable holding the default memory budget.
pub const BUDGET_ENV: &str = "RSIM_MEMORY_BUDGET";

/// Parses a byte count such as `8GiB`, `512M` or `1048576`. Units are binary.
pub fn parse_bytes(text: &str) -> Result<u64> {
    let t = text.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num.parse().map_err(|_| Error::InvalidArgument(format!("bad byte count {text:?}")))?;
    let unit = unit.trim().to_ascii_lowercase();
    let shift = match unit.trim_end_matches("ib").trim_end_matches('b') {
        "" => 0,
        "k" => 10,
        "m" => 20,
        "g" => 30,
        "t" => 40,
        _ => return Err(Error::InvalidArgument(format!("bad byte unit in {text:?}"))),
    };
    let bytes = value * (1u64 << shift) as f64;
    if !bytes.is_finite() || bytes < 0.0 || bytes > u64::MAX as f64 {
        return Err(Error::InvalidArgument(format!("byte count {text:?} out of range")));
    }
    Ok(bytes as u64)
}

/// Which layer pairs of two models to compare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairSelection {
    All,
    Diagonal,
    Explicit(Vec<(u16, u16)>),
}

impl PairSelection {
    pub fn resolve(&self, lx: u16, ly: u16) -> Vec<(u16, u16)> {
        match self {
            PairSelection::All => crate::stats::all_pairs(lx, ly),
            PairSelection::Diagonal => (0..lx.min(ly)).map(|l| (l, l)).collect(),
            PairSelection::Explicit(p) => p.clone(),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, PairSelection::All)
    }
}

impl FromStr for PairSelection {
    type Err = Error;

    /// `all`, `diagonal`, or a list such as `0:0,1:3`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PairSelection::All),
            "diagonal" | "diag" => Ok(PairSelection::Diagonal),
            list => list
                .split(',')
                .map(|item| {
                    let (a, b) = item
                        .split_once(':')
                        .ok_or_else(|| Error::InvalidArgument(format!("pair {item:?} is not x:y")))?;
                    let p = |v: &str| v.trim().parse::<u16>().map_err(|_| Error::InvalidArgument(format!("bad layer in {item:?}")));
                    Ok((p(a)?, p(b)?))
                })
                .collect::<Result<Vec<_>>>()
                .map(PairSelection::Explicit),
        }
    }
}

/// Tolerances and switches used when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureParams {
    pub use_abs: bool,
    pub ridge_eps: f64,
    pub eig_floor: f64,
    pub svcca_threshold: f64,
    pub direction: Direction,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            use_abs: true,
            ridge_eps: DEFAULT_RIDGE_EPS,
            eig_floor: DEFAULT_EIG_FLOOR,
            svcca_threshold: DEFAULT_VAR_THRESHOLD,
            direction: Direction::XToY,
        }
    }
}

impl MeasureParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} out of range: {v}")));
        if !(self.ridge_eps >= 0.0 && self.ridge_eps.is_finite()) {
            return bad("ridge_eps", self.ridge_eps);
        }
        if !(self.eig_floor >= 0.0 && self.eig_floor < 1.0) {
            return bad("eig_floor", self.eig_floor);
        }
        if !(self.svcca_threshold > 0.0 && self.svcca_threshold <= 1.0) {
            return bad("svcca_threshold", self.svcca_threshold);
        }
        Ok(())
    }

    /// Whether a measure's grid can hold negative values under these params.
    pub fn signed(&self, measure: Measure) -> bool {
        !self.use_abs && matches!(measure, Measure::NeuNeu | Measure::Attention)
    }

    pub fn provenance(&self, measure: Measure) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        p.insert("tool".into(), format!("reprsim {TOOL_VERSION}"));
        p.insert("signed".into(), self.signed(measure).to_string());
        match measure {
            Measure::NeuNeu | Measure::Attention => {
                p.insert("use_abs".into(), self.use_abs.to_string());
            }
            Measure::NeuLay => {
                p.insert("ridge_eps".into(), format!("{:e}", self.ridge_eps));
            }
            Measure::Svcca => {
                p.insert("eig_floor".into(), format!("{:e}", self.eig_floor));
                p.insert("svcca_threshold".into(), self.svcca_threshold.to_string());
            }
            Measure::Pwcca => {
                p.insert("eig_floor".into(), format!("{:e}", self.eig_floor));
            }
        }
        if matches!(measure, Measure::NeuNeu | Measure::Attention | Measure::Pwcca) {
            let dir = match self.direction {
                Direction::XToY => "rows_to_columns",
                Direction::YToX => "columns_to_rows",
            };
            p.insert("direction".into(), dir.into());
        }
        p
    }
}

/// Eigendecompositions of self blocks, keyed by block address so sets that
/// share a block (one pass) share the decomposition. Only valid while the sets
/// it was filled from are alive.
#[derive(Default)]
struct SpectrumCache {
    map: HashMap<usize, Arc<Spectrum>>,
}

impl SpectrumCache {
    fn key(m: &nalgebra::DMatrix<f64>) -> usize {
        m as *const _ as usize
    }

    /// Decomposes every distinct self block of `sets` (in parallel).
    fn fill(&mut self, sets: &[MomentSet]) {
        let mut todo: Vec<(usize, &MomentSet, bool)> = Vec::new();
        for s in sets {
            for (block, is_x) in [(s.comoment_xx(), true), (s.comoment_yy(), false)] {
                let k = Self::key(block);
                if !self.map.contains_key(&k) && !todo.iter().any(|t| t.0 == k) {
                    todo.push((k, s, is_x));
                }
            }
        }
        let done: Vec<(usize, Spectrum)> = todo
            .into_par_iter()
            .map(|(k, s, is_x)| (k, Spectrum::of(&if is_x { s.cov_xx() } else { s.cov_yy() })))
            .collect();
        self.map.extend(done.into_iter().map(|(k, s)| (k, Arc::new(s))));
    }

    fn get(&self, block: &nalgebra::DMatrix<f64>) -> Option<Arc<Spectrum>> {
        self.map.get(&Self::key(block)).cloned()
    }
}

/// Scores one moment set. For [`Measure::Attention`] the set's units are heads.
pub fn score_pair(measure: Measure, m: &MomentSet, params: &MeasureParams) -> Result<Score> {
    params.validate()?;
    score_cached(measure, m, params, None)
}

fn score_cached(measure: Measure, m: &MomentSet, params: &MeasureParams, cache: Option<&SpectrumCache>) -> Result<Score> {
    let spectra = || -> (Arc<Spectrum>, Arc<Spectrum>) {
        let sx = cache.and_then(|c| c.get(m.comoment_xx())).unwrap_or_else(|| Arc::new(Spectrum::of(&m.cov_xx())));
        let sy = cache.and_then(|c| c.get(m.comoment_yy())).unwrap_or_else(|| Arc::new(Spectrum::of(&m.cov_yy())));
        (sx, sy)
    };
    match measure {
        Measure::NeuNeu | Measure::Attention => {
            let corr = corr_matrix(m)?;
            Ok(match params.direction {
                Direction::XToY => max_match(&corr, params.use_abs),
                Direction::YToX => max_match(&corr.transpose(), params.use_abs),
            })
        }
        Measure::NeuLay => neu_lay(m, params.ridge_eps),
        Measure::Pwcca => {
            let (sx, sy) = spectra();
            Ok(pwcca_from(&cca_with(m, &sx, &sy, params.eig_floor)?, params.direction))
        }
        Measure::Svcca => {
            let (sx, sy) = spectra();
            Ok(svcca_with(m, &sx, &sy, params.svcca_threshold, params.eig_floor)?.score())
        }
    }
}

/// Scores every set, in parallel, in input order.
pub fn score_sets(measure: Measure, sets: &[MomentSet], params: &MeasureParams) -> Result<Vec<(PairMeta, Score)>> {
    params.validate()?;
    let mut cache = SpectrumCache::default();
    if matches!(measure, Measure::Svcca | Measure::Pwcca) {
        cache.fill(sets);
    }
    sets.par_iter()
        .map(|m| Ok((m.meta.clone(), score_cached(measure, m, params, Some(&cache))?)))
        .collect()
}

/// Grid of scores for one ordered model pair; axes are the layers present.
pub fn grid_from_scores(
    measure: Measure,
    scores: &[(PairMeta, Score)],
    provenance: BTreeMap<String, String>,
) -> Result<SimilarityGrid> {
    let first = &scores.first().ok_or_else(|| Error::InvalidArgument("no scores for grid".into()))?.0;
    let mut lx: Vec<u16> = scores.iter().map(|s| s.0.layer_x).collect();
    let mut ly: Vec<u16> = scores.iter().map(|s| s.0.layer_y).collect();
    lx.sort_unstable();
    lx.dedup();
    ly.sort_unstable();
    ly.dedup();
    let ax: Vec<AxisEntry> = lx.iter().map(|&l| AxisEntry::new(first.model_x.clone(), l)).collect();
    let ay: Vec<AxisEntry> = ly.iter().map(|&l| AxisEntry::new(first.model_y.clone(), l)).collect();
    let cells = scores.iter().map(|(m, s)| (AxisEntry::new(m.model_x.clone(), m.layer_x), AxisEntry::new(m.model_y.clone(), m.layer_y), *s));
    assemble(measure, ax, ay, cells, provenance)
}

/// Per-pair scores as CSV, for selections that do not fill a grid.
pub fn scores_to_csv(measure: Measure, scores: &[(PairMeta, Score)]) -> String {
    let mut out = format!("# measure={measure}\nmodel_x,layer_x,model_y,layer_y,value,flags\n");
    for (m, s) in scores {
        out.push_str(&format!("{},{},{},{},{:.16e},{}\n", m.model_x, m.layer_x, m.model_y, m.layer_y, s.value, s.flags.0));
    }
    out
}

/// Reads the model id and shape of a dump without reading records.
pub fn dump_info(path: &Path) -> Result<crate::dumpio::DumpHeader> {
    Ok(open_dump(path)?.header().clone())
}

/// Moments of the selected activation layer pairs of two dump files. Passes
/// are split so each stays within `budget_bytes`.
pub fn moments_from_files(
    x: &Path,
    y: &Path,
    selection: &PairSelection,
    budget_bytes: u64,
    options: AccumulateOptions,
) -> Result<Vec<Vec<MomentSet>>> {
    let mut rx = open_dump(x)?;
    let mut ry = open_dump(y)?;
    let (hx, hy) = (rx.header().clone(), ry.header().clone());
    let (dx, dy) = match (hx.kind, hy.kind) {
        (DumpKind::Activations { hidden_dim: a }, DumpKind::Activations { hidden_dim: b }) => (a as usize, b as usize),
        _ => return Err(Error::WrongKind { expected: "activations", found: "attention" }),
    };
    let requested = selection.resolve(hx.n_layers, hy.n_layers);
    let plans = plan_pairs(hx.n_layers, dx, hy.n_layers, dy, budget_bytes, &requested)?;
    log::info!(
        "{} x {}: {} pairs in {} pass(es), estimated {} bytes each at most",
        hx.model_id,
        hy.model_id,
        requested.len(),
        plans.len(),
        plans.iter().map(|p| p.estimated_bytes).max().unwrap_or(0)
    );
    plans.iter().map(|plan| accumulate(&mut rx, &mut ry, plan, options)).collect()
}

/// Head moments of the selected attention layer pairs of two dump files.
pub fn attention_moments_from_files(
    x: &Path,
    y: &Path,
    selection: &PairSelection,
    options: AttentionOptions,
) -> Result<Vec<MomentSet>> {
    let mut rx = open_dump(x)?;
    let mut ry = open_dump(y)?;
    let pairs = selection.resolve(rx.header().n_layers, ry.header().n_layers);
    for &(a, b) in &pairs {
        if a >= rx.header().n_layers || b >= ry.header().n_layers {
            return Err(Error::InvalidArgument(format!("pair ({a}, {b}) outside the attention dumps' layers")));
        }
    }
    attention_moments(&mut rx, &mut ry, &pairs, options)
}

pub fn sha256_reader<R: Read>(mut src: R) -> io::Result<String> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = src.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    sha256_reader(BufReader::new(File::open(path).map_err(Error::at(path))?)).map_err(Error::at(path))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command's inputs, parameters and outputs. Contains no
/// timestamps, so reruns with the same inputs produce the same manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
    #[serde(skip)]
    out_dir: PathBuf,
}

impl Manifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Manifest {
            tool: "reprsim".into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.into(), value.to_string());
    }

    /// Hashes an input file and records it; returns the digest.
    pub fn add_input(&mut self, path: &Path) -> Result<String> {
        let sha256 = sha256_file(path)?;
        let bytes = std::fs::metadata(path)?.len();
        self.inputs.push(ManifestEntry { path: path.display().to_string(), sha256: sha256.clone(), bytes });
        Ok(sha256)
    }

    /// Writes `contents` to `name` under the output directory and records it.
    pub fn write_output(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let mut f = File::create(&path).map_err(Error::at(&path))?;
        f.write_all(contents)?;
        f.sync_all()?;
        self.record_output(name, contents);
        Ok(path)
    }

    /// Records an output that was already written.
    pub fn record_output(&mut self, name: &str, contents: &[u8]) {
        let sha256 = hex::encode(Sha256::digest(contents));
        self.outputs.retain(|e| e.path != name);
        self.outputs.push(ManifestEntry { path: name.into(), sha256, bytes: contents.len() as u64 });
    }

    /// Records a file under the output directory by hashing it from disk.
    pub fn record_file(&mut self, name: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        let sha256 = sha256_file(&path)?;
        let bytes = std::fs::metadata(&path)?.len();
        self.outputs.retain(|e| e.path != name);
        self.outputs.push(ManifestEntry { path: name.into(), sha256, bytes });
        Ok(())
    }

    /// Writes `manifest.json`, with outputs sorted by path.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::InvalidArgument(e.to_string()))? + "\n";
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Replaces characters that are awkward in file names.
pub fn file_stem(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
