//! The `reprsim` command line.
//!
//! Failures print one line to stderr of the form
//! `error: kind=<usage|data|numerical> exit=<code> message="<text>"` and exit
//! with 1, 2 or 3 respectively.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::advisor::{advise, DEFAULT_THRESHOLD};
use crate::attention_sim::AttentionOptions;
use crate::cca::{DEFAULT_EIG_FLOOR, DEFAULT_VAR_THRESHOLD};
use crate::dumpio::{validate_dump, write_dump, DumpHeader, DumpKind};
use crate::error::{Error, Result};
use crate::heatmap::{self, Annotation, ColorMap, SimilarityGrid, SvgOptions};
use crate::measure::{Direction, Measure, Score};
use crate::neuron_sim::DEFAULT_RIDGE_EPS;
use crate::pipeline::{
    attention_moments_from_files, file_stem, grid_from_scores, moments_from_files, parse_bytes, score_sets, scores_to_csv,
    Manifest, MeasureParams, PairSelection, BUDGET_ENV, DEFAULT_BUDGET,
};
use crate::stats::{read_moments, write_moments, AccumulateOptions, MomentSet, PairMeta};
use crate::synth::{attention_records, SynthCorpus, SynthModel, VirtualDump};

#[derive(Debug, Parser)]
#[command(name = "reprsim", version, about = "Layer, neuron and attention-head similarity from activation dumps")]
pub struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check dumps for structural problems and invalid values.
    Validate(ValidateArgs),
    /// Stream two dumps and save the moments of their layer pairs.
    Moments(MomentsArgs),
    /// Compute similarity grids.
    Sim(SimArgs),
    /// Render grid CSVs as SVG heatmaps.
    Figure(FigureArgs),
    /// Recommend how many bottom layers to freeze when finetuning.
    Advise(AdviseArgs),
    /// Write seeded synthetic dumps.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub dumps: Vec<PathBuf>,
    /// Print reports as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PassArgs {
    /// Layer pairs: `all`, `diagonal`, or a list like `0:0,3:5`.
    #[arg(long, default_value = "all")]
    pub pairs: String,
    /// Memory budget for one pass, e.g. `8GiB`.
    #[arg(long, env = BUDGET_ENV)]
    pub budget: Option<String>,
    /// Frames buffered before folding into the running moments.
    #[arg(long, default_value_t = 2048)]
    pub chunk_frames: usize,
}

impl PassArgs {
    fn budget(&self) -> Result<u64> {
        self.budget.as_deref().map_or(Ok(DEFAULT_BUDGET), parse_bytes)
    }

    fn selection(&self) -> Result<PairSelection> {
        self.pairs.parse()
    }

    fn options(&self) -> Result<AccumulateOptions> {
        if self.chunk_frames == 0 {
            return Err(Error::InvalidArgument("--chunk-frames must be >= 1".into()));
        }
        Ok(AccumulateOptions { min_chunk_frames: self.chunk_frames })
    }

    fn record(&self, manifest: &mut Manifest) -> Result<()> {
        manifest.param("pairs", &self.pairs);
        manifest.param("budget_bytes", self.budget()?);
        manifest.param("chunk_frames", self.chunk_frames);
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[command(flatten)]
    pub pass: PassArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    /// Average over the row model's units.
    Rows,
    /// Average over the column model's units.
    Columns,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Signed correlations for neu-neu and attention instead of magnitudes.
    #[arg(long)]
    pub signed: bool,
    /// Ridge strength relative to the mean target variance.
    #[arg(long, default_value_t = DEFAULT_RIDGE_EPS)]
    pub ridge_eps: f64,
    /// Relative eigenvalue floor for whitening.
    #[arg(long, default_value_t = DEFAULT_EIG_FLOOR)]
    pub eig_floor: f64,
    /// Variance kept by SVCCA's truncation.
    #[arg(long, default_value_t = DEFAULT_VAR_THRESHOLD)]
    pub svcca_threshold: f64,
    /// Side whose units are averaged for neu-neu, attention and pwcca.
    #[arg(long, value_enum, default_value_t = DirectionArg::Rows)]
    pub direction: DirectionArg,
}

impl MeasureArgs {
    fn params(&self) -> Result<MeasureParams> {
        let p = MeasureParams {
            use_abs: !self.signed,
            ridge_eps: self.ridge_eps,
            eig_floor: self.eig_floor,
            svcca_threshold: self.svcca_threshold,
            direction: match self.direction {
                DirectionArg::Rows => Direction::XToY,
                DirectionArg::Columns => Direction::YToX,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Activation dumps, one per model.
    #[arg(long = "dump")]
    pub dumps: Vec<PathBuf>,
    /// Attention dumps, one per model.
    #[arg(long = "attention")]
    pub attention: Vec<PathBuf>,
    /// Saved `.rsm` moments to score instead of (or besides) dumps.
    #[arg(long = "moments")]
    pub moments: Vec<PathBuf>,
    /// Comma-separated measures: neu-neu, neu-lay, svcca, pwcca, attention.
    #[arg(long, default_value = "neu-neu,neu-lay,svcca,pwcca")]
    pub measure: String,
    /// Skip grids comparing a model with itself.
    #[arg(long)]
    pub cross_only: bool,
    /// Also save the moments of every pass.
    #[arg(long)]
    pub save_moments: bool,
    /// Keep every n-th query row of attention maps.
    #[arg(long, default_value_t = 1)]
    pub query_stride: usize,
    #[command(flatten)]
    pub pass: PassArgs,
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorMapArg {
    Viridis,
    Grays,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(required = true)]
    pub grids: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ColorMapArg::Viridis)]
    pub color_map: ColorMapArg,
    #[arg(long, default_value = "#ffff00")]
    pub boundary_color: String,
    #[arg(long, default_value = "#00c000")]
    pub annotation_color: String,
    /// Circle a cell block, `row:col` or `r0-r1:c0-c1` (0-based, repeatable).
    #[arg(long = "annotate")]
    pub annotate: Vec<String>,
    /// Colour range `lo:hi`; defaults to the grid's measure range.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    #[arg(long, default_value_t = 14)]
    pub cell_size: u32,
    #[arg(long)]
    pub no_labels: bool,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdviseArgs {
    /// Grid or pair-score CSV comparing a model (rows) with its finetuned counterpart.
    #[arg(long, conflicts_with = "values", required_unless_present = "values")]
    pub grid: Option<PathBuf>,
    /// Per-layer similarities, comma-separated, bottom layer first.
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_hyphen_values = true)]
    pub threshold: f64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Also write `advice.json` and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub models: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: u16,
    #[arg(long, default_value_t = 32)]
    pub dim: u32,
    #[arg(long, default_value_t = 4000)]
    pub frames: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f32,
    /// Weight of latents shared across models (0 to 1).
    #[arg(long, default_value_t = 0.7)]
    pub shared: f32,
    /// Also write a finetuned copy of the first model whose layers from this index on changed.
    #[arg(long)]
    pub finetuned_from: Option<u16>,
    /// Also write attention dumps with this many heads per layer.
    #[arg(long)]
    pub attention_heads: Option<u16>,
    /// Query cap for attention dumps.
    #[arg(long, default_value_t = 100)]
    pub attention_max_frames: u32,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error: kind={} exit={} message={:?}", kind.as_str(), kind.exit_code(), e.to_string());
            kind.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Moments(a) => cmd_moments(&a).map(|_| 0),
        Command::Sim(a) => cmd_sim(&a).map(|_| 0),
        Command::Figure(a) => cmd_figure(&a).map(|_| 0),
        Command::Advise(a) => cmd_advise(&a).map(|_| 0),
        Command::Synth(a) => cmd_synth(&a).map(|_| 0),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::at(dir))?;
    Ok(())
}

/// Prints one report per dump; exits 0 only when every dump is clean.
pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let mut all_clean = true;
    let mut reports = Vec::new();
    for path in &args.dumps {
        let report = validate_dump(BufReader::with_capacity(1 << 20, File::open(path).map_err(Error::at(path))?))?;
        all_clean &= report.is_clean();
        if args.json {
            reports.push(serde_json::json!({
                "path": path.display().to_string(),
                "model_id": report.header.model_id,
                "kind": report.header.kind.name(),
                "n_records": report.n_records,
                "n_frames": report.n_frames,
                "n_values": report.n_values,
                "clean": report.is_clean(),
                "violations": report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            }));
        } else {
            let status = if report.is_clean() { "clean" } else { "INVALID" };
            println!(
                "{}: {status} ({} {}, {} records, {} frames)",
                path.display(),
                report.header.model_id,
                report.header.kind.name(),
                report.n_records,
                report.n_frames
            );
            for v in &report.violations {
                println!("  {v}");
            }
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("json"));
    }
    Ok(if all_clean { 0 } else { 2 })
}

fn save_moments(manifest: &mut Manifest, out: &Path, name: &str, sets: &[MomentSet]) -> Result<()> {
    let path = out.join(name);
    let mut w = BufWriter::new(File::create(&path).map_err(Error::at(&path))?);
    write_moments(sets, &mut w)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.sync_all()?;
    manifest.record_file(name)
}

pub fn cmd_moments(args: &MomentsArgs) -> Result<PathBuf> {
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("moments", &args.out);
    args.pass.record(&mut manifest)?;
    manifest.add_input(&args.x)?;
    manifest.add_input(&args.y)?;
    let passes = moments_from_files(&args.x, &args.y, &args.pass.selection()?, args.pass.budget()?, args.pass.options()?)?;
    for (k, sets) in passes.iter().enumerate() {
        let meta = &sets[0].meta;
        let name = format!("{}__{}.part{k}.rsm", file_stem(&meta.model_x), file_stem(&meta.model_y));
        save_moments(&mut manifest, &args.out, &name, sets)?;
        println!("{}", args.out.join(&name).display());
    }
    manifest.finish()
}

/// Moment sets of every ordered model pair, keyed by (model_x, model_y).
type PairSets = BTreeMap<(String, String), Vec<MomentSet>>;

fn add_reversed(sets: &mut PairSets) {
    let missing: Vec<(String, String)> = sets
        .keys()
        .filter(|(a, b)| a != b && !sets.contains_key(&(b.clone(), a.clone())))
        .cloned()
        .collect();
    for (a, b) in missing {
        let rev: Vec<MomentSet> = sets[&(a.clone(), b.clone())].iter().map(MomentSet::transpose).collect();
        sets.insert((b, a), rev);
    }
}

fn unique_models(headers: &[(PathBuf, DumpHeader)], expect_attention: bool) -> Result<()> {
    for (i, (p, h)) in headers.iter().enumerate() {
        let is_att = matches!(h.kind, DumpKind::Attention { .. });
        if is_att != expect_attention {
            let (expected, found) = if expect_attention { ("attention", "activations") } else { ("activations", "attention") };
            log::error!("{} holds {found}", p.display());
            return Err(Error::WrongKind { expected, found });
        }
        if headers[..i].iter().any(|(_, o)| o.model_id == h.model_id) {
            return Err(Error::InvalidArgument(format!("model id {:?} appears in more than one dump", h.model_id)));
        }
    }
    Ok(())
}

fn collect_pairs(
    headers: &[(PathBuf, DumpHeader)],
    cross_only: bool,
    mut pass: impl FnMut(&Path, &Path) -> Result<Vec<MomentSet>>,
) -> Result<PairSets> {
    let mut out = PairSets::new();
    for i in 0..headers.len() {
        for j in i..headers.len() {
            if cross_only && i == j {
                continue;
            }
            let sets = pass(&headers[i].0, &headers[j].0)?;
            out.insert((headers[i].1.model_id.clone(), headers[j].1.model_id.clone()), sets);
        }
    }
    add_reversed(&mut out);
    Ok(out)
}

fn write_scores(
    manifest: &mut Manifest,
    measure: Measure,
    key: &(String, String),
    scores: &[(PairMeta, Score)],
    full: bool,
    provenance: BTreeMap<String, String>,
    grids: &mut Vec<SimilarityGrid>,
) -> Result<()> {
    let stem = format!("{}__{}__{}", measure, file_stem(&key.0), file_stem(&key.1));
    if full {
        let grid = grid_from_scores(measure, scores, provenance)?;
        let name = format!("{stem}.csv");
        manifest.write_output(&name, heatmap::to_csv(&grid).as_bytes())?;
        println!("{name}");
        grids.push(grid);
    } else {
        let name = format!("{stem}.pairs.csv");
        manifest.write_output(&name, scores_to_csv(measure, scores).as_bytes())?;
        println!("{name}");
    }
    Ok(())
}

pub fn cmd_sim(args: &SimArgs) -> Result<PathBuf> {
    let measures: Vec<Measure> = args.measure.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
    let params = args.measures.params()?;
    let selection = args.pass.selection()?;
    let wants_attention = measures.contains(&Measure::Attention);
    let activation_measures: Vec<Measure> = measures.iter().copied().filter(|m| *m != Measure::Attention).collect();
    if !activation_measures.is_empty() && args.dumps.is_empty() && args.moments.is_empty() {
        return Err(Error::InvalidArgument("activation measures need --dump or --moments inputs".into()));
    }
    if wants_attention && args.attention.is_empty() {
        return Err(Error::InvalidArgument("the attention measure needs --attention dumps".into()));
    }
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("sim", &args.out);
    args.pass.record(&mut manifest)?;
    manifest.param("measures", measures.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","));
    manifest.param("params", serde_json::to_string(&params).expect("json"));
    manifest.param("cross_only", args.cross_only);
    manifest.param("query_stride", args.query_stride);

    let mut checksums: BTreeMap<String, String> = BTreeMap::new();
    let read_headers = |paths: &[PathBuf], manifest: &mut Manifest, sums: &mut BTreeMap<String, String>| -> Result<Vec<(PathBuf, DumpHeader)>> {
        paths
            .iter()
            .map(|p| {
                let h = crate::pipeline::dump_info(p)?;
                let sum = manifest.add_input(p)?;
                sums.insert(format!("input.{}.{}", h.model_id, h.kind.name()), sum);
                Ok((p.clone(), h))
            })
            .collect()
    };
    let act_headers = if activation_measures.is_empty() { Vec::new() } else { read_headers(&args.dumps, &mut manifest, &mut checksums)? };
    let att_headers = if wants_attention { read_headers(&args.attention, &mut manifest, &mut checksums)? } else { Vec::new() };
    unique_models(&act_headers, false)?;
    unique_models(&att_headers, true)?;

    let mut act_sets = PairSets::new();
    if !activation_measures.is_empty() {
        for p in &args.moments {
            let sum = manifest.add_input(p)?;
            let sets = read_moments(BufReader::new(File::open(p).map_err(Error::at(p))?))?;
            if let Some(s) = sets.first() {
                checksums.insert(format!("input.{}.{}.moments", s.meta.model_x, s.meta.model_y), sum);
                act_sets.entry((s.meta.model_x.clone(), s.meta.model_y.clone())).or_default().extend(sets);
            }
        }
        let budget = args.pass.budget()?;
        let options = args.pass.options()?;
        let mut part = 0usize;
        let computed = collect_pairs(&act_headers, args.cross_only, |x, y| {
            let passes = moments_from_files(x, y, &selection, budget, options)?;
            if args.save_moments {
                for sets in &passes {
                    let meta = &sets[0].meta;
                    let name = format!("{}__{}.part{part}.rsm", file_stem(&meta.model_x), file_stem(&meta.model_y));
                    part += 1;
                    save_moments(&mut manifest, &args.out, &name, sets)?;
                }
            }
            Ok(passes.into_iter().flatten().collect())
        })?;
        for (k, v) in computed {
            act_sets.entry(k).or_default().extend(v);
        }
        add_reversed(&mut act_sets);
    }
    let stride = AttentionOptions { query_stride: args.query_stride };
    let att_sets = if wants_attention {
        collect_pairs(&att_headers, args.cross_only, |x, y| attention_moments_from_files(x, y, &selection, stride))?
    } else {
        PairSets::new()
    };

    for &measure in &measures {
        let sets = if measure == Measure::Attention { &att_sets } else { &act_sets };
        let mut grids = Vec::new();
        for (key, pair_sets) in sets {
            let scores = score_sets(measure, pair_sets, &params)?;
            let mut provenance = params.provenance(measure);
            let kind = if measure == Measure::Attention { "attention" } else { "activations" };
            for (k, v) in &checksums {
                let relevant = [&key.0, &key.1].iter().any(|m| *k == format!("input.{m}.{kind}"))
                    || (kind == "activations" && *k == format!("input.{}.{}.moments", key.0, key.1));
                if relevant {
                    provenance.insert(k.clone(), v.clone());
                }
            }
            provenance.insert("n_frames".into(), pair_sets[0].n().to_string());
            let full = selection.is_full() || !args.moments.is_empty();
            match write_scores(&mut manifest, measure, key, &scores, full, provenance.clone(), &mut grids) {
                Err(Error::MissingCell(_)) if full => {
                    // Saved moments may hold only some pairs; fall back to a pair list.
                    write_scores(&mut manifest, measure, key, &scores, false, provenance, &mut grids)?
                }
                other => other?,
            }
        }
        if grids.len() > 1 {
            match heatmap::combine(&grids) {
                Ok(grid) => {
                    let name = format!("{measure}__combined.csv");
                    manifest.write_output(&name, heatmap::to_csv(&grid).as_bytes())?;
                    println!("{name}");
                }
                Err(e) => log::info!("no combined {measure} grid: {e}"),
            }
        }
    }
    manifest.finish()
}

fn parse_span(text: &str) -> Option<(usize, usize)> {
    match text.split_once('-') {
        Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
        None => {
            let v = text.trim().parse().ok()?;
            Some((v, v))
        }
    }
}

fn parse_annotation(text: &str) -> Result<Annotation> {
    let bad = || Error::InvalidArgument(format!("annotation {text:?} is not row:col or r0-r1:c0-c1"));
    let (r, c) = text.split_once(':').ok_or_else(bad)?;
    Ok(Annotation { rows: parse_span(r).ok_or_else(bad)?, cols: parse_span(c).ok_or_else(bad)? })
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidArgument(format!("range {text:?} is not lo:hi with lo < hi"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let (lo, hi): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if lo < hi && lo.is_finite() && hi.is_finite() {
        Ok((lo, hi))
    } else {
        Err(bad())
    }
}

pub fn cmd_figure(args: &FigureArgs) -> Result<PathBuf> {
    let options = SvgOptions {
        color_map: match args.color_map {
            ColorMapArg::Viridis => ColorMap::Viridis,
            ColorMapArg::Grays => ColorMap::Grays,
        },
        boundary_color: args.boundary_color.clone(),
        annotation_color: args.annotation_color.clone(),
        annotations: args.annotate.iter().map(|a| parse_annotation(a)).collect::<Result<_>>()?,
        range: args.range.as_deref().map(parse_range).transpose()?,
        cell_size: args.cell_size,
        labels: !args.no_labels,
        title: args.title.clone(),
    };
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("figure", &args.out);
    manifest.param("color_map", format!("{:?}", args.color_map).to_lowercase());
    manifest.param("boundary_color", &args.boundary_color);
    manifest.param("annotation_color", &args.annotation_color);
    manifest.param("annotations", args.annotate.join(" "));
    manifest.param("range", args.range.as_deref().unwrap_or("measure"));
    manifest.param("cell_size", args.cell_size);
    for path in &args.grids {
        manifest.add_input(path)?;
        let grid = heatmap::from_csv(&std::fs::read_to_string(path).map_err(Error::at(path))?)?;
        for a in &options.annotations {
            if a.rows.0.max(a.rows.1) >= grid.rows() || a.cols.0.max(a.cols.1) >= grid.cols() {
                return Err(Error::InvalidArgument(format!("annotation outside the {}x{} grid {}", grid.rows(), grid.cols(), path.display())));
            }
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "grid".into());
        let name = format!("{stem}.svg");
        manifest.write_output(&name, heatmap::to_svg(&grid, &options).as_bytes())?;
        println!("{name}");
    }
    manifest.finish()
}

/// Layer-by-layer similarities from a grid (its diagonal) or a pair-score CSV
/// (pairs with equal layers, in layer order).
pub fn diagonal_from_text(text: &str) -> Result<Vec<f64>> {
    if text.lines().any(|l| l.starts_with("model_x,")) {
        let mut diag: Vec<(u16, f64)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.starts_with("model_x,") || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |col: usize, m: &str| Error::Csv { row: idx + 1, col, message: m.into() };
            if f.len() != 6 {
                return Err(bad(f.len().min(6) + 1, "expected 6 fields"));
            }
            let lx: u16 = f[1].parse().map_err(|_| bad(2, "bad layer"))?;
            let ly: u16 = f[3].parse().map_err(|_| bad(4, "bad layer"))?;
            let v: f64 = f[4].parse().map_err(|_| bad(5, "not a number"))?;
            if lx == ly {
                diag.push((lx, v));
            }
        }
        diag.sort_by_key(|d| d.0);
        return Ok(diag.into_iter().map(|d| d.1).collect());
    }
    Ok(heatmap::from_csv(text)?.diagonal())
}

pub fn cmd_advise(args: &AdviseArgs) -> Result<()> {
    let diagonal = match (&args.grid, &args.values) {
        (Some(path), _) => diagonal_from_text(&std::fs::read_to_string(path).map_err(Error::at(path))?)?,
        (None, Some(values)) => values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad similarity {v:?}"))))
            .collect::<Result<_>>()?,
        (None, None) => return Err(Error::InvalidArgument("need --grid or --values".into())),
    };
    let report = advise(&diagonal, args.threshold)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut manifest = Manifest::new("advise", out);
        manifest.param("threshold", args.threshold);
        if let Some(p) = &args.grid {
            manifest.add_input(p)?;
        } else if let Some(v) = &args.values {
            manifest.param("values", v);
        }
        manifest.write_output("advice.json", (report.to_json() + "\n").as_bytes())?;
        manifest.finish()?;
    }
    Ok(())
}

fn model_name(i: usize) -> String {
    let letters = b"abcdefghijklmnopqrstuvwxyz";
    if i < letters.len() {
        format!("synth-{}", letters[i] as char)
    } else {
        format!("synth-{i}")
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    if args.models == 0 || args.layers == 0 || args.dim == 0 || args.frames == 0 {
        return Err(Error::InvalidArgument("--models, --layers, --dim and --frames must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&args.shared) || !(args.noise >= 0.0) {
        return Err(Error::InvalidArgument("--shared must be in [0, 1] and --noise >= 0".into()));
    }
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("synth", &args.out);
    for (k, v) in [
        ("models", args.models.to_string()),
        ("layers", args.layers.to_string()),
        ("dim", args.dim.to_string()),
        ("frames", args.frames.to_string()),
        ("seed", args.seed.to_string()),
        ("noise", args.noise.to_string()),
        ("shared", args.shared.to_string()),
    ] {
        manifest.param(k, v);
    }
    let corpus = Arc::new(SynthCorpus::new(args.seed, args.frames));
    let mut models: Vec<SynthModel> = (0..args.models)
        .map(|i| {
            let mut m = SynthModel::new(model_name(i), args.seed.wrapping_mul(1000).wrapping_add(i as u64 + 1), args.layers, args.dim);
            m.noise = args.noise;
            m.shared = args.shared;
            m
        })
        .collect();
    if let Some(from) = args.finetuned_from {
        manifest.param("finetuned_from", from);
        let mut ft = models[0].clone();
        ft.model_id = format!("{}-ft", ft.model_id);
        ft.diverge_from = Some(from);
        models.push(ft);
    }
    for m in &models {
        let name = format!("{}.rsd", m.model_id);
        let mut src = VirtualDump::new(m.clone(), corpus.clone())?;
        let mut w = BufWriter::with_capacity(1 << 20, File::create(args.out.join(&name)).map_err(Error::at(&args.out))?);
        std::io::copy(&mut src, &mut w)?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.sync_all()?;
        manifest.record_file(&name)?;
        println!("{name}");
        if let Some(h) = args.attention_heads {
            let recs = attention_records(m, &corpus, h, args.attention_max_frames);
            let header = DumpHeader::attention(m.model_id.clone(), m.n_layers, h, recs.len() as u32);
            let mut bytes = Vec::new();
            write_dump(&header, &recs, &mut bytes)?;
            let name = format!("{}.att.rsd", m.model_id);
            manifest.write_output(&name, &bytes)?;
            println!("{name}");
        }
    }
    let _ = std::io::stdout().flush();
    manifest.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_annotations_and_ranges() {
        assert_eq!(parse_annotation("3:4").unwrap(), Annotation { rows: (3, 3), cols: (4, 4) });
        assert_eq!(parse_annotation("0-2:5-6").unwrap(), Annotation { rows: (0, 2), cols: (5, 6) });
        assert!(parse_annotation("x").is_err());
        assert_eq!(parse_range("-1:1").unwrap(), (-1.0, 1.0));
        assert!(parse_range("1:0").is_err());
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["reprsim", "frobnicate"]), 1);
        assert_eq!(run(["reprsim", "advise", "--values", "0.9,0.3", "--threshold", "0.5"]), 0);
        assert_eq!(run(["reprsim", "advise", "--values", ""]), 1);
    }

    #[test]
    fn diagonal_from_pair_list() {
        let text = "# measure=pwcca\nmodel_x,layer_x,model_y,layer_y,value,flags\na,1,b,1,0.5,0\na,0,b,0,0.9,0\na,0,b,1,0.1,0\n";
        assert_eq!(diagonal_from_text(text).unwrap(), vec![0.9, 0.5]);
    }
}
