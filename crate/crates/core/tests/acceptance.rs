//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! `REPRSIM_SKIP_SCALE=1` skips the full-scale memory check (it takes over an
//! hour on one core). `REPRSIM_PRINT_ORACLE=1` prints the oracle sequences
//! frozen in `NOISE_EXPECTED`.

mod common;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use reprsim::advisor::advise;
use reprsim::attention_sim::{attention_moments, attention_sm, AttentionOptions};
use reprsim::cca::{cca, pwcca_score, svcca_score, DEFAULT_EIG_FLOOR, DEFAULT_VAR_THRESHOLD};
use reprsim::dumpio::{write_dump, DumpReader};
use reprsim::heatmap::{assemble, from_csv, to_csv, to_svg, AxisEntry, SvgOptions};
use reprsim::measure::{Direction, Measure, Score};
use reprsim::neuron_sim::{corr_matrix, neu_lay, neu_neu, DEFAULT_RIDGE_EPS};
use reprsim::pipeline::{score_sets, MeasureParams};
use reprsim::stats::{accumulate, all_pairs, plan_pairs, AccumulateOptions, MomentSet, PairMeta, PairPlan};
use reprsim::synth::{SynthCorpus, SynthModel, VirtualDump};

type Outcome = Result<String, String>;

fn set(x: &DMatrix<f64>, y: &DMatrix<f64>) -> MomentSet {
    MomentSet::from_frames(PairMeta::new("x", 0, "y", 0), x, y).unwrap()
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn memory_reader(model: &SynthModel, corpus: &SynthCorpus) -> DumpReader<Cursor<Vec<u8>>> {
    let mut buf = Vec::new();
    write_dump(&model.header(corpus), &model.records(corpus), &mut buf).unwrap();
    DumpReader::new(Cursor::new(buf)).unwrap()
}

/// Frames of one layer of every utterance, truncated to `lengths`, as f64 rows.
fn stacked(model: &SynthModel, corpus: &SynthCorpus, layer: usize, lengths: &[usize]) -> DMatrix<f64> {
    let header = model.header(corpus);
    let d = model.hidden_dim as usize;
    let records = model.records(corpus);
    let n: usize = lengths.iter().sum();
    let mut out = DMatrix::zeros(n, d);
    let mut row = 0;
    for (rec, &t) in records.iter().zip(lengths) {
        let data = rec.layer(&header, layer);
        for f in 0..t {
            for k in 0..d {
                out[(row, k)] = data[f * d + k] as f64;
            }
            row += 1;
        }
    }
    out
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs() / q.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

fn streaming_vs_batch() -> Outcome {
    let start = Instant::now();
    let corpus = SynthCorpus::new(11, 10_000);
    let a = SynthModel::new("a", 1, 3, 64);
    let mut b = SynthModel::new("b", 2, 3, 64);
    b.frame_jitter = true;
    let (mut ra, mut rb) = (memory_reader(&a, &corpus), memory_reader(&b, &corpus));
    let plan = PairPlan::unbounded(all_pairs(3, 3), 64, 64);
    let sets = accumulate(&mut ra, &mut rb, &plan, AccumulateOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let ra_idx = memory_reader(&a, &corpus).index().unwrap();
    let rb_idx = memory_reader(&b, &corpus).index().unwrap();
    let lengths: Vec<usize> = ra_idx.iter().zip(&rb_idx).map(|(p, q)| p.n_frames.min(q.n_frames) as usize).collect();
    let n: usize = lengths.iter().sum();
    let mut worst = 0.0f64;
    for s in &sets {
        let x = stacked(&a, &corpus, s.meta.layer_x as usize, &lengths);
        let y = stacked(&b, &corpus, s.meta.layer_y as usize, &lengths);
        let o = common::batch_moments(&x, &y);
        check(s.n() == n as u64, || format!("{}: n {} vs {n}", s.meta, s.n()))?;
        let mean_x = DMatrix::from_column_slice(64, 1, s.mean_x().as_slice());
        let mean_y = DMatrix::from_column_slice(64, 1, s.mean_y().as_slice());
        let om_x = DMatrix::from_column_slice(64, 1, o.mean_x.as_slice());
        let om_y = DMatrix::from_column_slice(64, 1, o.mean_y.as_slice());
        for r in [
            max_rel(&mean_x, &om_x),
            max_rel(&mean_y, &om_y),
            max_rel(s.comoment_xx(), &o.m2_xx),
            max_rel(s.comoment_yy(), &o.m2_yy),
            max_rel(s.comoment_xy(), &o.m2_xy),
        ] {
            worst = worst.max(r);
        }
    }
    check(worst <= 1e-9, || format!("max elementwise relative error {worst:.3e} > 1e-9"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("9 pairs, {n} aligned frames, max rel err {worst:.2e}, streaming {:.2}s", elapsed.as_secs_f64()))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cases = [(2000, 4, 16, 3), (3000, 16, 8, 6), (5000, 12, 12, 12), (2500, 9, 5, 2)];
    let mut worst = [0.0f64; 5];
    for (i, &(n, dx, dy, k)) in cases.iter().enumerate() {
        let (x, y) = common::correlated_pair(100 + i as u64, n, dx, dy, k, 0.8);
        let m = set(&x, &y);
        let nn = neu_neu(&m, true, Direction::XToY).unwrap().value;
        worst[0] = worst[0].max((nn - common::neu_neu(&x, &y, true)).abs());
        let nl = neu_lay(&m, DEFAULT_RIDGE_EPS).unwrap().value;
        worst[1] = worst[1].max((nl - common::neu_lay(&x, &y)).abs());
        let (rho, _) = common::cca(&x, &y);
        let lib = cca(&m, DEFAULT_EIG_FLOOR).unwrap();
        check(lib.rho_cca.len() == rho.len(), || format!("case {i}: {} vs {} canonical directions", lib.rho_cca.len(), rho.len()))?;
        for (p, q) in lib.rho_cca.iter().zip(&rho) {
            worst[2] = worst[2].max((p - q).abs());
        }
        let sv = svcca_score(&m, DEFAULT_VAR_THRESHOLD, DEFAULT_EIG_FLOOR).unwrap().value;
        worst[3] = worst[3].max((sv - common::svcca(&x, &y, DEFAULT_VAR_THRESHOLD)).abs());
        let pw = pwcca_score(&m, Direction::XToY, DEFAULT_EIG_FLOOR).unwrap().value;
        worst[4] = worst[4].max((pw - common::pwcca(&x, &y)).abs());
    }
    let elapsed = start.elapsed();
    let names = ["neu_neu", "neu_lay", "cca", "svcca", "pwcca"];
    let tols = [1e-9, 1e-6, 1e-6, 1e-6, 1e-6];
    for ((name, w), tol) in names.iter().zip(worst).zip(tols) {
        check(w <= tol, || format!("{name} differs from its oracle by {w:.3e} (tol {tol:e})"))?;
    }
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    let detail: Vec<String> = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    Ok(format!("{} cases, max abs err: {} ({:.2}s)", cases.len(), detail.join(", "), elapsed.as_secs_f64()))
}

/// Head-specific banded logits for `n_utt` utterances of 20 to 59 frames.
fn attention_logits(seed: u64, n_utt: usize, heads: usize) -> Vec<Vec<Vec<Vec<f64>>>> {
    let mut r = common::rng(seed);
    (0..n_utt)
        .map(|_| {
            let t = r.random_range(20..60);
            (0..heads)
                .map(|h| {
                    let width = 1.0 + h as f64;
                    (0..t)
                        .map(|q| (0..t).map(|k| -((k as f64 - q as f64 - h as f64 % 3.0) / width).powi(2) + r.random::<f64>()).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn attention_self_score(maps: &common::Maps) -> f64 {
    let (mut rx, mut ry) = (common::attention_dump("m", maps), common::attention_dump("m", maps));
    let sets = attention_moments(&mut rx, &mut ry, &[(0, 0)], AttentionOptions::default()).unwrap();
    attention_sm(&corr_matrix(&sets[0]).unwrap(), true).value
}

fn self_similarity() -> Outcome {
    let mut worst = [0.0f64; 5];
    for seed in 0..6u64 {
        let (mut x, _) = common::correlated_pair(200 + seed, 3000, 4 + 2 * seed as usize, 4, 3 + seed as usize, 0.5);
        if seed == 5 {
            // Rank-deficient layer: duplicated and rescaled columns.
            for j in 7..x.ncols() {
                let src = x.column(j - 7) * 2.0;
                x.set_column(j, &src);
            }
        }
        let m = set(&x, &x);
        let scores = [
            neu_neu(&m, true, Direction::XToY).unwrap().value,
            neu_lay(&m, DEFAULT_RIDGE_EPS).unwrap().value,
            svcca_score(&m, DEFAULT_VAR_THRESHOLD, DEFAULT_EIG_FLOOR).unwrap().value,
            pwcca_score(&m, Direction::XToY, DEFAULT_EIG_FLOOR).unwrap().value,
        ];
        for (w, s) in worst.iter_mut().zip(scores) {
            *w = w.max((s - 1.0).abs());
        }
    }
    for seed in 0..3u64 {
        let maps = common::as_stored(&attention_logits(300 + seed, 12, 4).iter().map(|u| common::softmax_rows(u)).collect());
        worst[4] = worst[4].max((attention_self_score(&maps) - 1.0).abs());
    }
    let names = ["neu_neu", "neu_lay", "svcca", "pwcca", "attention_sm"];
    let tols = [1e-9, 1e-6, 1e-6, 1e-6, 1e-9];
    for ((name, w), tol) in names.iter().zip(worst).zip(tols) {
        check(w <= tol, || format!("{name}(X, X) is {w:.3e} from 1 (tol {tol:e})"))?;
    }
    let detail: Vec<String> = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    Ok(format!("max |score - 1|: {}", detail.join(", ")))
}

fn invariance() -> Outcome {
    let mut worst = [0.0f64; 3];
    for seed in 0..5u64 {
        let (x, y) = common::correlated_pair(400 + seed, 3000, 10, 8, 5, 0.7);
        let base = set(&x, &y);
        let d = y.ncols();

        let mut r = common::rng(500 + seed);
        let mut perm: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let signs: Vec<f64> = (0..d).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let y_perm = DMatrix::from_fn(y.nrows(), d, |i, j| signs[j] * y[(i, perm[j])]);
        let a = neu_neu(&base, true, Direction::XToY).unwrap().value;
        let b = neu_neu(&set(&x, &y_perm), true, Direction::XToY).unwrap().value;
        check(a == b, || format!("seed {seed}: neu_neu {a} vs {b} after permutation and sign flips"))?;

        let map = common::invertible(600 + seed, d);
        let shift: Vec<f64> = (0..d).map(|j| 3.0 * j as f64 - 7.5).collect();
        let mut y_aff = &y * &map;
        for (j, mut col) in y_aff.column_iter_mut().enumerate() {
            col.add_scalar_mut(shift[j]);
        }
        let affine = set(&x, &y_aff);
        let nl = (neu_lay(&base, DEFAULT_RIDGE_EPS).unwrap().value - neu_lay(&affine, DEFAULT_RIDGE_EPS).unwrap().value).abs();
        worst[0] = worst[0].max(nl);
        let (c0, c1) = (cca(&base, DEFAULT_EIG_FLOOR).unwrap(), cca(&affine, DEFAULT_EIG_FLOOR).unwrap());
        for (p, q) in c0.rho_cca.iter().zip(&c1.rho_cca) {
            worst[1] = worst[1].max((p - q).abs());
        }
        let pw = |m: &MomentSet| pwcca_score(m, Direction::XToY, DEFAULT_EIG_FLOOR).unwrap().value;
        worst[1] = worst[1].max((pw(&base) - pw(&affine)).abs());

        let rot = &y * common::orthogonal(700 + seed, d);
        let sv = |m: &MomentSet| svcca_score(m, DEFAULT_VAR_THRESHOLD, DEFAULT_EIG_FLOOR).unwrap().value;
        worst[2] = worst[2].max((sv(&base) - sv(&set(&x, &rot))).abs());
    }
    check(worst[0] <= 1e-6, || format!("neu_lay moved {:.3e} under an affine map", worst[0]))?;
    check(worst[1] <= 1e-6, || format!("canonical correlations moved {:.3e} under an affine map", worst[1]))?;
    check(worst[2] <= 1e-6, || format!("svcca moved {:.3e} under an orthogonal map", worst[2]))?;
    Ok(format!("neu_neu exact; affine: neu_lay {:.1e}, cca {:.1e}; orthogonal: svcca {:.1e}", worst[0], worst[1], worst[2]))
}

fn ordering() -> Outcome {
    let mut sets = 0;
    let mut min_gap = f64::INFINITY;
    let mut ridge_gap = f64::INFINITY;
    for seed in 0..200u64 {
        let mut r = common::rng(800 + seed);
        let n = r.random_range(40..400);
        let dx = r.random_range(1..12);
        let dy = r.random_range(1..12);
        let k = r.random_range(1..6);
        let noise = r.random_range(0.05..2.0);
        let (x, y) = common::correlated_pair(900 + seed, n, dx, dy, k, noise);
        let m = set(&x, &y);
        let nn = neu_neu(&m, true, Direction::XToY).unwrap().value;
        let nl = neu_lay(&m, 0.0).unwrap().value;
        check(nl >= nn - 1e-9, || format!("seed {seed}: neu_lay {nl} < neu_neu {nn}"))?;
        min_gap = min_gap.min(nl - nn);
        // The default ridge shrinks every fit slightly; track how far below it can land.
        let damped = neu_lay(&m, DEFAULT_RIDGE_EPS).unwrap().value;
        ridge_gap = ridge_gap.min(damped - nn);
        let c = cca(&m, DEFAULT_EIG_FLOOR).unwrap();
        for direction in [Direction::XToY, Direction::YToX] {
            let pw = pwcca_score(&m, direction, DEFAULT_EIG_FLOOR).unwrap().value;
            let lo = c.rho_cca.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.rho_cca.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            check(pw >= lo - 1e-12 && pw <= hi + 1e-12, || format!("seed {seed}: pwcca {pw} outside [{lo}, {hi}]"))?;
        }
        sets += 1;
    }
    Ok(format!(
        "{sets} moment sets; min(neu_lay - neu_neu) = {min_gap:.3e} exact fit, {ridge_gap:.3e} with default ridge; pwcca within [min rho, max rho]"
    ))
}

const SIGMAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

/// Oracle values for `SIGMAS`, per measure, from a run of the brute-force
/// implementations in `common` on `noise_data` (regenerate with
/// `REPRSIM_PRINT_ORACLE=1`).
const NOISE_EXPECTED: [(Measure, [f64; 4]); 5] = [
    (Measure::NeuNeu, [1.000000000000000, 0.969606111414153, 0.897391705655864, 0.729915877512443]),
    (Measure::NeuLay, [1.000000000000000, 0.976586931090001, 0.930579463584483, 0.815437791749921]),
    (Measure::Svcca, [1.000000000000000, 0.957138707345655, 0.876444146814055, 0.719636426260270]),
    (Measure::Pwcca, [1.000000000000000, 0.958262669395705, 0.893411359373439, 0.760479538873826]),
    (Measure::Attention, [1.000000000000000, 0.917174767117990, 0.765518880892898, 0.570116133377452]),
];

struct NoiseData {
    x: DMatrix<f64>,
    noise: DMatrix<f64>,
    logits: Vec<Vec<Vec<Vec<f64>>>>,
    logit_noise: Vec<Vec<Vec<Vec<f64>>>>,
}

fn noise_data() -> NoiseData {
    let (x, _) = common::correlated_pair(1000, 4000, 8, 8, 6, 0.4);
    let mut r = common::rng(1001);
    let noise = common::normal(&mut r, x.nrows(), x.ncols());
    let logits = attention_logits(1002, 10, 4);
    let logit_noise = logits
        .iter()
        .map(|u| u.iter().map(|h| h.iter().map(|row| row.iter().map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r)).collect()).collect()).collect())
        .collect();
    NoiseData { x, noise, logits, logit_noise }
}

fn perturbed_maps(d: &NoiseData, sigma: f64) -> common::Maps {
    let noisy: Vec<Vec<Vec<Vec<f64>>>> = d
        .logits
        .iter()
        .zip(&d.logit_noise)
        .map(|(u, un)| {
            u.iter()
                .zip(un)
                .map(|(h, hn)| h.iter().zip(hn).map(|(row, rn)| row.iter().zip(rn).map(|(v, e)| v + sigma * e).collect()).collect())
                .collect()
        })
        .collect();
    common::as_stored(&noisy.iter().map(|u| common::softmax_rows(u)).collect())
}

fn noise_oracle(d: &NoiseData) -> Vec<[f64; 4]> {
    let mut out = vec![[0.0; 4]; 5];
    let base = common::as_stored(&d.logits.iter().map(|u| common::softmax_rows(u)).collect());
    let lengths: Vec<usize> = base.iter().map(|u| u[0].len()).collect();
    let ax = common::attention_samples(&base, &lengths);
    for (s, &sigma) in SIGMAS.iter().enumerate() {
        let y = &d.x + &d.noise * sigma;
        out[0][s] = common::neu_neu(&d.x, &y, true);
        out[1][s] = common::neu_lay(&d.x, &y);
        out[2][s] = common::svcca(&d.x, &y, DEFAULT_VAR_THRESHOLD);
        out[3][s] = common::pwcca(&d.x, &y);
        let ay = common::attention_samples(&perturbed_maps(d, sigma), &lengths);
        out[4][s] = common::neu_neu(&ax, &ay, true);
    }
    out
}

fn noise_monotonicity() -> Outcome {
    let d = noise_data();
    if std::env::var_os("REPRSIM_PRINT_ORACLE").is_some() {
        for (row, (m, _)) in noise_oracle(&d).iter().zip(NOISE_EXPECTED) {
            println!("    (Measure::{m:?}, [{}]),", row.iter().map(|v| format!("{v:.15}")).collect::<Vec<_>>().join(", "));
        }
    }
    let base = common::as_stored(&d.logits.iter().map(|u| common::softmax_rows(u)).collect());
    let mut worst = 0.0f64;
    for (measure, expected) in NOISE_EXPECTED {
        let mut got = [0.0; 4];
        for (s, &sigma) in SIGMAS.iter().enumerate() {
            got[s] = if measure == Measure::Attention {
                let (mut rx, mut ry) = (common::attention_dump("a", &base), common::attention_dump("b", &perturbed_maps(&d, sigma)));
                let sets = attention_moments(&mut rx, &mut ry, &[(0, 0)], AttentionOptions::default()).unwrap();
                attention_sm(&corr_matrix(&sets[0]).unwrap(), true).value
            } else {
                let y = &d.x + &d.noise * sigma;
                reprsim::pipeline::score_pair(measure, &set(&d.x, &y), &MeasureParams::default()).unwrap().value
            };
        }
        for w in got.windows(2) {
            check(w[1] <= w[0], || format!("{measure} increases with noise: {got:?}"))?;
        }
        for (g, e) in got.iter().zip(expected) {
            worst = worst.max((g - e).abs());
        }
        check(worst <= 1e-6, || format!("{measure}: {got:?} vs frozen {expected:?}"))?;
    }
    Ok(format!("5 measures non-increasing over sigma {SIGMAS:?}; max deviation from frozen oracle {worst:.1e}"))
}

fn grid_determinism() -> Outcome {
    let mut r = common::rng(1100);
    let axis = AxisEntry::layers("m", 6);
    let mut specials = vec![1.0 / 3.0, 2.0f64.sqrt() - 1.0, 1.0 - f64::EPSILON, 5e-324, 0.1 + 0.2, -0.0];
    let cells: Vec<(AxisEntry, AxisEntry, Score)> = axis
        .iter()
        .flat_map(|a| axis.iter().map(move |b| (a.clone(), b.clone())))
        .map(|(a, b)| {
            let v = specials.pop().unwrap_or_else(|| r.random::<f64>());
            (a, b, Score::clean(v))
        })
        .collect();
    let grid = assemble(Measure::Pwcca, axis.clone(), axis, cells, BTreeMap::new()).map_err(|e| e.to_string())?;
    let text = to_csv(&grid);
    let back = from_csv(&text).map_err(|e| e.to_string())?;
    check(grid.values.iter().zip(&back.values).all(|(a, b)| a.to_bits() == b.to_bits()), || "CSV round trip changed a value".into())?;
    check(to_csv(&back) == text, || "CSV not stable on re-serialization".into())?;
    check(to_svg(&grid, &SvgOptions::default()) == to_svg(&back, &SvgOptions::default()), || "SVG differs after round trip".into())?;

    let bin = env!("CARGO_BIN_EXE_reprsim");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).env_remove("RSIM_MEMORY_BUDGET").output().map_err(|e| e.to_string())?;
        check(out.status.success(), || format!("reprsim {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    };
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    run(&["synth", "--models", "2", "--layers", "24", "--dim", "16", "--frames", "3000", "--out", &p("dumps")])?;
    let start = Instant::now();
    let mut svgs = Vec::new();
    for k in 0..2 {
        let (res, fig) = (p(&format!("res{k}")), p(&format!("fig{k}")));
        run(&["sim", "--dump", &p("dumps/synth-a.rsd"), "--dump", &p("dumps/synth-b.rsd"), "--measure", "pwcca", "--out", &res])?;
        run(&["figure", &format!("{res}/pwcca__combined.csv"), "--out", &fig])?;
        svgs.push(std::fs::read(format!("{fig}/pwcca__combined.svg")).map_err(|e| e.to_string())?);
        if k == 0 {
            let grid = from_csv(&std::fs::read_to_string(format!("{res}/pwcca__combined.csv")).unwrap()).map_err(|e| e.to_string())?;
            check(grid.rows() == 48 && grid.cols() == 48, || format!("combined grid is {}x{}", grid.rows(), grid.cols()))?;
        }
    }
    let per_run = start.elapsed() / 2;
    check(svgs[0] == svgs[1], || "SVG bytes differ across reruns".into())?;
    check(per_run < Duration::from_secs(5), || format!("48x48 pipeline took {per_run:?}"))?;
    Ok(format!("CSV bit-exact, SVG identical across reruns, 48x48 sim+figure {:.2}s", per_run.as_secs_f64()))
}

fn advisor() -> Outcome {
    let mut fixture = vec![0.9; 16];
    fixture.extend([0.3; 8]);
    let report = advise(&fixture, 0.5).map_err(|e| e.to_string())?;
    check(report.freeze_prefix == 16, || format!("freeze_prefix {}", report.freeze_prefix))?;
    let mut r = common::rng(1200);
    for v in 0..100 {
        let len = r.random_range(1..30);
        let sim: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut thresholds: Vec<f64> = (0..20).map(|_| r.random_range(-1.2..1.2)).collect();
        thresholds.sort_by(f64::total_cmp);
        let prefixes: Vec<usize> = thresholds.iter().map(|&t| advise(&sim, t).unwrap().freeze_prefix).collect();
        check(prefixes.windows(2).all(|w| w[1] <= w[0]), || format!("vector {v}: prefix not monotone in threshold: {prefixes:?}"))?;
    }
    Ok("fixture prefix 16; monotone in threshold over 100 random vectors".into())
}

fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

fn scale() -> Outcome {
    if std::env::var_os("REPRSIM_SKIP_SCALE").is_some() {
        return Ok("SKIPPED (REPRSIM_SKIP_SCALE set)".into());
    }
    const BUDGET: u64 = 8 << 30;
    let start = Instant::now();
    let corpus = Arc::new(SynthCorpus::new(21, 700_000));
    let a = SynthModel::new("scale-a", 1, 12, 768);
    let b = SynthModel::new("scale-b", 2, 12, 768);
    let mut ra = DumpReader::new(VirtualDump::new(a, corpus.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut rb = DumpReader::new(VirtualDump::new(b, corpus.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let plans = plan_pairs(12, 768, 12, 768, BUDGET, &all_pairs(12, 12)).map_err(|e| e.to_string())?;
    let estimate = plans.iter().map(|p| p.estimated_bytes).max().unwrap();
    check(estimate <= BUDGET, || format!("plan estimate {estimate} over budget"))?;
    let mut sets = Vec::new();
    for plan in &plans {
        sets.extend(accumulate(&mut ra, &mut rb, plan, AccumulateOptions::default()).map_err(|e| e.to_string())?);
    }
    check(sets.len() == 144, || format!("{} moment sets", sets.len()))?;
    check(sets.iter().all(|s| s.n() == 700_000), || "frame count mismatch".into())?;
    let pass = start.elapsed();
    for measure in [Measure::NeuNeu, Measure::NeuLay, Measure::Svcca, Measure::Pwcca] {
        let scores = score_sets(measure, &sets, &MeasureParams::default()).map_err(|e| e.to_string())?;
        check(scores.iter().all(|(_, s)| s.value.is_finite()), || format!("non-finite {measure} score"))?;
    }
    drop(sets);
    let peak = peak_rss().ok_or("VmHWM unavailable")?;
    check(peak <= BUDGET, || format!("peak RSS {peak} over budget {BUDGET}"))?;
    Ok(format!(
        "700000 frames, 144 pairs in {} pass(es); cost model {:.2} GiB, peak RSS {:.2} GiB, budget 8 GiB; pass {:.0}s, total {:.0}s",
        plans.len(),
        estimate as f64 / (1u64 << 30) as f64,
        peak as f64 / (1u64 << 30) as f64,
        pass.as_secs_f64(),
        start.elapsed().as_secs_f64()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("streaming matches batch moments", streaming_vs_batch),
        ("measures match brute-force oracles", oracle_equivalence),
        ("self-similarity is 1", self_similarity),
        ("invariances", invariance),
        ("ordering properties", ordering),
        ("noise monotonicity", noise_monotonicity),
        ("grid and figure determinism", grid_determinism),
        ("freeze advisor", advisor),
        ("full-scale pass within memory budget", scale),
    ];
    let only: Option<usize> = std::env::var("REPRSIM_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
