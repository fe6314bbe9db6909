//! SVG 1.1 heatmaps.
//!
//! A value `v` in range `[lo, hi]` maps to ramp index
//! `min(floor((v - lo) / (hi - lo) * 256), 255)` (values outside the range are
//! clamped). [`decode_color`] inverts this to the bin centre, so a decoded
//! value is within `(hi - lo) / 512` of the original.

use std::fmt::Write as _;

use super::ramp::VIRIDIS;
use super::SimilarityGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMap {
    #[default]
    Viridis,
    Grays,
}

impl ColorMap {
    fn entry(self, idx: usize) -> [u8; 3] {
        match self {
            ColorMap::Viridis => VIRIDIS[idx],
            ColorMap::Grays => [idx as u8; 3],
        }
    }

    fn index_of(self, rgb: [u8; 3]) -> Option<usize> {
        match self {
            ColorMap::Viridis => VIRIDIS.iter().position(|&c| c == rgb),
            ColorMap::Grays => (rgb[0] == rgb[1] && rgb[1] == rgb[2]).then_some(rgb[0] as usize),
        }
    }
}

/// An ellipse drawn around the cell rectangle `rows x cols` (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub color_map: ColorMap,
    pub boundary_color: String,
    pub annotation_color: String,
    pub annotations: Vec<Annotation>,
    /// Overrides [`SimilarityGrid::value_range`].
    pub range: Option<(f64, f64)>,
    pub cell_size: u32,
    pub labels: bool,
    pub title: Option<String>,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            color_map: ColorMap::Viridis,
            boundary_color: "#ffff00".into(),
            annotation_color: "#00c000".into(),
            annotations: Vec::new(),
            range: None,
            cell_size: 14,
            labels: true,
            title: None,
        }
    }
}

fn ramp_index(value: f64, (lo, hi): (f64, f64)) -> usize {
    let t = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((t * 256.0).floor() as usize).min(255)
}

pub fn ramp_color(map: ColorMap, value: f64, range: (f64, f64)) -> [u8; 3] {
    map.entry(ramp_index(value, range))
}

/// The bin-centre value for a ramp colour, or `None` if it is not on the ramp.
pub fn decode_color(map: ColorMap, rgb: [u8; 3], (lo, hi): (f64, f64)) -> Option<f64> {
    map.index_of(rgb).map(|i| lo + (i as f64 + 0.5) / 256.0 * (hi - lo))
}

fn hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

const FONT: u32 = 9;
const CHAR_W: u32 = 6;
const LEGEND_STEPS: usize = 32;

/// Renders a grid. Output depends only on the arguments.
pub fn to_svg(grid: &SimilarityGrid, options: &SvgOptions) -> String {
    let cs = options.cell_size.max(1);
    let range = options.range.unwrap_or_else(|| grid.value_range());
    let label_len = |axis: &[super::AxisEntry]| axis.iter().map(|e| e.to_string().chars().count()).max().unwrap_or(0) as u32;
    let (left, mut top) = if options.labels {
        (8 + CHAR_W * label_len(&grid.axis_x), 8 + CHAR_W * label_len(&grid.axis_y))
    } else {
        (4, 4)
    };
    if options.title.is_some() {
        top += 20;
    }
    let gw = cs * grid.cols() as u32;
    let gh = cs * grid.rows() as u32;
    let legend_x = left + gw + 12;
    let width = legend_x + 16 + 8 + CHAR_W * 6;
    let height = top + gh.max(64) + 8;

    let mut s = String::with_capacity(grid.values.len() * 160 + 4096);
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="{FONT}">"#
    );
    let _ = writeln!(
        s,
        r##"<defs><pattern id="hatch" patternUnits="userSpaceOnUse" width="4" height="4"><path d="M-1,1 l2,-2 M0,4 l4,-4 M3,5 l2,-2" stroke="#ffffff" stroke-width="1" stroke-opacity="0.8"/></pattern></defs>"##
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##);
    if let Some(title) = &options.title {
        let _ = writeln!(s, r#"<text x="{left}" y="14" font-size="12">{}</text>"#, xml_escape(title));
    }

    let _ = writeln!(s, r#"<g class="cells">"#);
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let v = grid.value(i, j);
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{cs}" height="{cs}" fill="{}"><title>{} x {} = {:.6}</title></rect>"#,
                left + cs * j as u32,
                top + cs * i as u32,
                hex(ramp_color(options.color_map, v, range)),
                xml_escape(&grid.axis_x[i].to_string()),
                xml_escape(&grid.axis_y[j].to_string()),
                v
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="flags">"#);
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let f = grid.flag(i, j);
            if !f.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<rect class="flagged" x="{}" y="{}" width="{cs}" height="{cs}" fill="url(#hatch)"><title>flags {}</title></rect>"#,
                    left + cs * j as u32,
                    top + cs * i as u32,
                    f.0
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="boundaries" stroke="{}" stroke-width="2">"#, xml_escape(&options.boundary_color));
    for b in SimilarityGrid::boundaries(&grid.axis_y) {
        let x = left + cs * b as u32;
        let _ = writeln!(s, r#"<line x1="{x}" y1="{top}" x2="{x}" y2="{}"/>"#, top + gh);
    }
    for b in SimilarityGrid::boundaries(&grid.axis_x) {
        let y = top + cs * b as u32;
        let _ = writeln!(s, r#"<line x1="{left}" y1="{y}" x2="{}" y2="{y}"/>"#, left + gw);
    }
    let _ = writeln!(s, "</g>");

    if !options.annotations.is_empty() {
        let _ = writeln!(
            s,
            r#"<g class="annotations" fill="none" stroke="{}" stroke-width="2">"#,
            xml_escape(&options.annotation_color)
        );
        for a in &options.annotations {
            let (r0, r1) = (a.rows.0.min(a.rows.1), a.rows.0.max(a.rows.1));
            let (c0, c1) = (a.cols.0.min(a.cols.1), a.cols.0.max(a.cols.1));
            let cx = left as f64 + cs as f64 * (c0 + c1 + 1) as f64 / 2.0;
            let cy = top as f64 + cs as f64 * (r0 + r1 + 1) as f64 / 2.0;
            // Scale by sqrt(2) so the ellipse passes outside the rectangle corners.
            let rx = cs as f64 * (c1 - c0 + 1) as f64 / 2.0 * std::f64::consts::SQRT_2;
            let ry = cs as f64 * (r1 - r0 + 1) as f64 / 2.0 * std::f64::consts::SQRT_2;
            let _ = writeln!(s, r#"<ellipse cx="{cx:.2}" cy="{cy:.2}" rx="{rx:.2}" ry="{ry:.2}"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }

    if options.labels {
        let _ = writeln!(s, r##"<g class="labels" fill="#000000">"##);
        for (i, e) in grid.axis_x.iter().enumerate() {
            let y = top + cs * i as u32 + cs / 2 + FONT / 3;
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, left - 4, xml_escape(&e.to_string()));
        }
        for (j, e) in grid.axis_y.iter().enumerate() {
            let x = left + cs * j as u32 + cs / 2 + FONT / 3;
            let y = top - 4;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})">{}</text>"#,
                xml_escape(&e.to_string())
            );
        }
        let _ = writeln!(s, "</g>");
    }

    let legend_h = gh.max(64) as f64;
    let step = legend_h / LEGEND_STEPS as f64;
    let _ = writeln!(s, r#"<g class="legend">"#);
    for k in 0..LEGEND_STEPS {
        // Top of the bar is the high end of the range.
        let idx = 255 - (k * 256 + 128) / LEGEND_STEPS;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            top as f64 + step * k as f64,
            step,
            hex(options.color_map.entry(idx))
        );
    }
    let lx = legend_x + 20;
    let _ = writeln!(s, r#"<text x="{lx}" y="{}">{}</text>"#, top + FONT, range.1);
    let _ = writeln!(s, r#"<text x="{lx}" y="{:.2}">{}</text>"#, top as f64 + legend_h, range.0);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}
