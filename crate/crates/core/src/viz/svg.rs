//! SVG output: stacked per-electrode traces colored by the processed map,
//! and inverse-distance-weighted scalp maps.

use std::fmt::Write;

use super::{ProcessedMaps, COLOR_CEILING, COLOR_FLOOR};
use crate::error::{Error, Result};
use crate::synth::ElectrodeLayout;
use crate::tensor::{Real, Tensor};

const LOW: [u8; 3] = [0x21, 0x66, 0xac];
const MID: [u8; 3] = [0xf0, 0xf0, 0xf0];
const HIGH: [u8; 3] = [0xb2, 0x18, 0x2b];

pub const TOPOMAP_GRID: usize = 64;

/// Diverging blue / light gray / red map over [-1, 1]; values outside are
/// clipped.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(COLOR_FLOOR, COLOR_CEILING) };
    let (from, to, f) = if v < 0.0 { (MID, LOW, -v) } else { (MID, HIGH, v) };
    let mut out = [0u8; 3];
    for i in 0..3 {
        let c = from[i] as f64 + (to[i] as f64 - from[i] as f64) * f;
        out[i] = c.round() as u8;
    }
    out
}

pub fn colormap_hex(v: f64) -> String {
    let [r, g, b] = colormap(v);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const LEFT: f64 = 70.0;
const PLOT_WIDTH: f64 = 960.0;
const ROW: f64 = 28.0;
const TOP: f64 = 40.0;

/// One trace group per electrode; each run of equally colored segments is
/// one polyline.
pub fn render_sample_view<F: Real>(
    sample: &Tensor<F>,
    processed: &ProcessedMaps,
    channel_names: &[String],
    header: &str,
) -> Result<String> {
    let [n, t] = match sample.shape() {
        [n, t] => [*n, *t],
        s => return Err(Error::InvalidArgument(format!("sample must be [N, T], got {s:?}"))),
    };
    if processed.sample.shape() != [n, t] {
        return Err(Error::InvalidArgument(format!(
            "processed map {:?} does not match sample [{n}, {t}]",
            processed.sample.shape()
        )));
    }
    if channel_names.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} channel names for {n} channels",
            channel_names.len()
        )));
    }
    let width = LEFT + PLOT_WIDTH + 20.0;
    let height = TOP + ROW * n as f64 + 10.0;
    let dx = if t > 1 { PLOT_WIDTH / (t - 1) as f64 } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.0}" y="24" font-family="monospace" font-size="14">{}</text>"#,
        escape(header)
    );
    for (ch, name) in channel_names.iter().enumerate() {
        let row: Vec<f64> = sample.data()[ch * t..(ch + 1) * t]
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gain = if scale > 0.0 { 0.45 * ROW / scale } else { 0.0 };
        let base = TOP + ROW * (ch as f64 + 0.5);
        let pt = |i: usize| (LEFT + dx * i as f64, base - gain * row[i]);
        let colors: Vec<String> = processed.sample.data()[ch * t..(ch + 1) * t]
            .iter()
            .map(|&v| colormap_hex(v))
            .collect();
        let _ = writeln!(s, r#"<g class="trace" data-channel="{}">"#, escape(name));
        let _ = writeln!(
            s,
            r#"<text x="{:.0}" y="{:.1}" font-family="monospace" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            base + 4.0,
            escape(name)
        );
        let segments = t.saturating_sub(1).max(1);
        let mut start = 0;
        while start < segments {
            let mut end = start + 1;
            while end < segments && colors[end] == colors[start] {
                end += 1;
            }
            let mut points = String::new();
            for i in start..=end.min(t - 1) {
                let (x, y) = pt(i);
                let _ = write!(points, "{x:.2},{y:.2} ");
            }
            if t == 1 {
                let (x, y) = pt(0);
                let _ = write!(points, "{:.2},{y:.2} ", x + 1.0);
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                colors[start],
                points.trim_end()
            );
            start = end;
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Inverse-distance weighting with power 2; exact at the nodes.
pub fn idw(values: &[f64], nodes: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&v, &(nx, ny)) in values.iter().zip(nodes) {
        let d2 = (x - nx) * (x - nx) + (y - ny) * (y - ny);
        if d2 == 0.0 {
            return v;
        }
        num += v / d2;
        den += 1.0 / d2;
    }
    num / den
}

fn layout_nodes(values: &[f64], layout: &ElectrodeLayout) -> Result<Vec<(f64, f64)>> {
    if values.len() != layout.len() {
        return Err(Error::InvalidArgument(format!(
            "{} channel values for a {}-electrode layout",
            values.len(),
            layout.len()
        )));
    }
    let e = layout.electrodes();
    for i in 0..e.len() {
        for j in 0..i {
            if e[i].x == e[j].x && e[i].y == e[j].y {
                return Err(Error::DuplicateCoordinate {
                    first: e[j].name.clone(),
                    second: e[i].name.clone(),
                });
            }
        }
    }
    Ok(e.iter().map(|e| (e.x, e.y)).collect())
}

fn cell_centre(i: usize, size: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / size as f64
}

/// Interpolated values on a `size x size` grid over [-1, 1]^2, row-major
/// from the top (nose) down; cells whose centre lies outside the unit disc
/// are `None`.
pub fn topomap_grid(values: &[f64], layout: &ElectrodeLayout, size: usize) -> Result<Vec<Option<f64>>> {
    let nodes = layout_nodes(values, layout)?;
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = -cell_centre(row, size);
        for col in 0..size {
            let x = cell_centre(col, size);
            out.push((x * x + y * y <= 1.0).then(|| idw(values, &nodes, x, y)));
        }
    }
    Ok(out)
}

pub fn render_topomap(values: &[f64], layout: &ElectrodeLayout, title: &str) -> Result<String> {
    let grid = topomap_grid(values, layout, TOPOMAP_GRID)?;
    let side = 400.0;
    let margin = 30.0;
    let cell = side / TOPOMAP_GRID as f64;
    let total = side + 2.0 * margin;
    let to_px = |x: f64, y: f64| (margin + (x + 1.0) * side / 2.0, margin + (1.0 - y) * side / 2.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total:.0}" height="{:.0}" viewBox="0 0 {total:.0} {:.0}">"#,
        total + 20.0,
        total + 20.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{margin:.0}" y="20" font-family="monospace" font-size="13">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(s, r#"<g class="interpolation" shape-rendering="crispEdges">"#);
    for (k, v) in grid.iter().enumerate() {
        if let Some(v) = v {
            let (row, col) = (k / TOPOMAP_GRID, k % TOPOMAP_GRID);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"/>"#,
                margin + col as f64 * cell,
                margin + 20.0 + row as f64 * cell,
                colormap_hex(*v)
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let (cx, cy) = to_px(0.0, 0.0);
    let _ = writeln!(
        s,
        r#"<circle cx="{cx:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="black"/>"#,
        cy + 20.0,
        side / 2.0
    );
    let _ = writeln!(s, r#"<g class="electrodes" font-family="monospace" font-size="9">"#);
    for e in layout.electrodes() {
        let (x, y) = to_px(e.x, e.y);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{:.2}" r="2.5" fill="black"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y + 20.0,
            x + 3.5,
            y + 17.0,
            escape(&e.name)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Electrode;

    fn processed(n: usize, t: usize, v: Vec<f64>) -> ProcessedMaps {
        ProcessedMaps {
            mask: v.iter().map(|&x| x > 0.0).collect(),
            sample: Tensor::new(vec![n, t], v).unwrap(),
            channel: vec![0.0; n],
            highlighted_channels: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(-1.0), LOW);
        assert_eq!(colormap(1.0), HIGH);
        assert_eq!(colormap(0.0), MID);
        assert_eq!(colormap(-7.0), LOW);
        assert_eq!(colormap_hex(1.0), "#b2182b");
        assert_eq!(colormap_hex(-1.0), "#2166ac");
    }

    #[test]
    fn toy_view_is_well_formed_with_one_trace() {
        let x = Tensor::<f32>::from_f64(&[1, 4], &[0.0, 1.0, -1.0, 0.5]).unwrap();
        let p = processed(1, 4, vec![-1.0, 0.5, 0.5, 1.0]);
        let svg = render_sample_view(&x, &p, &["C<3>".into()], "subject 1 & label 0").unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let groups = doc
            .descendants()
            .filter(|n| n.has_tag_name("g") && n.attribute("class") == Some("trace"))
            .count();
        assert_eq!(groups, 1);
        assert!(svg.contains("#2166ac"));
        let again = render_sample_view(&x, &p, &["C<3>".into()], "subject 1 & label 0").unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn idw_properties() {
        let nodes = [(-0.5, 0.0), (0.5, 0.0), (0.0, 0.7)];
        assert_eq!(idw(&[3.0, -2.0, 9.0], &nodes, 0.5, 0.0), -2.0);
        assert!((idw(&[0.4; 3], &nodes, 0.1, -0.3) - 0.4).abs() < 1e-15);
        assert!(idw(&[1.0, -1.0], &nodes[..2], 0.0, 0.0).abs() < 1e-15);
        assert!(idw(&[1.0, -1.0], &nodes[..2], 0.0, 0.6).abs() < 1e-15);
    }

    #[test]
    fn topomap_constant_field_and_disc_clip() {
        let layout = ElectrodeLayout::default_30();
        let grid = topomap_grid(&[0.25; 30], &layout, TOPOMAP_GRID).unwrap();
        assert_eq!(grid.len(), 64 * 64);
        assert!(grid[0].is_none());
        assert!(grid.iter().flatten().all(|&v| (v - 0.25).abs() < 1e-12));
        let inside = grid.iter().filter(|v| v.is_some()).count() as f64 / 4096.0;
        assert!((inside - std::f64::consts::PI / 4.0).abs() < 0.02);
        let svg = render_topomap(&[0.25; 30], &layout, "t").unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn duplicate_coordinates_rejected() {
        let a = ElectrodeLayout::new(vec![
            Electrode { name: "A".into(), x: 0.1, y: 0.1 },
            Electrode { name: "B".into(), x: 0.2, y: 0.1 },
        ])
        .unwrap();
        assert!(render_topomap(&[1.0, 2.0], &a, "ok").is_ok());
        assert!(matches!(
            ElectrodeLayout::new(vec![
                Electrode { name: "A".into(), x: 0.1, y: 0.1 },
                Electrode { name: "B".into(), x: 0.1, y: 0.1 },
            ]),
            Err(Error::DuplicateCoordinate { .. })
        ));
        assert!(render_topomap(&[1.0], &a, "bad").is_err());
    }
}
