//! SVG figures: per-run metric panels and per-sweep heatmaps.

use std::path::Path;

use anyhow::{bail, Result};
use otlab_core::solver::HistoryRow;
use otlab_core::sweep::CellAggregate;
use plotters::prelude::*;
use plotters::style::text_anchor::{HPos, Pos, VPos};

type Column = (&'static str, fn(&HistoryRow) -> f64);

const PANELS: [Column; 6] = [
    ("Map cosine similarity", |r| r.metrics.map_cos),
    ("Map error", |r| r.metrics.map_l2),
    ("Potential error", |r| r.metrics.pot_mse),
    ("Potential gradient error", |r| r.metrics.pot_grad_mse),
    ("Flatness", |r| r.metrics.flatness),
    ("d_KR", |r| r.metrics.dkr),
];

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Six metric panels over iterations. `marker` draws a vertical line, used
/// for the potential perturbation.
pub fn run_panels(rows: &[HistoryRow], marker: Option<usize>, path: &Path) -> Result<()> {
    if rows.is_empty() {
        bail!("history is empty; nothing to plot");
    }
    let root = SVGBackend::new(path, (1200, 700)).into_drawing_area();
    root.fill(&WHITE)?;
    let areas = root.split_evenly((2, 3));
    let x_last = rows.iter().map(|r| r.iteration).max().unwrap_or(0) as f64;
    let (x0, x1) = padded(0.0, x_last);

    for (area, (title, get)) in areas.iter().zip(PANELS) {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.iteration as f64, get(r)))
            .filter(|p| p.1.is_finite())
            .collect();
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let (y0, y1) = if pts.is_empty() { (0.0, 1.0) } else { padded(lo, hi) };
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 18))
            .margin(8)
            .x_label_area_size(30)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart
            .configure_mesh()
            .x_desc("iteration")
            .y_label_formatter(&|v| format!("{v:.2e}"))
            .draw()?;
        if pts.len() == 1 {
            // A single checkpoint is drawn as a flat line across the axis.
            let y = pts[0].1;
            chart.draw_series(LineSeries::new([(x0, y), (x1, y)], &BLUE))?;
        } else {
            chart.draw_series(LineSeries::new(pts, &BLUE))?;
        }
        if let Some(m) = marker {
            let m = m as f64;
            chart.draw_series(LineSeries::new([(m, y0), (m, y1)], &RED))?;
        }
    }
    root.present()?;
    Ok(())
}

fn label(v: f64) -> String {
    format!("{v}")
}

/// Colour ramp from pale yellow (low) to dark red (high).
fn ramp(t: f64) -> RGBColor {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(lerp(255.0, 140.0), lerp(245.0, 20.0), lerp(200.0, 30.0))
}

/// Heatmap of one aggregate metric over the `(K, ratio)` grid. Cells are
/// coloured by the mean on a log scale and annotated with the raw value.
pub fn heatmap(
    cells: &[CellAggregate],
    k_values: &[usize],
    ratios: &[f64],
    title: &str,
    value: fn(&CellAggregate) -> f64,
    path: &Path,
) -> Result<()> {
    if cells.is_empty() || k_values.is_empty() || ratios.is_empty() {
        bail!("sweep has no cells to plot");
    }
    let finite: Vec<f64> = cells.iter().map(value).filter(|v| v.is_finite() && *v > 0.0).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();

    let root = SVGBackend::new(path, (140 + 110 * k_values.len() as u32, 120 + 70 * ratios.len() as u32))
        .into_drawing_area();
    root.fill(&WHITE)?;
    let nk = k_values.len();
    let nr = ratios.len();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((0..nk).into_segmented(), (0..nr).into_segmented())?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_labels(nk)
        .y_labels(nr)
        .x_desc("K")
        .y_desc("eta_psi / eta_t")
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) if *i < nk => k_values[*i].to_string(),
            _ => String::new(),
        })
        .y_label_formatter(&|v| match v {
            SegmentValue::CenterOf(j) if *j < nr => label(ratios[*j]),
            _ => String::new(),
        })
        .draw()?;

    for (i, &k) in k_values.iter().enumerate() {
        for (j, &r) in ratios.iter().enumerate() {
            let cell = cells.iter().find(|c| c.k == k && c.ratio == r);
            let v = cell.map(value).unwrap_or(f64::NAN);
            let colour = if v.is_finite() && v > 0.0 {
                ramp(if hi > lo { (v.ln() - lo) / (hi - lo) } else { 0.5 })
            } else {
                RGBColor(200, 200, 200)
            };
            chart.draw_series(std::iter::once(Rectangle::new(
                [
                    (SegmentValue::Exact(i), SegmentValue::Exact(j)),
                    (SegmentValue::Exact(i + 1), SegmentValue::Exact(j + 1)),
                ],
                colour.filled(),
            )))?;
            let text = if v.is_finite() { format!("{v:.3e}") } else { "n/a".into() };
            chart.draw_series(std::iter::once(Text::new(
                text,
                (SegmentValue::CenterOf(i), SegmentValue::CenterOf(j)),
                ("sans-serif", 14)
                    .into_font()
                    .color(&BLACK)
                    .pos(Pos::new(HPos::Center, VPos::Center)),
            )))?;
        }
    }
    root.present()?;
    Ok(())
}
