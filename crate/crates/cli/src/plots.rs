//! SVG renderings of the CSV outputs.

use std::collections::BTreeMap;
use std::path::Path;

use fabcap_core::eval::StrategySummary;
use fabcap_core::trainer::{ActionRow, MetricsRow};
use plotters::prelude::*;

use crate::common::{CliError, CliResult};

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(format!("plot: {e}"))
}

fn range(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(1e-3);
    (lo - pad, hi + pad)
}

type Series<'a> = (&'a str, Vec<(f64, f64)>);

fn line_panel(area: &DrawingArea<SVGBackend, plotters::coord::Shift>, title: &str, x_max: f64, series: &[Series]) -> CliResult<()> {
    let (lo, hi) = range(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).collect::<Vec<_>>().into_iter());
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x_max.max(1.0), lo..hi)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("epoch").draw().map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    Ok(())
}

/// Completed lots, cycle time and DGR per epoch from metrics.csv.
pub fn training_curves(dir: &Path) -> CliResult<()> {
    let mut rdr = csv::Reader::from_path(dir.join("metrics.csv"))?;
    let rows: Vec<MetricsRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let epochs: Vec<&MetricsRow> = rows.iter().filter(|r| r.is_epoch_row()).collect();
    let x_max = epochs.iter().map(|r| r.epoch).max().unwrap_or(1) as f64;
    let pick = |f: &dyn Fn(&MetricsRow) -> Option<f64>| -> Vec<(f64, f64)> {
        epochs.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
    };
    let path = dir.join("training_curves.svg");
    let root = SVGBackend::new(&path, (1200, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 3));
    line_panel(&panels[0], "completed lots", x_max, &[("lots", pick(&|r| Some(r.completed_lots)))])?;
    line_panel(&panels[1], "cycle time (days)", x_max, &[("cycle time", pick(&|r| r.avg_cycle_time_days))])?;
    line_panel(&panels[2], "daily going rate", x_max, &[("DGR", pick(&|r| Some(r.dgr_with)))])?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Actions per machine family and epoch from actions.csv, one panel per head.
pub fn action_frequency(dir: &Path) -> CliResult<()> {
    let mut rdr = csv::Reader::from_path(dir.join("actions.csv"))?;
    let rows: Vec<ActionRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let x_max = rows.iter().map(|r| r.epoch).max().unwrap_or(1) as f64;
    let heads = ["uptime", "efficiency", "dedication_add", "dedication_remove"];
    let path = dir.join("action_frequency.svg");
    let root = SVGBackend::new(&path, (1200, 800)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((2, 2));
    for (panel, head) in panels.iter().zip(heads) {
        let mut counts: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.head == head) {
            *counts.entry(r.family.as_str()).or_default().entry(r.epoch).or_default() += 1.0;
        }
        // Keep the most used families so the legend stays readable.
        let mut fams: Vec<(&str, f64)> = counts.iter().map(|(f, c)| (*f, c.values().sum())).collect();
        fams.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        fams.truncate(PALETTE.len());
        let epochs: Vec<usize> = (1..=x_max as usize).collect();
        let series: Vec<Series> = fams
            .iter()
            .map(|(f, _)| (*f, epochs.iter().map(|&e| (e as f64, counts[f].get(&e).copied().unwrap_or(0.0))).collect()))
            .collect();
        if series.is_empty() {
            line_panel(panel, &format!("{head} (no actions)"), x_max, &[])?;
        } else {
            line_panel(panel, head, x_max, &series)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Bars of the three KPI means per strategy.
pub fn comparison(path: &Path, summaries: &[StrategySummary]) -> CliResult<()> {
    let root = SVGBackend::new(path, (1200, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 3));
    let metrics: [(&str, fn(&StrategySummary) -> f64); 3] = [
        ("completed lots", |s| s.completed_lots),
        ("cycle time (days)", |s| s.avg_cycle_time_days),
        ("daily going rate", |s| s.daily_going_rate),
    ];
    let n = summaries.len();
    for (panel, (title, f)) in panels.iter().zip(metrics) {
        let hi = summaries.iter().map(f).filter(|v| v.is_finite()).fold(0.0, f64::max).max(1e-3) * 1.15;
        let mut chart = ChartBuilder::on(panel)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..n as f64, 0.0..hi)
            .map_err(plot_err)?;
        let names: Vec<String> = summaries.iter().map(|s| s.strategy.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n.max(1) * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - i as f64 - 0.5).abs() < 0.26 && i < names.len() { names[i].clone() } else { String::new() }
            })
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(summaries.iter().enumerate().filter(|(_, s)| f(s).is_finite()).map(|(i, s)| {
                let c = PALETTE[i % PALETTE.len()];
                Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, f(s))], c.filled())
            }))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
