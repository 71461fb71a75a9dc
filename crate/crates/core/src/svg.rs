//! Dependency-free SVG line charts for grid records. Output bytes are a
//! pure function of the input records, so charts can be diffed.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::ExperimentRecord;
use crate::fmt;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn metric_value(record: &ExperimentRecord, metric: &str) -> Result<f64> {
    match metric {
        "test_acc" => Ok(record.test_acc),
        "energy_ratio" => Ok(record.energy_ratio),
        "latency_ops" => Ok(record.latency_ops as f64),
        other => Err(Error::invalid(format!(
            "unknown metric '{other}' (expected test_acc, energy_ratio, or latency_ops)"
        ))),
    }
}

fn group_value(record: &ExperimentRecord, group_by: &str) -> Result<String> {
    match group_by {
        "dataset" => Ok(record.dataset.clone()),
        "sponge_pct" => Ok(format!("sponge {}%", record.sponge_pct)),
        "prune_type" => Ok(record.prune_type.as_str().to_string()),
        "prune_pct" => Ok(format!("prune {}%", record.prune_pct)),
        "seed" => Ok(format!("seed {}", record.seed)),
        other => Err(Error::invalid(format!(
            "unknown group-by field '{other}' (expected dataset, sponge_pct, prune_type, prune_pct, or seed)"
        ))),
    }
}

/// Padded y-axis range: min..max of the metric widened by 5% of the span
/// on each side.
pub fn axis_range(values: &[f64]) -> (f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = if max > min {
        0.05 * (max - min)
    } else {
        (0.05 * max.abs()).max(1e-6)
    };
    (min - pad, max + pad)
}

/// Render a line chart of `metric`, one polyline per distinct `group_by`
/// value. The x axis is the poison percentage unless the records all
/// share one poison level (or are grouped by it), in which case it is
/// the prune percentage. Points sharing (group, x) are averaged.
pub fn emit_trend_svg(
    records: &[ExperimentRecord],
    metric: &str,
    group_by: &str,
    path: &Path,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to plot"));
    }
    let distinct_sponge: std::collections::BTreeSet<u32> =
        records.iter().map(|r| r.sponge_pct).collect();
    let x_is_prune = group_by == "sponge_pct" || distinct_sponge.len() == 1;
    let x_label = if x_is_prune {
        "prune_pct"
    } else {
        "sponge_pct"
    };

    // group -> x -> metric samples
    let mut series: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let x = if x_is_prune {
            r.prune_pct
        } else {
            r.sponge_pct
        };
        series
            .entry(group_value(r, group_by)?)
            .or_default()
            .entry(x)
            .or_default()
            .push(metric_value(r, metric)?);
    }

    let mut all_means = Vec::new();
    let mut all_x = Vec::new();
    for points in series.values() {
        for (&x, ys) in points {
            all_x.push(x as f64);
            all_means.push(ys.iter().sum::<f64>() / ys.len() as f64);
        }
    }
    let (y_min, y_max) = axis_range(&all_means);
    let x_min = all_x.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = all_x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_x = |x: f64| MARGIN_LEFT + (x - x_min) / x_span * plot_w;
    let to_y = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{metric} vs {x_label}</text>\n",
        MARGIN_LEFT + plot_w / 2.0
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        r = MARGIN_LEFT + plot_w,
        b = MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    ));

    // y ticks
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = to_y(v);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#cccccc\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            y + 4.0,
            fmt::sig(v, 4)
        ));
    }

    // x ticks at the distinct x values
    let xs: std::collections::BTreeSet<u32> = series
        .values()
        .flat_map(|pts| pts.keys().cloned())
        .collect();
    for &x in &xs {
        let px = to_x(x as f64);
        svg.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{b:.2}\" x2=\"{px:.2}\" y2=\"{b2:.2}\" stroke=\"black\"/>\n",
            b = MARGIN_TOP + plot_h,
            b2 = MARGIN_TOP + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{x}</text>\n",
            MARGIN_TOP + plot_h + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));

    // series polylines + legend
    for (idx, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|(&x, ys)| {
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                format!("{:.2},{:.2}", to_x(x as f64), to_y(mean))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        for c in &coords {
            let (px, py) = c.split_once(',').expect("coordinate pair");
            svg.push_str(&format!(
                "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = MARGIN_TOP + 14.0 * idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{lx2:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            lx = MARGIN_LEFT + plot_w + 10.0,
            lx2 = MARGIN_LEFT + plot_w + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>\n",
            MARGIN_LEFT + plot_w + 35.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");

    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
