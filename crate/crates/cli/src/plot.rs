//! Plot-data emission: per-method whitespace-separated series plus a
//! minimal self-contained SVG scatter for each figure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use sdkd_core::error::Result;

use crate::grid::ResultRow;

const COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
];

/// (x, y) series keyed by method name.
pub type SeriesMap = BTreeMap<String, Vec<(f64, f64)>>;

/// Mean top-1 per (method, k), on the subset-size axis.
pub fn accuracy_vs_k(rows: &[ResultRow]) -> SeriesMap {
    aggregate(rows, |r| r.k as f64)
}

/// Mean top-1 per (method, k), on the per-iteration cost axis
/// (energy+gradient plus sampling, milliseconds).
pub fn accuracy_vs_cost(rows: &[ResultRow]) -> SeriesMap {
    aggregate(rows, |r| r.last_layer_ms + r.sampling_ms)
}

fn aggregate(rows: &[ResultRow], x_of: impl Fn(&ResultRow) -> f64) -> SeriesMap {
    // Group by (method, k), average top1 and x over seeds.
    let mut acc: BTreeMap<(String, usize), (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        if !r.top1.is_finite() {
            continue;
        }
        let e = acc.entry((r.method.clone(), r.k)).or_insert((0.0, 0.0, 0));
        e.0 += x_of(r);
        e.1 += r.top1;
        e.2 += 1;
    }
    let mut out: SeriesMap = BTreeMap::new();
    for ((method, _k), (x_sum, y_sum, n)) in acc {
        out.entry(method)
            .or_default()
            .push((x_sum / n as f64, y_sum / n as f64));
    }
    for series in out.values_mut() {
        series.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    }
    out
}

/// One `<name>.<method>.dat` file per method: `x y` lines.
pub fn emit_plotdata(series: &SeriesMap, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (method, points) in series {
        let mut f = File::create(dir.join(format!("{name}.{method}.dat")))?;
        for (x, y) in points {
            writeln!(f, "{x} {y}")?;
        }
    }
    Ok(())
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Self-contained SVG scatter with axes, tick labels, and a legend.
pub fn emit_svg(series: &SeriesMap, path: &Path, x_label: &str, y_label: &str) -> Result<()> {
    let (width, height) = (640.0, 440.0);
    let (ml, mr, mt, mb) = (70.0, 150.0, 20.0, 50.0);
    let pw = width - ml - mr;
    let ph = height - mt - mb;

    let all: Vec<(f64, f64)> = series.values().flatten().cloned().collect();
    let (mut x0, mut x1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (mut y0, mut y1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.05;
        y1 += 0.05;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph
    ));
    // Tick labels at the extremes
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        mt + ph + 18.0,
        fmt2(x0)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        ml + pw,
        mt + ph + 18.0,
        fmt2(x1)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
        ml - 6.0,
        mt + ph,
        fmt2(y0)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
        ml - 6.0,
        mt + 10.0,
        fmt2(y1)
    ));
    // Axis labels
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n",
        ml + pw / 2.0,
        height - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0
    ));

    for (idx, (method, points)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        for (x, y) in points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n",
                sx(*x),
                sy(*y)
            ));
        }
        if points.len() > 1 {
            let path_d: Vec<String> = points
                .iter()
                .enumerate()
                .map(|(i, (x, y))| {
                    format!(
                        "{}{:.2} {:.2}",
                        if i == 0 { "M" } else { "L" },
                        sx(*x),
                        sy(*y)
                    )
                })
                .collect();
            svg.push_str(&format!(
                "<path d=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.5\"/>\n",
                path_d.join(" ")
            ));
        }
        let ly = mt + 14.0 + idx as f64 * 18.0;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n",
            ml + pw + 16.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{method}</text>\n",
            ml + pw + 26.0,
            ly
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Emit both figures (series + SVG) for a result table.
pub fn emit_all(rows: &[ResultRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let by_k = accuracy_vs_k(rows);
    emit_plotdata(&by_k, dir, "acc_vs_k")?;
    emit_svg(
        &by_k,
        &dir.join("acc_vs_k.svg"),
        "subset size k",
        "top-1 accuracy",
    )?;
    let by_cost = accuracy_vs_cost(rows);
    emit_plotdata(&by_cost, dir, "acc_vs_cost")?;
    emit_svg(
        &by_cost,
        &dir.join("acc_vs_cost.svg"),
        "per-iteration cost (ms)",
        "top-1 accuracy",
    )?;
    Ok(())
}
