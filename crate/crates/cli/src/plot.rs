//! SVG curves and heatmaps built from metric and similarity CSV files only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gfr_core::analysis::CCA_CSV_HEADER;
use gfr_core::eval::{average_accuracy, average_forgetting, AccuracyMatrix};
use gfr_core::{GfrError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

type Series = (String, Vec<(f64, f64)>);

#[derive(Default)]
struct Curves {
    accuracy: Vec<Series>,
    forgetting: Vec<Series>,
}

/// Label of an input: its run directory name, else its file stem.
fn label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn header(text: &str) -> &str {
    text.lines().next().unwrap_or_default().trim()
}

fn curves_from_matrix(m: &AccuracyMatrix, name: &str, curves: &mut Curves) -> Result<()> {
    let mut acc = Vec::new();
    let mut fgt = Vec::new();
    for k in 1..=m.num_tasks() {
        acc.push((k as f64, average_accuracy(m, k)?));
        if k > 1 {
            fgt.push((k as f64, average_forgetting(m, k)?));
        }
    }
    curves.accuracy.push((name.to_string(), acc));
    curves.forgetting.push((name.to_string(), fgt));
    Ok(())
}

fn curves_from_summary(path: &Path, text: &str, name: &str, curves: &mut Curves) -> Result<()> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut acc = Vec::new();
    let mut fgt = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| GfrError::format(path, e.to_string()))?;
        let num = |i: usize| -> Result<Option<f64>> {
            let field = row.get(i).unwrap_or_default().trim();
            if field.is_empty() {
                return Ok(None);
            }
            field
                .parse()
                .map(Some)
                .map_err(|_| GfrError::format(path, format!("bad number `{field}`")))
        };
        let k = num(0)?.ok_or_else(|| GfrError::format(path, "missing k"))?;
        if let Some(a) = num(1)? {
            acc.push((k, a));
        }
        if let Some(f) = num(2)? {
            fgt.push((k, f));
        }
    }
    curves.accuracy.push((name.to_string(), acc));
    curves.forgetting.push((name.to_string(), fgt));
    Ok(())
}

/// `layer → (t, t′) → similarity`.
fn read_cca(path: &Path, text: &str) -> Result<BTreeMap<String, BTreeMap<(usize, usize), f64>>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut layers: BTreeMap<String, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| GfrError::format(path, e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or_default().trim().to_string();
        let bad = |what: &str| GfrError::format(path, format!("bad {what} `{}`", row.iter().collect::<Vec<_>>().join(",")));
        let t = field(1).parse().map_err(|_| bad("t"))?;
        let tp = field(2).parse().map_err(|_| bad("t_prime"))?;
        let s = field(3).parse().map_err(|_| bad("similarity"))?;
        layers.entry(field(0)).or_default().insert((t, tp), s);
    }
    Ok(layers)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, 0.0f64, 1.0f64);
    for &(x, y) in points {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + if x_max > 1.0 { (x - 1.0) / (x_max - 1.0) * pw } else { pw / 2.0 };
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * ph;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>").unwrap();
    writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>").unwrap();
    for k in 1..=x_max as usize {
        let x = sx(k as f64);
        writeln!(svg, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{k}</text>", y0 + 16.0).unwrap();
    }
    for i in 0..=5 {
        let v = y_min + (y_max - y_min) * i as f64 / 5.0;
        let y = sy(v);
        writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>", x0 - 6.0, y + 4.0).unwrap();
        writeln!(svg, "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#ddd\"/>").unwrap();
    }
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">tasks learned</text>",
        WIDTH / 2.0,
        HEIGHT - 18.0
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        if !path.is_empty() {
            writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
                path.join(" ")
            )
            .unwrap();
        }
        for &(x, y) in pts {
            writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", sx(x), sy(y)).unwrap();
        }
        let ly = MARGIN + 16.0 * i as f64;
        writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            x1 - 120.0,
            ly - 9.0,
            x1 - 105.0,
            ly,
            escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn heatmap(title: &str, cells: &BTreeMap<(usize, usize), f64>) -> String {
    let n = cells.keys().map(|&(t, tp)| t.max(tp)).max().unwrap_or(1);
    let cell = ((WIDTH - 2.0 * MARGIN) / n as f64).min(60.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
    for (&(t, tp), &s) in cells {
        let x = MARGIN + (tp - 1) as f64 * cell;
        let y = MARGIN + (t - 1) as f64 * cell;
        let shade = (255.0 * (1.0 - s.clamp(0.0, 1.0))).round() as u8;
        writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({shade},{shade},255)\" stroke=\"white\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{s:.2}</text>",
            x + cell / 2.0,
            y + cell / 2.0 + 4.0
        )
        .unwrap();
    }
    for k in 1..=n {
        let c = MARGIN + (k as f64 - 0.5) * cell;
        writeln!(svg, "<text x=\"{c:.1}\" y=\"{}\" text-anchor=\"middle\">{k}</text>", MARGIN - 6.0).unwrap();
        writeln!(svg, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{k}</text>", MARGIN - 6.0, c + 4.0).unwrap();
    }
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\">rows: model after task t; columns: probe task t′</text>",
        MARGIN,
        MARGIN + n as f64 * cell + 20.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

fn write(path: PathBuf, contents: String, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| GfrError::io(&path, e))?;
    written.push(path);
    Ok(())
}

pub fn run(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut curves = Curves::default();
    let mut heatmaps = Vec::new();
    for path in inputs {
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            return Err(GfrError::Config(format!(
                "plot inputs must be CSV files, got {}",
                path.display()
            )));
        }
        let text = fs::read_to_string(path).map_err(|e| GfrError::io(path, e))?;
        let name = label(path);
        match header(&text) {
            "after_task,eval_task,accuracy" => {
                curves_from_matrix(&AccuracyMatrix::from_csv(path, &text)?, &name, &mut curves)?
            }
            "k,avg_accuracy,avg_forgetting" => curves_from_summary(path, &text, &name, &mut curves)?,
            h if h == CCA_CSV_HEADER => {
                for (layer, cells) in read_cca(path, &text)? {
                    heatmaps.push((format!("{name}_{layer}"), format!("{name}: SVCCA similarity at {layer}"), cells));
                }
            }
            other => return Err(GfrError::format(path, format!("unrecognized CSV header `{other}`"))),
        }
    }
    fs::create_dir_all(out).map_err(|e| GfrError::io(out, e))?;
    let mut written = Vec::new();
    if !curves.accuracy.is_empty() {
        write(
            out.join("accuracy.svg"),
            line_chart("Average accuracy", "average accuracy", &curves.accuracy),
            &mut written,
        )?;
        write(
            out.join("forgetting.svg"),
            line_chart("Average forgetting", "average forgetting", &curves.forgetting),
            &mut written,
        )?;
    }
    for (stem, title, cells) in &heatmaps {
        write(out.join(format!("cca_{stem}.svg")), heatmap(title, cells), &mut written)?;
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}
