//! Static SVG 1.1 plots: ROC curves, log-MSE strip plots and
//! reconstruction overlays.

use std::fmt::Write as _;

use super::report::{Method, Report};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn header(width: f64, height: f64, title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <title>{title}</title>\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

/// Maps data coordinates into a pixel rectangle.
#[derive(Clone, Copy)]
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn border(&self, s: &mut String) {
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444\"/>",
            self.left, self.top, self.width, self.height
        );
    }

    fn polyline(&self, pts: impl IntoIterator<Item = (f64, f64)>, attrs: &str) -> String {
        let coords: Vec<String> = pts
            .into_iter()
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        format!("<polyline points=\"{}\" fill=\"none\" {attrs}/>\n", coords.join(" "))
    }
}

fn text(s: &mut String, x: f64, y: f64, anchor: &str, body: &str) {
    let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{body}</text>");
}

/// One panel per method; one polyline per latent dimension, with the
/// calibrated operating point marked.
pub fn roc_plot(report: &Report) -> String {
    let dims = report.latent_dims();
    let panel = 300.0;
    let mut s = header(2.0 * panel + 160.0, panel + 90.0, "ROC curves");
    for (p, method) in [Method::Pca, Method::Vae].into_iter().enumerate() {
        let f = Frame {
            left: 50.0 + p as f64 * (panel + 40.0),
            top: 30.0,
            width: panel,
            height: panel,
            x: (0.0, 1.0),
            y: (0.0, 1.0),
        };
        f.border(&mut s);
        s.push_str(&f.polyline([(0.0, 0.0), (1.0, 1.0)], "stroke=\"#bbb\" stroke-dasharray=\"4 3\""));
        text(&mut s, f.left + panel / 2.0, 20.0, "middle", &method.name().to_uppercase());
        text(&mut s, f.left + panel / 2.0, f.top + panel + 30.0, "middle", "false positive rate");
        for (i, &ld) in dims.iter().enumerate() {
            let Some(r) = report.result(method, ld) else { continue };
            let attrs = format!(
                "stroke=\"{}\" stroke-width=\"1.5\" data-method=\"{}\" data-latent=\"{ld}\"",
                colour(i),
                method.name()
            );
            s.push_str(&f.polyline(r.roc.points.iter().copied(), &attrs));
            if let (Some(sens), Some(spec)) = (r.metrics.sensitivity, r.metrics.specificity) {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\"/>",
                    f.px(1.0 - spec),
                    f.py(sens),
                    colour(i)
                );
            }
        }
    }
    text(&mut s, 20.0, 30.0 + panel / 2.0, "middle", "TPR");
    let lx = 2.0 * panel + 100.0;
    for (i, &ld) in dims.iter().enumerate() {
        let y = 40.0 + 16.0 * i as f64;
        let auc = report
            .result(Method::Vae, ld)
            .map_or_else(String::new, |r| format!(" AUC {:.3}", r.roc.auc));
        let _ = writeln!(
            s,
            "<rect x=\"{lx}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>",
            y - 9.0,
            colour(i)
        );
        text(&mut s, lx + 14.0, y, "start", &format!("Ld {ld}{auc}"));
    }
    s.push_str("</svg>\n");
    s
}

/// Deterministic horizontal jitter in [0, 1).
fn jitter(i: usize) -> f64 {
    ((i as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0
}

fn log_mse(v: f64) -> f64 {
    v.max(1e-12).log10()
}

/// Training, clean-test and artefact-test log10 MSE per (method, latent
/// dimension), with the sample threshold drawn across each column.
pub fn log_mse_plot(report: &Report) -> String {
    let dims = report.latent_dims();
    let columns: Vec<(Method, usize)> = [Method::Pca, Method::Vae]
        .into_iter()
        .flat_map(|m| dims.iter().map(move |&d| (m, d)))
        .filter(|&(m, d)| report.result(m, d).is_some())
        .collect();
    let all: Vec<f64> = report
        .results
        .iter()
        .flat_map(|r| r.train_mse.iter().chain(&r.test_mse).copied())
        .map(log_mse)
        .collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (-1.0, 1.0) };
    let col_w = 90.0;
    let f = Frame {
        left: 60.0,
        top: 30.0,
        width: col_w * columns.len().max(1) as f64,
        height: 360.0,
        x: (0.0, columns.len().max(1) as f64),
        y: (lo, hi),
    };
    let mut s = header(f.width + 100.0, f.height + 90.0, "log10 MSE");
    f.border(&mut s);
    for tick in (lo as i64)..=(hi as i64) {
        text(&mut s, f.left - 6.0, f.py(tick as f64) + 4.0, "end", &format!("1e{tick}"));
    }
    let strips = [("train", "#888"), ("test clean", "#1f77b4"), ("test artefact", "#d62728")];
    for (c, &(method, ld)) in columns.iter().enumerate() {
        let r = report.result(method, ld).expect("filtered above");
        let groups: [Vec<f64>; 3] = [
            r.train_mse.clone(),
            r.test_mse.iter().zip(&report.test_labels).filter(|(_, &l)| !l).map(|(v, _)| *v).collect(),
            r.test_mse.iter().zip(&report.test_labels).filter(|(_, &l)| l).map(|(v, _)| *v).collect(),
        ];
        for (g, values) in groups.iter().enumerate() {
            for (i, &v) in values.iter().enumerate() {
                let x = c as f64 + 0.1 + 0.27 * g as f64 + 0.2 * jitter(i);
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.6\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                    f.px(x),
                    f.py(log_mse(v)),
                    strips[g].1
                );
            }
        }
        let t = log_mse(r.thresholds.sample_threshold);
        s.push_str(&f.polyline(
            [(c as f64 + 0.05, t), (c as f64 + 0.95, t)],
            &format!(
                "stroke=\"black\" stroke-dasharray=\"3 2\" data-method=\"{}\" data-latent=\"{ld}\" class=\"threshold\"",
                method.name()
            ),
        ));
        text(
            &mut s,
            f.px(c as f64 + 0.5),
            f.top + f.height + 16.0,
            "middle",
            &format!("{} {ld}", method.name().to_uppercase()),
        );
    }
    for (g, (name, col)) in strips.iter().enumerate() {
        let y = f.top + f.height + 40.0 + 14.0 * g as f64;
        let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{col}\"/>", f.left + 5.0, y - 4.0);
        text(&mut s, f.left + 14.0, y, "start", name);
    }
    s.push_str("</svg>\n");
    s
}

/// Each stored example: input in grey, reconstruction in colour, flagged
/// timepoints shaded.
pub fn reconstruction_plot(report: &Report) -> String {
    let (w, h) = (700.0, 130.0);
    let mut s = header(w + 80.0, 20.0 + (h + 30.0) * report.examples.len().max(1) as f64, "reconstructions");
    for (k, e) in report.examples.iter().enumerate() {
        let n = e.values.len();
        let lo = e.values.iter().chain(&e.reconstruction).copied().fold(f64::INFINITY, f64::min);
        let hi = e.values.iter().chain(&e.reconstruction).copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        let f = Frame {
            left: 60.0,
            top: 30.0 + k as f64 * (h + 30.0),
            width: w,
            height: h,
            x: (0.0, n.max(2) as f64 - 1.0),
            y: (lo, hi),
        };
        let mut i = 0;
        while i < n {
            if e.timepoint_mask[i] {
                let start = i;
                while i < n && e.timepoint_mask[i] {
                    i += 1;
                }
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.1}\" width=\"{:.2}\" height=\"{h}\" fill=\"#f4c7c3\"/>",
                    f.px(start as f64),
                    f.top,
                    (f.px(i as f64 - 1.0) - f.px(start as f64)).max(1.0)
                );
            } else {
                i += 1;
            }
        }
        f.border(&mut s);
        s.push_str(&f.polyline(e.values.iter().enumerate().map(|(i, &v)| (i as f64, v)), "stroke=\"#999\""));
        s.push_str(&f.polyline(
            e.reconstruction.iter().enumerate().map(|(i, &v)| (i as f64, v)),
            &format!("stroke=\"{}\" stroke-width=\"1.2\"", colour(k)),
        ));
        let label = if e.label { "artefact" } else { "clean" };
        text(
            &mut s,
            f.left,
            f.top - 6.0,
            "start",
            &format!("{} Ld {}, window at {} ({label})", e.method.name().to_uppercase(), e.latent_dim, e.source_start),
        );
    }
    s.push_str("</svg>\n");
    s
}
