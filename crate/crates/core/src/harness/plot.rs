//! Minimal SVG line charts for closed-loop traces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::trace::Trace;
use super::HarnessError;

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 200.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const GAP: f64 = 45.0;

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

struct HLine {
    label: String,
    value: f64,
    color: &'static str,
    class: &'static str,
}

struct Panel {
    y_label: &'static str,
    series: Vec<Series>,
    hlines: Vec<HLine>,
}

fn controller_color(name: &str, k: usize) -> &'static str {
    match name {
        "nn-mpc" => "#d62728",
        "plant-mpc" => "#1f77b4",
        "open-loop" => "#2ca02c",
        _ => ["#9467bd", "#8c564b", "#e377c2", "#7f7f7f"][k % 4],
    }
}

/// Round step for about `target` ticks over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(title: &str, x_max: f64, panels: &[Panel]) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let height = TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP) + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(title));
    for (pi, panel) in panels.iter().enumerate() {
        let y0 = TOP + pi as f64 * (PANEL_HEIGHT + GAP);
        let values = panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(panel.hlines.iter().map(|h| h.value));
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let sx = |x: f64| LEFT + x / x_max * plot_w;
        let sy = |y: f64| y0 + PANEL_HEIGHT - (y - lo) / (hi - lo) * PANEL_HEIGHT;

        let _ = writeln!(
            s,
            r##"<rect class="panel" data-t-max="{x_max}" x="{LEFT}" y="{y0}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
        );
        let step = tick_step(hi - lo, 5.0);
        let mut v = (lo / step).ceil() * step;
        while v <= hi {
            let y = sy(v);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/>"##, LEFT + plot_w);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 5.0, y + 4.0, fmt_tick(v, step));
            v += step;
        }
        let xstep = tick_step(x_max, 10.0);
        let mut t = 0.0;
        while t <= x_max + 1e-9 {
            let x = sx(t);
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="#f0f0f0"/>"##, y0 + PANEL_HEIGHT);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + PANEL_HEIGHT + 14.0, fmt_tick(t, xstep));
            t += xstep;
        }
        // Label the end of the run unless a tick already sits close to it.
        let last_tick = (x_max / xstep + 1e-9).floor() * xstep;
        if x_max - last_tick > 0.3 * xstep {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(x_max), y0 + PANEL_HEIGHT + 14.0, fmt_tick(x_max, xstep));
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            y0 + PANEL_HEIGHT / 2.0,
            esc(panel.y_label)
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t (s)</text>"#, LEFT + plot_w / 2.0, y0 + PANEL_HEIGHT + 28.0);

        let mut legend_y = y0 + 12.0;
        let legend_x = LEFT + plot_w + 12.0;
        for h in &panel.hlines {
            let y = sy(h.value);
            let _ = writeln!(
                s,
                r#"<line class="{}" data-value="{}" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-dasharray="6 4" stroke-width="1.5"/>"#,
                h.class,
                h.value,
                LEFT + plot_w,
                h.color
            );
            legend(&mut s, legend_x, legend_y, h.color, true, &h.label);
            legend_y += 16.0;
        }
        for series in &panel.series {
            let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let dash = if series.dashed { r#" stroke-dasharray="4 3""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.3"{dash} points="{}"/>"#,
                series.color,
                pts.join(" ")
            );
            legend(&mut s, legend_x, legend_y, series.color, series.dashed, &series.label);
            legend_y += 16.0;
        }
    }
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, x: f64, y: f64, color: &str, dashed: bool, label: &str) {
    let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
    let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/>"#, x + 20.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 25.0, y + 4.0, esc(label));
}

fn fmt_tick(v: f64, step: f64) -> String {
    let digits = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let s = format!("{v:.digits$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn x_max(traces: &[&Trace]) -> f64 {
    traces.iter().flat_map(|t| t.rows.last().map(|r| r.t)).fold(0.0, f64::max).max(1e-9)
}

fn column(t: &Trace, f: impl Fn(&super::trace::TraceRow) -> f64) -> Vec<(f64, f64)> {
    t.rows.iter().map(|r| (r.t, f(r))).collect()
}

/// Voltage and reference over time, with the load current underneath.
pub fn voltage_svg(traces: &[&Trace], reference: f64) -> String {
    let mut v = Panel {
        y_label: "V_fc (V)",
        series: Vec::new(),
        hlines: vec![HLine { label: format!("reference {reference} V"), value: reference, color: "#555", class: "reference" }],
    };
    for (k, t) in traces.iter().enumerate() {
        v.series.push(Series {
            label: t.meta.controller.clone(),
            color: controller_color(&t.meta.controller, k),
            dashed: false,
            points: column(t, |r| r.v_true),
        });
    }
    let current = Panel {
        y_label: "I (A)",
        series: traces.first().map_or_else(Vec::new, |t| {
            vec![Series { label: "current".into(), color: "#333", dashed: false, points: column(t, |r| r.current) }]
        }),
        hlines: Vec::new(),
    };
    let title = format!("{}: output voltage under the load profile", traces.first().map_or("", |t| t.meta.scenario.as_str()));
    render(&title, x_max(traces), &[v, current])
}

/// Anode pressure against its limit, flows and flow increments.
pub fn constraints_svg(traces: &[&Trace], p_limit: f64) -> String {
    let mut p = Panel {
        y_label: "P_H2 (atm)",
        series: Vec::new(),
        hlines: vec![HLine { label: format!("limit {p_limit} atm"), value: p_limit, color: "#000", class: "limit" }],
    };
    let mut q = Panel { y_label: "flow (lpm)", series: Vec::new(), hlines: Vec::new() };
    let mut dq = Panel { y_label: "increment (lpm)", series: Vec::new(), hlines: Vec::new() };
    for (k, t) in traces.iter().enumerate() {
        let c = controller_color(&t.meta.controller, k);
        let name = &t.meta.controller;
        p.series.push(Series { label: name.clone(), color: c, dashed: false, points: column(t, |r| r.p_true) });
        q.series.push(Series { label: format!("{name} Q_H2"), color: c, dashed: false, points: column(t, |r| r.q_h2) });
        q.series.push(Series { label: format!("{name} Q_air"), color: c, dashed: true, points: column(t, |r| r.q_air) });
        dq.series.push(Series { label: format!("{name} dQ_H2"), color: c, dashed: false, points: column(t, |r| r.dq_h2) });
        dq.series.push(Series { label: format!("{name} dQ_air"), color: c, dashed: true, points: column(t, |r| r.dq_air) });
    }
    let title = format!("{}: constraint handling and inputs", traces.first().map_or("", |t| t.meta.scenario.as_str()));
    render(&title, x_max(traces), &[p, q, dq])
}

/// Write the voltage and constraint figures. One trace gives
/// `<scenario>_<controller>_*.svg`; several are overlaid in
/// `<scenario>_compare_*.svg`.
pub fn emit_plots(traces: &[&Trace], reference: f64, p_limit: f64, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let first = traces.first().ok_or_else(|| HarnessError::Config("no traces to plot".into()))?;
    if traces.iter().any(|t| t.rows.is_empty()) {
        return Err(HarnessError::Config("cannot plot an empty trace".into()));
    }
    let tag = if traces.len() == 1 { first.meta.controller.clone() } else { "compare".to_string() };
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();
    for (kind, svg) in [("voltage", voltage_svg(traces, reference)), ("constraints", constraints_svg(traces, p_limit))] {
        let path = out_dir.join(format!("{}_{tag}_{kind}.svg", first.meta.scenario));
        fs::write(&path, svg).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
