//! Plot rendering.
//!
//! Every plot writes two files: an SVG image and, next to it, a CSV data
//! table holding the exact numbers that were drawn.  The tables are the
//! canonical output — images from identical runs can be compared
//! structurally by diffing the tables byte for byte.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depo_core::approx::Checkpoint;
use depo_core::depo::{grid_planner_report, DecoupledPolicy, PredictionClass};
use depo_core::envs::{EnvKind, GridWorld, GRID_SIDE};
use depo_core::trainer::{
    multi_step_rollout, ExperimentConfig, MetricsLog, MetricsRow, METRICS_COLUMNS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Minimal SVG builder
// ---------------------------------------------------------------------------

/// Formats a coordinate for SVG output (fixed precision keeps files small
/// and byte-stable).
fn c(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "0".to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg { width, height, body: String::new() }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{width}"/>"#,
            c(x1),
            c(y1),
            c(x2),
            c(y2)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, dash: Option<&str>) {
        if pts.len() < 2 {
            return;
        }
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", c(x), c(y))).collect();
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"{dash}/>"#,
            points.join(" ")
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        if pts.len() < 3 {
            return;
        }
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", c(x), c(y))).collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>"#,
            points.join(" ")
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
            c(x),
            c(y),
            c(w),
            c(h)
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}"/>"#,
            c(cx),
            c(cy),
            c(r)
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            c(x),
            c(y),
            escape(s)
        );
    }

    /// A line with a small V-shaped head at the far end.
    fn arrow(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        self.line(x1, y1, x2, y2, stroke, 2.0);
        let (dx, dy) = (x2 - x1, y2 - y1);
        let len = (dx * dx + dy * dy).sqrt();
        if len < 1e-9 {
            return;
        }
        let (ux, uy) = (dx / len, dy / len);
        let head = 6.0;
        for side in [-1.0, 1.0] {
            // Rotate the reversed direction by ~30 degrees to each side.
            let (rx, ry) = (-ux, -uy);
            let cos = 0.866;
            let sin = 0.5 * side;
            let hx = rx * cos - ry * sin;
            let hy = rx * sin + ry * cos;
            self.line(x2, y2, x2 + head * hx, y2 + head * hy, stroke, 2.0);
        }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            c(self.width),
            c(self.height),
            c(self.width),
            c(self.height),
            self.body
        )
    }
}

// ---------------------------------------------------------------------------
// A data frame mapping values into a plot rectangle
// ---------------------------------------------------------------------------

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn sx(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn sy(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }

    fn draw_axes(&self, svg: &mut Svg, x_label: &str, y_label: &str) {
        svg.rect(self.x0, self.y0, self.w, self.h, "none", "#333333");
        const TICKS: usize = 4;
        for i in 0..=TICKS {
            let f = i as f64 / TICKS as f64;
            let xv = self.xmin + f * (self.xmax - self.xmin);
            let yv = self.ymin + f * (self.ymax - self.ymin);
            let px = self.x0 + f * self.w;
            let py = self.y0 + self.h - f * self.h;
            svg.line(px, self.y0 + self.h, px, self.y0 + self.h + 5.0, "#333333", 1.0);
            svg.text(px, self.y0 + self.h + 18.0, 11.0, "middle", &tick_label(xv));
            svg.line(self.x0 - 5.0, py, self.x0, py, "#333333", 1.0);
            svg.text(self.x0 - 8.0, py + 4.0, 11.0, "end", &tick_label(yv));
        }
        svg.text(self.x0 + self.w / 2.0, self.y0 + self.h + 36.0, 12.0, "middle", x_label);
        svg.text(self.x0 + self.w / 2.0, self.y0 - 10.0, 12.0, "middle", y_label);
    }
}

fn tick_label(v: f64) -> String {
    if !v.is_finite() {
        return "?".to_string();
    }
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Pads a data range slightly so curves do not touch the frame; degenerate
/// or non-finite ranges fall back to something drawable.
fn padded(min: f64, max: f64) -> (f64, f64) {
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    if (max - min).abs() < 1e-12 {
        (min - 1.0, max + 1.0)
    } else {
        let pad = 0.05 * (max - min);
        (min - pad, max + pad)
    }
}

fn write_pair(out: &Path, svg: String, table: String) -> Result<Vec<PathBuf>> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let table_path = out.with_extension("csv");
    fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    fs::write(&table_path, table).with_context(|| format!("writing {}", table_path.display()))?;
    Ok(vec![out.to_path_buf(), table_path])
}

// ---------------------------------------------------------------------------
// Curves: mean +/- std of one metrics column across runs
// ---------------------------------------------------------------------------

type Getter = fn(&MetricsRow) -> f64;

fn column_getter(name: &str) -> Option<Getter> {
    Some(match name {
        "mean_return" => |r: &MetricsRow| r.mean_return,
        "success_rate" => |r: &MetricsRow| r.success_rate,
        "mean_episode_len" => |r: &MetricsRow| r.mean_episode_len,
        "planner_mse" => |r: &MetricsRow| r.planner_mse,
        "discriminator_loss" => |r: &MetricsRow| r.discriminator_loss,
        "q_loss" => |r: &MetricsRow| r.q_loss,
        "planner_depg_loss" => |r: &MetricsRow| r.planner_depg_loss,
        "planner_supervised_loss" => |r: &MetricsRow| r.planner_supervised_loss,
        "planner_cdepg_loss" => |r: &MetricsRow| r.planner_cdepg_loss,
        "invdyn_loss" => |r: &MetricsRow| r.invdyn_loss,
        "policy_loss" => |r: &MetricsRow| r.policy_loss,
        _ => return None,
    })
}

/// Splits row indices into maximal runs where both mean and std are finite,
/// so curves with NaN gaps render as separate segments.
fn finite_runs(rows: &[(u64, f64, f64)]) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for (i, &(_, mean, std)) in rows.iter().enumerate() {
        if mean.is_finite() && std.is_finite() {
            cur.push(i);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

pub fn curves(inputs: &[PathBuf], metric: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let get = column_getter(metric).with_context(|| {
        format!(
            "unknown metric '{metric}'; plottable columns: {}",
            METRICS_COLUMNS[2..].join(", ")
        )
    })?;

    let mut logs: Vec<MetricsLog> = Vec::with_capacity(inputs.len());
    for p in inputs {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let log = MetricsLog::from_csv(&text)
            .with_context(|| format!("parsing metrics table {}", p.display()))?;
        logs.push(log);
    }
    let steps: Vec<u64> = logs[0].rows.iter().map(|r| r.env_steps).collect();
    if steps.is_empty() {
        bail!("{} holds no evaluation rows; nothing to plot", inputs[0].display());
    }
    for (i, log) in logs.iter().enumerate().skip(1) {
        let s: Vec<u64> = log.rows.iter().map(|r| r.env_steps).collect();
        if s != steps {
            bail!(
                "{} has a different env-steps axis than {}; curves need runs with \
                 identical evaluation schedules",
                inputs[i].display(),
                inputs[0].display()
            );
        }
    }

    let n = logs.len();
    let mut rows: Vec<(u64, f64, f64)> = Vec::with_capacity(steps.len());
    for r in 0..steps.len() {
        let vals: Vec<f64> = logs.iter().map(|l| get(&l.rows[r])).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        rows.push((steps[r], mean, var.sqrt()));
    }

    let mut table = String::from("env_steps,mean,std,n\n");
    for &(s, mean, std) in &rows {
        let _ = writeln!(table, "{s},{mean:?},{std:?},{n}");
    }

    let xmin = steps[0] as f64;
    let xmax = *steps.last().unwrap() as f64;
    let (xmin, xmax) = if (xmax - xmin).abs() < 1e-12 { (xmin - 1.0, xmax + 1.0) } else { (xmin, xmax) };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, mean, std) in &rows {
        if mean.is_finite() && std.is_finite() {
            lo = lo.min(mean - std);
            hi = hi.max(mean + std);
        }
    }
    let (ymin, ymax) = padded(lo, hi);

    let mut svg = Svg::new(640.0, 400.0);
    let frame = Frame { x0: 70.0, y0: 50.0, w: 540.0, h: 290.0, xmin, xmax, ymin, ymax };
    frame.draw_axes(&mut svg, "environment steps", metric);
    for run in finite_runs(&rows) {
        let mut band: Vec<(f64, f64)> = run
            .iter()
            .map(|&i| (frame.sx(rows[i].0 as f64), frame.sy(rows[i].1 + rows[i].2)))
            .collect();
        band.extend(
            run.iter()
                .rev()
                .map(|&i| (frame.sx(rows[i].0 as f64), frame.sy(rows[i].1 - rows[i].2))),
        );
        svg.polygon(&band, "#4c83c4", 0.25);
        let line: Vec<(f64, f64)> = run
            .iter()
            .map(|&i| (frame.sx(rows[i].0 as f64), frame.sy(rows[i].1)))
            .collect();
        if line.len() == 1 {
            svg.circle(line[0].0, line[0].1, 3.0, "#1f4e8c");
        } else {
            svg.polyline(&line, "#1f4e8c", 2.0, None);
        }
    }
    svg.text(
        320.0,
        22.0,
        14.0,
        "middle",
        &format!("{metric}: mean \u{00b1} std over {n} run(s)"),
    );

    write_pair(out, svg.finish(), table)
}

// ---------------------------------------------------------------------------
// Heatmap: planner argmax predictions on the 6x6 grid
// ---------------------------------------------------------------------------

fn class_color(class: PredictionClass) -> &'static str {
    match class {
        PredictionClass::LegalOnPath => "#1f8a4c",
        PredictionClass::LegalOffPath => "#1f6fb5",
        PredictionClass::Illegal => "#cc3333",
    }
}

fn class_name(class: PredictionClass) -> &'static str {
    match class {
        PredictionClass::LegalOnPath => "legal_on_path",
        PredictionClass::LegalOffPath => "legal_off_path",
        PredictionClass::Illegal => "illegal",
    }
}

pub fn heatmap(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let cp = Checkpoint::from_bytes(&bytes)
        .with_context(|| format!("parsing checkpoint {}", input.display()))?;
    let planner = cp.section("planner").with_context(|| {
        format!(
            "checkpoint {} has no 'planner' section (only decoupled policies can be \
             drawn as a planner heatmap)",
            input.display()
        )
    })?;
    let grid = GridWorld::new(1);
    let mut policy = DecoupledPolicy::tabular(GRID_SIDE, grid.n_actions());
    policy
        .load_planner_params(planner)
        .context("the planner section does not match a 6x6 tabular planner")?;
    let report = grid_planner_report(&policy, &grid)?;
    let path: HashSet<usize> = grid.expert_path().iter().map(|&c| grid.index_of(c)).collect();

    const CELL: f64 = 70.0;
    const MARGIN: f64 = 40.0;
    let side = GRID_SIDE as f64;
    let w = MARGIN * 2.0 + CELL * side;
    let h = w + 90.0;
    let mut svg = Svg::new(w, h);
    // Grid y grows upward; SVG y grows downward, so flip rows.
    let origin = |x: usize, y: usize| -> (f64, f64) {
        (MARGIN + x as f64 * CELL, MARGIN + (GRID_SIDE - 1 - y) as f64 * CELL)
    };

    let n = grid.n_states();
    for idx in 0..n {
        let (x, y) = grid.cell_of(idx);
        let (px, py) = origin(x, y);
        let fill = if (x, y) == grid.goal {
            "#d9f2d9"
        } else if path.contains(&idx) {
            "#fdf6d4"
        } else if grid.is_shaded((x, y)) {
            "#ececec"
        } else {
            "#ffffff"
        };
        svg.rect(px, py, CELL, CELL, fill, "#999999");
    }
    let mut table = String::from("x,y,pred_x,pred_y,class\n");
    for idx in 0..n {
        let (x, y) = grid.cell_of(idx);
        let (pred_x, pred_y) = grid.cell_of(report.predictions[idx]);
        let class = report.classes[idx];
        let _ = writeln!(table, "{x},{y},{pred_x},{pred_y},{}", class_name(class));

        let (px, py) = origin(x, y);
        let (cx, cy) = (px + CELL / 2.0, py + CELL / 2.0);
        let color = class_color(class);
        if report.predictions[idx] == idx {
            svg.circle(cx, cy, 6.0, color);
            continue;
        }
        let (qx, qy) = origin(pred_x, pred_y);
        let (tx, ty) = (qx + CELL / 2.0, qy + CELL / 2.0);
        let (dx, dy) = (tx - cx, ty - cy);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let reach = (0.42 * CELL).min(len);
        svg.arrow(cx, cy, cx + dx / len * reach, cy + dy / len * reach, color);
    }
    let _ = writeln!(table, "# legal_fraction_non_goal={:?}", report.legal_fraction_non_goal);
    let _ = writeln!(table, "# illegal_fraction={:?}", report.illegal_fraction);
    let _ = writeln!(table, "# off_path_to_path_fraction={:?}", report.off_path_to_path_fraction);

    // Legend and summary strip below the grid.
    let ly = MARGIN + CELL * side + 24.0;
    let entries = [
        (PredictionClass::LegalOnPath, "legal, onto route"),
        (PredictionClass::LegalOffPath, "legal, off route"),
        (PredictionClass::Illegal, "illegal"),
    ];
    for (i, (class, label)) in entries.iter().enumerate() {
        let lx = MARGIN + i as f64 * 170.0;
        svg.rect(lx, ly - 10.0, 12.0, 12.0, class_color(*class), "#333333");
        svg.text(lx + 18.0, ly, 12.0, "start", label);
    }
    svg.text(
        MARGIN,
        ly + 26.0,
        12.0,
        "start",
        &format!(
            "legal(non-goal)={:.3}  illegal={:.3}  off-route to route={:.3}",
            report.legal_fraction_non_goal,
            report.illegal_fraction,
            report.off_path_to_path_fraction
        ),
    );
    svg.text(w / 2.0, 24.0, 14.0, "middle", "planner argmax predictions (6x6 grid)");

    write_pair(out, svg.finish(), table)
}

// ---------------------------------------------------------------------------
// Rollout: imagined planner trace vs. realized environment trace
// ---------------------------------------------------------------------------

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn rollout(
    input: &Path,
    config: &ExperimentConfig,
    seed: u64,
    steps: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let env = config.env.build();
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let cp = Checkpoint::from_bytes(&bytes)
        .with_context(|| format!("parsing checkpoint {}", input.display()))?;
    let planner = cp.section("planner").with_context(|| {
        format!("checkpoint {} has no 'planner' section", input.display())
    })?;
    let invdyn = cp.section("invdyn").with_context(|| {
        format!("checkpoint {} has no 'invdyn' section", input.display())
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = match &env {
        EnvKind::Grid(g) => DecoupledPolicy::tabular(GRID_SIDE, g.n_actions()),
        EnvKind::PointMass(p) => DecoupledPolicy::continuous(
            env.state_dim(),
            p.raw_action_dim(),
            &config.hidden.planner,
            &config.hidden.invdyn,
            &mut rng,
        ),
    };
    policy
        .load_planner_params(planner)
        .context("the checkpoint's planner does not match this environment's policy shape")?;
    policy
        .load_invdyn_params(invdyn)
        .context("the checkpoint's inverse dynamics do not match this environment's policy shape")?;

    let s0 = env.sample_start(&mut rng);
    let imagined = multi_step_rollout(&policy, &s0, steps);
    let mut real = Vec::with_capacity(steps + 1);
    real.push(s0.clone());
    let mut s = s0;
    for _ in 0..steps {
        let (action, _) = policy.act_deterministic(&s);
        s = env.step(&s, &action);
        real.push(s.clone());
    }

    let mut table = String::from("t,imagined_x,imagined_y,real_x,real_y,gap\n");
    for t in 0..=steps {
        let gap = l2(&imagined[t], &real[t]);
        let _ = writeln!(
            table,
            "{t},{:?},{:?},{:?},{:?},{gap:?}",
            imagined[t][0], imagined[t][1], real[t][0], real[t][1]
        );
    }

    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in imagined.iter().chain(real.iter()) {
        lo.0 = lo.0.min(p[0]);
        lo.1 = lo.1.min(p[1]);
        hi.0 = hi.0.max(p[0]);
        hi.1 = hi.1.max(p[1]);
    }
    let (xmin, xmax) = padded(lo.0, hi.0);
    let (ymin, ymax) = padded(lo.1, hi.1);

    let mut svg = Svg::new(520.0, 560.0);
    let frame = Frame { x0: 60.0, y0: 60.0, w: 420.0, h: 420.0, xmin, xmax, ymin, ymax };
    frame.draw_axes(&mut svg, "x", "y");
    let to_pts = |trace: &[Vec<f64>]| -> Vec<(f64, f64)> {
        trace.iter().map(|p| (frame.sx(p[0]), frame.sy(p[1]))).collect()
    };
    let real_pts = to_pts(&real);
    let imag_pts = to_pts(&imagined);
    svg.polyline(&real_pts, "#222222", 2.0, None);
    svg.polyline(&imag_pts, "#1a6fd4", 2.0, Some("6 4"));
    for &(x, y) in &real_pts {
        svg.circle(x, y, 2.5, "#222222");
    }
    for &(x, y) in &imag_pts {
        svg.circle(x, y, 2.5, "#1a6fd4");
    }
    svg.circle(real_pts[0].0, real_pts[0].1, 5.0, "#1f8a4c");
    svg.text(
        260.0,
        24.0,
        14.0,
        "middle",
        &format!("{}: realized (solid) vs imagined planner (dashed), {steps} steps", env.id()),
    );
    svg.text(
        260.0,
        520.0,
        12.0,
        "middle",
        "green dot: shared start state; gaps per step are in the data table",
    );

    write_pair(out, svg.finish(), table)
}
