//! Static SVG figures: top-down scene renders, precision-recall curves, per-class AP bars and
//! loss curves.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::SequencePrediction;
use crate::geom::{OrientedBox3D, ScoredBox};
use crate::metrics::ApReport;
use crate::synthgen::{root_track, SceneObject, Sequence, SkeletonSpec};

pub const SCENE_SIZE: (u32, u32) = (640, 640);
const MARGIN: f64 = 24.0;
const GT_COLOR: RGBColor = RGBColor(30, 30, 30);
const TRAJ_COLOR: RGBColor = RGBColor(120, 120, 200);
const PALETTE: [RGBColor; 8] = [
    RGBColor(228, 26, 28),
    RGBColor(55, 126, 184),
    RGBColor(77, 175, 74),
    RGBColor(152, 78, 163),
    RGBColor(255, 127, 0),
    RGBColor(166, 86, 40),
    RGBColor(247, 129, 191),
    RGBColor(0, 150, 150),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

/// Uniform-scale map between the ground plane and image pixels, with the image y axis pointing
/// down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTransform {
    pub origin: [f64; 2],
    pub scale: f64,
    pub size: (u32, u32),
}

impl ViewTransform {
    /// Fits the world rectangle `[lo, hi]` inside the image with a fixed margin.
    pub fn fit(lo: [f64; 2], hi: [f64; 2], size: (u32, u32)) -> Self {
        let span = [(hi[0] - lo[0]).max(1e-6), (hi[1] - lo[1]).max(1e-6)];
        let scale = ((size.0 as f64 - 2.0 * MARGIN) / span[0]).min((size.1 as f64 - 2.0 * MARGIN) / span[1]);
        Self {
            origin: lo,
            scale,
            size,
        }
    }

    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [
            MARGIN + (p[0] - self.origin[0]) * self.scale,
            self.size.1 as f64 - MARGIN - (p[1] - self.origin[1]) * self.scale,
        ]
    }

    pub fn to_world(&self, px: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + (px[0] - MARGIN) / self.scale,
            self.origin[1] + (self.size.1 as f64 - MARGIN - px[1]) / self.scale,
        ]
    }

    fn pt(&self, p: [f64; 2]) -> (i32, i32) {
        let q = self.to_pixel(p);
        (q[0].round() as i32, q[1].round() as i32)
    }
}

/// What one scene image shows.
pub struct SceneView<'a> {
    pub title: String,
    pub trajectory: &'a [[f64; 2]],
    pub ground_truth: &'a [SceneObject],
    pub predictions: &'a [ScoredBox],
    pub class_names: &'a [String],
}

fn bounds(view: &SceneView) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut add = |p: [f64; 2]| {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    };
    view.trajectory.iter().for_each(|p| add(*p));
    let boxes = view
        .ground_truth
        .iter()
        .map(|o| &o.bbox)
        .chain(view.predictions.iter().map(|p| &p.bbox));
    for b in boxes {
        b.footprint().iter().for_each(|p| add(*p));
    }
    if !lo[0].is_finite() {
        return ([-1.0, -1.0], [1.0, 1.0]);
    }
    ([lo[0] - 0.5, lo[1] - 0.5], [hi[0] + 0.5, hi[1] + 0.5])
}

fn outline<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    t: &ViewTransform,
    b: &OrientedBox3D,
    style: ShapeStyle,
) -> Result<()> {
    let fp = b.footprint();
    let mut pts: Vec<(i32, i32)> = fp.iter().map(|p| t.pt(*p)).collect();
    pts.push(pts[0]);
    area.draw(&PathElement::new(pts, style)).map_err(plot_err)?;
    // heading tick from the centre to the front face
    let f = b.front();
    let c = [b.center[0], b.center[1]];
    let tip = [c[0] + f[0] * b.size[0] / 2.0, c[1] + f[1] * b.size[0] / 2.0];
    area.draw(&PathElement::new(vec![t.pt(c), t.pt(tip)], style))
        .map_err(plot_err)
}

/// Draws the root trajectory, GT footprints (dark) and predicted footprints (class colours).
pub fn render_scene(path: &Path, view: &SceneView) -> Result<ViewTransform> {
    let (lo, hi) = bounds(view);
    let t = ViewTransform::fit(lo, hi, SCENE_SIZE);
    let root = SVGBackend::new(path, SCENE_SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    if view.trajectory.len() > 1 {
        let pts: Vec<(i32, i32)> = view.trajectory.iter().map(|p| t.pt(*p)).collect();
        root.draw(&PathElement::new(pts, TRAJ_COLOR.stroke_width(1)))
            .map_err(plot_err)?;
    }
    for o in view.ground_truth {
        outline(&root, &t, &o.bbox, GT_COLOR.stroke_width(3))?;
    }
    for p in view.predictions {
        let color = PALETTE[p.class_id % PALETTE.len()];
        outline(&root, &t, &p.bbox, color.stroke_width(2))?;
        let name = view.class_names.get(p.class_id).map_or("?", String::as_str);
        let at = t.pt([p.bbox.center[0], p.bbox.center[1]]);
        root.draw(&Text::new(
            format!("{name} {:.2}", p.objectness),
            at,
            ("sans-serif", 12).into_font().color(&color),
        ))
        .map_err(plot_err)?;
    }
    root.draw(&Text::new(view.title.clone(), (8, 14), ("sans-serif", 14).into_font()))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(t)
}

/// Horizontal root positions of a sequence.
pub fn trajectory_xy(seq: &Sequence, skeleton: &SkeletonSpec) -> Vec<[f64; 2]> {
    let r = root_track(&seq.trajectory, skeleton);
    r.rows().into_iter().map(|row| [row[0], row[1]]).collect()
}

/// One image for the ML prediction and one per hypothesis, named `<seq>_ml.svg` and
/// `<seq>_h<k>.svg`.
pub fn render_prediction(
    dir: &Path,
    seq: &Sequence,
    skeleton: &SkeletonSpec,
    pred: &SequencePrediction,
    class_names: &[String],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let traj = trajectory_xy(seq, skeleton);
    let mut out = Vec::new();
    let mut emit = |name: String, title: String, boxes: &[ScoredBox]| -> Result<()> {
        let path = dir.join(name);
        render_scene(
            &path,
            &SceneView {
                title,
                trajectory: &traj,
                ground_truth: &seq.objects,
                predictions: boxes,
                class_names,
            },
        )?;
        out.push(path);
        Ok(())
    };
    emit(
        format!("{}_ml.svg", seq.id),
        format!("{} maximum likelihood", seq.id),
        &pred.ml,
    )?;
    for h in &pred.hypotheses {
        emit(
            format!("{}_h{:02}.svg", seq.id, h.hypothesis_id),
            format!("{} hypothesis {}", seq.id, h.hypothesis_id),
            &h.boxes,
        )?;
    }
    Ok(out)
}

pub fn plot_pr_curves(path: &Path, report: &ApReport, class_names: &[String]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("precision-recall (mAP@0.5 {:.3})", report.map),
            ("sans-serif", 16),
        )
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0.0..1.0, 0.0..1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("recall")
        .y_desc("precision")
        .draw()
        .map_err(plot_err)?;
    for c in &report.per_class {
        let color = PALETTE[c.class_id % PALETTE.len()];
        let name = class_names
            .get(c.class_id)
            .cloned()
            .unwrap_or_else(|| c.class_id.to_string());
        let pts: Vec<(f64, f64)> = c.curve.iter().map(|p| (p.recall, p.precision)).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{name} AP {:.3}", c.ap))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

pub fn plot_ap_bars(path: &Path, report: &ApReport, class_names: &[String]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = report.per_class.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption("AP@0.5 per class", ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0.0..n as f64, 0.0..1.0)
        .map_err(plot_err)?;
    let names: Vec<String> = report
        .per_class
        .iter()
        .map(|c| {
            class_names
                .get(c.class_id)
                .cloned()
                .unwrap_or_else(|| c.class_id.to_string())
        })
        .collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| names.get(x.floor() as usize).cloned().unwrap_or_default())
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(report.per_class.iter().enumerate().map(|(i, c)| {
            let color = PALETTE[c.class_id % PALETTE.len()];
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, c.ap)], color.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Total training loss per step on a log axis.
pub fn plot_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let pos: Vec<f64> = losses.iter().copied().filter(|v| *v > 0.0 && v.is_finite()).collect();
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    let hi = pos.iter().copied().fold(0.0, f64::max).max(lo * 10.0);
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..losses.len().max(1) as f64, (lo..hi).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").draw().map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            losses
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(i, v)| (i as f64, *v)),
            BLUE.stroke_width(1),
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
