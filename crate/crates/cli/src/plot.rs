//! Two-panel SVG: state plane (constraint set, RCI sets, rollouts) and
//! inputs against their bounds.

use std::fmt::Write as _;

use ddrci::dataset::{ConstraintSets, DisturbanceSet};
use ddrci::geometry::svg_polygon_path;
use ddrci::sim::SystemModel;
use ddrci::synthesis::RciSolution;
use ddrci::verify::{rollout, vertex_seed};
use nalgebra::{DMatrix, DVector};

use crate::CliError;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL: f64 = 420.0;
const PAD: f64 = 40.0;

pub struct Layer {
    pub label: String,
    pub color: &'static str,
    pub vertices: Vec<DVector<f64>>,
    pub states: Vec<Vec<DVector<f64>>>,
    pub inputs: Vec<Vec<f64>>,
}

impl Layer {
    pub fn build(
        sol: &RciSolution,
        model: &SystemModel,
        cons: &ConstraintSets,
        dist: &DisturbanceSet,
        steps: usize,
        seed: u64,
        index: usize,
    ) -> Result<Self, CliError> {
        if sol.w.nrows() != 2 {
            return Err(CliError::config("plots need a 2-D state"));
        }
        let set = sol.set().map_err(|e| CliError::config(e.to_string()))?;
        let vertices = set.vertices();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for (j, v) in vertices.iter().enumerate() {
            let r = rollout(model, &sol.k, &set, cons, dist, v, steps, vertex_seed(seed, j), 0.0)
                .map_err(|e| CliError::config(e.to_string()))?;
            let traj: Vec<DVector<f64>> = r.states.iter().map(|x| DVector::from_column_slice(x)).collect();
            inputs.push(traj.iter().take(steps).map(|x| (&sol.k * x)[0]).collect());
            states.push(traj);
        }
        Ok(Self {
            label: format!("n_p = {}, volume {:.3}", sol.p.nrows(), sol.volume),
            color: COLORS[index % COLORS.len()],
            vertices,
            states,
            inputs,
        })
    }
}

/// Vertices of the 2-D polygon `{x : Hx <= 1}`; empty when unbounded or
/// degenerate.
pub fn halfplane_polygon(h: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for i in 0..h.nrows() {
        for j in i + 1..h.nrows() {
            let m = DMatrix::from_row_slice(2, 2, &[h[(i, 0)], h[(i, 1)], h[(j, 0)], h[(j, 1)]]);
            let Some(x) = m.lu().solve(&DVector::from_element(2, 1.0)) else { continue };
            if (h * &x).iter().all(|&v| v <= 1.0 + 1e-9) && !out.iter().any(|p| (p - &x).amax() < 1e-9) {
                out.push(x);
            }
        }
    }
    // an unbounded region shows up as a polygon that misses some row
    let bounded = (0..h.nrows()).all(|i| out.iter().any(|x| (h.row(i) * x)[0] >= 1.0 - 1e-9));
    if out.len() < 3 || !bounded {
        out.clear();
    }
    out
}

/// Bounds on the first input channel from rows of `G` that touch only it.
fn input_bounds(g: &DMatrix<f64>) -> (Option<f64>, Option<f64>) {
    let (mut lo, mut hi) = (None::<f64>, None::<f64>);
    for row in g.row_iter() {
        if row.iter().skip(1).any(|&v| v != 0.0) {
            continue;
        }
        let c = row[0];
        if c > 0.0 {
            hi = Some(hi.map_or(1.0 / c, |h| h.min(1.0 / c)));
        } else if c < 0.0 {
            lo = Some(lo.map_or(1.0 / c, |l| l.max(1.0 / c)));
        }
    }
    (lo, hi)
}

struct Frame {
    x0: f64,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Frame {
    fn new(x0: f64, pts: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for (x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        if !lo.0.is_finite() {
            lo = (-1.0, -1.0);
            hi = (1.0, 1.0);
        }
        let grow = |a: f64, b: f64| {
            let m = 0.05 * (b - a).max(1e-9);
            (a - m, b + m)
        };
        let (x_lo, x_hi) = grow(lo.0, hi.0);
        let (y_lo, y_hi) = grow(lo.1, hi.1);
        Self { x0, lo: (x_lo, y_lo), hi: (x_hi, y_hi) }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let span = PANEL - 2.0 * PAD;
        (
            self.x0 + PAD + span * (x - self.lo.0) / (self.hi.0 - self.lo.0),
            PAD + span * (1.0 - (y - self.lo.1) / (self.hi.1 - self.lo.1)),
        )
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>, attrs: &str) -> String {
        let coords: Vec<String> = pts
            .map(|(x, y)| {
                let (u, v) = self.map(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        format!("<polyline points=\"{}\" fill=\"none\" {attrs}/>\n", coords.join(" "))
    }

    fn axes(&self, out: &mut String, xl: &str, yl: &str) {
        let (a, b) = self.map(self.lo.0, self.lo.1);
        let (c, d) = self.map(self.hi.0, self.hi.1);
        let _ = writeln!(out, "<rect x=\"{a:.2}\" y=\"{d:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>", c - a, b - d);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{xl}</text>", (a + c) / 2.0, b + 28.0);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{yl}</text>", a - 34.0, (b + d) / 2.0);
        for (v, x, y) in [(self.lo.0, a, b + 14.0), (self.hi.0, c, b + 14.0)] {
            let _ = writeln!(out, "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"10\" text-anchor=\"middle\">{v:.2}</text>");
        }
        for (v, y) in [(self.lo.1, b), (self.hi.1, d)] {
            let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{y:.2}\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>", a - 4.0);
        }
    }
}

pub fn render(layers: &[Layer], cons: &ConstraintSets, header: &[String]) -> Result<String, CliError> {
    if cons.h.ncols() != 2 {
        return Err(CliError::config("plots need a 2-D state"));
    }
    let region = halfplane_polygon(&cons.h);
    let state_pts = layers
        .iter()
        .flat_map(|l| l.vertices.iter().chain(l.states.iter().flatten()))
        .chain(region.iter())
        .map(|x| (x[0], x[1]));
    let left = Frame::new(0.0, state_pts);

    let (lo, hi) = input_bounds(&cons.g);
    let steps = layers.iter().flat_map(|l| l.inputs.iter().map(Vec::len)).max().unwrap_or(1).max(1);
    let input_pts = layers
        .iter()
        .flat_map(|l| l.inputs.iter().flatten())
        .map(|&u| (0.0, u))
        .chain([lo, hi].into_iter().flatten().map(|b| (0.0, b)))
        .chain([((steps - 1) as f64, 0.0)]);
    let right = Frame::new(PANEL, input_pts);

    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "<!-- {h} -->");
    }
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = 2.0 * PANEL,
        h = PANEL + 20.0 * layers.len() as f64
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    left.axes(&mut out, "x1", "x2");
    right.axes(&mut out, "k", "u");

    if !region.is_empty() {
        let mapped: Vec<DVector<f64>> = region.iter().map(|x| {
            let (u, v) = left.map(x[0], x[1]);
            DVector::from_column_slice(&[u, v])
        }).collect();
        let _ = writeln!(out, "{}", svg_polygon_path(&mapped, "fill=\"#eeeeee\" stroke=\"#888\" stroke-dasharray=\"4 3\""));
    }
    for l in layers {
        let mapped: Vec<DVector<f64>> = l.vertices.iter().map(|x| {
            let (u, v) = left.map(x[0], x[1]);
            DVector::from_column_slice(&[u, v])
        }).collect();
        let _ = writeln!(
            out,
            "{}",
            svg_polygon_path(&mapped, &format!("fill=\"{}\" fill-opacity=\"0.15\" stroke=\"{}\" stroke-width=\"1.5\"", l.color, l.color))
        );
        for traj in &l.states {
            out.push_str(&left.polyline(traj.iter().map(|x| (x[0], x[1])), &format!("stroke=\"{}\" stroke-width=\"0.7\"", l.color)));
        }
        for trace in &l.inputs {
            out.push_str(&right.polyline(
                trace.iter().enumerate().map(|(k, &u)| (k as f64, u)),
                &format!("stroke=\"{}\" stroke-width=\"0.7\"", l.color),
            ));
        }
    }
    for b in [lo, hi].into_iter().flatten() {
        out.push_str(&right.polyline([(0.0, b), ((steps - 1) as f64, b)].into_iter(), "stroke=\"#888\" stroke-dasharray=\"4 3\""));
    }
    for (i, l) in layers.iter().enumerate() {
        let y = PANEL + 14.0 + 20.0 * i as f64;
        let _ = writeln!(out, "<rect x=\"{PAD}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>", y - 10.0, l.color);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{y:.1}\" font-size=\"12\">{}</text>", PAD + 18.0, l.label);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rows_give_four_corners() {
        let cons = ConstraintSets::symmetric_boxes(&[2.0, 1.0], &[1.0]);
        let poly = halfplane_polygon(&cons.h);
        assert_eq!(poly.len(), 4);
        assert!(poly.iter().all(|p| (p[0].abs() - 2.0).abs() < 1e-12 && (p[1].abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn open_region_is_not_drawn() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(halfplane_polygon(&h).is_empty());
    }

    #[test]
    fn input_bounds_from_rows() {
        let cons = ConstraintSets::symmetric_boxes(&[1.0, 1.0], &[2.0]);
        assert_eq!(input_bounds(&cons.g), (Some(-2.0), Some(2.0)));
    }
}
