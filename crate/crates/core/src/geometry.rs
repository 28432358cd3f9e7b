//! Template polytope `Θ = {θ : -1 <= Pθ <= 1}` and its image `C = WΘ`.
//!
//! Vertices are found by intersecting every choice of `n` hyperplanes
//! `±p_i θ = 1` and keeping the points feasible for all rows. The template
//! is symmetric, so vertices are stored as `σ` representatives followed by
//! their negations: `θ^{j+σ} = -θ^j`.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{checked_inverse, numerical_rank};
use crate::{Error, Result};

const FEAS_TOL: f64 = 1e-9;
const DEDUP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePolytope {
    p: DMatrix<f64>,
    vertices: Vec<DVector<f64>>,
    sigma: usize,
}

impl TemplatePolytope {
    /// Enumerates the vertices of `{θ : -1 <= Pθ <= 1}`.
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        let vertices = enumerate_vertices(&p)?;
        let sigma = vertices.len() / 2;
        Ok(Self { p, vertices, sigma })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.ncols()
    }

    /// Number of rows `n_p` of the template matrix.
    pub fn complexity(&self) -> usize {
        self.p.nrows()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    pub fn contains(&self, theta: &DVector<f64>, tol: f64) -> bool {
        (&self.p * theta).iter().all(|v| v.abs() <= 1.0 + tol)
    }

    /// Exact volume for n <= 3.
    pub fn volume(&self) -> Result<f64> {
        polytope_volume(&self.vertices)
    }

    /// Hit-or-miss estimate over the vertex bounding box. Works in any
    /// dimension. Returns `(estimate, standard error)`.
    pub fn monte_carlo_volume(&self, samples: usize, seed: u64) -> (f64, f64) {
        let n = self.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for v in &self.vertices {
            for k in 0..n {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let box_vol: f64 = (0..n).map(|k| hi[k] - lo[k]).product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        let mut theta = DVector::zeros(n);
        for _ in 0..samples {
            for k in 0..n {
                theta[k] = rng.random_range(lo[k]..hi[k]);
            }
            if self.contains(&theta, 0.0) {
                hits += 1;
            }
        }
        let frac = hits as f64 / samples as f64;
        let se = (frac * (1.0 - frac) / samples as f64).sqrt();
        (frac * box_vol, se * box_vol)
    }

    /// One vertex per line, comma separated.
    pub fn vertices_csv(&self) -> String {
        vertices_csv(&self.vertices)
    }
}

/// All vertices of the symmetric polytope `{θ : -1 <= Pθ <= 1}`, ordered
/// so that the second half is the negation of the first half.
pub fn enumerate_vertices(p: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let n = p.ncols();
    if n == 0 {
        return Err(Error::ShapeMismatch("template has zero columns".into()));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("template has non-finite entries".into()));
    }
    let rank = numerical_rank(p);
    if rank < n {
        return Err(Error::UnboundedTemplate { rank, n });
    }
    let np = p.nrows();

    let mut found: Vec<DVector<f64>> = Vec::new();
    let mut rows = vec![0usize; n];
    for_each_combination(np, n, &mut rows, 0, 0, &mut |rows| {
        let sub = DMatrix::from_fn(n, n, |a, b| p[(rows[a], b)]);
        if numerical_rank(&sub) < n {
            return;
        }
        let Some(lu_inv) = sub.try_inverse() else {
            return;
        };
        for signs in 0..(1usize << n) {
            let rhs = DVector::from_fn(n, |a, _| if signs >> a & 1 == 1 { -1.0 } else { 1.0 });
            let theta = &lu_inv * rhs;
            let feasible = (p * &theta).iter().all(|v| v.abs() <= 1.0 + FEAS_TOL);
            if feasible && !found.iter().any(|q| same_point(q, &theta)) {
                found.push(theta);
            }
        }
    });

    if found.is_empty() || found.len() % 2 != 0 {
        return Err(Error::DegenerateTemplate(format!(
            "found {} vertices, expected a positive even count",
            found.len()
        )));
    }

    // Canonical representatives: the first nonzero coordinate is positive.
    let mut reps: Vec<DVector<f64>> = found
        .iter()
        .filter(|v| canonical_sign(v))
        .cloned()
        .collect();
    if reps.len() * 2 != found.len()
        || reps
            .iter()
            .any(|r| !found.iter().any(|q| same_point(q, &(-r))))
    {
        return Err(Error::DegenerateTemplate("vertex set is not centrally symmetric".into()));
    }
    if n == 2 {
        reps.sort_by(|a, b| {
            let (aa, ab) = (angle(a), angle(b));
            aa.partial_cmp(&ab)
                .unwrap_or(Ordering::Equal)
                .then(a.norm().partial_cmp(&b.norm()).unwrap_or(Ordering::Equal))
        });
    } else {
        reps.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
                .reverse()
        });
    }
    let mut out = reps.clone();
    out.extend(reps.iter().map(|r| -r));
    Ok(out)
}

fn for_each_combination(
    np: usize,
    k: usize,
    buf: &mut [usize],
    depth: usize,
    start: usize,
    f: &mut dyn FnMut(&[usize]),
) {
    if depth == k {
        f(buf);
        return;
    }
    for i in start..np {
        buf[depth] = i;
        for_each_combination(np, k, buf, depth + 1, i + 1, f);
    }
}

fn same_point(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    (a - b).norm() <= DEDUP_TOL * scale
}

fn canonical_sign(v: &DVector<f64>) -> bool {
    let scale = v.norm();
    for &x in v.iter() {
        if x.abs() > 1e-12 * scale {
            return x > 0.0;
        }
    }
    true
}

/// Angle in `[-π/2, π/2)` for canonical 2-D representatives.
fn angle(v: &DVector<f64>) -> f64 {
    let a = v[1].atan2(v[0]);
    if a >= PI / 2.0 {
        a - PI
    } else {
        a
    }
}

/// Euclidean volume of the convex hull of `vertices` (n in 1..=3).
pub fn polytope_volume(vertices: &[DVector<f64>]) -> Result<f64> {
    let Some(first) = vertices.first() else {
        return Ok(0.0);
    };
    match first.len() {
        1 => {
            let (lo, hi) = vertices
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v[0]), h.max(v[0])));
            Ok(hi - lo)
        }
        2 => Ok(polygon_area(vertices)),
        3 => Ok(hull_volume_3d(vertices)),
        n => Err(Error::DimensionUnsupported(n)),
    }
}

fn polygon_area(vertices: &[DVector<f64>]) -> f64 {
    let k = vertices.len() as f64;
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / k;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / k;
    let mut pts: Vec<(f64, f64, f64, f64)> = vertices
        .iter()
        .map(|v| {
            let (dx, dy) = (v[0] - cx, v[1] - cy);
            (dy.atan2(dx), dx.hypot(dy), v[0], v[1])
        })
        .collect();
    pts.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
    });
    let mut twice = 0.0;
    for idx in 0..pts.len() {
        let (_, _, x0, y0) = pts[idx];
        let (_, _, x1, y1) = pts[(idx + 1) % pts.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Convex hull volume by brute-force facet discovery: a triple of points
/// spans a facet plane when every point lies on one side. Each facet
/// contributes a pyramid with apex at the centroid.
fn hull_volume_3d(vertices: &[DVector<f64>]) -> f64 {
    let pts: Vec<[f64; 3]> = vertices.iter().map(|v| [v[0], v[1], v[2]]).collect();
    let k = pts.len();
    let c = {
        let mut c = [0.0; 3];
        for p in &pts {
            for a in 0..3 {
                c[a] += p[a] / k as f64;
            }
        }
        c
    };
    let scale = pts
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(0.0_f64, f64::max);
    let tol = 1e-9 * scale.max(1e-300);
    let mut planes: Vec<([f64; 3], f64)> = Vec::new();
    let mut volume = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            for cc in b + 1..k {
                let u = sub3(pts[b], pts[a]);
                let v = sub3(pts[cc], pts[a]);
                let mut nrm = cross3(u, v);
                let len = dot3(nrm, nrm).sqrt();
                if len <= tol * scale {
                    continue;
                }
                for x in &mut nrm {
                    *x /= len;
                }
                let mut off = dot3(nrm, pts[a]);
                // orient outward relative to the centroid
                if dot3(nrm, c) > off {
                    for x in &mut nrm {
                        *x = -*x;
                    }
                    off = -off;
                }
                if pts.iter().any(|p| dot3(nrm, *p) > off + tol) {
                    continue;
                }
                if planes
                    .iter()
                    .any(|(q, o)| dot3(*q, nrm) > 1.0 - 1e-9 && (o - off).abs() <= tol)
                {
                    continue;
                }
                planes.push((nrm, off));
                let on: Vec<[f64; 3]> = pts
                    .iter()
                    .filter(|p| (dot3(nrm, **p) - off).abs() <= tol)
                    .copied()
                    .collect();
                let area = planar_polygon_area(&on, nrm);
                let height = off - dot3(nrm, c);
                volume += area * height / 3.0;
            }
        }
    }
    volume
}

fn planar_polygon_area(pts: &[[f64; 3]], nrm: [f64; 3]) -> f64 {
    let k = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for a in 0..3 {
            c[a] += p[a] / k;
        }
    }
    // in-plane basis
    let helper = if nrm[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut e1 = cross3(nrm, helper);
    let l = dot3(e1, e1).sqrt();
    for x in &mut e1 {
        *x /= l;
    }
    let e2 = cross3(nrm, e1);
    let flat: Vec<DVector<f64>> = pts
        .iter()
        .map(|p| {
            let d = sub3(*p, c);
            DVector::from_vec(vec![dot3(d, e1), dot3(d, e2)])
        })
        .collect();
    polygon_area(&flat)
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// The synthesized set `C = WΘ = {x : -1 <= P W^{-1} x <= 1}`.
#[derive(Debug, Clone)]
pub struct RciSet {
    w: DMatrix<f64>,
    w_inv: DMatrix<f64>,
    template: TemplatePolytope,
}

impl RciSet {
    pub fn new(w: DMatrix<f64>, template: TemplatePolytope) -> Result<Self> {
        if w.nrows() != template.dim() || w.ncols() != template.dim() {
            return Err(Error::ShapeMismatch(format!(
                "W is {}x{}, template dimension is {}",
                w.nrows(),
                w.ncols(),
                template.dim()
            )));
        }
        let w_inv = checked_inverse(&w)?;
        Ok(Self { w, w_inv, template })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn w_inv(&self) -> &DMatrix<f64> {
        &self.w_inv
    }

    pub fn template(&self) -> &TemplatePolytope {
        &self.template
    }

    /// Vertices `W θ^j`, in template order.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        self.template.vertices().iter().map(|t| &self.w * t).collect()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.margin(x) >= -tol
    }

    /// `1 - max_i |(P W^{-1} x)_i|`; nonnegative inside the set.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        let y = self.template.p() * (&self.w_inv * x);
        1.0 - y.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// `|det W| * vol(Θ)`; falls back to a Monte-Carlo template volume for n > 3.
    pub fn volume(&self) -> f64 {
        let base = match self.template.volume() {
            Ok(v) => v,
            Err(_) => self.template.monte_carlo_volume(1_000_000, 0).0,
        };
        self.w.determinant().abs() * base
    }

    pub fn vertices_csv(&self) -> String {
        vertices_csv(&self.vertices())
    }

    /// SVG `<path>` outlining the 2-D set in user coordinates.
    pub fn svg_path(&self, attrs: &str) -> String {
        svg_polygon_path(&self.vertices(), attrs)
    }
}

pub fn vertices_csv(vertices: &[DVector<f64>]) -> String {
    let mut out = String::new();
    for v in vertices {
        let line: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// SVG path element for a 2-D convex polygon given by its vertices.
pub fn svg_polygon_path(vertices: &[DVector<f64>], attrs: &str) -> String {
    let mut pts: Vec<(f64, f64)> = vertices.iter().map(|v| (v[0], v[1])).collect();
    let k = pts.len().max(1) as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / k;
    pts.sort_by(|a, b| {
        (a.1 - cy)
            .atan2(a.0 - cx)
            .partial_cmp(&(b.1 - cy).atan2(b.0 - cx))
            .unwrap_or(Ordering::Equal)
    });
    let mut d = String::new();
    for (idx, (x, y)) in pts.iter().enumerate() {
        let _ = write!(d, "{}{x:.6},{y:.6} ", if idx == 0 { "M" } else { "L" });
    }
    d.push('Z');
    format!("<path d=\"{d}\" {attrs}/>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn box_vertices() {
        let t = TemplatePolytope::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(t.sigma(), 2);
        assert_eq!(t.vertices().len(), 4);
        for v in t.vertices() {
            assert_relative_eq!(v[0].abs(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(v[1].abs(), 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(t.volume().unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn antipodal_pairing() {
        let t = TemplatePolytope::new(mat(&[&[10.0, 10.0], &[10.0, 0.0], &[1.0, 11.0]])).unwrap();
        let s = t.sigma();
        for j in 0..s {
            assert!((&t.vertices()[j] + &t.vertices()[j + s]).norm() < 1e-14);
        }
    }

    #[test]
    fn rank_deficient_template_is_unbounded() {
        let err = TemplatePolytope::new(mat(&[&[1.0, 1.0], &[2.0, 2.0]])).unwrap_err();
        assert!(matches!(err, Error::UnboundedTemplate { rank: 1, n: 2 }));
    }

    #[test]
    fn one_dimensional() {
        let t = TemplatePolytope::new(mat(&[&[2.0], &[-4.0]])).unwrap();
        assert_eq!(t.sigma(), 1);
        assert_relative_eq!(t.volume().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cube_and_octahedron_volume() {
        let cube = TemplatePolytope::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(cube.vertices().len(), 8);
        assert_relative_eq!(cube.volume().unwrap(), 8.0, epsilon = 1e-10);
        // |x|+|y|+|z| <= 1 as 4 symmetric rows: volume 4/3
        let oct = TemplatePolytope::new(mat(&[
            &[1.0, 1.0, 1.0],
            &[1.0, 1.0, -1.0],
            &[1.0, -1.0, 1.0],
            &[-1.0, 1.0, 1.0],
        ]))
        .unwrap();
        assert_eq!(oct.vertices().len(), 6);
        assert_relative_eq!(oct.volume().unwrap(), 4.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn volume_unsupported_above_three() {
        let t = TemplatePolytope::new(DMatrix::identity(4, 4)).unwrap();
        assert!(matches!(t.volume(), Err(Error::DimensionUnsupported(4))));
        let (est, se) = t.monte_carlo_volume(10_000, 1);
        assert_relative_eq!(est, 16.0, epsilon = 1e-12);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn membership() {
        let t = TemplatePolytope::new(mat(&[&[10.0, 10.0], &[10.0, 0.0], &[1.0, 11.0]])).unwrap();
        let w = mat(&[&[17.54, -2.46], &[-2.46, 15.77]]);
        let set = RciSet::new(w.clone(), t.clone()).unwrap();
        assert!(set.contains(&DVector::zeros(2), 0.0));
        let v0 = &w * &t.vertices()[0];
        assert!(set.contains(&v0, 1e-12));
        assert!(!set.contains(&(v0 * 1.01), 1e-6));
    }

    #[test]
    fn singular_w_rejected() {
        let t = TemplatePolytope::new(DMatrix::identity(2, 2)).unwrap();
        let err = RciSet::new(mat(&[&[1.0, 2.0], &[2.0, 4.0]]), t).unwrap_err();
        assert!(matches!(err, Error::SingularW { .. }));
    }

    #[test]
    fn svg_and_csv_exports() {
        let t = TemplatePolytope::new(DMatrix::identity(2, 2)).unwrap();
        let set = RciSet::new(DMatrix::identity(2, 2) * 2.0, t).unwrap();
        let svg = set.svg_path("fill=\"blue\"");
        assert!(svg.starts_with("<path d=\"M"));
        assert!(svg.contains("Z\""));
        assert_eq!(set.vertices_csv().lines().count(), 4);
    }
}
