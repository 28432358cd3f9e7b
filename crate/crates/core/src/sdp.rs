//! Determinant-maximization SDP and LP solver.
//!
//! Solves
//!
//! ```text
//! maximize   cᵀz + log det S₀(z)
//! subject to S_k(z) ⪰ 0,  aᵀz <= b,  Ez = e
//! ```
//!
//! with a primal log-barrier path-following method. For a barrier weight
//! `t` the centering problem is
//!
//! ```text
//! minimize  t·(-cᵀz - log det S₀(z)) - Σ log det S_k(z) - Σ log(b - aᵀz)
//! ```
//!
//! whose minimizer is `m/t` suboptimal, `m` being the sum of the
//! constraint block sizes plus the number of linear rows. A strictly
//! feasible start is found by a phase-one problem that minimizes a common
//! margin `s` added to every constraint.
//!
//! Newton systems are solved densely, or with an arrow elimination when
//! the caller partitions the variables into a global group and local
//! groups that never appear together in one constraint.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::min_eigenvalue;
use crate::lmi::{AffineRow, LmiBlock};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub dim: usize,
    pub blocks: Vec<LmiBlock>,
    /// `lhs <= rhs`.
    pub rows: Vec<AffineRow>,
    /// `lhs == rhs`.
    pub equalities: Vec<AffineRow>,
    /// Linear part of the maximized objective.
    pub c: DVector<f64>,
    /// Block whose log det is maximized.
    pub logdet: Option<LmiBlock>,
    /// Variable partition; group 0 is global. `None` forces dense solves.
    pub groups: Option<Vec<usize>>,
    /// Warm start; used instead of phase one when strictly feasible.
    pub start: Option<DVector<f64>>,
}

impl SdpProblem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            blocks: Vec::new(),
            rows: Vec::new(),
            equalities: Vec::new(),
            c: DVector::zeros(dim),
            logdet: None,
            groups: None,
            start: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.c.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "objective has length {} for {} variables",
                self.c.len(),
                self.dim
            )));
        }
        let in_range = |b: &LmiBlock| b.max_variable().is_none_or(|v| v < self.dim);
        if !self.blocks.iter().all(in_range) || !self.logdet.as_ref().is_none_or(in_range) {
            return Err(Error::ShapeMismatch("block references a variable out of range".into()));
        }
        let row_ok = |r: &AffineRow| {
            r.rhs.is_finite() && r.coeffs.iter().all(|&(k, v)| k < self.dim && v.is_finite())
        };
        if !self.rows.iter().all(row_ok) || !self.equalities.iter().all(row_ok) {
            return Err(Error::ShapeMismatch("row references a variable out of range".into()));
        }
        if let Some(g) = &self.groups {
            if g.len() != self.dim {
                return Err(Error::ShapeMismatch("group vector length".into()));
            }
        }
        if self.start.as_ref().is_some_and(|z| z.len() != self.dim) {
            return Err(Error::ShapeMismatch("start point length".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let lin = self.c.dot(z);
        match &self.logdet {
            Some(b) => match Cholesky::new(b.evaluate(z)) {
                Some(ch) => lin + chol_logdet(&ch),
                None => f64::NEG_INFINITY,
            },
            None => lin,
        }
    }

    /// Plain-text dump: block triplets (`block row col var coeff`), then
    /// `logdet <block>`, `c <var> <coeff>`, `row <k> <var> <coeff>`,
    /// `rhs <k> <value>` and the same for `eq`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# dim {}", self.dim);
        for (k, b) in self.blocks.iter().enumerate() {
            b.write_triplets(k, &mut out);
        }
        if let Some(b) = &self.logdet {
            let id = self.blocks.len();
            b.write_triplets(id, &mut out);
            let _ = writeln!(out, "logdet {id}");
        }
        for (k, v) in self.c.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "c {k} {v:.17e}");
            }
        }
        for (tag, rows) in [("row", &self.rows), ("eq", &self.equalities)] {
            for (k, r) in rows.iter().enumerate() {
                for &(var, v) in &r.coeffs {
                    let _ = writeln!(out, "{tag} {k} {var} {v:.17e}");
                }
                let _ = writeln!(out, "{tag}rhs {k} {:.17e}", r.rhs);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    /// Total Newton iterations over both phases.
    pub max_iter: usize,
    /// Recorded in the report; the method itself is deterministic.
    pub seed: u64,
    /// Barrier weight growth factor.
    pub mu: f64,
    /// Radius of the Euclidean ball the decision vector is kept in.
    pub box_bound: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            seed: 0,
            mu: 20.0,
            box_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Newton iterations over both phases.
    pub iterations: usize,
    pub phase_one_iterations: usize,
    /// Worst violation of linear rows and equalities.
    pub max_primal_residual: f64,
    /// Smallest eigenvalue over all constraint blocks.
    pub min_eigenvalue: f64,
    /// Upper bound on the optimal value from the barrier gap.
    pub dual_bound: f64,
    pub gap: f64,
    /// Infeasibility was proved (within the variable box) rather than
    /// inferred from a stalled phase one.
    pub certified: bool,
    /// Objective at each centered point.
    pub history: Vec<f64>,
    pub seed: u64,
}

impl SolveReport {
    fn empty(seed: u64) -> Self {
        Self {
            status: SolveStatus::NumericalTrouble,
            objective: f64::NAN,
            iterations: 0,
            phase_one_iterations: 0,
            max_primal_residual: 0.0,
            min_eigenvalue: f64::INFINITY,
            dual_bound: f64::INFINITY,
            gap: f64::INFINITY,
            certified: false,
            history: Vec::new(),
            seed,
        }
    }
}

/// Dense LP row `a · v <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LpRow {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Self { a, b }
    }
}

struct CBlock {
    constant: DMatrix<f64>,
    vars: Vec<usize>,
    coeffs: Vec<DMatrix<f64>>,
    /// Weighted by `t` (the log det target) instead of 1.
    objective: bool,
}

impl CBlock {
    fn compile(b: &LmiBlock, objective: bool) -> Self {
        let vars = b.variables();
        let coeffs = vars.iter().map(|&v| b.coefficient(v)).collect();
        Self {
            constant: b.constant().clone(),
            vars,
            coeffs,
            objective,
        }
    }

    fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.constant.clone();
        for (v, f) in self.vars.iter().zip(&self.coeffs) {
            let zv = z[*v];
            if zv != 0.0 {
                s += f * zv;
            }
        }
        s
    }

    fn size(&self) -> usize {
        self.constant.nrows()
    }
}

struct SRow {
    idx: Vec<usize>,
    val: Vec<f64>,
    b: f64,
}

impl SRow {
    fn slack(&self, z: &DVector<f64>) -> f64 {
        self.b - self.idx.iter().zip(&self.val).map(|(&k, &v)| v * z[k]).sum::<f64>()
    }
}

#[derive(Clone)]
enum Structure {
    Dense,
    Arrow {
        group: Vec<usize>,
        local: Vec<usize>,
        sizes: Vec<usize>,
    },
}

struct Barrier {
    dim: usize,
    blocks: Vec<CBlock>,
    rows: Vec<SRow>,
    /// Minimized linear term (scaled by `t`).
    lin: DVector<f64>,
    eq: Option<(DMatrix<f64>, DVector<f64>)>,
    structure: Structure,
    /// `‖z[..k]‖² <= r²` as `(k, r²)`.
    ball: Option<(usize, f64)>,
}

enum Hess {
    Dense(DMatrix<f64>),
    Arrow {
        gg: DMatrix<f64>,
        gl: Vec<DMatrix<f64>>,
        ll: Vec<DMatrix<f64>>,
    },
}

impl Hess {
    fn zeros(structure: &Structure, dim: usize) -> Self {
        match structure {
            Structure::Dense => Hess::Dense(DMatrix::zeros(dim, dim)),
            Structure::Arrow { sizes, .. } => {
                let g0 = sizes[0];
                Hess::Arrow {
                    gg: DMatrix::zeros(g0, g0),
                    gl: sizes[1..].iter().map(|&l| DMatrix::zeros(g0, l)).collect(),
                    ll: sizes[1..].iter().map(|&l| DMatrix::zeros(l, l)).collect(),
                }
            }
        }
    }

    /// Adds `v` at (i, j) and (j, i).
    fn add(&mut self, structure: &Structure, i: usize, j: usize, v: f64) {
        match (self, structure) {
            (Hess::Dense(h), _) => {
                h[(i, j)] += v;
                if i != j {
                    h[(j, i)] += v;
                }
            }
            (Hess::Arrow { gg, gl, ll }, Structure::Arrow { group, local, .. }) => {
                let (gi, gj, li, lj) = (group[i], group[j], local[i], local[j]);
                match (gi, gj) {
                    (0, 0) => {
                        gg[(li, lj)] += v;
                        if i != j {
                            gg[(lj, li)] += v;
                        }
                    }
                    (0, p) => gl[p - 1][(li, lj)] += v,
                    (p, 0) => gl[p - 1][(lj, li)] += v,
                    (p, q) => {
                        debug_assert_eq!(p, q);
                        ll[p - 1][(li, lj)] += v;
                        if i != j {
                            ll[p - 1][(lj, li)] += v;
                        }
                    }
                }
            }
            _ => unreachable!("hessian storage does not match structure"),
        }
    }
}

fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Cholesky factor of `S H S` with `S = diag(H)^(-1/2)`.
struct Factor {
    ch: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
}

impl Factor {
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        for (mut row, s) in y.row_iter_mut().zip(self.scale.iter()) {
            row *= *s;
        }
        self.ch.solve_mut(&mut y);
        for (mut row, s) in y.row_iter_mut().zip(self.scale.iter()) {
            row *= *s;
        }
        y
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }
}

/// Jacobi-scaled Cholesky with growing diagonal regularization.
fn chol_reg(mut m: DMatrix<f64>) -> Option<Factor> {
    let n = m.nrows();
    let scale = DVector::from_fn(n, |k, _| {
        let d = m[(k, k)];
        if d > 0.0 && d.is_finite() {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    for c in 0..n {
        for r in 0..n {
            m[(r, c)] *= scale[r] * scale[c];
        }
    }
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(Factor { ch, scale });
    }
    let mut delta = 1e-14;
    while delta <= 1e-2 {
        let mut r = m.clone();
        for k in 0..n {
            r[(k, k)] += delta;
        }
        if let Some(ch) = Cholesky::new(r) {
            return Some(Factor { ch, scale });
        }
        delta *= 100.0;
    }
    None
}

struct BlockTerms {
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

/// Solves `H X = B` for the arrow-structured `H`, column by column of `B`.
fn arrow_solve(
    gg: DMatrix<f64>,
    gl: &[DMatrix<f64>],
    ll: Vec<DMatrix<f64>>,
    group: &[usize],
    local: &[usize],
    sizes: &[usize],
    rhs: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let k = rhs.ncols();
    let mut parts: Vec<DMatrix<f64>> = sizes.iter().map(|&s| DMatrix::zeros(s, k)).collect();
    for v in 0..rhs.nrows() {
        for c in 0..k {
            parts[group[v]][(local[v], c)] = rhs[(v, c)];
        }
    }
    let elim: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> = ll
        .into_par_iter()
        .zip(gl.par_iter())
        .zip(parts[1..].par_iter())
        .map(|((hll, hgl), bp)| {
            let ch = chol_reg(hll)?;
            Some((ch.solve(&hgl.transpose()), ch.solve(bp)))
        })
        .collect();
    let mut schur = gg;
    let mut r0 = parts[0].clone();
    let mut facts = Vec::with_capacity(elim.len());
    for (p, e) in elim.into_iter().enumerate() {
        let (y, yb) = e?;
        schur -= &gl[p] * &y;
        r0 -= &gl[p] * &yb;
        facts.push((y, yb));
    }
    let schur = (&schur + schur.transpose()) * 0.5;
    let x0 = if sizes[0] > 0 {
        chol_reg(schur)?.solve(&r0)
    } else {
        DMatrix::zeros(0, k)
    };
    let xparts: Vec<DMatrix<f64>> = facts.par_iter().map(|(y, yb)| yb - y * &x0).collect();
    let mut out = DMatrix::zeros(rhs.nrows(), k);
    for v in 0..rhs.nrows() {
        let src = if group[v] == 0 { &x0 } else { &xparts[group[v] - 1] };
        for c in 0..k {
            out[(v, c)] = src[(local[v], c)];
        }
    }
    Some(out)
}

impl Barrier {
    fn weight(&self, b: &CBlock, t: f64) -> f64 {
        if b.objective {
            t
        } else {
            1.0
        }
    }

    fn ball_slack(&self, z: &DVector<f64>) -> Option<f64> {
        self.ball.map(|(k, r2)| r2 - z.rows(0, k).norm_squared())
    }

    /// Barrier value, or `None` outside the domain.
    fn value(&self, z: &DVector<f64>, t: f64) -> Option<f64> {
        let parts: Vec<Option<f64>> = self
            .blocks
            .par_iter()
            .map(|b| Cholesky::new(b.eval(z)).map(|ch| -self.weight(b, t) * chol_logdet(&ch)))
            .collect();
        let mut f = t * self.lin.dot(z);
        for p in parts {
            f += p?;
        }
        for s in self.rows.iter().map(|r| r.slack(z)).chain(self.ball_slack(z)) {
            if !(s > 0.0) {
                return None;
            }
            f -= s.ln();
        }
        f.is_finite().then_some(f)
    }

    /// Gradient, Hessian, and the rank-one Hessian term `uuᵀ` of the ball
    /// (folded into dense Hessians, returned separately otherwise).
    fn grad_hess(&self, z: &DVector<f64>, t: f64) -> Option<(DVector<f64>, Hess, Option<DVector<f64>>)> {
        let terms: Vec<Option<BlockTerms>> = self
            .blocks
            .par_iter()
            .map(|b| {
                let w = self.weight(b, t);
                let ch = Cholesky::new(b.eval(z))?;
                let sinv = ch.inverse();
                let ms: Vec<DMatrix<f64>> = b.coeffs.iter().map(|f| &sinv * f).collect();
                let mts: Vec<DMatrix<f64>> = ms.iter().map(|m| m.transpose()).collect();
                let nv = b.vars.len();
                let grad = ms.iter().map(|m| -w * m.trace()).collect();
                let mut hess = DMatrix::zeros(nv, nv);
                for a in 0..nv {
                    let ma = ms[a].as_slice();
                    for c in a..nv {
                        let dot: f64 = ma.iter().zip(mts[c].as_slice()).map(|(x, y)| x * y).sum();
                        hess[(a, c)] = w * dot;
                    }
                }
                Some(BlockTerms { grad, hess })
            })
            .collect();
        let mut g = self.lin.clone() * t;
        let mut h = Hess::zeros(&self.structure, self.dim);
        for (b, bt) in self.blocks.iter().zip(terms) {
            let bt = bt?;
            for (a, &va) in b.vars.iter().enumerate() {
                g[va] += bt.grad[a];
                for (c, &vc) in b.vars.iter().enumerate().skip(a) {
                    h.add(&self.structure, va, vc, bt.hess[(a, c)]);
                }
            }
        }
        for r in &self.rows {
            let s = r.slack(z);
            if !(s > 0.0) {
                return None;
            }
            let inv = 1.0 / s;
            for (a, (&ia, &va)) in r.idx.iter().zip(&r.val).enumerate() {
                g[ia] += va * inv;
                for (&ib, &vb) in r.idx.iter().zip(&r.val).skip(a) {
                    h.add(&self.structure, ia, ib, va * vb * inv * inv);
                }
            }
        }
        let mut rank_one = None;
        if let Some((k, _)) = self.ball {
            let s = self.ball_slack(z)?;
            if !(s > 0.0) {
                return None;
            }
            // -log(r² - ‖z‖²): gradient 2z/s, Hessian 2I/s + 4zzᵀ/s²
            let mut u = DVector::zeros(self.dim);
            for v in 0..k {
                g[v] += 2.0 * z[v] / s;
                h.add(&self.structure, v, v, 2.0 / s);
                u[v] = 2.0 * z[v] / s;
            }
            match &mut h {
                Hess::Dense(m) => m.ger(1.0, &u, &u, 1.0),
                Hess::Arrow { .. } => rank_one = Some(u),
            }
        }
        Some((g, h, rank_one))
    }

    /// Solves `(H + uuᵀ) Δ = -g` (with `EΔ = 0` when equalities are present).
    fn newton(&self, g: &DVector<f64>, h: Hess, u: Option<DVector<f64>>) -> Option<DVector<f64>> {
        match (h, &self.structure) {
            (Hess::Dense(h), _) => {
                let ch = chol_reg(h)?;
                let dx = ch.solve_vec(&(-g));
                match &self.eq {
                    None => Some(dx),
                    Some((e, _)) => {
                        let hinv_et = ch.solve(&e.transpose());
                        let schur = e * &hinv_et;
                        let nu = chol_reg(schur)?.solve_vec(&(e * &dx));
                        Some(dx - hinv_et * nu)
                    }
                }
            }
            (Hess::Arrow { gg, gl, ll }, Structure::Arrow { group, local, sizes }) => {
                let k = if u.is_some() { 2 } else { 1 };
                let mut rhs = DMatrix::zeros(self.dim, k);
                rhs.set_column(0, &(-g));
                if let Some(u) = &u {
                    rhs.set_column(1, u);
                }
                let sol = arrow_solve(gg, &gl, ll, group, local, sizes, &rhs)?;
                let x = sol.column(0).into_owned();
                match u {
                    None => Some(x),
                    Some(u) => {
                        // Sherman-Morrison
                        let y = sol.column(1);
                        let denom = 1.0 + u.dot(&y);
                        Some(x - y * (u.dot(&sol.column(0)) / denom))
                    }
                }
            }
            _ => None,
        }
    }

    fn feasible(&self, z: &DVector<f64>) -> bool {
        self.rows.iter().all(|r| r.slack(z) > 0.0)
            && self.ball_slack(z).is_none_or(|s| s > 0.0)
            && self.blocks.par_iter().all(|b| Cholesky::new(b.eval(z)).is_some())
    }

    /// Number of barrier terms weighted by one (the gap is `m / t`).
    fn gap_weight(&self) -> f64 {
        let blocks: usize = self.blocks.iter().filter(|b| !b.objective).map(CBlock::size).sum();
        (blocks + self.rows.len() + usize::from(self.ball.is_some())) as f64
    }
}

/// Damped steps allowed in one centering before it counts as stalled.
const MAX_CENTERING_STEPS: usize = 150;

/// Newton decrement² below which a point is treated as centered.
const NEAR_CENTER: f64 = 1e-3;

enum Center {
    Done,
    MaxIter,
    Stuck,
    /// Phase one reached a negative margin.
    Early,
}

/// Damped Newton centering at weight `t`.
fn center(
    bar: &Barrier,
    z: &mut DVector<f64>,
    t: f64,
    iters: &mut usize,
    max_iter: usize,
    stop: &dyn Fn(&DVector<f64>) -> bool,
) -> Center {
    let mut prev_lam2 = f64::INFINITY;
    let mut steps = 0;
    loop {
        if *iters >= max_iter {
            return Center::MaxIter;
        }
        if steps == MAX_CENTERING_STEPS {
            return Center::Stuck;
        }
        steps += 1;
        let Some((g, h, u)) = bar.grad_hess(z, t) else {
            return Center::Stuck;
        };
        let Some(dx) = bar.newton(&g, h, u) else {
            return Center::Stuck;
        };
        let slope = g.dot(&dx);
        let lam2 = -slope;
        if !lam2.is_finite() {
            return Center::Stuck;
        }
        // quadratic convergence has stopped: the step is at round-off level
        if lam2 <= 1e-9 || (lam2 < 1e-6 && lam2 > 0.25 * prev_lam2) {
            return Center::Done;
        }
        prev_lam2 = lam2;
        let Some(f0) = bar.value(z, t) else {
            return Center::Stuck;
        };
        let mut alpha = 1.0;
        let trial = |a: f64| z.clone() + &dx * a;
        // a nearly centered point whose step is lost to round-off counts
        // as centered
        let stalled = if lam2 < NEAR_CENTER { Center::Done } else { Center::Stuck };
        while !bar.feasible(&trial(alpha)) {
            // for λ < 1 the full step stays inside the Dikin ellipsoid, so
            // needing to shorten it near the center is round-off
            if lam2 < NEAR_CENTER {
                return Center::Done;
            }
            alpha *= 0.5;
            // steps this short make no progress
            if alpha < 1e-8 {
                return stalled;
            }
        }
        // inside the quadratic region round-off dominates the decrease test
        let armijo = lam2 > 1e-6;
        if armijo {
            loop {
                match bar.value(&trial(alpha), t) {
                    Some(f) if f <= f0 + 0.25 * alpha * slope => break,
                    _ => alpha *= 0.5,
                }
                if alpha < 1e-8 || (lam2 < NEAR_CENTER && alpha < 1e-3) {
                    return stalled;
                }
            }
        }
        let next = trial(alpha);
        if next == *z {
            // step below floating-point resolution
            return Center::Done;
        }
        *z = next;
        *iters += 1;
        if stop(z) {
            return Center::Early;
        }
    }
}

fn structure_for(problem: &SdpProblem, dim: usize, extra_global: usize) -> Structure {
    let Some(groups) = &problem.groups else {
        return Structure::Dense;
    };
    if !problem.equalities.is_empty() {
        return Structure::Dense;
    }
    let spans_one = |vars: &mut dyn Iterator<Item = usize>| {
        let mut seen = 0;
        for v in vars {
            let g = groups[v];
            if g != 0 {
                if seen != 0 && seen != g {
                    return false;
                }
                seen = g;
            }
        }
        true
    };
    let blocks_ok = problem
        .blocks
        .iter()
        .chain(problem.logdet.iter())
        .all(|b| spans_one(&mut b.variables().into_iter()));
    let rows_ok = problem
        .rows
        .iter()
        .all(|r| spans_one(&mut r.coeffs.iter().map(|c| c.0)));
    if !(blocks_ok && rows_ok) {
        return Structure::Dense;
    }
    // compact renumbering, global first
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let map = |g: usize| if g == 0 { 0 } else { ids.binary_search(&g).unwrap() + usize::from(ids[0] != 0) };
    let ngroups = 1 + ids.iter().filter(|&&g| g != 0).count();
    let mut sizes = vec![0; ngroups];
    let mut group = Vec::with_capacity(dim);
    let mut local = Vec::with_capacity(dim);
    for v in 0..dim {
        let g = if v < groups.len() { map(groups[v]) } else { 0 };
        group.push(g);
        local.push(sizes[g]);
        sizes[g] += 1;
    }
    debug_assert_eq!(dim, groups.len() + extra_global);
    Structure::Arrow { group, local, sizes }
}

fn sparse_rows(problem: &SdpProblem, margin_var: Option<usize>) -> Vec<SRow> {
    let rows: Vec<SRow> = problem
        .rows
        .iter()
        .map(|r| {
            let mut idx: Vec<usize> = r.coeffs.iter().map(|c| c.0).collect();
            let mut val: Vec<f64> = r.coeffs.iter().map(|c| c.1).collect();
            if let Some(s) = margin_var {
                idx.push(s);
                val.push(-1.0);
            }
            SRow { idx, val, b: r.rhs }
        })
        .collect();
    rows
}

fn equality_system(problem: &SdpProblem, dim: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
    if problem.equalities.is_empty() {
        return None;
    }
    let k = problem.equalities.len();
    let mut e = DMatrix::zeros(k, dim);
    let mut rhs = DVector::zeros(k);
    for (r, row) in problem.equalities.iter().enumerate() {
        for &(v, c) in &row.coeffs {
            e[(r, v)] += c;
        }
        rhs[r] = row.rhs;
    }
    Some((e, rhs))
}

fn residuals(problem: &SdpProblem, z: &DVector<f64>) -> (f64, f64) {
    let mut res = 0.0_f64;
    for r in &problem.rows {
        res = res.max(-r.slack(z));
    }
    for r in &problem.equalities {
        res = res.max(r.slack(z).abs());
    }
    let min_eig = problem
        .blocks
        .par_iter()
        .map(|b| min_eigenvalue(&b.evaluate(z)))
        .reduce(|| f64::INFINITY, f64::min);
    (res, min_eig)
}

enum PhaseOne {
    Feasible(DVector<f64>),
    Infeasible { certified: bool },
    Failed(SolveStatus),
}

fn start_point(problem: &SdpProblem) -> DVector<f64> {
    match equality_system(problem, problem.dim) {
        None => DVector::zeros(problem.dim),
        Some((e, rhs)) => e
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(problem.dim)),
    }
}

fn phase_one(
    problem: &SdpProblem,
    z0: &DVector<f64>,
    opts: &SolveOptions,
    iters: &mut usize,
) -> PhaseOne {
    let dim = problem.dim + 1;
    let s_var = problem.dim;
    let mut blocks: Vec<CBlock> = problem
        .blocks
        .iter()
        .chain(problem.logdet.iter())
        .map(|b| CBlock::compile(&b.with_identity_term(s_var, 1.0), false))
        .collect();
    let rows = sparse_rows(problem, Some(s_var));
    let mut lin = DVector::zeros(dim);
    lin[s_var] = 1.0;

    let mut z = DVector::zeros(dim);
    z.rows_mut(0, problem.dim).copy_from(z0);
    let mut worst = 0.0_f64;
    for b in &mut blocks {
        worst = worst.max(-min_eigenvalue(&b.eval(&z)));
    }
    for r in &rows {
        worst = worst.max(-r.slack(&z));
    }
    z[s_var] = worst + 1.0_f64.max(0.1 * worst);

    let bar = Barrier {
        dim,
        blocks,
        rows,
        lin,
        eq: equality_system(problem, problem.dim).map(|(e, r)| {
            let mut ext = DMatrix::zeros(e.nrows(), dim);
            ext.columns_mut(0, problem.dim).copy_from(&e);
            (ext, r)
        }),
        structure: structure_for(problem, dim, 1),
        ball: Some((problem.dim, opts.box_bound * opts.box_bound)),
    };
    let m = bar.gap_weight();
    let mut t = (m / z[s_var].abs().max(1.0)).max(1e-3);
    let stop = |z: &DVector<f64>| z[s_var] < 0.0;
    loop {
        match center(&bar, &mut z, t, iters, opts.max_iter, &stop) {
            Center::Early => return PhaseOne::Feasible(z.rows(0, problem.dim).into_owned()),
            Center::MaxIter => return PhaseOne::Failed(SolveStatus::MaxIter),
            Center::Stuck => {
                return if z[s_var] > 0.0 && z[s_var] - m / t > 0.0 {
                    PhaseOne::Infeasible { certified: true }
                } else {
                    PhaseOne::Failed(SolveStatus::NumericalTrouble)
                }
            }
            Center::Done => {
                let s = z[s_var];
                if s - m / t > 0.0 {
                    return PhaseOne::Infeasible { certified: true };
                }
                if m / t <= 1e-10 * s.abs().max(1.0) {
                    return PhaseOne::Infeasible { certified: false };
                }
                t *= opts.mu;
            }
        }
    }
}

/// Maximizes `cᵀz + log det S₀(z)` over the constraints.
///
/// Always returns the last iterate; the report says whether it is optimal.
pub fn solve(problem: &SdpProblem, opts: &SolveOptions) -> Result<(DVector<f64>, SolveReport)> {
    problem.validate()?;
    let (z, report) = solve_from(problem, opts, true);
    // a warm start too close to the boundary can stall before the first
    // centered point; start over cold
    if problem.start.is_some() && report.status == SolveStatus::NumericalTrouble && report.history.is_empty() {
        return Ok(solve_from(problem, opts, false));
    }
    Ok((z, report))
}

fn solve_from(problem: &SdpProblem, opts: &SolveOptions, use_start: bool) -> (DVector<f64>, SolveReport) {
    let mut report = SolveReport::empty(opts.seed);
    let mut iters = 0;
    let z0 = start_point(problem);

    let blocks: Vec<CBlock> = problem
        .blocks
        .iter()
        .map(|b| CBlock::compile(b, false))
        .chain(problem.logdet.iter().map(|b| CBlock::compile(b, true)))
        .collect();
    let bar = Barrier {
        dim: problem.dim,
        blocks,
        rows: sparse_rows(problem, None),
        lin: -problem.c.clone(),
        eq: equality_system(problem, problem.dim),
        structure: structure_for(problem, problem.dim, 0),
        ball: Some((problem.dim, opts.box_bound * opts.box_bound)),
    };

    let warm = problem
        .start
        .as_ref()
        .filter(|z| use_start && problem.equalities.is_empty() && bar.feasible(z));
    let mut z = if let Some(z) = warm {
        z.clone()
    } else if bar.feasible(&z0) {
        z0
    } else {
        match phase_one(problem, &z0, opts, &mut iters) {
            PhaseOne::Feasible(z) => z,
            PhaseOne::Infeasible { certified } => {
                report.status = SolveStatus::Infeasible;
                report.certified = certified;
                report.iterations = iters;
                report.phase_one_iterations = iters;
                return (z0, report);
            }
            PhaseOne::Failed(status) => {
                report.status = status;
                report.iterations = iters;
                report.phase_one_iterations = iters;
                return (z0, report);
            }
        }
    };
    report.phase_one_iterations = iters;

    let m = bar.gap_weight();
    let mut t = 1.0;
    let mut factor = opts.mu;
    // last centered point and its weight
    let mut anchor: Option<(DVector<f64>, f64)> = None;
    let never = |_: &DVector<f64>| false;
    let status = loop {
        match center(&bar, &mut z, t, &mut iters, opts.max_iter, &never) {
            Center::Done | Center::Early => {}
            Center::MaxIter => break SolveStatus::MaxIter,
            Center::Stuck => {
                // retry from the last centered point with a shorter increase
                let Some((za, ta)) = &anchor else {
                    break SolveStatus::NumericalTrouble;
                };
                z = za.clone();
                factor = factor.sqrt();
                if factor < 1.2 {
                    t = *ta;
                    break SolveStatus::NumericalTrouble;
                }
                t = ta * factor;
                continue;
            }
        }
        let obj = problem.objective(&z);
        report.history.push(obj);
        report.gap = m / t;
        if m / t <= opts.tol * obj.abs().max(1.0) {
            break SolveStatus::Optimal;
        }
        anchor = Some((z.clone(), t));
        t *= factor;
    };

    report.status = status;
    report.objective = problem.objective(&z);
    report.gap = m / t;
    report.dual_bound = report.objective + m / t;
    report.iterations = iters;
    let (res, eig) = residuals(problem, &z);
    report.max_primal_residual = res;
    report.min_eigenvalue = eig;
    if status == SolveStatus::Optimal && z.norm() >= 0.5 * opts.box_bound {
        report.status = SolveStatus::Unbounded;
    }
    (z, report)
}

/// Maximizes `c · v` subject to `a · v <= b` for every row and returns an
/// optimal vertex when one can be recovered from the active rows.
pub fn solve_lp(rows: &[LpRow], c: &[f64]) -> Result<DVector<f64>> {
    let dim = c.len();
    if rows.iter().any(|r| r.a.len() != dim) {
        return Err(Error::ShapeMismatch("LP row length differs from objective".into()));
    }
    let mut problem = SdpProblem::new(dim);
    problem.c = DVector::from_column_slice(c);
    problem.rows = rows
        .iter()
        .map(|r| AffineRow::new(r.a.iter().copied().enumerate(), r.b))
        .collect();
    let opts = SolveOptions {
        tol: 1e-9,
        max_iter: 500,
        ..SolveOptions::default()
    };
    let (z, report) = solve(&problem, &opts)?;
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::LpInfeasible),
        SolveStatus::Unbounded => return Err(Error::LpUnbounded),
        other => return Err(Error::Solver(format!("LP solve ended with {other:?}"))),
    }
    Ok(purify(rows, c, z))
}

/// Snaps an interior near-optimal point onto the vertex defined by its
/// most active linearly independent rows, if that vertex is feasible and
/// no worse.
fn purify(rows: &[LpRow], c: &[f64], z: DVector<f64>) -> DVector<f64> {
    let dim = c.len();
    if dim == 0 {
        return z;
    }
    let slack = |v: &DVector<f64>, r: &LpRow| r.b - r.a.iter().zip(v.iter()).map(|(a, x)| a * x).sum::<f64>();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = slack(&z, &rows[a]) / (1.0 + rows[a].b.abs());
        let sb = slack(&z, &rows[b]) / (1.0 + rows[b].b.abs());
        sa.total_cmp(&sb)
    });
    let mut chosen: Vec<usize> = Vec::with_capacity(dim);
    for &k in &order {
        if chosen.len() == dim {
            break;
        }
        if slack(&z, &rows[k]) > 1e-4 * (1.0 + rows[k].b.abs()) {
            break;
        }
        chosen.push(k);
        let a = DMatrix::from_fn(chosen.len(), dim, |i, j| rows[chosen[i]].a[j]);
        if crate::linalg::numerical_rank(&a) < chosen.len() {
            chosen.pop();
        }
    }
    if chosen.len() < dim {
        return z;
    }
    let a = DMatrix::from_fn(dim, dim, |i, j| rows[chosen[i]].a[j]);
    let b = DVector::from_fn(dim, |i, _| rows[chosen[i]].b);
    let Some(v) = a.lu().solve(&b) else {
        return z;
    };
    let feasible = rows.iter().all(|r| slack(&v, r) >= -1e-9 * (1.0 + r.b.abs()));
    let obj = |x: &DVector<f64>| c.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
    if feasible && obj(&v) >= obj(&z) - 1e-9 * (1.0 + obj(&z).abs()) {
        v
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{BlockKind, BlockLabel, MatrixVar, VarKind};
    use approx::assert_abs_diff_eq;

    fn sym2() -> MatrixVar {
        MatrixVar { rows: 2, cols: 2, kind: VarKind::Symmetric, offset: 0 }
    }

    fn logdet_problem() -> SdpProblem {
        let w = sym2();
        let mut p = SdpProblem::new(3);
        p.logdet = Some(crate::lmi::symmetric_var_block(&w));
        p
    }

    #[test]
    fn logdet_under_identity_bound() {
        let w = sym2();
        let mut p = logdet_problem();
        let mut b = LmiBlock::new(2, BlockLabel::global(BlockKind::Other));
        for a in 0..2 {
            b.add_constant(a, a, 1.0);
            for c in a..2 {
                b.add_term(w.index(a, c).unwrap(), a, c, -1.0);
            }
        }
        p.blocks.push(b);
        let (z, rep) = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        let wv = w.read(&z);
        assert!((wv - DMatrix::identity(2, 2)).amax() < 1e-6);
        assert_abs_diff_eq!(rep.objective, 0.0, epsilon = 1e-6);
        assert!(rep.objective <= rep.dual_bound);
    }

    #[test]
    fn logdet_with_diagonal_bounds() {
        let w = sym2();
        let mut p = logdet_problem();
        p.rows.push(AffineRow::new([(w.index(0, 0).unwrap(), 1.0)], 2.0));
        p.rows.push(AffineRow::new([(w.index(1, 1).unwrap(), 1.0)], 3.0));
        let (z, rep) = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(rep.objective, 6.0_f64.ln(), epsilon = 1e-6);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-6);
        for pair in rep.history.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
    }

    #[test]
    fn equality_constrained_logdet() {
        // W11 + W22 = 2 -> W = I
        let w = sym2();
        let mut p = logdet_problem();
        p.equalities.push(AffineRow::new(
            [(w.index(0, 0).unwrap(), 1.0), (w.index(1, 1).unwrap(), 1.0)],
            2.0,
        ));
        let (z, rep) = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((w.read(&z) - DMatrix::identity(2, 2)).amax() < 1e-5);
        assert!(rep.max_primal_residual < 1e-9);
    }

    #[test]
    fn infeasible_block_detected() {
        // x >= 1 and x <= -1 through a 1x1 block and a row
        let mut p = SdpProblem::new(1);
        let mut b = LmiBlock::new(1, BlockLabel::global(BlockKind::Other));
        b.add_constant(0, 0, -1.0);
        b.add_term(0, 0, 0, 1.0);
        p.blocks.push(b);
        p.rows.push(AffineRow::new([(0, 1.0)], -1.0));
        let (_, rep) = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
        assert!(rep.certified);
    }

    #[test]
    fn arrow_matches_dense() {
        // two local scalars coupled to one global through 2x2 blocks
        let mut p = SdpProblem::new(3);
        for (k, loc) in [1usize, 2].into_iter().enumerate() {
            let mut b = LmiBlock::new(2, BlockLabel::new(k, 0, BlockKind::Other));
            b.add_term(0, 0, 0, 1.0);
            b.add_term(loc, 1, 1, 1.0);
            b.add_constant(0, 1, 1.0);
            p.blocks.push(b);
            p.rows.push(AffineRow::new([(loc, 1.0)], 4.0 + k as f64));
        }
        p.c[0] = -1.0;
        let (zd, rd) = solve(&p, &SolveOptions::default()).unwrap();
        p.groups = Some(vec![0, 1, 2]);
        let (za, ra) = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(rd.status, SolveStatus::Optimal);
        assert_eq!(ra.status, SolveStatus::Optimal);
        assert!((zd - za).amax() < 1e-6);
        // optimum: x0 = max(1/4, 1/5)
        assert_abs_diff_eq!(ra.objective, -0.25, epsilon = 1e-6);
    }

    #[test]
    fn deterministic_reports() {
        let w = sym2();
        let mut p = logdet_problem();
        p.rows.push(AffineRow::new([(w.index(0, 0).unwrap(), 1.0), (w.index(0, 1).unwrap(), 1.0)], 1.0));
        p.rows.push(AffineRow::new([(w.index(1, 1).unwrap(), 1.0)], 1.0));
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn lp_basic() {
        let v = solve_lp(&[LpRow::new(vec![1.0], 1.0)], &[1.0]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lp_vertex_and_degenerate() {
        let rows = vec![
            LpRow::new(vec![1.0, 1.0], 1.0),
            LpRow::new(vec![-1.0, 0.0], 0.0),
            LpRow::new(vec![0.0, -1.0], 0.0),
        ];
        let v = solve_lp(&rows, &[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        let v = solve_lp(&rows, &[0.0, 0.0]).unwrap();
        assert!(rows.iter().all(|r| r.b - r.a[0] * v[0] - r.a[1] * v[1] >= -1e-9));
    }

    #[test]
    fn lp_infeasible_and_unbounded() {
        let rows = vec![LpRow::new(vec![1.0], -1.0), LpRow::new(vec![-1.0], -1.0)];
        assert!(matches!(solve_lp(&rows, &[1.0]), Err(Error::LpInfeasible)));
        let rows = vec![LpRow::new(vec![-1.0], 0.0)];
        assert!(matches!(solve_lp(&rows, &[1.0]), Err(Error::LpUnbounded)));
    }

    #[test]
    fn dump_lists_everything() {
        let mut p = logdet_problem();
        p.rows.push(AffineRow::new([(0, 1.0)], 2.0));
        p.c[2] = 0.5;
        let d = p.dump();
        assert!(d.starts_with("# dim 3"));
        assert!(d.contains("logdet 0"));
        assert!(d.contains("c 2 5.0"));
        assert!(d.contains("rowrhs 0 2.0"));
    }
}
