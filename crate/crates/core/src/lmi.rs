//! Affine constraint and LMI assembly over a flat decision vector.
//!
//! Every matrix unknown (W, N, the per-pair multipliers) owns a slice of
//! the decision vector described by a [`MatrixVar`]. Blocks are affine
//! symmetric matrices `C + Σ z_v F_v`; the assembler always places
//! coefficients symmetrically, so evaluation is exactly symmetric.
//!
//! Block row/column layout of the invariance LMI for vertex `θ^j` and
//! template row `i` (sizes `1 | n(n+m) | n | n [| n]`):
//!
//! ```text
//! [ r_ij   -dᵀΛZ    0      0        (0)  ]
//! [  *     ZᵀΛZ     0      𝒢ᵀ       (0)  ]
//! [  *      *      DᵀΓD    I        (0)  ]
//! [  *      *       *      Q44      (Vᵀ) ]
//! [  *      *       *       *       (X)  ]
//! ```
//!
//! with `Q44 = W + Wᵀ - φ Pᵀe_i e_iᵀP` for the plain form and `V + Vᵀ`
//! for the dilated form.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};

use crate::dataset::LiftedData;
use crate::geometry::TemplatePolytope;
use crate::{Error, Result};

/// Margin used for strict inequalities (`≻ 0` becomes `⪰ εI`).
pub const STRICT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Full,
    Symmetric,
    Diagonal,
}

/// A matrix unknown stored in a contiguous slice of the decision vector.
/// Only free entries are stored: the upper triangle for symmetric
/// matrices, the diagonal for diagonal ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixVar {
    pub rows: usize,
    pub cols: usize,
    pub kind: VarKind,
    pub offset: usize,
}

impl MatrixVar {
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Full => self.rows * self.cols,
            VarKind::Symmetric => self.rows * (self.rows + 1) / 2,
            VarKind::Diagonal => self.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decision index of entry (r, c), or `None` for a structural zero.
    pub fn index(&self, r: usize, c: usize) -> Option<usize> {
        match self.kind {
            VarKind::Full => Some(self.offset + r * self.cols + c),
            VarKind::Symmetric => {
                let (a, b) = if r <= c { (r, c) } else { (c, r) };
                // row-major upper triangle
                Some(self.offset + a * self.rows - a * (a + 1) / 2 + b)
            }
            VarKind::Diagonal => (r == c).then_some(self.offset + r),
        }
    }

    pub fn read(&self, z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.index(r, c).map_or(0.0, |k| z[k])
        })
    }

    /// Writes `value` into the slice (symmetric part for symmetric vars).
    pub fn write(&self, z: &mut DVector<f64>, value: &DMatrix<f64>) {
        for r in 0..self.rows {
            for c in 0..self.cols {
                match self.kind {
                    VarKind::Full => z[self.offset + r * self.cols + c] = value[(r, c)],
                    VarKind::Symmetric if r <= c => {
                        z[self.index(r, c).unwrap()] = 0.5 * (value[(r, c)] + value[(c, r)])
                    }
                    VarKind::Diagonal if r == c => z[self.offset + r] = value[(r, r)],
                    _ => {}
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutSpec {
    pub n: usize,
    pub m: usize,
    pub n_p: usize,
    /// Number of template vertices `2σ`.
    pub n_vertices: usize,
    /// `T · n_w`.
    pub band_rows: usize,
    pub n_w: usize,
    pub symmetric_w: bool,
    pub dilated: bool,
    pub with_wobj: bool,
}

/// Multipliers owned by one `(i, j)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairVars {
    pub phi: usize,
    pub lambda: MatrixVar,
    pub gamma: MatrixVar,
    pub v: Option<MatrixVar>,
    pub x: Option<MatrixVar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLayout {
    pub spec: LayoutSpec,
    pub w: MatrixVar,
    pub n_mat: MatrixVar,
    pub w_obj: Option<MatrixVar>,
    pairs: Vec<PairVars>,
    dim: usize,
}

impl DecisionLayout {
    pub fn new(spec: LayoutSpec) -> Self {
        let mut offset = 0;
        let mut take = |rows, cols, kind| {
            let v = MatrixVar { rows, cols, kind, offset };
            offset += v.len();
            v
        };
        let w = take(
            spec.n,
            spec.n,
            if spec.symmetric_w { VarKind::Symmetric } else { VarKind::Full },
        );
        let n_mat = take(spec.m, spec.n, VarKind::Full);
        let w_obj = spec.with_wobj.then(|| take(spec.n, spec.n, VarKind::Symmetric));
        let mut pairs = Vec::with_capacity(spec.n_p * spec.n_vertices);
        for _ in 0..spec.n_p * spec.n_vertices {
            let phi = take(1, 1, VarKind::Full).offset;
            let lambda = take(spec.band_rows, spec.band_rows, VarKind::Diagonal);
            let gamma = take(spec.n_w, spec.n_w, VarKind::Diagonal);
            let v = spec.dilated.then(|| take(spec.n, spec.n, VarKind::Full));
            let x = spec.dilated.then(|| take(spec.n, spec.n, VarKind::Symmetric));
            pairs.push(PairVars { phi, lambda, gamma, v, x });
        }
        Self {
            spec,
            w,
            n_mat,
            w_obj,
            pairs,
            dim: offset,
        }
    }

    /// Layout matching a data set and template.
    pub fn for_problem(
        lift: &LiftedData,
        template: &TemplatePolytope,
        symmetric_w: bool,
        dilated: bool,
        with_wobj: bool,
    ) -> Self {
        Self::new(LayoutSpec {
            n: lift.n,
            m: lift.m,
            n_p: template.complexity(),
            n_vertices: template.vertices().len(),
            band_rows: lift.rows(),
            n_w: lift.n_w(),
            symmetric_w,
            dilated,
            with_wobj,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pair(&self, i: usize, j: usize) -> &PairVars {
        &self.pairs[i * self.spec.n_vertices + j]
    }

    pub fn pairs(&self) -> &[PairVars] {
        &self.pairs
    }

    /// Coupling partition: 0 for W, N, W_obj; `1 + pair index` for the
    /// multipliers of each pair.
    pub fn groups(&self) -> Vec<usize> {
        let mut g = vec![0; self.dim];
        for (p, vars) in self.pairs.iter().enumerate() {
            let end = vars.x.or(vars.v).unwrap_or(vars.gamma);
            for slot in g.iter_mut().take(end.offset + end.len()).skip(vars.phi) {
                *slot = p + 1;
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Plain S-procedure invariance LMI.
    Invariance,
    /// `[[W + Wᵀ - X, φPᵀe],[φeᵀP, φ]]`.
    DilatedSmall,
    /// Dilated invariance LMI with the extra `(V, X)` row.
    DilatedBig,
    /// Small dilated block with the (1,1) entry linearized at an iterate.
    DilatedSmallIterate,
    /// `WᵀW_q + W_qᵀW - W_qᵀW_q - W_obj`.
    ObjectiveGap,
    /// `W_obj - εI`.
    ObjectiveFloor,
    /// The matrix whose log det is maximized.
    LogdetTarget,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLabel {
    pub i: usize,
    pub j: usize,
    pub kind: BlockKind,
}

impl BlockLabel {
    pub fn new(i: usize, j: usize, kind: BlockKind) -> Self {
        Self { i, j, kind }
    }

    pub fn global(kind: BlockKind) -> Self {
        Self { i: 0, j: 0, kind }
    }
}

/// Affine symmetric matrix `C + Σ z_v F_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub label: BlockLabel,
    size: usize,
    constant: DMatrix<f64>,
    /// Upper-triangle coefficient entries per variable.
    terms: BTreeMap<usize, BTreeMap<(usize, usize), f64>>,
}

impl LmiBlock {
    pub fn new(size: usize, label: BlockLabel) -> Self {
        Self {
            label,
            size,
            constant: DMatrix::zeros(size, size),
            terms: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    /// Adds `value` at (r, c) and (c, r) of the constant part.
    pub fn add_constant(&mut self, r: usize, c: usize, value: f64) {
        self.constant[(r, c)] += value;
        if r != c {
            self.constant[(c, r)] += value;
        }
    }

    /// Adds `value · z_var` at (r, c) and (c, r).
    pub fn add_term(&mut self, var: usize, r: usize, c: usize, value: f64) {
        if value == 0.0 {
            return;
        }
        let key = if r <= c { (r, c) } else { (c, r) };
        *self.terms.entry(var).or_default().entry(key).or_insert(0.0) += value;
    }

    pub fn add_optional(&mut self, var: Option<usize>, r: usize, c: usize, value: f64) {
        if let Some(v) = var {
            self.add_term(v, r, c, value);
        }
    }

    /// Variables with a nonzero coefficient, ascending.
    pub fn variables(&self) -> Vec<usize> {
        self.terms
            .iter()
            .filter(|(_, t)| t.values().any(|v| *v != 0.0))
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn max_variable(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    /// Dense symmetric coefficient matrix of `var`.
    pub fn coefficient(&self, var: usize) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.size, self.size);
        if let Some(t) = self.terms.get(&var) {
            for (&(r, c), &v) in t {
                f[(r, c)] += v;
                if r != c {
                    f[(c, r)] += v;
                }
            }
        }
        f
    }

    pub fn evaluate(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.constant.clone();
        for (&var, t) in &self.terms {
            let zv = z[var];
            if zv == 0.0 {
                continue;
            }
            for (&(r, c), &v) in t {
                s[(r, c)] += v * zv;
                if r != c {
                    s[(c, r)] += v * zv;
                }
            }
        }
        s
    }

    /// Adds `shift · z_var · I`; used for phase-one margins.
    pub fn with_identity_term(&self, var: usize, shift: f64) -> Self {
        let mut b = self.clone();
        for k in 0..self.size {
            b.add_term(var, k, k, shift);
        }
        b
    }

    /// Plain-text sparse triplets, upper triangle only:
    /// `block row col var coeff`, with `var = -1` for the constant part.
    pub fn write_triplets(&self, block_id: usize, out: &mut String) {
        for c in 0..self.size {
            for r in 0..=c {
                let v = self.constant[(r, c)];
                if v != 0.0 {
                    let _ = writeln!(out, "{block_id} {r} {c} -1 {v:.17e}");
                }
            }
        }
        for (&var, t) in &self.terms {
            for (&(r, c), &v) in t {
                if v != 0.0 {
                    let _ = writeln!(out, "{block_id} {r} {c} {var} {v:.17e}");
                }
            }
        }
    }
}

impl fmt::Display for LmiBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_triplets(0, &mut s);
        f.write_str(&s)
    }
}

/// `Σ coeff · z <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl AffineRow {
    /// Merges duplicate variables and drops zero coefficients.
    pub fn new(coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> Self {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (k, v) in coeffs {
            *merged.entry(k).or_insert(0.0) += v;
        }
        Self {
            coeffs: merged.into_iter().filter(|(_, v)| *v != 0.0).collect(),
            rhs,
        }
    }

    pub fn lhs(&self, z: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|&(k, v)| v * z[k]).sum()
    }

    /// `rhs - lhs`; nonnegative when satisfied.
    pub fn slack(&self, z: &DVector<f64>) -> f64 {
        self.rhs - self.lhs(z)
    }
}

/// `h · W θ^j <= 1` for every row h of H and every vertex.
pub fn state_constraint_rows(
    h: &DMatrix<f64>,
    vertices: &[DVector<f64>],
    layout: &DecisionLayout,
) -> Vec<AffineRow> {
    matrix_rows(h, vertices, &layout.w)
}

/// `g · N θ^j <= 1` for every row g of G and every vertex.
pub fn input_constraint_rows(
    g: &DMatrix<f64>,
    vertices: &[DVector<f64>],
    layout: &DecisionLayout,
) -> Vec<AffineRow> {
    matrix_rows(g, vertices, &layout.n_mat)
}

fn matrix_rows(a: &DMatrix<f64>, vertices: &[DVector<f64>], var: &MatrixVar) -> Vec<AffineRow> {
    let mut rows = Vec::with_capacity(a.nrows() * vertices.len());
    for k in 0..a.nrows() {
        for theta in vertices {
            let mut coeffs = Vec::new();
            for r in 0..var.rows {
                for c in 0..var.cols {
                    if let Some(idx) = var.index(r, c) {
                        coeffs.push((idx, a[(k, r)] * theta[c]));
                    }
                }
            }
            rows.push(AffineRow::new(coeffs, 1.0));
        }
    }
    rows
}

/// `-φ <= 0`, `-Λ_kk <= 0`, `-Γ_ll <= 0` for every pair.
pub fn multiplier_sign_rows(layout: &DecisionLayout) -> Vec<AffineRow> {
    let mut rows = Vec::new();
    for p in layout.pairs() {
        rows.push(AffineRow::new([(p.phi, -1.0)], 0.0));
        for k in 0..p.lambda.rows {
            rows.push(AffineRow::new([(p.lambda.offset + k, -1.0)], 0.0));
        }
        for k in 0..p.gamma.rows {
            rows.push(AffineRow::new([(p.gamma.offset + k, -1.0)], 0.0));
        }
    }
    rows
}

/// One entry of the affine map `(W, N) ↦ 𝒢(W, N, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GEntry {
    pub row: usize,
    pub col: usize,
    pub var: usize,
    pub coeff: f64,
}

/// Coefficient template of `𝒢 = ([W; N] θ)ᵀ ⊗ I_n` (n × n(n+m)).
///
/// `𝒢[r, c·n + r] = g_c` where `g = [W; N] θ`, so every nonzero entry is a
/// linear form in one row of W or N.
pub fn gmat(theta: &DVector<f64>, layout: &DecisionLayout) -> Vec<GEntry> {
    let (n, m) = (layout.spec.n, layout.spec.m);
    let mut out = Vec::new();
    for c in 0..n + m {
        for r in 0..n {
            let col = c * n + r;
            for l in 0..n {
                let var = if c < n {
                    layout.w.index(c, l)
                } else {
                    layout.n_mat.index(c - n, l)
                };
                if let Some(var) = var {
                    if theta[l] != 0.0 {
                        out.push(GEntry {
                            row: r,
                            col,
                            var,
                            coeff: theta[l],
                        });
                    }
                }
            }
        }
    }
    out
}

/// Dense `𝒢(W, N, θ)` evaluated directly from its definition.
pub fn gmat_value(w: &DMatrix<f64>, n_mat: &DMatrix<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let m = n_mat.nrows();
    let mut stacked = DMatrix::zeros(n + m, n);
    stacked.rows_mut(0, n).copy_from(w);
    stacked.rows_mut(n, m).copy_from(n_mat);
    let g = stacked * theta;
    g.transpose().kronecker(&DMatrix::<f64>::identity(n, n))
}

fn check_lift(lift: &LiftedData, layout: &DecisionLayout) -> Result<()> {
    let s = &layout.spec;
    if lift.n != s.n || lift.m != s.m || lift.rows() != s.band_rows || lift.n_w() != s.n_w {
        return Err(Error::LayoutMismatch("dimensions matching the lifted data"));
    }
    Ok(())
}

/// Shared rows/cols 1–3 and the 𝒢 coupling of the invariance LMI.
fn invariance_common(
    block: &mut LmiBlock,
    vars: &PairVars,
    lift: &LiftedData,
    theta: &DVector<f64>,
    layout: &DecisionLayout,
) {
    let n = lift.n;
    let nm = lift.model_dim();
    let o2 = 1;
    let o3 = 1 + nm;
    let o4 = o3 + n;

    // r_ij = φ - 1ᵀΛ1 - 1ᵀΓ1 + dᵀΛd
    block.add_term(vars.phi, 0, 0, 1.0);
    for k in 0..lift.rows() {
        let lam = vars.lambda.offset + k;
        let dk = lift.d[k];
        block.add_term(lam, 0, 0, dk * dk - 1.0);
        for a in 0..nm {
            let zka = lift.z[(k, a)];
            if zka == 0.0 {
                continue;
            }
            block.add_term(lam, 0, o2 + a, -dk * zka);
            for b in a..nm {
                block.add_term(lam, o2 + a, o2 + b, zka * lift.z[(k, b)]);
            }
        }
    }
    for l in 0..lift.n_w() {
        let gam = vars.gamma.offset + l;
        block.add_term(gam, 0, 0, -1.0);
        for a in 0..n {
            for b in a..n {
                block.add_term(gam, o3 + a, o3 + b, lift.dist[(l, a)] * lift.dist[(l, b)]);
            }
        }
    }
    for e in gmat(theta, layout) {
        // 𝒢ᵀ sits at rows o2.., cols o4..
        block.add_term(e.var, o2 + e.col, o4 + e.row, e.coeff);
    }
    for r in 0..n {
        block.add_constant(o3 + r, o4 + r, 1.0);
    }
}

/// Plain S-procedure invariance block for template row `i`, vertex `j`.
pub fn theorem1_block(
    i: usize,
    j: usize,
    lift: &LiftedData,
    template: &TemplatePolytope,
    layout: &DecisionLayout,
) -> Result<LmiBlock> {
    check_lift(lift, layout)?;
    if layout.spec.dilated {
        return Err(Error::LayoutMismatch("a non-dilated layout"));
    }
    let n = lift.n;
    let o4 = 1 + lift.model_dim() + n;
    let vars = *layout.pair(i, j);
    let mut block = LmiBlock::new(o4 + n, BlockLabel::new(i, j, BlockKind::Invariance));
    invariance_common(&mut block, &vars, lift, &template.vertices()[j], layout);
    add_w_plus_wt(&mut block, &layout.w, o4, 1.0);
    let p = template.p().row(i);
    for a in 0..n {
        for b in a..n {
            block.add_term(vars.phi, o4 + a, o4 + b, -p[a] * p[b]);
        }
    }
    Ok(block)
}

/// `scale · (M + Mᵀ)` on the diagonal block at `offset`.
fn add_w_plus_wt(block: &mut LmiBlock, var: &MatrixVar, offset: usize, scale: f64) {
    let n = var.rows;
    for a in 0..n {
        for b in a..n {
            block.add_optional(var.index(a, b), offset + a, offset + b, scale);
            block.add_optional(var.index(b, a), offset + a, offset + b, scale);
        }
    }
}

/// Dilated pair: the small `(n+1)` block and the big invariance block.
pub fn theorem2_blocks(
    i: usize,
    j: usize,
    lift: &LiftedData,
    template: &TemplatePolytope,
    layout: &DecisionLayout,
) -> Result<(LmiBlock, LmiBlock)> {
    check_lift(lift, layout)?;
    let vars = *layout.pair(i, j);
    let (Some(vv), Some(xv)) = (vars.v, vars.x) else {
        return Err(Error::LayoutMismatch("dilation variables V_ij and X_ij"));
    };
    let n = lift.n;

    let mut small = LmiBlock::new(n + 1, BlockLabel::new(i, j, BlockKind::DilatedSmall));
    add_w_plus_wt(&mut small, &layout.w, 0, 1.0);
    for a in 0..n {
        for b in a..n {
            small.add_term(xv.index(a, b).unwrap(), a, b, -1.0);
        }
    }
    add_phi_column(&mut small, vars.phi, template, i, n);

    let o4 = 1 + lift.model_dim() + n;
    let o5 = o4 + n;
    let mut big = LmiBlock::new(o5 + n, BlockLabel::new(i, j, BlockKind::DilatedBig));
    invariance_common(&mut big, &vars, lift, &template.vertices()[j], layout);
    add_w_plus_wt(&mut big, &vv, o4, 1.0);
    for a in 0..n {
        for b in 0..n {
            // (4,5) block is Vᵀ: entry (a, b) = V[b, a]
            big.add_term(vv.index(b, a).unwrap(), o4 + a, o5 + b, 1.0);
        }
        for b in a..n {
            big.add_term(xv.index(a, b).unwrap(), o5 + a, o5 + b, 1.0);
        }
    }
    Ok((small, big))
}

fn add_phi_column(block: &mut LmiBlock, phi: usize, template: &TemplatePolytope, i: usize, n: usize) {
    let p = template.p().row(i);
    for a in 0..n {
        block.add_term(phi, a, n, p[a]);
    }
    block.add_term(phi, n, n, 1.0);
}

/// State of the previous outer iteration used to linearize.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub w_prev: DMatrix<f64>,
    /// `X_ij` of the previous iterate, indexed like [`DecisionLayout::pairs`].
    pub x_prev: Vec<DMatrix<f64>>,
}

/// `Z_q = X_prev⁻¹ W_prev`.
pub fn linearization_point(
    state: &IterateState,
    i: usize,
    j: usize,
    n_vertices: usize,
) -> Result<DMatrix<f64>> {
    let x = &state.x_prev[i * n_vertices + j];
    let det = x.determinant();
    let scale = crate::linalg::max_abs(x).max(f64::MIN_POSITIVE).powi(x.nrows() as i32);
    if !det.is_finite() || det.abs() <= 1e-14 * scale {
        return Err(Error::SingularIterate { i, j });
    }
    let inv = x.clone().try_inverse().ok_or(Error::SingularIterate { i, j })?;
    Ok(inv * &state.w_prev)
}

/// Objective-gap block `WᵀW_q + W_qᵀW - W_qᵀW_q - W_obj` and the
/// linearized small dilated block with (1,1) entry
/// `WᵀZ_q + Z_qᵀW - Z_qᵀ X Z_q`.
pub fn iterative_blocks(
    state: &IterateState,
    i: usize,
    j: usize,
    template: &TemplatePolytope,
    layout: &DecisionLayout,
) -> Result<(LmiBlock, LmiBlock)> {
    let w_obj = layout
        .w_obj
        .ok_or(Error::LayoutMismatch("the objective matrix W_obj"))?;
    let vars = *layout.pair(i, j);
    let xv = vars
        .x
        .ok_or(Error::LayoutMismatch("dilation variables X_ij"))?;
    let n = layout.spec.n;
    let zq = linearization_point(state, i, j, layout.spec.n_vertices)?;

    let wobj = objective_gap_block(&state.w_prev, layout, w_obj);

    let mut small = LmiBlock::new(n + 1, BlockLabel::new(i, j, BlockKind::DilatedSmallIterate));
    for a in 0..n {
        for b in a..n {
            for r in 0..n {
                small.add_optional(layout.w.index(r, a), a, b, zq[(r, b)]);
                small.add_optional(layout.w.index(r, b), a, b, zq[(r, a)]);
                for s in 0..n {
                    small.add_term(xv.index(r, s).unwrap(), a, b, -zq[(r, a)] * zq[(s, b)]);
                }
            }
        }
    }
    add_phi_column(&mut small, vars.phi, template, i, n);
    Ok((wobj, small))
}

fn objective_gap_block(w_prev: &DMatrix<f64>, layout: &DecisionLayout, w_obj: MatrixVar) -> LmiBlock {
    let n = layout.spec.n;
    let mut b = LmiBlock::new(n, BlockLabel::global(BlockKind::ObjectiveGap));
    let wtw = w_prev.transpose() * w_prev;
    for a in 0..n {
        for c in a..n {
            b.add_constant(a, c, -wtw[(a, c)]);
            for r in 0..n {
                b.add_optional(layout.w.index(r, a), a, c, w_prev[(r, c)]);
                b.add_optional(layout.w.index(r, c), a, c, w_prev[(r, a)]);
            }
            b.add_term(w_obj.index(a, c).unwrap(), a, c, -1.0);
        }
    }
    b
}

/// `W_obj ⪰ εI`.
pub fn objective_floor_block(layout: &DecisionLayout) -> Result<LmiBlock> {
    let w_obj = layout
        .w_obj
        .ok_or(Error::LayoutMismatch("the objective matrix W_obj"))?;
    let n = layout.spec.n;
    let mut b = LmiBlock::new(n, BlockLabel::global(BlockKind::ObjectiveFloor));
    for a in 0..n {
        b.add_constant(a, a, -STRICT_EPS);
        for c in a..n {
            b.add_term(w_obj.index(a, c).unwrap(), a, c, 1.0);
        }
    }
    Ok(b)
}

/// Block whose value is the symmetric matrix variable `var`.
pub fn symmetric_var_block(var: &MatrixVar) -> LmiBlock {
    let n = var.rows;
    let mut b = LmiBlock::new(n, BlockLabel::global(BlockKind::LogdetTarget));
    for a in 0..n {
        for c in a..n {
            b.add_optional(var.index(a, c), a, c, 1.0);
        }
    }
    b
}
