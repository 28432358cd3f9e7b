//! End-to-end synthesis: one-step log-det maximization and the iterative
//! re-linearization scheme.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_lifted, informativity_check, ConstraintSets, DataMatrices, DisturbanceSet, LiftedData,
};
use crate::geometry::{RciSet, TemplatePolytope};
use crate::linalg::{checked_inverse, from_rows, max_abs, to_rows};
use crate::lmi::{
    input_constraint_rows, iterative_blocks, multiplier_sign_rows, objective_floor_block,
    state_constraint_rows, symmetric_var_block, theorem1_block, theorem2_blocks, AffineRow,
    DecisionLayout, IterateState, LmiBlock, STRICT_EPS,
};
use crate::sdp::{solve, SdpProblem, SolveOptions, SolveReport, SolveStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmiVariant {
    Theorem1,
    Theorem2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    OneStep,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub lmi_variant: LmiVariant,
    pub algorithm: Algorithm,
    pub max_outer_iterations: usize,
    /// Relative `|det W|` improvement below which the iterative scheme stops.
    pub det_improvement_tol: f64,
    pub solver: SolveOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            lmi_variant: LmiVariant::Theorem2,
            algorithm: Algorithm::OneStep,
            max_outer_iterations: 5,
            det_improvement_tol: 1e-4,
            solver: SolveOptions::default(),
        }
    }
}

/// S-procedure multipliers of one `(i, j)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMultipliers {
    pub i: usize,
    pub j: usize,
    pub phi: f64,
    /// Diagonal of Λ_ij.
    pub lambda: DVector<f64>,
    /// Diagonal of Γ_ij.
    pub gamma: DVector<f64>,
    pub v: Option<DMatrix<f64>>,
    pub x: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RciSolution {
    pub lmi_variant: LmiVariant,
    pub algorithm: Algorithm,
    pub p: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub w_obj: Option<DMatrix<f64>>,
    pub multipliers: Vec<PairMultipliers>,
    /// `|det W|` of every accepted iterate.
    pub det_history: Vec<f64>,
    pub volume: f64,
    pub reports: Vec<SolveReport>,
    /// Status of the solve that produced the returned iterate.
    pub status: SolveStatus,
    /// An outer iteration failed and the best earlier iterate was kept.
    pub stalled: bool,
    pub warnings: Vec<String>,
    /// Free-form provenance (config hash, seed, ...).
    pub meta: BTreeMap<String, String>,
}

impl RciSolution {
    pub fn set(&self) -> Result<RciSet> {
        RciSet::new(self.w.clone(), TemplatePolytope::new(self.p.clone())?)
    }

    pub fn multiplier(&self, i: usize, j: usize) -> Option<&PairMultipliers> {
        self.multipliers.iter().find(|m| m.i == i && m.j == j)
    }
}

/// `K = N W⁻¹`.
pub fn extract_gain(w: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let w_inv = checked_inverse(w)?;
    Ok(n * w_inv)
}

struct Prepared {
    lift: LiftedData,
    template: TemplatePolytope,
    warnings: Vec<String>,
}

fn prepare(
    data: &DataMatrices,
    dist: &DisturbanceSet,
    cons: &ConstraintSets,
    p: &DMatrix<f64>,
) -> Result<Prepared> {
    let template = TemplatePolytope::new(p.clone())?;
    if template.dim() != data.state_dim()
        || cons.h.ncols() != data.state_dim()
        || cons.g.ncols() != data.input_dim()
    {
        return Err(Error::ShapeMismatch(
            "template, constraint and data dimensions disagree".into(),
        ));
    }
    let mut warnings = Vec::new();
    let info = informativity_check(data, dist);
    if !info.rank_ok {
        warnings.push(format!(
            "data not informative: rank [X;U] = {} < {}",
            info.rank,
            data.state_dim() + data.input_dim()
        ));
    }
    if !info.d_rank_ok {
        warnings.push("disturbance matrix D is not full column rank".into());
    }
    let lift = build_lifted(data, dist)?;
    Ok(Prepared {
        lift,
        template,
        warnings,
    })
}

fn constraint_rows(cons: &ConstraintSets, template: &TemplatePolytope, layout: &DecisionLayout) -> Vec<AffineRow> {
    let mut rows = state_constraint_rows(&cons.h, template.vertices(), layout);
    rows.extend(input_constraint_rows(&cons.g, template.vertices(), layout));
    rows.extend(multiplier_sign_rows(layout));
    rows
}

fn pair_indices(template: &TemplatePolytope) -> Vec<(usize, usize)> {
    let nv = template.vertices().len();
    (0..template.complexity())
        .flat_map(|i| (0..nv).map(move |j| (i, j)))
        .collect()
}

/// One-step problem: symmetric W, log det W.
fn one_step_problem(
    prep: &Prepared,
    cons: &ConstraintSets,
    variant: LmiVariant,
) -> Result<(SdpProblem, DecisionLayout)> {
    let dilated = variant == LmiVariant::Theorem2;
    let layout = DecisionLayout::for_problem(&prep.lift, &prep.template, true, dilated, false);
    let per_pair: Vec<Vec<LmiBlock>> = pair_indices(&prep.template)
        .into_par_iter()
        .map(|(i, j)| match variant {
            LmiVariant::Theorem1 => Ok(vec![theorem1_block(i, j, &prep.lift, &prep.template, &layout)?]),
            LmiVariant::Theorem2 => {
                let (small, big) = theorem2_blocks(i, j, &prep.lift, &prep.template, &layout)?;
                Ok(vec![small, big])
            }
        })
        .collect::<Result<_>>()?;
    let mut problem = SdpProblem::new(layout.dim());
    problem.blocks = per_pair.into_iter().flatten().collect();
    problem.rows = constraint_rows(cons, &prep.template, &layout);
    problem.logdet = Some(symmetric_var_block(&layout.w));
    problem.groups = Some(layout.groups());
    Ok((problem, layout))
}

/// Re-linearized problem around `state`: free W, log det W_obj.
fn iterative_problem(
    prep: &Prepared,
    cons: &ConstraintSets,
    state: &IterateState,
) -> Result<(SdpProblem, DecisionLayout)> {
    let layout = DecisionLayout::for_problem(&prep.lift, &prep.template, false, true, true);
    let per_pair: Vec<(LmiBlock, LmiBlock, LmiBlock)> = pair_indices(&prep.template)
        .into_par_iter()
        .map(|(i, j)| {
            let (_, big) = theorem2_blocks(i, j, &prep.lift, &prep.template, &layout)?;
            let (gap, small) = iterative_blocks(state, i, j, &prep.template, &layout)?;
            Ok((gap, small, big))
        })
        .collect::<Result<_>>()?;
    let mut problem = SdpProblem::new(layout.dim());
    let mut gap_block = None;
    for (gap, small, big) in per_pair {
        gap_block.get_or_insert(gap);
        problem.blocks.push(small);
        problem.blocks.push(big);
    }
    problem.blocks.extend(gap_block);
    problem.blocks.push(objective_floor_block(&layout)?);
    problem.rows = constraint_rows(cons, &prep.template, &layout);
    problem.logdet = Some(symmetric_var_block(&layout.w_obj.expect("iterative layout has W_obj")));
    problem.groups = Some(layout.groups());
    Ok((problem, layout))
}

fn extract(
    z: &DVector<f64>,
    layout: &DecisionLayout,
    template: &TemplatePolytope,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Vec<PairMultipliers>)> {
    let w = layout.w.read(z);
    let n = layout.n_mat.read(z);
    let k = extract_gain(&w, &n)?;
    let multipliers = pair_indices(template)
        .into_iter()
        .map(|(i, j)| {
            let vars = layout.pair(i, j);
            PairMultipliers {
                i,
                j,
                phi: z[vars.phi],
                lambda: vars.lambda.read(z).diagonal(),
                gamma: vars.gamma.read(z).diagonal(),
                v: vars.v.map(|v| v.read(z)),
                x: vars.x.map(|x| x.read(z)),
            }
        })
        .collect();
    Ok((w, n, k, multipliers))
}

fn solve_checked(problem: &SdpProblem, opts: &SolveOptions, what: &str) -> Result<(DVector<f64>, SolveReport)> {
    let (z, report) = solve(problem, opts)?;
    match report.status {
        SolveStatus::Optimal => Ok((z, report)),
        SolveStatus::Infeasible => Err(Error::SynthesisInfeasible(format!(
            "{what}: {} infeasibility",
            if report.certified { "certified" } else { "heuristic" }
        ))),
        // phase two iterates are strictly feasible, so a stalled solve
        // still yields a valid (if suboptimal) set
        _ if !report.history.is_empty() => Ok((z, report)),
        other => Err(Error::Solver(format!("{what}: solver ended with {other:?}"))),
    }
}

/// Maximizes `log det W` over symmetric W subject to the state, input and
/// invariance constraints of the chosen LMI variant.
pub fn synthesize_one_step(
    data: &DataMatrices,
    dist: &DisturbanceSet,
    cons: &ConstraintSets,
    p: &DMatrix<f64>,
    options: &SynthesisOptions,
) -> Result<RciSolution> {
    let prep = prepare(data, dist, cons, p)?;
    one_step_from(&prep, cons, options.lmi_variant, options)
}

fn one_step_from(
    prep: &Prepared,
    cons: &ConstraintSets,
    variant: LmiVariant,
    options: &SynthesisOptions,
) -> Result<RciSolution> {
    let (problem, layout) = one_step_problem(prep, cons, variant)?;
    let (z, report) = solve_checked(&problem, &options.solver, "one-step solve")?;
    let (w, n, k, multipliers) = extract(&z, &layout, &prep.template)?;
    let set = RciSet::new(w.clone(), prep.template.clone())?;
    let mut warnings = prep.warnings.clone();
    if report.status != SolveStatus::Optimal {
        warnings.push(format!("one-step solve ended with {:?}", report.status));
    }
    Ok(RciSolution {
        lmi_variant: variant,
        algorithm: Algorithm::OneStep,
        p: prep.template.p().clone(),
        det_history: vec![w.determinant().abs()],
        volume: set.volume(),
        status: report.status,
        reports: vec![report],
        w,
        n,
        k,
        w_obj: None,
        multipliers,
        stalled: false,
        warnings,
        meta: BTreeMap::new(),
    })
}

/// Iterative scheme: starts from the one-step dilated solution and
/// repeatedly maximizes `log det W_obj` with the bilinear terms linearized
/// at the previous iterate.
pub fn synthesize_iterative(
    data: &DataMatrices,
    dist: &DisturbanceSet,
    cons: &ConstraintSets,
    p: &DMatrix<f64>,
    options: &SynthesisOptions,
) -> Result<RciSolution> {
    if options.lmi_variant != LmiVariant::Theorem2 {
        return Err(Error::InvalidOptions(
            "the iterative algorithm requires the dilated (Theorem2) LMI variant".into(),
        ));
    }
    let prep = prepare(data, dist, cons, p)?;
    let mut best = match one_step_from(&prep, cons, LmiVariant::Theorem2, options) {
        Ok(sol) => sol,
        Err(Error::SynthesisInfeasible(msg)) => {
            let mut sol = one_step_from(&prep, cons, LmiVariant::Theorem1, options)
                .map_err(|_| Error::SynthesisInfeasible(msg))?;
            let x0 = &sol.w + sol.w.transpose() - DMatrix::identity(sol.w.nrows(), sol.w.nrows()) * STRICT_EPS;
            for m in &mut sol.multipliers {
                m.x = Some(x0.clone());
            }
            sol.warnings.push(
                "dilated one-step problem infeasible; started from the plain LMI solution with X = W + Wᵀ - εI".into(),
            );
            sol
        }
        Err(e) => return Err(e),
    };
    best.algorithm = Algorithm::Iterative;

    for q in 1..=options.max_outer_iterations {
        let state = IterateState {
            w_prev: best.w.clone(),
            x_prev: best
                .multipliers
                .iter()
                .map(|m| m.x.clone().expect("dilated iterate"))
                .collect(),
        };
        let step = iterative_problem(&prep, cons, &state).and_then(|(mut problem, layout)| {
            problem.start = Some(warm_start(&best, &layout));
            let (z, report) = solve_checked(&problem, &options.solver, &format!("outer iteration {q}"))?;
            let (w, n, k, multipliers) = extract(&z, &layout, &prep.template)?;
            Ok((w, n, k, multipliers, layout.w_obj.map(|v| v.read(&z)), report))
        });
        let (w, n, k, multipliers, w_obj, report) = match step {
            Ok(s) => s,
            Err(e) => {
                best.stalled = true;
                best.warnings.push(format!("outer iteration {q} stalled: {e}"));
                break;
            }
        };
        let det_prev = *best.det_history.last().unwrap();
        let det = w.determinant().abs();
        let status = report.status;
        best.reports.push(report);
        if det < det_prev {
            best.warnings.push(format!(
                "outer iteration {q} did not improve |det W| ({det:.6e} < {det_prev:.6e}); kept previous iterate"
            ));
            break;
        }
        let set = RciSet::new(w.clone(), prep.template.clone())?;
        best.volume = set.volume();
        best.w = w;
        best.n = n;
        best.k = k;
        best.w_obj = w_obj;
        best.multipliers = multipliers;
        best.status = status;
        best.det_history.push(det);
        if (det - det_prev) / det_prev < options.det_improvement_tol {
            break;
        }
    }
    Ok(best)
}

/// The previous iterate with `W_obj = 0.99 WᵀW`, which is strictly
/// feasible for the problem linearized at it.
fn warm_start(prev: &RciSolution, layout: &DecisionLayout) -> DVector<f64> {
    let mut z = DVector::zeros(layout.dim());
    layout.w.write(&mut z, &prev.w);
    layout.n_mat.write(&mut z, &prev.n);
    if let Some(w_obj) = &layout.w_obj {
        w_obj.write(&mut z, &(prev.w.transpose() * &prev.w * 0.99));
    }
    for m in &prev.multipliers {
        let vars = layout.pair(m.i, m.j);
        z[vars.phi] = m.phi;
        vars.lambda.write(&mut z, &DMatrix::from_diagonal(&m.lambda));
        vars.gamma.write(&mut z, &DMatrix::from_diagonal(&m.gamma));
        if let (Some(var), Some(v)) = (&vars.v, &m.v) {
            var.write(&mut z, v);
        }
        if let (Some(var), Some(x)) = (&vars.x, &m.x) {
            var.write(&mut z, x);
        }
    }
    z
}

/// Dispatches on `options.algorithm`.
pub fn synthesize(
    data: &DataMatrices,
    dist: &DisturbanceSet,
    cons: &ConstraintSets,
    p: &DMatrix<f64>,
    options: &SynthesisOptions,
) -> Result<RciSolution> {
    match options.algorithm {
        Algorithm::OneStep => synthesize_one_step(data, dist, cons, p, options),
        Algorithm::Iterative => synthesize_iterative(data, dist, cons, p, options),
    }
}

mod num17 {
    //! Numbers written with 17 significant digits; non-finite as null.
    use serde::ser::SerializeSeq;
    use serde::Serializer;
    use serde_json::value::RawValue;

    pub fn raw(v: f64) -> Option<Box<RawValue>> {
        v.is_finite()
            .then(|| RawValue::from_string(format!("{v:.16e}")).expect("valid number"))
    }

    pub fn num<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match raw(*v) {
            Some(r) => s.serialize_some(&r),
            None => s.serialize_none(),
        }
    }

    pub fn list<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&raw(*x))?;
        }
        seq.end()
    }

    pub fn mat<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(m.len()))?;
        for row in m {
            let r: Vec<_> = row.iter().map(|x| raw(*x)).collect();
            seq.serialize_element(&r)?;
        }
        seq.end()
    }

    pub fn opt_mat<S: Serializer>(m: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => mat(m, s),
            None => s.serialize_none(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MultiplierDoc {
    i: usize,
    j: usize,
    #[serde(serialize_with = "num17::num")]
    phi: f64,
    #[serde(serialize_with = "num17::list")]
    lambda: Vec<f64>,
    #[serde(serialize_with = "num17::list")]
    gamma: Vec<f64>,
    #[serde(rename = "V", serialize_with = "num17::opt_mat", default)]
    v: Option<Vec<Vec<f64>>>,
    #[serde(rename = "X", serialize_with = "num17::opt_mat", default)]
    x: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionDoc {
    format: String,
    meta: BTreeMap<String, String>,
    lmi_variant: LmiVariant,
    algorithm: Algorithm,
    status: SolveStatus,
    stalled: bool,
    #[serde(rename = "P", serialize_with = "num17::mat")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "W", serialize_with = "num17::mat")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "N", serialize_with = "num17::mat")]
    n: Vec<Vec<f64>>,
    #[serde(rename = "K", serialize_with = "num17::mat")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "W_obj", serialize_with = "num17::opt_mat", default)]
    w_obj: Option<Vec<Vec<f64>>>,
    #[serde(serialize_with = "num17::num")]
    volume: f64,
    #[serde(serialize_with = "num17::list")]
    det_history: Vec<f64>,
    warnings: Vec<String>,
    reports: Vec<SolveReport>,
    multipliers: Vec<MultiplierDoc>,
}

const FORMAT: &str = "ddrci-solution/1";

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    to_rows(m)
}

fn matrix_of(rows: &[Vec<f64>], name: &str, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    let m = if rows.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        from_rows(rows)?
    };
    if m.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(m)
}

impl RciSolution {
    /// JSON document; matrices are row-major with 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let doc = SolutionDoc {
            format: FORMAT.into(),
            meta: self.meta.clone(),
            lmi_variant: self.lmi_variant,
            algorithm: self.algorithm,
            status: self.status,
            stalled: self.stalled,
            p: rows_of(&self.p),
            w: rows_of(&self.w),
            n: rows_of(&self.n),
            k: rows_of(&self.k),
            w_obj: self.w_obj.as_ref().map(rows_of),
            volume: self.volume,
            det_history: self.det_history.clone(),
            warnings: self.warnings.clone(),
            reports: self.reports.clone(),
            multipliers: self
                .multipliers
                .iter()
                .map(|m| MultiplierDoc {
                    i: m.i,
                    j: m.j,
                    phi: m.phi,
                    lambda: m.lambda.iter().copied().collect(),
                    gamma: m.gamma.iter().copied().collect(),
                    v: m.v.as_ref().map(rows_of),
                    x: m.x.as_ref().map(rows_of),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SolutionDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::ShapeMismatch(format!("unknown solution format {:?}", doc.format)));
        }
        let p = from_rows(&doc.p)?;
        let n_dim = p.ncols();
        let w = matrix_of(&doc.w, "W", (n_dim, n_dim))?;
        let m_dim = doc.n.len();
        let n = matrix_of(&doc.n, "N", (m_dim, n_dim))?;
        let k = matrix_of(&doc.k, "K", (m_dim, n_dim))?;
        let w_obj = doc
            .w_obj
            .as_deref()
            .map(|r| matrix_of(r, "W_obj", (n_dim, n_dim)))
            .transpose()?;
        let multipliers = doc
            .multipliers
            .into_iter()
            .map(|m| {
                Ok(PairMultipliers {
                    i: m.i,
                    j: m.j,
                    phi: m.phi,
                    lambda: DVector::from_vec(m.lambda),
                    gamma: DVector::from_vec(m.gamma),
                    v: m.v.as_deref().map(|r| matrix_of(r, "V", (n_dim, n_dim))).transpose()?,
                    x: m.x.as_deref().map(|r| matrix_of(r, "X", (n_dim, n_dim))).transpose()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            lmi_variant: doc.lmi_variant,
            algorithm: doc.algorithm,
            p,
            w,
            n,
            k,
            w_obj,
            multipliers,
            det_history: doc.det_history,
            volume: doc.volume,
            reports: doc.reports,
            status: doc.status,
            stalled: doc.stalled,
            warnings: doc.warnings,
            meta: doc.meta,
        })
    }

    /// `‖KW - N‖_max`.
    pub fn gain_residual(&self) -> f64 {
        max_abs(&(&self.k * &self.w - &self.n))
    }
}
