//! Post-hoc checks of a synthesized set: vertex invariance for given
//! models, constraint rows, independently recomputed LMI residuals,
//! closed-loop rollouts and volume.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{kron, sample_feasible_models, ConstraintSets, DisturbanceSet, LiftedData};
use crate::geometry::{RciSet, TemplatePolytope};
use crate::linalg::{checked_inverse, numerical_rank};
use crate::sim::{simulate_closed_loop, DisturbanceSampler, SystemModel};
use crate::synthesis::{LmiVariant, PairMultipliers, RciSolution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Lowest accepted invariance margin.
    pub invariance: f64,
    /// Largest accepted constraint row value `h·x - 1`.
    pub constraints: f64,
    /// Lowest accepted block eigenvalue.
    pub lmi: f64,
    /// Lowest accepted multiplier entry.
    pub multipliers: f64,
    /// Slack for membership tests during rollouts.
    pub rollout: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            invariance: -1e-6,
            constraints: 1e-8,
            lmi: -1e-7,
            multipliers: -1e-9,
            rollout: 1e-9,
        }
    }
}

/// Worst successor of a vertex under a disturbance vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceMargin {
    /// `min 1 - ‖P W⁻¹ (M [I; K] x_v + w_v)‖_∞`; invariance holds iff `>= 0`.
    pub margin: f64,
    pub vertex: usize,
    pub disturbance: usize,
}

/// Vertices of `{w : -1 <= Dw <= 1}`.
pub fn disturbance_vertices(dist: &DisturbanceSet) -> Result<Vec<DVector<f64>>> {
    let n = dist.d.ncols();
    let rank = numerical_rank(&dist.d);
    if rank < n {
        return Err(Error::UnboundedDisturbance { rank, n });
    }
    Ok(TemplatePolytope::new(dist.d.clone())?.vertices().to_vec())
}

/// Exact robust invariance of `set` for the model `[A B]` under `u = Kx`,
/// checked over set vertices and disturbance vertices.
pub fn check_invariance_exact(
    model: &DMatrix<f64>,
    k: &DMatrix<f64>,
    set: &RciSet,
    dist: &DisturbanceSet,
) -> Result<InvarianceMargin> {
    let n = set.w().nrows();
    if model.nrows() != n || model.ncols() != n + k.nrows() || k.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "model {}x{} and gain {}x{} for state dimension {n}",
            model.nrows(),
            model.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    let w_vertices = disturbance_vertices(dist)?;
    let mut closed = DMatrix::identity(n + k.nrows(), n);
    closed.rows_mut(n, k.nrows()).copy_from(k);
    let acl = model * closed;
    let mut worst = InvarianceMargin {
        margin: f64::INFINITY,
        vertex: 0,
        disturbance: 0,
    };
    for (v, x) in set.vertices().iter().enumerate() {
        let next = &acl * x;
        for (d, w) in w_vertices.iter().enumerate() {
            let margin = set.margin(&(&next + w));
            if margin < worst.margin {
                worst = InvarianceMargin {
                    margin,
                    vertex: v,
                    disturbance: d,
                };
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledInvariance {
    pub samples: usize,
    pub pass: bool,
    /// No models were sampled.
    pub vacuous: bool,
    pub worst_margin: f64,
    /// Row-major `[A B]` of the worst sampled model.
    pub worst_model: Option<Vec<Vec<f64>>>,
    pub worst_vertex: Option<usize>,
    pub worst_disturbance: Option<usize>,
}

/// Runs [`check_invariance_exact`] on `samples` extreme models of the
/// feasible model set.
pub fn check_invariance_feasible_set(
    lift: &LiftedData,
    k: &DMatrix<f64>,
    set: &RciSet,
    dist: &DisturbanceSet,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<SampledInvariance> {
    let models = sample_feasible_models(lift, samples, seed)?;
    let margins: Vec<InvarianceMargin> = models
        .par_iter()
        .map(|m| check_invariance_exact(m, k, set, dist))
        .collect::<Result<_>>()?;
    let worst = margins
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.margin.total_cmp(&b.1.margin));
    Ok(match worst {
        None => SampledInvariance {
            samples: 0,
            pass: true,
            vacuous: true,
            worst_margin: f64::INFINITY,
            worst_model: None,
            worst_vertex: None,
            worst_disturbance: None,
        },
        Some((idx, m)) => SampledInvariance {
            samples: models.len(),
            pass: m.margin >= tol,
            vacuous: false,
            worst_margin: m.margin,
            worst_model: Some(crate::linalg::to_rows(&models[idx])),
            worst_vertex: Some(m.vertex),
            worst_disturbance: Some(m.disturbance),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// Per state row, `max_j (H W θ^j)_r - 1`.
    pub state_rows: Vec<f64>,
    /// Per input row, `max_j (G N θ^j)_r - 1`.
    pub input_rows: Vec<f64>,
    pub worst: f64,
    pub pass: bool,
}

pub fn check_constraints(
    w: &DMatrix<f64>,
    n: &DMatrix<f64>,
    cons: &ConstraintSets,
    template: &TemplatePolytope,
    tol: f64,
) -> Result<ConstraintCheck> {
    if cons.h.ncols() != w.nrows() || cons.g.ncols() != n.nrows() || n.ncols() != w.ncols() {
        return Err(Error::ShapeMismatch("constraint matrices against W and N".into()));
    }
    let worst_rows = |m: &DMatrix<f64>, x: &DMatrix<f64>| -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; m.nrows()];
        for theta in template.vertices() {
            let y = m * (x * theta);
            for (o, v) in out.iter_mut().zip(y.iter()) {
                *o = o.max(v - 1.0);
            }
        }
        out
    };
    let state_rows = worst_rows(&cons.h, w);
    let input_rows = worst_rows(&cons.g, n);
    let worst = state_rows
        .iter()
        .chain(&input_rows)
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(ConstraintCheck {
        pass: worst <= tol,
        state_rows,
        input_rows,
        worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub i: usize,
    pub j: usize,
    pub block: String,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiResiduals {
    pub blocks: Vec<BlockResidual>,
    pub min_eigenvalue: f64,
    /// Smallest entry of any φ, Λ or Γ.
    pub min_multiplier: f64,
    pub pass: bool,
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Rows and columns `1 | n(n+m) | n | n` shared by both invariance blocks,
/// built from dense products.
fn dense_invariance(
    lift: &LiftedData,
    mult: &PairMultipliers,
    g: &DVector<f64>,
    extra: usize,
) -> Result<DMatrix<f64>> {
    let n = lift.n;
    let nm = lift.model_dim();
    let size = 1 + nm + 2 * n + extra;
    if mult.lambda.len() != lift.rows() || mult.gamma.len() != lift.n_w() {
        return Err(Error::ShapeMismatch("multiplier lengths against the data".into()));
    }
    let lambda = DMatrix::from_diagonal(&mult.lambda);
    let gamma = DMatrix::from_diagonal(&mult.gamma);
    let zl = lift.z.transpose() * &lambda;
    let mut b = DMatrix::zeros(size, size);
    b[(0, 0)] = mult.phi + (lift.d.transpose() * &lambda * &lift.d)[(0, 0)]
        - mult.lambda.sum()
        - mult.gamma.sum();
    let cross = -(&zl * &lift.d);
    b.view_mut((1, 0), (nm, 1)).copy_from(&cross);
    b.view_mut((0, 1), (1, nm)).copy_from(&cross.transpose());
    b.view_mut((1, 1), (nm, nm)).copy_from(&(&zl * &lift.z));
    let o3 = 1 + nm;
    let o4 = o3 + n;
    b.view_mut((o3, o3), (n, n))
        .copy_from(&(lift.dist.transpose() * gamma * &lift.dist));
    // 𝒢 vec(M) = M g
    let gm = kron(&DMatrix::from_row_slice(1, g.len(), g.as_slice()), &DMatrix::identity(n, n))?;
    b.view_mut((1, o4), (nm, n)).copy_from(&gm.transpose());
    b.view_mut((o4, 1), (n, nm)).copy_from(&gm);
    for r in 0..n {
        b[(o3 + r, o4 + r)] = 1.0;
        b[(o4 + r, o3 + r)] = 1.0;
    }
    Ok(b)
}

/// Recomputes every invariance block of `solution` from its matrices and
/// multipliers. Dilated solutions are checked against the nonlinear small
/// block `[[Wᵀ X⁻¹ W, φ Pᵀe_i], [·, φ]]`, which both the one-step and the
/// linearized blocks imply.
pub fn lmi_residuals(solution: &RciSolution, lift: &LiftedData, tol: &Tolerances) -> Result<LmiResiduals> {
    let template = TemplatePolytope::new(solution.p.clone())?;
    let n = lift.n;
    let w = &solution.w;
    let mut stacked = DMatrix::zeros(n + solution.n.nrows(), n);
    stacked.rows_mut(0, n).copy_from(w);
    stacked.rows_mut(n, solution.n.nrows()).copy_from(&solution.n);
    let expected = template.complexity() * template.vertices().len();
    if solution.multipliers.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} multiplier sets for {expected} pairs",
            solution.multipliers.len()
        )));
    }
    let per_pair: Vec<Vec<BlockResidual>> = solution
        .multipliers
        .par_iter()
        .map(|m| {
            let theta = template
                .vertices()
                .get(m.j)
                .ok_or_else(|| Error::ShapeMismatch(format!("vertex index {}", m.j)))?;
            if m.i >= template.complexity() {
                return Err(Error::ShapeMismatch(format!("template row {}", m.i)));
            }
            let g = &stacked * theta;
            let p = template.p().row(m.i).transpose();
            let o4 = 1 + lift.model_dim() + n;
            let label = |block: &str, b: &DMatrix<f64>| BlockResidual {
                i: m.i,
                j: m.j,
                block: block.into(),
                min_eigenvalue: min_eig(b),
            };
            match (solution.lmi_variant, &m.v, &m.x) {
                (LmiVariant::Theorem1, _, _) => {
                    let mut b = dense_invariance(lift, m, &g, 0)?;
                    let corner = w + w.transpose() - &p * p.transpose() * m.phi;
                    b.view_mut((o4, o4), (n, n)).copy_from(&corner);
                    Ok(vec![label("invariance", &b)])
                }
                (LmiVariant::Theorem2, Some(v), Some(x)) => {
                    let mut big = dense_invariance(lift, m, &g, n)?;
                    let o5 = o4 + n;
                    big.view_mut((o4, o4), (n, n)).copy_from(&(v + v.transpose()));
                    big.view_mut((o4, o5), (n, n)).copy_from(&v.transpose());
                    big.view_mut((o5, o4), (n, n)).copy_from(v);
                    big.view_mut((o5, o5), (n, n)).copy_from(x);
                    let mut small = DMatrix::zeros(n + 1, n + 1);
                    let x_inv = checked_inverse(x)?;
                    small.view_mut((0, 0), (n, n)).copy_from(&(w.transpose() * x_inv * w));
                    small.view_mut((0, n), (n, 1)).copy_from(&(&p * m.phi));
                    small.view_mut((n, 0), (1, n)).copy_from(&(p.transpose() * m.phi));
                    small[(n, n)] = m.phi;
                    Ok(vec![label("dilated", &big), label("coupling", &small)])
                }
                (LmiVariant::Theorem2, _, _) => Err(Error::ShapeMismatch(format!(
                    "pair ({}, {}) lacks V or X",
                    m.i, m.j
                ))),
            }
        })
        .collect::<Result<_>>()?;
    let blocks: Vec<BlockResidual> = per_pair.into_iter().flatten().collect();
    let min_eigenvalue = blocks.iter().map(|b| b.min_eigenvalue).fold(f64::INFINITY, f64::min);
    let min_multiplier = solution
        .multipliers
        .iter()
        .flat_map(|m| std::iter::once(m.phi).chain(m.lambda.iter().copied()).chain(m.gamma.iter().copied()))
        .fold(f64::INFINITY, f64::min);
    Ok(LmiResiduals {
        pass: min_eigenvalue >= tol.lmi && min_multiplier >= tol.multipliers,
        blocks,
        min_eigenvalue,
        min_multiplier,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub steps: usize,
    /// `x0` was outside the set; the run is still simulated.
    pub start_outside: bool,
    pub set_violations: usize,
    pub state_violations: usize,
    pub input_violations: usize,
    /// Smallest set margin along the trajectory (excluding `x0`).
    pub worst_margin: f64,
}

impl Rollout {
    pub fn violations(&self) -> usize {
        self.set_violations + self.state_violations + self.input_violations
    }
}

/// Closed-loop run `x⁺ = (A + BK)x + w` with uniform disturbances, counting
/// departures from the set, the state constraints and the input constraints.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    model: &SystemModel,
    k: &DMatrix<f64>,
    set: &RciSet,
    cons: &ConstraintSets,
    dist: &DisturbanceSet,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
    tol: f64,
) -> Result<Rollout> {
    let mut sampler = DisturbanceSampler::new(dist, seed)?;
    let states = simulate_closed_loop(model, k, &mut sampler, x0, steps);
    let mut out = Rollout {
        states: Vec::with_capacity(states.len()),
        steps,
        start_outside: !set.contains(x0, tol),
        set_violations: 0,
        state_violations: 0,
        input_violations: 0,
        worst_margin: f64::INFINITY,
    };
    for (t, x) in states.iter().enumerate() {
        if t > 0 {
            let margin = set.margin(x);
            out.worst_margin = out.worst_margin.min(margin);
            if margin < -tol {
                out.set_violations += 1;
            }
            if !cons.state_ok(x, tol) {
                out.state_violations += 1;
            }
        }
        // the input applied at this state (the last state has none)
        if t < steps && !cons.input_ok(&(k * x), tol) {
            out.input_violations += 1;
        }
        out.states.push(x.iter().copied().collect());
    }
    Ok(out)
}

/// Seed of the rollout started from vertex `index`.
pub fn vertex_seed(master: u64, index: usize) -> u64 {
    // splitmix64 step, so neighbouring vertices get unrelated streams
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One rollout per set vertex, in parallel; deterministic for a given seed.
#[allow(clippy::too_many_arguments)]
pub fn vertex_rollouts(
    model: &SystemModel,
    k: &DMatrix<f64>,
    set: &RciSet,
    cons: &ConstraintSets,
    dist: &DisturbanceSet,
    steps: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<Rollout>> {
    set.vertices()
        .par_iter()
        .enumerate()
        .map(|(v, x0)| rollout(model, k, set, cons, dist, x0, steps, vertex_seed(seed, v), tol))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub volume: f64,
    /// `"exact"` or `"monte-carlo"` for the template volume.
    pub method: String,
}

pub fn volume_report(set: &RciSet) -> Result<VolumeReport> {
    checked_inverse(set.w())?;
    let method = if set.template().volume().is_ok() { "exact" } else { "monte-carlo" };
    Ok(VolumeReport {
        volume: set.volume(),
        method: method.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Extreme feasible models to test.
    pub samples: usize,
    pub rollout_steps: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            rollout_steps: 1000,
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub runs: usize,
    pub steps: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tolerances: Tolerances,
    /// Present when the true model is known.
    pub invariance_true_model: Option<InvarianceMargin>,
    pub invariance_true_model_pass: Option<bool>,
    pub invariance_sampled_models: SampledInvariance,
    pub constraints: ConstraintCheck,
    pub lmi_residuals: LmiResiduals,
    pub volume: VolumeReport,
    pub rollout_stats: Option<RolloutStats>,
    /// `‖KW - N‖_max`.
    pub gain_residual: f64,
    pub gain_tolerance: f64,
}

impl VerificationReport {
    /// Names of the failing checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.invariance_true_model_pass == Some(false) {
            out.push("invariance_true_model");
        }
        if !self.invariance_sampled_models.pass {
            out.push("invariance_sampled_models");
        }
        if !self.constraints.pass {
            out.push("constraints");
        }
        if !self.lmi_residuals.pass {
            out.push("lmi_residuals");
        }
        if self.rollout_stats.as_ref().is_some_and(|r| r.violations > 0) {
            out.push("rollouts");
        }
        if !(self.gain_residual <= self.gain_tolerance) {
            out.push("gain_residual");
        }
        out
    }

    pub fn pass(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Runs every check; the true model (when known) adds the exact check and
/// the vertex rollouts.
pub fn verify_solution(
    solution: &RciSolution,
    lift: &LiftedData,
    cons: &ConstraintSets,
    dist: &DisturbanceSet,
    model: Option<&SystemModel>,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    let tol = options.tolerances;
    let set = solution.set()?;
    let k = &solution.k;
    let (true_margin, rollouts) = match model {
        Some(model) => {
            let margin = check_invariance_exact(&model.stacked(), k, &set, dist)?;
            let runs = vertex_rollouts(model, k, &set, cons, dist, options.rollout_steps, options.seed, tol.rollout)?;
            let stats = RolloutStats {
                runs: runs.len(),
                steps: options.rollout_steps,
                violations: runs.iter().map(Rollout::violations).sum(),
                worst_margin: runs.iter().map(|r| r.worst_margin).fold(f64::INFINITY, f64::min),
            };
            (Some(margin), Some(stats))
        }
        None => (None, None),
    };
    Ok(VerificationReport {
        tolerances: tol,
        invariance_true_model_pass: true_margin.map(|m| m.margin >= tol.invariance),
        invariance_true_model: true_margin,
        invariance_sampled_models: check_invariance_feasible_set(
            lift,
            k,
            &set,
            dist,
            options.samples,
            options.seed,
            tol.invariance,
        )?,
        constraints: check_constraints(&solution.w, &solution.n, cons, set.template(), tol.constraints)?,
        lmi_residuals: lmi_residuals(solution, lift, &tol)?,
        volume: volume_report(&set)?,
        rollout_stats: rollouts,
        gain_residual: solution.gain_residual(),
        gain_tolerance: 1e-8 * crate::linalg::max_abs(&solution.n).max(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_data_matrices, build_lifted};
    use crate::lmi::{theorem1_block, theorem2_blocks, DecisionLayout};
    use crate::sim::Experiment;
    use crate::synthesis::Algorithm;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn unit_box_set(w: DMatrix<f64>) -> RciSet {
        RciSet::new(w, TemplatePolytope::new(DMatrix::identity(2, 2)).unwrap()).unwrap()
    }

    fn section_lift() -> LiftedData {
        let e = Experiment::default();
        let data = build_data_matrices(&e.run(0).unwrap()).unwrap();
        build_lifted(&data, &e.dist).unwrap()
    }

    #[test]
    fn zero_dynamics_contract_onto_disturbance() {
        let set = unit_box_set(DMatrix::identity(2, 2));
        let m = DMatrix::zeros(2, 3);
        let k = DMatrix::zeros(1, 2);
        let r = check_invariance_exact(&m, &k, &set, &DisturbanceSet::uniform_box(2, 0.5)).unwrap();
        assert_relative_eq!(r.margin, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_disturbance_is_refused() {
        let set = unit_box_set(DMatrix::identity(2, 2));
        let dist = DisturbanceSet::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let r = check_invariance_exact(&DMatrix::zeros(2, 3), &DMatrix::zeros(1, 2), &set, &dist);
        assert!(matches!(r, Err(Error::UnboundedDisturbance { rank: 1, n: 2 })));
    }

    #[test]
    fn scalar_margin_matches_hand_computation() {
        // x⁺ = 0.5x + w on [-W, W], |w| <= 0.25: margin 1 - (0.5W + 0.25)/W
        let set = RciSet::new(DMatrix::from_element(1, 1, 2.0), TemplatePolytope::new(DMatrix::identity(1, 1)).unwrap()).unwrap();
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let k = DMatrix::from_element(1, 1, -0.5);
        let r = check_invariance_exact(&m, &k, &set, &DisturbanceSet::uniform_box(1, 0.25)).unwrap();
        assert_relative_eq!(r.margin, 1.0 - (1.0 + 0.25) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constraint_rows() {
        let tpl = TemplatePolytope::new(DMatrix::identity(2, 2)).unwrap();
        let cons = ConstraintSets::symmetric_boxes(&[2.0, 2.0], &[2.0]);
        let w = DMatrix::identity(2, 2);
        let n = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let r = check_constraints(&w, &n, &cons, &tpl, 1e-8).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.state_rows[0], -0.5, epsilon = 1e-12);
        assert_relative_eq!(r.input_rows[0], 1.5 / 2.0 - 1.0, epsilon = 1e-12);
        let r = check_constraints(&(w * 2.5), &n, &cons, &tpl, 1e-8).unwrap();
        assert!(!r.pass);
        assert_relative_eq!(r.worst, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn no_samples_is_vacuous() {
        let lift = section_lift();
        let set = unit_box_set(DMatrix::identity(2, 2));
        let r = check_invariance_feasible_set(&lift, &DMatrix::zeros(1, 2), &set, &DisturbanceSet::uniform_box(2, 0.1), 0, 0, -1e-6).unwrap();
        assert!(r.pass && r.vacuous);
        assert_eq!(r.samples, 0);
    }

    #[test]
    fn volumes() {
        let v = volume_report(&unit_box_set(DMatrix::identity(2, 2))).unwrap();
        assert_relative_eq!(v.volume, 4.0, epsilon = 1e-12);
        assert_eq!(v.method, "exact");
        let w2 = DMatrix::from_row_slice(2, 2, &[1.33, -0.67, -0.67, 1.17]);
        let v = volume_report(&unit_box_set(w2)).unwrap();
        assert_relative_eq!(v.volume, 4.0 * (1.33 * 1.17 - 0.67 * 0.67), epsilon = 1e-12);
        assert!((v.volume - 4.19).abs() / 4.19 < 0.1);
    }

    #[test]
    fn rollout_matches_closed_loop_simulation() {
        let e = Experiment::default();
        let set = unit_box_set(DMatrix::identity(2, 2) * 2.0);
        let cons = ConstraintSets::symmetric_boxes(&[2.0, 2.0], &[2.0]);
        let k = DMatrix::from_row_slice(1, 2, &[-0.5, -1.2]);
        let x0 = DVector::from_column_slice(&[1.0, -1.0]);
        let r = rollout(&e.model, &k, &set, &cons, &e.dist, &x0, 50, 11, 1e-9).unwrap();
        let mut sampler = DisturbanceSampler::new(&e.dist, 11).unwrap();
        let xs = simulate_closed_loop(&e.model, &k, &mut sampler, &x0, 50);
        assert_eq!(r.states.len(), 51);
        for (a, b) in r.states.iter().zip(&xs) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn undisturbed_rollout_converges_and_flags_outside_start() {
        let e = Experiment::default();
        let tiny = DisturbanceSet::uniform_box(2, 1e-12);
        let set = unit_box_set(DMatrix::identity(2, 2) * 2.0);
        let cons = ConstraintSets::symmetric_boxes(&[2.0, 2.0], &[2.0]);
        let k = DMatrix::from_row_slice(1, 2, &[-0.5, -1.2]);
        let r = rollout(&e.model, &k, &set, &cons, &tiny, &DVector::from_column_slice(&[0.5, 0.5]), 200, 0, 1e-9).unwrap();
        assert!(!r.start_outside);
        assert_eq!(r.violations(), 0);
        assert!(DVector::from_column_slice(r.states.last().unwrap()).norm() < 1e-6);
        let r = rollout(&e.model, &k, &set, &cons, &tiny, &DVector::from_column_slice(&[3.0, 0.0]), 5, 0, 1e-9).unwrap();
        assert!(r.start_outside);
        assert_eq!(r.states.len(), 6);
    }

    #[test]
    fn vertex_rollouts_are_deterministic() {
        let e = Experiment::default();
        let set = unit_box_set(DMatrix::identity(2, 2) * 0.5);
        let cons = ConstraintSets::symmetric_boxes(&[2.0, 2.0], &[2.0]);
        let k = DMatrix::from_row_slice(1, 2, &[-0.5, -1.2]);
        let a = vertex_rollouts(&e.model, &k, &set, &cons, &e.dist, 30, 5, 1e-9).unwrap();
        let b = vertex_rollouts(&e.model, &k, &set, &cons, &e.dist, 30, 5, 1e-9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_ne!(a[0].states[1], a[1].states[1]);
        assert_ne!(vertex_seed(5, 0), vertex_seed(5, 1));
    }

    /// Multipliers and matrices read back from a random decision vector.
    fn solution_from(z: &DVector<f64>, layout: &DecisionLayout, p: &DMatrix<f64>, variant: LmiVariant) -> RciSolution {
        let tpl = TemplatePolytope::new(p.clone()).unwrap();
        let mut multipliers = Vec::new();
        for i in 0..tpl.complexity() {
            for j in 0..tpl.vertices().len() {
                let v = layout.pair(i, j);
                multipliers.push(PairMultipliers {
                    i,
                    j,
                    phi: z[v.phi],
                    lambda: v.lambda.read(z).diagonal(),
                    gamma: v.gamma.read(z).diagonal(),
                    v: v.v.map(|m| m.read(z)),
                    x: v.x.map(|m| m.read(z)),
                });
            }
        }
        let w = layout.w.read(z);
        let n = layout.n_mat.read(z);
        RciSolution {
            lmi_variant: variant,
            algorithm: Algorithm::OneStep,
            p: p.clone(),
            k: &n * w.clone().try_inverse().unwrap(),
            w,
            n,
            w_obj: None,
            multipliers,
            det_history: Vec::new(),
            volume: 0.0,
            reports: Vec::new(),
            status: crate::sdp::SolveStatus::Optimal,
            stalled: false,
            warnings: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn dense_blocks_match_assembled_blocks() {
        let lift = section_lift();
        let p = DMatrix::from_row_slice(3, 2, &[10.0, 10.0, 10.0, 0.0, 1.0, 11.0]);
        let tpl = TemplatePolytope::new(p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dilated in [false, true] {
            let layout = DecisionLayout::for_problem(&lift, &tpl, true, dilated, false);
            let z = DVector::from_fn(layout.dim(), |_, _| rng.random_range(-1.0..1.0));
            let variant = if dilated { LmiVariant::Theorem2 } else { LmiVariant::Theorem1 };
            let sol = solution_from(&z, &layout, &p, variant);
            let res = lmi_residuals(&sol, &lift, &Tolerances::default()).unwrap();
            for (i, j) in [(0, 0), (2, 5), (1, 3)] {
                let assembled = if dilated {
                    theorem2_blocks(i, j, &lift, &tpl, &layout).unwrap().1
                } else {
                    theorem1_block(i, j, &lift, &tpl, &layout).unwrap()
                };
                let expect = min_eig(&assembled.evaluate(&z));
                let got = res
                    .blocks
                    .iter()
                    .find(|b| b.i == i && b.j == j && b.block != "coupling")
                    .unwrap()
                    .min_eigenvalue;
                assert_relative_eq!(got, expect, epsilon = 1e-9, max_relative = 1e-10);
            }
        }
    }
}
