use ddrci::dataset::{
    build_data_matrices, build_lifted, sample_feasible_models, ConstraintSets, DataMatrices,
    DisturbanceSet, LiftedData,
};
use ddrci::sdp::{solve_lp, LpRow, SolveStatus};
use ddrci::sim::{simulate_open_loop, uniform_inputs, DisturbanceSampler, Experiment, SystemModel};
use ddrci::synthesis::{synthesize, Algorithm, LmiVariant, RciSolution, SynthesisOptions};
use ddrci::verify::{check_constraints, check_invariance_exact, check_invariance_feasible_set, disturbance_vertices};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main_template() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[10.0, 10.0, 10.0, 0.0, 1.0, 11.0])
}

fn default_data(seed: u64) -> (Experiment, DataMatrices, LiftedData) {
    let e = Experiment::default();
    let data = build_data_matrices(&e.run(seed).unwrap()).unwrap();
    let lift = build_lifted(&data, &e.dist).unwrap();
    (e, data, lift)
}

fn cons() -> ConstraintSets {
    ConstraintSets::symmetric_boxes(&[2.0, 2.0], &[2.0])
}

fn one_step(data: &DataMatrices, dist: &DisturbanceSet, p: &DMatrix<f64>, variant: LmiVariant) -> RciSolution {
    let opts = SynthesisOptions { lmi_variant: variant, ..SynthesisOptions::default() };
    synthesize(data, dist, &cons(), p, &opts).unwrap()
}

#[test]
fn lp_over_noiseless_band_recovers_model() {
    let model = SystemModel::double_integrator();
    let inputs = uniform_inputs(1, 20, 2.0, 3);
    let traj = simulate_open_loop(&model, &inputs, &mut DisturbanceSampler::zero(2), &DVector::zeros(2)).unwrap();
    // a nearly zero-width band around the exact data
    let dist = DisturbanceSet::uniform_box(2, 1e-9);
    let lift = build_lifted(&build_data_matrices(&traj).unwrap(), &dist).unwrap();
    let mut rows = Vec::new();
    for k in 0..lift.rows() {
        let a: Vec<f64> = lift.z.row(k).iter().copied().collect();
        rows.push(LpRow::new(a.clone(), 1.0 + lift.d[k]));
        rows.push(LpRow::new(a.iter().map(|v| -v).collect(), 1.0 - lift.d[k]));
    }
    let v = solve_lp(&rows, &[1.0; 6]).unwrap();
    let truth = ddrci::dataset::vec(&model.stacked());
    assert!((v - truth).amax() < 1e-6);
}

#[test]
fn sampled_models_are_extreme_and_feasible() {
    let (e, _, lift) = default_data(1);
    let models = sample_feasible_models(&lift, 20, 4).unwrap();
    assert_eq!(models.len(), 20);
    for m in &models {
        let margin = ddrci::dataset::band_margin(&lift, m).unwrap();
        // a vertex of the band touches it
        assert!(margin.abs() < 1e-6, "margin {margin}");
    }
    assert_eq!(models, sample_feasible_models(&lift, 20, 4).unwrap());
    assert!((&models[0] - e.model.stacked()).amax() < 1.0);
}

// For the plain LMI solution, every sampled model and disturbance maps
// each vertex back into the template: |e_iᵀ P θ⁺| <= 1.
#[test]
fn s_procedure_consequence_holds() {
    let (e, data, lift) = default_data(2);
    let sol = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem1);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let set = sol.set().unwrap();
    let models = sample_feasible_models(&lift, 100, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stacked = DMatrix::zeros(3, 2);
    stacked.rows_mut(0, 2).copy_from(&sol.w);
    stacked.rows_mut(2, 1).copy_from(&sol.n);
    let mut worst = f64::INFINITY;
    for m in &models {
        let w = DVector::from_fn(2, |_, _| rng.random_range(-0.1..=0.1));
        for theta in set.template().vertices() {
            let next = set.w_inv() * (m * (&stacked * theta) + &w);
            for v in (&sol.p * next).iter() {
                worst = worst.min(1.0 - v * v);
            }
        }
    }
    assert!(worst >= -1e-6, "worst {worst}");
}

#[test]
fn inflated_set_breaks_invariance_and_constraints() {
    let (e, data, _) = default_data(0);
    let sol = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    let set = sol.set().unwrap();
    let ok = check_invariance_exact(&e.model.stacked(), &sol.k, &set, &e.dist).unwrap();
    assert!(ok.margin >= -1e-6);
    // same N, W grown by 1.5: the gain shrinks and the set leaves the box
    let w = &sol.w * 1.5;
    let k = &sol.n * w.clone().try_inverse().unwrap();
    let big = ddrci::geometry::RciSet::new(w.clone(), set.template().clone()).unwrap();
    let broken = check_invariance_exact(&e.model.stacked(), &k, &big, &e.dist).unwrap();
    assert!(broken.margin < 0.0, "margin {}", broken.margin);
    let c = check_constraints(&w, &sol.n, &cons(), set.template(), 1e-8).unwrap();
    assert!(!c.pass);
}

#[test]
fn template_scaling_leaves_set_unchanged() {
    let (e, data, _) = default_data(3);
    let a = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    let b = one_step(&data, &e.dist, &(main_template() * 2.0), LmiVariant::Theorem2);
    let (va, vb) = (a.set().unwrap().vertices(), b.set().unwrap().vertices());
    assert_eq!(va.len(), vb.len());
    for (x, y) in va.iter().zip(&vb) {
        assert!((x - y).amax() <= 1e-4 * x.amax(), "{x} vs {y}");
    }
}

#[test]
fn zero_outer_iterations_equals_one_step() {
    let (e, data, _) = default_data(4);
    let a = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    let opts = SynthesisOptions { algorithm: Algorithm::Iterative, max_outer_iterations: 0, ..SynthesisOptions::default() };
    let b = synthesize(&data, &e.dist, &cons(), &main_template(), &opts).unwrap();
    assert_eq!(a.w, b.w);
    assert_eq!(a.k, b.k);
    assert_eq!(b.det_history.len(), 1);
}

#[test]
fn dilated_variant_is_not_more_conservative() {
    let (e, data, _) = default_data(5);
    let t1 = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem1);
    let t2 = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    assert_eq!(t1.status, SolveStatus::Optimal);
    assert_eq!(t2.status, SolveStatus::Optimal);
    assert!(t2.volume >= 0.95 * t1.volume, "{} vs {}", t2.volume, t1.volume);
}

#[test]
fn repeated_solves_agree() {
    let (e, data, _) = default_data(6);
    let a = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    let b = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    assert_eq!(a.status, b.status);
    assert!((a.reports[0].objective - b.reports[0].objective).abs() <= 1e-12);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn gain_matches_reference_scale() {
    let (e, data, _) = default_data(0);
    let sol = one_step(&data, &e.dist, &main_template(), LmiVariant::Theorem2);
    assert!(sol.gain_residual() <= 1e-8 * sol.n.amax());
    // reference gain is about [-0.71, -1.45]
    assert!((sol.k[(0, 0)] + 0.71).abs() < 0.2 && (sol.k[(0, 1)] + 1.45).abs() < 0.2, "{}", sol.k);
}

// A set designed for smaller disturbances than the system actually sees
// is caught, and the report points at the offending model and vertices.
#[test]
fn underestimated_disturbance_is_localized() {
    let small = DisturbanceSet::uniform_box(2, 0.01);
    let e = Experiment { dist: small.clone(), ..Experiment::default() };
    let data = build_data_matrices(&e.run(0).unwrap()).unwrap();
    let sol = one_step(&data, &small, &main_template(), LmiVariant::Theorem2);
    let lift = build_lifted(&data, &small).unwrap();
    let big = DisturbanceSet::uniform_box(2, 0.5);
    let set = sol.set().unwrap();
    let rep = check_invariance_feasible_set(&lift, &sol.k, &set, &big, 20, 1, -1e-6).unwrap();
    assert!(!rep.pass, "worst margin {}", rep.worst_margin);
    assert!(rep.worst_model.is_some() && rep.worst_vertex.is_some());
    let wv = disturbance_vertices(&big).unwrap();
    assert!(rep.worst_disturbance.unwrap() < wv.len());
}
