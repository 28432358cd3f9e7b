//! Data-generating simulator.
//!
//! The synthesis pipeline never reads [`SystemModel`]; only the simulator
//! and the verification checks do.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DisturbanceSet, Trajectory};
use crate::linalg::numerical_rank;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite model entry".into()));
        }
        Ok(Self { a, b })
    }

    /// Open-loop unstable double integrator `A = [[1,1],[0,1]]`, `B = [0;1]`.
    pub fn double_integrator() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `[A B]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut m = DMatrix::zeros(n, n + self.input_dim());
        m.columns_mut(0, n).copy_from(&self.a);
        m.columns_mut(n, self.input_dim()).copy_from(&self.b);
        m
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

/// Uniform samples from `{w : -1 <= Dw <= 1}`.
///
/// Diagonal D maps a uniform box exactly; square D maps the unit cube
/// through `D⁻¹`; anything else uses rejection sampling inside a bounding
/// box. Every sample is re-checked against the band.
#[derive(Debug, Clone)]
pub struct DisturbanceSampler {
    dist: DisturbanceSet,
    rng: ChaCha8Rng,
    mode: SampleMode,
    /// Rejected draws so far.
    pub rejections: u64,
}

#[derive(Debug, Clone)]
enum SampleMode {
    Zero,
    Diagonal(DVector<f64>),
    Square(DMatrix<f64>),
    Rejection(DVector<f64>),
}

impl DisturbanceSampler {
    pub fn new(dist: &DisturbanceSet, seed: u64) -> Result<Self> {
        let d = &dist.d;
        let n = d.ncols();
        if numerical_rank(d) < n {
            return Err(Error::UnboundedDisturbance { rank: numerical_rank(d), n });
        }
        let mode = if d.is_square() && d.iter().enumerate().all(|(k, v)| k % (n + 1) == 0 || *v == 0.0) {
            SampleMode::Diagonal(d.diagonal().map(|v| 1.0 / v.abs()))
        } else if d.is_square() {
            SampleMode::Square(crate::linalg::checked_inverse(d)?)
        } else {
            // bounding box from the vertices of the disturbance polytope
            let tpl = crate::geometry::TemplatePolytope::new(d.clone())?;
            let mut hi = DVector::zeros(n);
            for v in tpl.vertices() {
                hi = hi.zip_map(v, |h: f64, x: f64| h.max(x.abs()));
            }
            SampleMode::Rejection(hi)
        };
        Ok(Self {
            dist: dist.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode,
            rejections: 0,
        })
    }

    /// Sampler that always returns zero.
    pub fn zero(n: usize) -> Self {
        Self {
            dist: DisturbanceSet::uniform_box(n, 1.0),
            rng: ChaCha8Rng::seed_from_u64(0),
            mode: SampleMode::Zero,
            rejections: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dist.d.ncols()
    }

    pub fn sample(&mut self) -> DVector<f64> {
        let n = self.dim();
        loop {
            let w = match &self.mode {
                SampleMode::Zero => return DVector::zeros(n),
                SampleMode::Diagonal(h) => {
                    let rng = &mut self.rng;
                    h.map(|b| rng.random_range(-b..=b))
                }
                SampleMode::Square(dinv) => {
                    let u = DVector::from_fn(n, |_, _| self.rng.random_range(-1.0..=1.0));
                    dinv * u
                }
                SampleMode::Rejection(h) => {
                    let rng = &mut self.rng;
                    h.map(|b| rng.random_range(-b..=b))
                }
            };
            if self.dist.contains(&w, 0.0) {
                return w;
            }
            self.rejections += 1;
        }
    }
}

/// I.i.d. inputs uniform in `[-amplitude, amplitude]^m`.
pub fn uniform_inputs(m: usize, horizon: usize, amplitude: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-amplitude..=amplitude)))
        .collect()
}

pub fn simulate_open_loop(
    model: &SystemModel,
    inputs: &[DVector<f64>],
    sampler: &mut DisturbanceSampler,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    if x0.len() != model.state_dim() || inputs.iter().any(|u| u.len() != model.input_dim()) {
        return Err(Error::ShapeMismatch("initial state or input dimension".into()));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for u in inputs {
        let w = sampler.sample();
        let next = model.step(states.last().unwrap(), u, &w);
        states.push(next);
    }
    Trajectory::new(states, inputs.to_vec())
}

/// `x⁺ = (A + BK)x + w`; returns the visited states including `x0`.
pub fn simulate_closed_loop(
    model: &SystemModel,
    k: &DMatrix<f64>,
    sampler: &mut DisturbanceSampler,
    x0: &DVector<f64>,
    steps: usize,
) -> Vec<DVector<f64>> {
    let acl = &model.a + &model.b * k;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for _ in 0..steps {
        let w = sampler.sample();
        let next = &acl * states.last().unwrap() + w;
        states.push(next);
    }
    states
}

/// Default data-collection experiment: double integrator, `T = 20`,
/// inputs uniform in `[-2, 2]`, `|w_i| <= 0.1`, `x(1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: SystemModel,
    pub dist: DisturbanceSet,
    pub horizon: usize,
    pub input_amplitude: f64,
    pub x0: DVector<f64>,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            model: SystemModel::double_integrator(),
            dist: DisturbanceSet::uniform_box(2, 0.1),
            horizon: 20,
            input_amplitude: 2.0,
            x0: DVector::zeros(2),
        }
    }
}

impl Experiment {
    /// Inputs and disturbances use independent streams derived from `seed`.
    pub fn run(&self, seed: u64) -> Result<Trajectory> {
        let inputs = uniform_inputs(self.model.input_dim(), self.horizon, self.input_amplitude, seed);
        let mut sampler = DisturbanceSampler::new(&self.dist, seed ^ 0x9E37_79B9_7F4A_7C15)?;
        simulate_open_loop(&self.model, &inputs, &mut sampler, &self.x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_data_matrices, build_lifted, feasible_model_contains, informativity_check};

    #[test]
    fn zero_everything_gives_zero_trajectory() {
        let model = SystemModel::double_integrator();
        let inputs = vec![DVector::zeros(1); 5];
        let traj = simulate_open_loop(&model, &inputs, &mut DisturbanceSampler::zero(2), &DVector::zeros(2)).unwrap();
        assert!(traj.states.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn noiseless_matches_recursion() {
        let model = SystemModel::double_integrator();
        let inputs: Vec<_> = [1.0, -0.5, 2.0, 0.0].iter().map(|&u| DVector::from_element(1, u)).collect();
        let x0 = DVector::from_column_slice(&[0.3, -0.2]);
        let traj = simulate_open_loop(&model, &inputs, &mut DisturbanceSampler::zero(2), &x0).unwrap();
        // x(k+1) = A^k x0 + Σ A^(k-1-l) B u(l)
        for k in 0..=inputs.len() {
            let mut expect = model.a.pow(k as u32) * &x0;
            for (l, u) in inputs.iter().enumerate().take(k) {
                expect += model.a.pow((k - 1 - l) as u32) * &model.b * u;
            }
            assert!((&traj.states[k] - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn samples_respect_band() {
        let dists = [
            DisturbanceSet::uniform_box(2, 0.1),
            DisturbanceSet::new(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -1.0, 4.0])),
            DisturbanceSet::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0])),
        ];
        for dist in dists {
            let mut s = DisturbanceSampler::new(&dist, 4).unwrap();
            for _ in 0..2000 {
                let w = s.sample();
                assert!((&dist.d * w).amax() <= 1.0);
            }
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let e = Experiment::default();
        assert_eq!(e.run(7).unwrap(), e.run(7).unwrap());
        assert_ne!(e.run(7).unwrap(), e.run(8).unwrap());
    }

    #[test]
    fn default_experiment_is_informative_and_consistent() {
        let e = Experiment::default();
        for seed in 0..20 {
            let traj = e.run(seed).unwrap();
            assert_eq!(traj.states.len(), 21);
            let data = build_data_matrices(&traj).unwrap();
            assert!(informativity_check(&data, &e.dist).ok());
            let lift = build_lifted(&data, &e.dist).unwrap();
            assert!(feasible_model_contains(&lift, &e.model.stacked()).unwrap());
        }
    }

    #[test]
    fn closed_loop_decays_without_disturbance() {
        let model = SystemModel::double_integrator();
        // deadbeat-ish gain, spectral radius < 1
        let k = DMatrix::from_row_slice(1, 2, &[-0.5, -1.2]);
        let xs = simulate_closed_loop(&model, &k, &mut DisturbanceSampler::zero(2), &DVector::from_column_slice(&[1.0, 1.0]), 200);
        assert!(xs.last().unwrap().norm() < 1e-6);
    }
}
