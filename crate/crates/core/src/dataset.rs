//! Measured trajectory, data matrices `X⁺, X, U`, and the lifted band
//! description `-1 + d <= Z vec(M) <= 1 + d` of the feasible model set.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::numerical_rank;
use crate::sdp::{solve_lp, LpRow};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != inputs.len() + 1 || inputs.is_empty() {
            return Err(Error::LengthMismatch {
                states: states.len(),
                inputs: inputs.len(),
            });
        }
        let n = states[0].len();
        let m = inputs[0].len();
        if states.iter().any(|x| x.len() != n) || inputs.iter().any(|u| u.len() != m) {
            return Err(Error::ShapeMismatch("inconsistent sample dimensions".into()));
        }
        Ok(Self { states, inputs })
    }

    /// Number of transitions `T`.
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// CSV with header `k,x1..xn,u1..um`; the input cells of the last row
    /// are empty. `header_comments` are emitted as `# ` lines first.
    pub fn to_csv(&self, header_comments: &[String]) -> String {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut out = String::new();
        for c in header_comments {
            let _ = writeln!(out, "# {c}");
        }
        let mut cols = vec!["k".to_string()];
        cols.extend((1..=n).map(|i| format!("x{i}")));
        cols.extend((1..=m).map(|i| format!("u{i}")));
        out.push_str(&cols.join(","));
        out.push('\n');
        for (k, x) in self.states.iter().enumerate() {
            let mut cells = vec![(k + 1).to_string()];
            cells.extend(x.iter().map(|v| format!("{v:.17e}")));
            match self.inputs.get(k) {
                Some(u) => cells.extend(u.iter().map(|v| format!("{v:.17e}"))),
                None => cells.extend(std::iter::repeat_n(String::new(), m)),
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Strict parser for [`Trajectory::to_csv`] output. Lines starting
    /// with `#` are ignored; NaN and infinite values are rejected.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"k") {
            return Err(Error::Parse {
                line: hline + 1,
                msg: "header must start with k".into(),
            });
        }
        let n = cols[1..].iter().take_while(|c| c.starts_with('x')).count();
        let m = cols.len() - 1 - n;
        let expected: Vec<String> = std::iter::once("k".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain((1..=m).map(|i| format!("u{i}")))
            .collect();
        if n == 0 || m == 0 || cols != expected {
            return Err(Error::Parse {
                line: hline + 1,
                msg: format!("header must be k,x1..xn,u1..um (got {header})"),
            });
        }
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut rows: Vec<(usize, Vec<&str>)> = lines
            .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
            .collect();
        let total = rows.len();
        for (idx, (line, cells)) in rows.drain(..).enumerate() {
            if cells.len() != 1 + n + m {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} cells, got {}", 1 + n + m, cells.len()),
                });
            }
            let k: usize = cells[0].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad index {}", cells[0]),
            })?;
            if k != idx + 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected k = {}, got {k}", idx + 1),
                });
            }
            let x = parse_cells(&cells[1..1 + n], line)?;
            states.push(DVector::from_vec(x));
            let last = idx + 1 == total;
            let ucells = &cells[1 + n..];
            if last {
                if ucells.iter().any(|c| !c.is_empty()) {
                    return Err(Error::Parse {
                        line,
                        msg: "last row must have empty inputs".into(),
                    });
                }
            } else {
                inputs.push(DVector::from_vec(parse_cells(ucells, line)?));
            }
        }
        Trajectory::new(states, inputs)
    }
}

fn parse_cells(cells: &[&str], line: usize) -> Result<Vec<f64>> {
    cells
        .iter()
        .map(|c| {
            let v: f64 = c.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number {c:?}"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    msg: format!("non-finite value {c:?}"),
                })
            }
        })
        .collect()
}

/// Column-aligned data: column k of `x_plus` is x(k+1), of `x` is x(k),
/// of `u` is u(k).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub x_plus: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl DataMatrices {
    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.x.ncols()
    }

    /// Stacked regressor `[X; U]`.
    pub fn regressor(&self) -> DMatrix<f64> {
        let (n, m, t) = (self.state_dim(), self.input_dim(), self.horizon());
        let mut r = DMatrix::zeros(n + m, t);
        r.rows_mut(0, n).copy_from(&self.x);
        r.rows_mut(n, m).copy_from(&self.u);
        r
    }
}

pub fn build_data_matrices(traj: &Trajectory) -> Result<DataMatrices> {
    let t = traj.horizon();
    if traj.states.len() != t + 1 || t == 0 {
        return Err(Error::LengthMismatch {
            states: traj.states.len(),
            inputs: t,
        });
    }
    let (n, m) = (traj.state_dim(), traj.input_dim());
    Ok(DataMatrices {
        x_plus: DMatrix::from_fn(n, t, |i, k| traj.states[k + 1][i]),
        x: DMatrix::from_fn(n, t, |i, k| traj.states[k][i]),
        u: DMatrix::from_fn(m, t, |i, k| traj.inputs[k][i]),
    })
}

/// `𝒲 = {w : -1 <= D w <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSet {
    pub d: DMatrix<f64>,
}

impl DisturbanceSet {
    pub fn new(d: DMatrix<f64>) -> Self {
        Self { d }
    }

    /// Box `|w_i| <= bound` in dimension n.
    pub fn uniform_box(n: usize, bound: f64) -> Self {
        Self {
            d: DMatrix::identity(n, n) / bound,
        }
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        (&self.d * w).iter().all(|v| v.abs() <= 1.0 + tol)
    }
}

/// `𝒳 = {x : Hx <= 1}`, `𝒰 = {u : Gu <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSets {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl ConstraintSets {
    pub fn new(h: DMatrix<f64>, g: DMatrix<f64>) -> Self {
        Self { h, g }
    }

    /// `|x_i| <= x_bound[i]` and `|u_i| <= u_bound[i]` as `±e_i / bound` rows.
    pub fn symmetric_boxes(x_bound: &[f64], u_bound: &[f64]) -> Self {
        Self {
            h: box_rows(x_bound),
            g: box_rows(u_bound),
        }
    }

    pub fn state_ok(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.h * x).iter().all(|&v| v <= 1.0 + tol)
    }

    pub fn input_ok(&self, u: &DVector<f64>, tol: f64) -> bool {
        (&self.g * u).iter().all(|&v| v <= 1.0 + tol)
    }
}

fn box_rows(bounds: &[f64]) -> DMatrix<f64> {
    let k = bounds.len();
    let mut h = DMatrix::zeros(2 * k, k);
    for (i, b) in bounds.iter().enumerate() {
        h[(2 * i, i)] = 1.0 / b;
        h[(2 * i + 1, i)] = -1.0 / b;
    }
    h
}

/// Column-stacking vectorization.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`] for an `rows × cols` matrix.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "cannot reshape {} entries to {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::ShapeMismatch("kron of an empty matrix".into()));
    }
    Ok(a.kronecker(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InformativityReport {
    pub rank_ok: bool,
    pub rank: usize,
    pub d_rank_ok: bool,
}

impl InformativityReport {
    pub fn ok(&self) -> bool {
        self.rank_ok && self.d_rank_ok
    }
}

/// Rank conditions for a bounded feasible model set: `rank [X; U] = n + m`
/// and `D` of full column rank.
pub fn informativity_check(data: &DataMatrices, dist: &DisturbanceSet) -> InformativityReport {
    let n = data.state_dim();
    let rank = numerical_rank(&data.regressor());
    InformativityReport {
        rank_ok: rank == n + data.input_dim(),
        rank,
        d_rank_ok: numerical_rank(&dist.d) == n && dist.d.ncols() == n,
    }
}

/// `Z = [X; U]ᵀ ⊗ D` and `d = [D x(2); …; D x(T+1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedData {
    pub z: DMatrix<f64>,
    pub d: DVector<f64>,
    pub n: usize,
    pub m: usize,
    pub dist: DMatrix<f64>,
}

impl LiftedData {
    pub fn rows(&self) -> usize {
        self.z.nrows()
    }

    /// Size `n(n+m)` of `vec(M)`.
    pub fn model_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.dist.nrows()
    }
}

pub fn build_lifted(data: &DataMatrices, dist: &DisturbanceSet) -> Result<LiftedData> {
    let n = data.state_dim();
    let m = data.input_dim();
    if dist.d.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "D has {} columns, state dimension is {n}",
            dist.d.ncols()
        )));
    }
    let z = kron(&data.regressor().transpose(), &dist.d)?;
    let d = vec(&(&dist.d * &data.x_plus));

    // self-check: Z vec(M) == vec(D M [X; U]) for a pseudo-random M
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let probe = DMatrix::from_fn(n, n + m, |_, _| rng.random_range(-1.0..1.0));
    let lhs = &z * vec(&probe);
    let rhs = vec(&(&dist.d * &probe * data.regressor()));
    let scale = 1.0 + rhs.amax();
    if (lhs - rhs).amax() > 1e-10 * scale {
        return Err(Error::ShapeMismatch("lifted data self-check failed".into()));
    }
    Ok(LiftedData {
        z,
        d,
        n,
        m,
        dist: dist.d.clone(),
    })
}

const BAND_TOL: f64 = 1e-9;

/// Whether `M` lies in the band `-1 + d <= Z vec(M) <= 1 + d`.
pub fn feasible_model_contains(lift: &LiftedData, model: &DMatrix<f64>) -> Result<bool> {
    Ok(band_margin(lift, model)? >= -BAND_TOL)
}

/// Smallest slack of the band constraints, scaled by `1 + |d_k|`.
pub fn band_margin(lift: &LiftedData, model: &DMatrix<f64>) -> Result<f64> {
    if model.nrows() != lift.n || model.ncols() != lift.n + lift.m {
        return Err(Error::ShapeMismatch(format!(
            "model is {}x{}, expected {}x{}",
            model.nrows(),
            model.ncols(),
            lift.n,
            lift.n + lift.m
        )));
    }
    let r = &lift.z * vec(model) - &lift.d;
    Ok(r.iter()
        .zip(lift.d.iter())
        .map(|(v, dk)| (1.0 - v.abs()) / (1.0 + dk.abs()))
        .fold(f64::INFINITY, f64::min))
}

/// Band rows as `a·v <= b` pairs for the model LP.
fn band_rows(lift: &LiftedData) -> Vec<LpRow> {
    let mut rows = Vec::with_capacity(2 * lift.rows());
    for k in 0..lift.rows() {
        let a: Vec<f64> = lift.z.row(k).iter().copied().collect();
        rows.push(LpRow::new(a.clone(), 1.0 + lift.d[k]));
        rows.push(LpRow::new(a.iter().map(|v| -v).collect(), 1.0 - lift.d[k]));
    }
    rows
}

/// Models in the feasible set obtained by maximizing random linear
/// objectives over the band; each sample is an optimal vertex.
pub fn sample_feasible_models(
    lift: &LiftedData,
    count: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let rows = band_rows(lift);
    let dim = lift.model_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = solve_lp(&rows, &c).map_err(|e| match e {
            Error::LpInfeasible => Error::InfeasibleModelSet,
            other => other,
        })?;
        out.push(unvec(&v, lift.n, lift.n + lift.m)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn alignment() {
        let traj = Trajectory::new(
            vec![dv(&[1.0, 2.0]), dv(&[3.0, 4.0]), dv(&[5.0, 6.0])],
            vec![dv(&[7.0]), dv(&[8.0])],
        )
        .unwrap();
        let dm = build_data_matrices(&traj).unwrap();
        assert_eq!(dm.x, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(dm.x_plus, DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 4.0, 6.0]));
        assert_eq!(dm.u, DMatrix::from_row_slice(1, 2, &[7.0, 8.0]));
    }

    #[test]
    fn single_step() {
        let traj = Trajectory::new(vec![dv(&[1.0]), dv(&[2.0])], vec![dv(&[0.5])]).unwrap();
        let dm = build_data_matrices(&traj).unwrap();
        assert_eq!(dm.x.ncols(), 1);
        assert_eq!(dm.x_plus.ncols(), 1);
    }

    #[test]
    fn length_mismatch() {
        let err = Trajectory::new(vec![dv(&[1.0])], vec![dv(&[0.5])]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { states: 1, inputs: 1 }));
    }

    #[test]
    fn vec_and_kron_basics() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&a), dv(&[1.0, 2.0, 3.0, 4.0]));
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(kron(&i2, &i2).unwrap(), DMatrix::identity(4, 4));
        assert!(kron(&DMatrix::zeros(0, 2), &i2).is_err());
    }

    #[test]
    fn single_sample_unrolling() {
        let traj = Trajectory::new(vec![dv(&[1.0, -2.0]), dv(&[0.5, 0.25])], vec![dv(&[3.0])])
            .unwrap();
        let dm = build_data_matrices(&traj).unwrap();
        let dist = DisturbanceSet::new(DMatrix::identity(2, 2));
        let lift = build_lifted(&dm, &dist).unwrap();
        let expect = kron(&DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 3.0]), &DMatrix::identity(2, 2))
            .unwrap();
        assert_eq!(lift.z, expect);
        assert_eq!(lift.d, dv(&[0.5, 0.25]));
    }

    #[test]
    fn informativity_zero_and_repeated_data() {
        let dist = DisturbanceSet::uniform_box(2, 0.1);
        let zero = Trajectory::new(vec![dv(&[0.0, 0.0]); 6], vec![dv(&[0.0]); 5]).unwrap();
        let rep = informativity_check(&build_data_matrices(&zero).unwrap(), &dist);
        assert!(!rep.rank_ok);
        assert_eq!(rep.rank, 0);
        assert!(rep.d_rank_ok);

        let same = Trajectory::new(vec![dv(&[1.0, 1.0]); 6], vec![dv(&[1.0]); 5]).unwrap();
        let rep = informativity_check(&build_data_matrices(&same).unwrap(), &dist);
        assert!(rep.rank <= 1);
        assert!(!rep.ok());
    }

    #[test]
    fn csv_round_trip_and_strictness() {
        let traj = Trajectory::new(
            vec![dv(&[1.0, 2.0]), dv(&[3.0, -4.5]), dv(&[0.1, 6.0])],
            vec![dv(&[7.0]), dv(&[-8.25])],
        )
        .unwrap();
        let text = traj.to_csv(&["seed=3".into()]);
        assert!(text.starts_with("# seed=3\nk,x1,x2,u1\n"));
        assert_eq!(Trajectory::from_csv(&text).unwrap(), traj);

        let bad = text.replace("-8.25", "NaN").replace("-8.25000000000000000e0", "NaN");
        assert!(Trajectory::from_csv(&bad).is_err());
        assert!(Trajectory::from_csv("k,x1,u1\n1,inf,0\n2,0,\n").is_err());
        assert!(Trajectory::from_csv("k,x1,u1\n1,0,0\n2,0,1\n").is_err());
        assert!(Trajectory::from_csv("k,y1,u1\n1,0,0\n2,0,\n").is_err());
    }

    #[test]
    fn band_membership_shape_error() {
        let traj = Trajectory::new(vec![dv(&[1.0]), dv(&[2.0])], vec![dv(&[0.5])]).unwrap();
        let dm = build_data_matrices(&traj).unwrap();
        let lift = build_lifted(&dm, &DisturbanceSet::new(DMatrix::identity(1, 1))).unwrap();
        assert!(feasible_model_contains(&lift, &DMatrix::zeros(2, 2)).is_err());
        // x(2) = 2 = a*1 + b*0.5 + w with |w| <= 1
        assert!(feasible_model_contains(&lift, &DMatrix::from_row_slice(1, 2, &[2.0, 0.0])).unwrap());
        assert!(!feasible_model_contains(&lift, &DMatrix::from_row_slice(1, 2, &[4.0, 0.0])).unwrap());
        assert_relative_eq!(
            band_margin(&lift, &DMatrix::from_row_slice(1, 2, &[2.0, 0.0])).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }
}
