//! Built-in problem instances.

use serde::{Deserialize, Serialize};

use crate::belief::ObservationModel;
use crate::error::{Error, Result};
use crate::mdp::MdpModel;

/// The three-state, two-action example with a noisy three-symbol sensor.
///
/// Matrices are written `[dest][src]`, so entry (i, j) of the k-th matrix is
/// `p(i | j, k)`; likewise `q[y][x]`.
pub fn example1() -> (MdpModel, ObservationModel) {
    let p1 = vec![
        vec![0.8, 0.1, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.1, 0.1, 0.8],
    ];
    let p2 = vec![
        vec![0.1, 0.1, 0.8],
        vec![0.8, 0.1, 0.1],
        vec![0.1, 0.8, 0.1],
    ];
    let reward = vec![vec![1.0, 1.0], vec![0.8, 0.8], vec![0.0, 0.0]];
    let q = vec![
        vec![0.7, 0.1, 0.05],
        vec![0.15, 0.45, 0.05],
        vec![0.15, 0.45, 0.9],
    ];
    let model = MdpModel::from_action_matrices(&[p1, p2], &reward, 0.95)
        .expect("example matrices are well-formed");
    let obs = ObservationModel::from_matrix(&q).expect("example sensor is well-formed");
    (model, obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(&self, other: &Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// Moves available in the grid world, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];

    fn offset(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
            Move::Stay => (0, 0),
        }
    }
}

/// Path planning past a distance sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub target: Cell,
    pub sensor: Cell,
    /// Probability that the intended move is replaced by a uniformly random
    /// in-grid move (staying included).
    pub slip_prob: f64,
    pub target_reward: f64,
    pub noise_sigma: f64,
    pub discount: f64,
}

impl Default for GridWorldSpec {
    /// The 7×7 desk-scale instance.
    fn default() -> Self {
        Self {
            width: 7,
            height: 7,
            start: Cell::new(6, 0),
            target: Cell::new(0, 6),
            sensor: Cell::new(3, 3),
            slip_prob: 0.1,
            target_reward: 1.0,
            noise_sigma: 1.0,
            discount: 0.95,
        }
    }
}

impl GridWorldSpec {
    /// The 11×11 instance size, with cells placed as in the 7×7 default.
    pub fn eleven_by_eleven() -> Self {
        Self {
            width: 11,
            height: 11,
            start: Cell::new(10, 0),
            target: Cell::new(0, 10),
            sensor: Cell::new(5, 5),
            ..Self::default()
        }
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    /// Row-major state index.
    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index / self.width, index % self.width)
    }

    pub fn num_observations(&self) -> usize {
        self.width + self.height - 1
    }

    fn inside(&self, c: Cell) -> bool {
        c.row < self.height && c.col < self.width
    }

    /// Destination of a move, or `None` if it leaves the grid.
    pub fn destination(&self, from: Cell, m: Move) -> Option<Cell> {
        let (dr, dc) = m.offset();
        let row = from.row.checked_add_signed(dr)?;
        let col = from.col.checked_add_signed(dc)?;
        let c = Cell::new(row, col);
        self.inside(c).then_some(c)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.width == 0 || self.height == 0 {
            out.push("grid must have positive width and height".into());
            return out;
        }
        for (name, c) in [
            ("start", self.start),
            ("target", self.target),
            ("sensor", self.sensor),
        ] {
            if !self.inside(c) {
                out.push(format!("{name} cell {c:?} lies outside the grid"));
            }
        }
        if self.start == self.target {
            out.push("start and target coincide".into());
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            out.push(format!("slip probability {} not in [0, 1)", self.slip_prob));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            out.push(format!("noise sigma {} must be positive", self.noise_sigma));
        }
        if !self.target_reward.is_finite() {
            out.push("target reward must be finite".into());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(format!("discount {} not in (0, 1)", self.discount));
        }
        out
    }
}

/// Build the grid-world MDP and its distance sensor.
///
/// The sensor reports the ℓ¹ distance to the ego plus discretized Gaussian
/// noise: `q(y|cell) ∝ exp(−(y − d)² / 2σ²)` for `y` in `0..=width+height−2`.
pub fn gridworld_model(spec: &GridWorldSpec) -> Result<(MdpModel, ObservationModel)> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidModel(problems));
    }
    let n = spec.num_cells();
    let nu = Move::ALL.len();
    let target = spec.index(spec.target);
    let mut transition = vec![0.0; n * n * nu];
    let mut reward = vec![0.0; n * nu];
    for s in 0..n {
        let from = spec.cell(s);
        for (a, &m) in Move::ALL.iter().enumerate() {
            let mut put = |dest: usize, p: f64| transition[(dest * n + s) * nu + a] += p;
            if s == target {
                put(s, 1.0);
                reward[s * nu + a] = spec.target_reward;
                continue;
            }
            let intended = spec.destination(from, m).unwrap_or(from);
            put(spec.index(intended), 1.0 - spec.slip_prob);
            let feasible: Vec<Cell> = Move::ALL
                .iter()
                .filter_map(|&alt| spec.destination(from, alt))
                .collect();
            let share = spec.slip_prob / feasible.len() as f64;
            for c in feasible {
                put(spec.index(c), share);
            }
        }
    }
    let model = MdpModel::from_flat(n, nu, transition, reward, spec.discount)?;

    let ny = spec.num_observations();
    let two_var = 2.0 * spec.noise_sigma * spec.noise_sigma;
    let mut likelihood = vec![vec![0.0; n]; ny];
    #[allow(clippy::needless_range_loop)]
    for s in 0..n {
        let d = spec.cell(s).manhattan(&spec.sensor) as f64;
        let dens: Vec<f64> = (0..ny)
            .map(|y| (-(y as f64 - d).powi(2) / two_var).exp())
            .collect();
        let total: f64 = dens.iter().sum();
        for (y, w) in dens.into_iter().enumerate() {
            likelihood[y][s] = w / total;
        }
    }
    let obs = ObservationModel::from_matrix(&likelihood)?;
    Ok((model, obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_entries() {
        let (m, q) = example1();
        assert_eq!(m.p(0, 0, 0), 0.8);
        assert_eq!(m.p(1, 0, 1), 0.8);
        assert_eq!(m.p(0, 2, 1), 0.8);
        assert_eq!(q.q(2, 2), 0.9);
        assert_eq!(q.q(1, 1), 0.45);
        assert_eq!(m.reward(1, 1), 0.8);
        assert_eq!(m.discount(), 0.95);
        assert!(m.validate().is_empty());
        assert!(q.validate().is_empty());
    }

    #[test]
    fn vanishing_noise_reads_the_exact_distance() {
        let spec = GridWorldSpec {
            noise_sigma: 1e-6,
            ..GridWorldSpec::default()
        };
        let (_, q) = gridworld_model(&spec).unwrap();
        for s in 0..spec.num_cells() {
            let d = spec.cell(s).manhattan(&spec.sensor);
            assert_eq!(q.q(d, s), 1.0);
        }
    }

    #[test]
    fn two_cell_sensor() {
        let spec = GridWorldSpec {
            width: 2,
            height: 1,
            start: Cell::new(0, 1),
            target: Cell::new(0, 0),
            sensor: Cell::new(0, 0),
            ..GridWorldSpec::default()
        };
        let (_, q) = gridworld_model(&spec).unwrap();
        assert_eq!(q.num_observations(), 2);
        let e = (-0.5f64).exp();
        let near = 1.0 / (1.0 + e);
        let far = e / (1.0 + e);
        assert!((q.q(0, 0) - near).abs() < 1e-15);
        assert!((q.q(1, 0) - far).abs() < 1e-15);
        assert!((q.q(0, 1) - far).abs() < 1e-15);
        assert!((q.q(1, 1) - near).abs() < 1e-15);
    }

    #[test]
    fn eleven_by_eleven_dimensions() {
        let spec = GridWorldSpec::eleven_by_eleven();
        let (m, q) = gridworld_model(&spec).unwrap();
        assert_eq!(
            (m.num_states(), m.num_actions(), q.num_observations()),
            (121, 5, 21)
        );
    }

    #[test]
    fn spec_violations_are_rejected() {
        let bad = GridWorldSpec {
            start: Cell::new(0, 6),
            slip_prob: 1.0,
            sensor: Cell::new(9, 9),
            ..GridWorldSpec::default()
        };
        let Err(Error::InvalidModel(v)) = gridworld_model(&bad) else {
            panic!("expected rejection");
        };
        assert_eq!(v.len(), 3, "{v:?}");
    }
}
