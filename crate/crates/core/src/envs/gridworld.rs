//! Noisy egocentric gridworld navigation.
//!
//! The map is ASCII (`#` wall, `L` lava, `G` goal, `S` start, `.` empty).
//! The default layout offers a short top route squeezing past a lava strip
//! and a longer bottom route that never touches a lava-adjacent cell;
//! growing the height appends empty rows below the action, preserving both
//! routes.
//!
//! Latent state is the agent pose `(row, col, direction)` plus two absorbing
//! sink states entered from the goal and the lava; the within-episode time
//! step is carried by the observation, not the latent index, since the grid
//! dynamics are time-invariant. Five actions: forward, turn left, turn
//! right, turn-left+forward, turn-right+forward. Rewards: +1 entering the
//! goal, -1 entering lava, -0.01 otherwise; sinks pay 0.
//!
//! Observations render the 7x7 egocentric window in front of the agent as 8
//! floats per cell (or 8x8 pixel blocks in `pixel_view` mode): empty cells
//! draw i.i.d. uniform noise in [50, 150]/255, walls/lava/goal/out-of-view
//! cells use fixed codes. A four-float odometry tail (col, row, direction,
//! time step, all normalized) keeps the emission invertible even on tall
//! maps where distinct poses can render identical local views.

use crate::block::{BlockMdp, Emission};
use crate::error::{Error, Result};
use crate::mdp::{
    apply_perturbation, sample_random_perturbation, DeterministicMdp, EpisodicMdp,
    PerturbationKernel,
};
use crate::rng::{self, Rng};
use ndarray::Array3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

pub const NUM_ACTIONS: usize = 5;
pub const VIEW: usize = 7;
pub const NOISE_LO: f64 = 50.0 / 255.0;
pub const NOISE_HI: f64 = 150.0 / 255.0;
/// Perturbation level at which the horizon-defining robust route is traced.
pub const REFERENCE_ETA: f64 = 0.1;
const WALL_CODE: f64 = 0.65;
const LAVA_CODE: f64 = 0.85;
const GOAL_CODE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Wall,
    Lava,
    Goal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridworldSpec {
    /// ASCII rows; when absent the default two-route layout of the given
    /// `height` is generated.
    #[serde(default)]
    pub map: Option<Vec<String>>,
    #[serde(default = "default_height")]
    pub height: usize,
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Render 8x8 pixel blocks per cell (56x56 floats) instead of 8
    /// channels per cell.
    #[serde(default)]
    pub pixel_view: bool,
    /// Horizon override; the default is three times the length of the
    /// shortest lava-safe path.
    #[serde(default)]
    pub horizon_override: Option<usize>,
}

fn default_height() -> usize {
    7
}

impl GridworldSpec {
    pub fn new(eta: f64, seed: u64) -> Self {
        GridworldSpec {
            map: None,
            height: default_height(),
            eta,
            seed,
            pixel_view: false,
            horizon_override: None,
        }
    }
}

/// The default 11-wide layout: start and goal on the top corridor, a lava
/// strip under it, and free rows below for the safe detour. Heights beyond 7
/// grow the state space by adding rows below a sealing wall, which keeps the
/// reachable region, the optimal/robust policies and the horizon identical
/// across heights.
pub fn default_map(height: usize) -> Result<Vec<String>> {
    if height < 7 {
        return Err(Error::MalformedMap(format!(
            "default layout needs height >= 7, got {height}"
        )));
    }
    let mut rows = vec![
        "###########".to_string(),
        "#S.......G#".to_string(),
        "#..LLLLL..#".to_string(),
        "#.........#".to_string(),
        "#.........#".to_string(),
        "#.........#".to_string(),
    ];
    if height > 7 {
        rows.push("###########".to_string());
        for _ in 0..height - 8 {
            rows.push("#.........#".to_string());
        }
    }
    rows.push("###########".to_string());
    Ok(rows)
}

/// Parsed map plus start position.
struct Layout {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
}

impl Layout {
    fn parse(rows: &[String]) -> Result<Layout> {
        if rows.is_empty() {
            return Err(Error::MalformedMap("empty map".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        if width < 3 || height < 3 {
            return Err(Error::MalformedMap("map must be at least 3x3".into()));
        }
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        let mut goals = 0usize;
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::MalformedMap(format!(
                    "row {r} has inconsistent width"
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    'L' => Cell::Lava,
                    'G' => {
                        goals += 1;
                        Cell::Goal
                    }
                    'S' => {
                        if start.replace((r, c)).is_some() {
                            return Err(Error::MalformedMap("multiple start cells".into()));
                        }
                        Cell::Empty
                    }
                    '.' => Cell::Empty,
                    other => {
                        return Err(Error::MalformedMap(format!(
                            "unknown map character {other:?}"
                        )))
                    }
                };
                cells.push(cell);
            }
        }
        let start = start.ok_or_else(|| Error::MalformedMap("no start cell".into()))?;
        if goals == 0 {
            return Err(Error::MalformedMap("no goal cell".into()));
        }
        Ok(Layout {
            width,
            height,
            cells,
            start,
        })
    }

    #[inline]
    fn at(&self, r: isize, c: isize) -> Cell {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            Cell::Wall
        } else {
            self.cells[r as usize * self.width + c as usize]
        }
    }

    fn lava_adjacent(&self, r: usize, c: usize) -> bool {
        let (r, c) = (r as isize, c as isize);
        [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
            .iter()
            .any(|&(rr, cc)| self.at(rr, cc) == Cell::Lava)
    }
}

/// Directions: 0 east, 1 south, 2 west, 3 north (turn right = +1 mod 4).
#[inline]
fn delta(dir: usize) -> (isize, isize) {
    match dir {
        0 => (0, 1),
        1 => (1, 0),
        2 => (0, -1),
        _ => (-1, 0),
    }
}

pub struct GridEnv {
    pub m0: DeterministicMdp,
    pub kernel: PerturbationKernel,
    pub target: EpisodicMdp,
    pub block: Arc<BlockMdp>,
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    /// Action count of the shortest lava-safe start-to-goal path.
    pub safe_path_len: usize,
    /// Steps the robust policy (at the reference perturbation level) needs
    /// to reach the goal in the unperturbed grid; the horizon defaults to
    /// three times this.
    pub robust_path_len: usize,
    pub goal_sink: usize,
    pub lava_sink: usize,
    lava_adjacent: Vec<bool>,
}

impl GridEnv {
    #[inline]
    pub fn pose_id(&self, r: usize, c: usize, d: usize) -> usize {
        (r * self.width + c) * 4 + d
    }

    /// `(row, col, direction)` of a pose state; `None` for the sinks.
    pub fn pose_of(&self, state: usize) -> Option<(usize, usize, usize)> {
        if state >= self.goal_sink {
            return None;
        }
        let d = state % 4;
        let cell = state / 4;
        Some((cell / self.width, cell % self.width, d))
    }

    /// Whether a pose state stands on a cell 4-adjacent to lava.
    pub fn state_is_lava_adjacent(&self, state: usize) -> bool {
        self.pose_of(state)
            .map(|(r, c, _)| self.lava_adjacent[r * self.width + c])
            .unwrap_or(false)
    }
}

pub fn build_gridworld(spec: &GridworldSpec) -> Result<GridEnv> {
    let rows = match &spec.map {
        Some(rows) => rows.clone(),
        None => default_map(spec.height)?,
    };
    let layout = Layout::parse(&rows)?;
    let (width, height) = (layout.width, layout.height);
    let n_pose = width * height * 4;
    let goal_sink = n_pose;
    let lava_sink = n_pose + 1;
    let n = n_pose + 2;

    // One-step dynamics, shared by every step index.
    let step_of = |state: usize, action: usize| -> (usize, f64) {
        if state >= n_pose {
            return (state, 0.0);
        }
        let d = state % 4;
        let cell = state / 4;
        let (r, c) = (cell / width, cell % width);
        let new_d = match action {
            1 | 3 => (d + 3) % 4,
            2 | 4 => (d + 1) % 4,
            _ => d,
        };
        let moves = matches!(action, 0 | 3 | 4);
        if !moves {
            return ((r * width + c) * 4 + new_d, -0.01);
        }
        let (dr, dc) = delta(new_d);
        let (tr, tc) = (r as isize + dr, c as isize + dc);
        match layout.at(tr, tc) {
            Cell::Wall => ((r * width + c) * 4 + new_d, -0.01),
            Cell::Lava => (lava_sink, -1.0),
            Cell::Goal => (goal_sink, 1.0),
            Cell::Empty => (((tr as usize) * width + tc as usize) * 4 + new_d, -0.01),
        }
    };

    let safe_path_len = shortest_path(&layout, &step_of, goal_sink, true)
        .or_else(|| shortest_path(&layout, &step_of, goal_sink, false))
        .ok_or_else(|| Error::MalformedMap("goal unreachable from start".into()))?;
    let start_state = (layout.start.0 * width + layout.start.1) * 4; // facing east

    let build_mdp = |horizon: usize| -> Result<DeterministicMdp> {
        let mut next = Array3::zeros((horizon, n, NUM_ACTIONS));
        let mut rewards = Array3::zeros((horizon, n, NUM_ACTIONS));
        for s in 0..n {
            for a in 0..NUM_ACTIONS {
                let (s2, r) = step_of(s, a);
                for h in 0..horizon {
                    next[(h, s, a)] = s2 as u32;
                    rewards[(h, s, a)] = r;
                }
            }
        }
        DeterministicMdp::from_tables(n, NUM_ACTIONS, horizon, start_state, next, rewards, (-1.0, 1.0))
    };

    // The horizon is three times the steps the robust policy needs on the
    // unperturbed grid. The worst-case-optimal route can be longer than the
    // shortest lava-safe path (it may keep extra distance from lava), so it
    // is traced from an actual robust solve at the reference level
    // eta = 0.1 on a provisional horizon; this makes the horizon a pure
    // layout property, identical across eta sweeps.
    let probe = build_mdp(3 * safe_path_len)?;
    let probe_solution = crate::robust::robust_dp(probe.as_episodic(), REFERENCE_ETA)?;
    let robust_path_len = {
        let mut s = start_state;
        let mut reached = None;
        for h in 0..probe.horizon() {
            s = probe.next_state(h, s, probe_solution.rho.action(h, s));
            if s == goal_sink {
                reached = Some(h + 1);
                break;
            }
        }
        reached.unwrap_or(safe_path_len)
    };
    let horizon = spec.horizon_override.unwrap_or(3 * robust_path_len);
    if horizon == 0 {
        return Err(Error::MalformedMap("zero horizon".into()));
    }
    let m0 = build_mdp(horizon)?;

    let kernel = sample_random_perturbation(
        m0.as_episodic(),
        spec.eta,
        &mut rng::substream(spec.seed, 12),
        None,
    )?;
    let target = apply_perturbation(m0.as_episodic(), &kernel)?;

    let lava_adjacent: Vec<bool> = (0..width * height)
        .map(|cell| layout.lava_adjacent(cell / width, cell % width))
        .collect();
    let emission = GridEmission {
        width,
        height,
        horizon,
        pixel_view: spec.pixel_view,
        cells: layout.cells.clone(),
        goal_sink,
        lava_sink,
    };
    let block = Arc::new(BlockMdp::new(target.clone(), Box::new(emission)));

    Ok(GridEnv {
        m0,
        kernel,
        target,
        block,
        width,
        height,
        horizon,
        safe_path_len,
        robust_path_len,
        goal_sink,
        lava_sink,
        lava_adjacent,
    })
}

/// BFS over poses counting actions; `safe_only` restricts intermediate
/// cells to those not 4-adjacent to lava (goal entry is always allowed).
fn shortest_path(
    layout: &Layout,
    step_of: &dyn Fn(usize, usize) -> (usize, f64),
    goal_sink: usize,
    safe_only: bool,
) -> Option<usize> {
    let width = layout.width;
    let start = (layout.start.0 * width + layout.start.1) * 4;
    if safe_only && layout.lava_adjacent(layout.start.0, layout.start.1) {
        return None;
    }
    let n_pose = width * layout.height * 4;
    let mut dist = vec![usize::MAX; n_pose];
    let mut queue = VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(s) = queue.pop_front() {
        for a in 0..NUM_ACTIONS {
            let (s2, _) = step_of(s, a);
            if s2 == goal_sink {
                return Some(dist[s] + 1);
            }
            if s2 >= n_pose || dist[s2] != usize::MAX {
                continue;
            }
            let cell = s2 / 4;
            if safe_only && layout.lava_adjacent(cell / width, cell % width) {
                continue;
            }
            dist[s2] = dist[s] + 1;
            queue.push_back(s2);
        }
    }
    None
}

/// Egocentric 7x7 renderer with an odometry tail.
pub struct GridEmission {
    width: usize,
    height: usize,
    horizon: usize,
    pixel_view: bool,
    cells: Vec<Cell>,
    goal_sink: usize,
    lava_sink: usize,
}

impl GridEmission {
    fn cell_at(&self, r: isize, c: isize) -> Option<Cell> {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            None
        } else {
            Some(self.cells[r as usize * self.width + c as usize])
        }
    }

    fn floats_per_cell(&self) -> usize {
        if self.pixel_view {
            64
        } else {
            8
        }
    }

    fn view_dim(&self) -> usize {
        VIEW * VIEW * self.floats_per_cell()
    }

    fn write_cell(&self, out: &mut [f64], cell: Option<Cell>, rng: &mut Rng) {
        match cell {
            Some(Cell::Empty) => {
                for v in out.iter_mut() {
                    *v = rng.gen_range(NOISE_LO..NOISE_HI);
                }
            }
            Some(Cell::Wall) => out.fill(WALL_CODE),
            Some(Cell::Lava) => out.fill(LAVA_CODE),
            Some(Cell::Goal) => out.fill(GOAL_CODE),
            None => out.fill(0.0),
        }
    }

    /// Decoded observation contents: pose or sink state, plus the time step.
    pub fn decode_full(&self, obs: &[f64]) -> (usize, usize) {
        let tail = &obs[self.view_dim()..];
        let t = (tail[3] * self.horizon as f64).round() as usize;
        if tail[0] < 0.0 {
            let state = if tail[2] < 0.5 {
                self.goal_sink
            } else {
                self.lava_sink
            };
            return (state, t);
        }
        let c = (tail[0] * (self.width - 1) as f64).round() as usize;
        let r = (tail[1] * (self.height - 1) as f64).round() as usize;
        let d = (tail[2] * 3.0).round() as usize;
        ((r * self.width + c) * 4 + d, t)
    }
}

impl Emission for GridEmission {
    fn obs_dim(&self) -> usize {
        self.view_dim() + 4
    }

    fn emit(&self, state: usize, t: usize, rng: &mut Rng) -> Vec<f64> {
        let fpc = self.floats_per_cell();
        let mut obs = vec![0.0; self.obs_dim()];
        let t_norm = t as f64 / self.horizon as f64;
        if state >= self.goal_sink {
            let tail = self.view_dim();
            obs[tail] = -1.0;
            obs[tail + 1] = -1.0;
            obs[tail + 2] = if state == self.goal_sink { 0.0 } else { 1.0 };
            obs[tail + 3] = t_norm;
            return obs;
        }
        let d = state % 4;
        let cell = state / 4;
        let (r, c) = ((cell / self.width) as isize, (cell % self.width) as isize);
        let (fr, fc) = delta(d);
        let (rr, rc) = delta((d + 1) % 4);
        // View row 0 is the far edge, row VIEW-1 the agent's own rank;
        // lateral offset is centered.
        for vr in 0..VIEW {
            let depth = (VIEW - 1 - vr) as isize;
            for vc in 0..VIEW {
                let lateral = vc as isize - (VIEW as isize / 2);
                let wr = r + depth * fr + lateral * rr;
                let wc = c + depth * fc + lateral * rc;
                let base = (vr * VIEW + vc) * fpc;
                self.write_cell(&mut obs[base..base + fpc], self.cell_at(wr, wc), rng);
            }
        }
        let tail = self.view_dim();
        obs[tail] = c as f64 / (self.width - 1) as f64;
        obs[tail + 1] = r as f64 / (self.height - 1) as f64;
        obs[tail + 2] = d as f64 / 3.0;
        obs[tail + 3] = t_norm;
        obs
    }

    fn decode(&self, obs: &[f64]) -> usize {
        self.decode_full(obs).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate_policy, value_iteration};
    use crate::robust::robust_dp;

    fn spec(eta: f64) -> GridworldSpec {
        GridworldSpec::new(eta, 3)
    }

    #[test]
    fn default_layout_parses_and_routes_exist() {
        let grid = build_gridworld(&spec(0.1)).unwrap();
        assert_eq!(grid.width, 11);
        assert_eq!(grid.height, 7);
        assert_eq!(grid.safe_path_len, 14);
        assert!(grid.robust_path_len >= grid.safe_path_len);
        assert_eq!(grid.horizon, 3 * grid.robust_path_len);
    }

    #[test]
    fn optimal_takes_the_short_route_and_robust_avoids_lava() {
        let grid = build_gridworld(&spec(0.1)).unwrap();
        let m0 = grid.m0.as_episodic();
        let (optimal, v_star) = value_iteration(m0).unwrap();
        // Short route: 8 moves, 7 step penalties.
        assert!((v_star.initial - 0.93).abs() < 1e-9);
        // The optimal trajectory passes lava-adjacent cells.
        let mut s = m0.init_state();
        let mut optimal_risky = false;
        for h in 0..grid.horizon {
            s = grid.m0.next_state(h, s, optimal.action(h, s));
            optimal_risky |= grid.state_is_lava_adjacent(s);
        }
        assert!(optimal_risky);
        assert_eq!(s, grid.goal_sink);

        // The robust trajectory reaches the goal without ever standing next
        // to lava, and takes the longer route.
        let solution = robust_dp(m0, 0.1).unwrap();
        let mut s = m0.init_state();
        let mut steps_to_goal = None;
        for h in 0..grid.horizon {
            s = grid.m0.next_state(h, s, solution.rho.action(h, s));
            assert!(
                !grid.state_is_lava_adjacent(s),
                "robust path entered a lava-adjacent cell at step {h}"
            );
            if s == grid.goal_sink && steps_to_goal.is_none() {
                steps_to_goal = Some(h + 1);
            }
        }
        assert_eq!(steps_to_goal, Some(grid.robust_path_len));
        // The unperturbed value of the robust route: one step-cost per move
        // before the goal entry.
        let exact = evaluate_policy(m0, &solution.rho).unwrap().initial;
        let expected = 1.0 - 0.01 * (grid.robust_path_len - 1) as f64;
        assert!((exact - expected).abs() < 1e-9);
    }

    #[test]
    fn height_growth_preserves_routes_and_robust_value() {
        let base = build_gridworld(&spec(0.1)).unwrap();
        let v_base = robust_dp(base.m0.as_episodic(), 0.1)
            .unwrap()
            .initial_value(base.m0.as_episodic());
        for height in [10, 30] {
            let mut s = spec(0.1);
            s.height = height;
            let grid = build_gridworld(&s).unwrap();
            assert_eq!(grid.safe_path_len, base.safe_path_len);
            assert_eq!(grid.horizon, base.horizon);
            let v = robust_dp(grid.m0.as_episodic(), 0.1)
                .unwrap()
                .initial_value(grid.m0.as_episodic());
            assert!(
                (v - v_base).abs() < 1e-9,
                "robust value changed with height: {v_base} -> {v}"
            );
        }
    }

    #[test]
    fn absorption_is_permanent_and_rewardless() {
        let grid = build_gridworld(&spec(0.0)).unwrap();
        for sink in [grid.goal_sink, grid.lava_sink] {
            for a in 0..NUM_ACTIONS {
                assert_eq!(grid.m0.next_state(0, sink, a), sink);
                assert_eq!(grid.m0.as_episodic().reward(0, sink, a), 0.0);
            }
        }
    }

    #[test]
    fn emission_decodes_pose_and_time() {
        let grid = build_gridworld(&spec(0.1)).unwrap();
        let emission = grid.block.emission();
        let mut rng = rng::from_seed(5);
        for state in (0..grid.goal_sink + 2).step_by(7) {
            for t in [0, 3, grid.horizon] {
                let obs = emission.emit(state, t, &mut rng);
                assert_eq!(grid.block.decode(&obs), state);
            }
        }
    }

    #[test]
    fn pixel_view_doubles_resolution_and_still_decodes() {
        let mut s = spec(0.1);
        s.pixel_view = true;
        let grid = build_gridworld(&s).unwrap();
        assert_eq!(grid.block.emission().obs_dim(), 56 * 56 + 4);
        let mut rng = rng::from_seed(6);
        let obs = grid.block.emission().emit(grid.m0.init_state(), 0, &mut rng);
        assert_eq!(grid.block.decode(&obs), grid.m0.init_state());
    }

    #[test]
    fn malformed_maps_are_rejected() {
        for rows in [
            vec!["###".into(), "#S#".into(), "###".into()], // no goal
            vec!["####".into(), "#SG".into(), "####".into()], // ragged
            vec!["#####".into(), "#S#G#".into(), "#####".into()], // unreachable
        ] {
            let s = GridworldSpec {
                map: Some(rows),
                ..spec(0.1)
            };
            assert!(build_gridworld(&s).is_err());
        }
    }
}
