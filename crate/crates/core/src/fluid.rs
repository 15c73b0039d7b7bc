//! Fluid limit of the load fractions.
//!
//! `x_i(t)` approximates the fraction of bins holding at least `i` balls after
//! `t n` balls, and solves `x_i' = x_{i-1}^d - x_i^d` with `x_0 = 1` and
//! `x_i(0) = 0`. Level `i` only feeds on level `i - 1`, so truncating at
//! `i_max` is exact for the levels kept. Integration is classical RK4 at a
//! fixed step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SCHEMA_VERSION;

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_I_MAX: usize = 20;

/// Violations larger than this after a step are reported as solver faults.
pub const FAULT_TOLERANCE: f64 = 1e-12;

/// Optional drift of the modified process: with probability `eps` the ball
/// goes to a uniform bin, giving
/// `x_i' = (1 - eps)(x_{i-1}^d - x_i^d) + eps (x_{i-1} - x_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub n: u64,
    pub eps: f64,
}

impl Perturbation {
    pub fn for_n(n: u64) -> Self {
        Self {
            n,
            eps: (n as f64).powf(-0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverFault {
    pub t: f64,
    pub level: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidSolution {
    pub d: usize,
    pub i_max: usize,
    pub dt: f64,
    pub t_end: f64,
    pub perturbation: Option<Perturbation>,
    pub times: Vec<f64>,
    /// `grid[k][i]` is `x_i(times[k])` for `i` in `0..=i_max`.
    pub grid: Vec<Vec<f64>>,
    pub faults: Vec<SolverFault>,
}

fn drift(x: &[f64], d: usize, eps: f64, out: &mut [f64]) {
    let d = d as i32;
    out[0] = 0.0;
    for i in 1..x.len() {
        let gain = x[i - 1].powi(d) - x[i].powi(d);
        out[i] = if eps == 0.0 {
            gain
        } else {
            (1.0 - eps) * gain + eps * (x[i - 1] - x[i])
        };
    }
}

fn rk4_step(x: &mut [f64], h: f64, d: usize, eps: f64, scratch: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = scratch;
    drift(x, d, eps, k1);
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    drift(tmp, d, eps, k2);
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    drift(tmp, d, eps, k3);
    for i in 0..x.len() {
        tmp[i] = x[i] + h * k3[i];
    }
    drift(tmp, d, eps, k4);
    for i in 0..x.len() {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Clips to `[0, 1]` and restores `x_{i-1} >= x_i`, recording any correction
/// larger than [`FAULT_TOLERANCE`].
fn clamp(x: &mut [f64], t: f64, faults: &mut Vec<SolverFault>) {
    for i in 1..x.len() {
        let v = x[i];
        let upper = x[i - 1];
        let fixed = v.clamp(0.0, upper);
        if (fixed - v).abs() > FAULT_TOLERANCE || !v.is_finite() {
            faults.push(SolverFault {
                t,
                level: i,
                value: v,
            });
        }
        x[i] = if v.is_finite() { fixed } else { 0.0 };
    }
}

fn step_count(t_end: f64, dt: f64) -> usize {
    let ratio = t_end / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

pub fn solve_fluid(d: usize, t_end: f64, i_max: usize, dt: f64) -> Result<FluidSolution> {
    solve_fluid_with(d, t_end, i_max, dt, None)
}

pub fn solve_fluid_with(
    d: usize,
    t_end: f64,
    i_max: usize,
    dt: f64,
    perturbation: Option<Perturbation>,
) -> Result<FluidSolution> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    if i_max == 0 {
        return Err(Error::InvalidParameter("i_max must be at least 1".into()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "T must be positive, got {t_end}"
        )));
    }
    if !(dt > 0.0 && dt <= t_end) {
        return Err(Error::InvalidParameter(format!(
            "dt must be in (0, T], got dt = {dt}, T = {t_end}"
        )));
    }
    let eps = perturbation.map_or(0.0, |p| p.eps);
    let steps = step_count(t_end, dt);

    let mut x = vec![0.0; i_max + 1];
    x[0] = 1.0;
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; i_max + 1]);
    let mut faults = Vec::new();
    let mut times = Vec::with_capacity(steps + 1);
    let mut grid = Vec::with_capacity(steps + 1);
    times.push(0.0);
    grid.push(x.clone());
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * dt;
        let t = if k == steps { t_end } else { k as f64 * dt };
        rk4_step(&mut x, t - t_prev, d, eps, &mut scratch);
        clamp(&mut x, t, &mut faults);
        times.push(t);
        grid.push(x.clone());
    }
    Ok(FluidSolution {
        d,
        i_max,
        dt,
        t_end,
        perturbation,
        times,
        grid,
        faults,
    })
}

impl FluidSolution {
    /// `x_i(t)`, linearly interpolated between grid times.
    pub fn fraction_at(&self, i: usize, t: f64) -> Result<f64> {
        if i > self.i_max {
            return Err(Error::OutOfRange {
                what: "level",
                detail: format!("i = {i} exceeds i_max = {}", self.i_max),
            });
        }
        if !(t >= 0.0 && t <= self.t_end) {
            return Err(Error::OutOfRange {
                what: "time",
                detail: format!("t = {t} outside [0, {}]", self.t_end),
            });
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k >= self.times.len() {
            return Ok(self.grid[self.times.len() - 1][i]);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (x0, x1) = (self.grid[k - 1][i], self.grid[k][i]);
        Ok(x0 + (x1 - x0) * (t - t0) / (t1 - t0))
    }

    /// `x_i` at the final time, `i` in `0..=i_max`.
    pub fn final_fractions(&self) -> &[f64] {
        self.grid.last().expect("grid always holds t = 0")
    }

    /// CSV with columns `t, x_1, ..., x_{i_max}`, preceded by `#` comment
    /// lines echoing the configuration.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# hashalloc fluid schema_version={SCHEMA_VERSION} d={} T={} imax={} dt={}",
            self.d, self.t_end, self.i_max, self.dt
        );
        if let Some(p) = self.perturbation {
            out.push_str(&format!(" perturb_n={} eps={}", p.n, p.eps));
        }
        out.push('\n');
        out.push('t');
        for i in 1..=self.i_max {
            out.push_str(&format!(",x_{i}"));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.grid) {
            out.push_str(&t.to_string());
            for v in &row[1..] {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Convenience wrapper matching [`FluidSolution::fraction_at`].
pub fn fluid_fraction_at(sol: &FluidSolution, i: usize, t: f64) -> Result<f64> {
    sol.fraction_at(i, t)
}
