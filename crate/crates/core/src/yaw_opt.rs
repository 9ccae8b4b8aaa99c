//! Serial-refine yaw optimization and the yaw lookup table built from it.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wake::{InflowCondition, WindFarm};

/// Grid-search settings for [`serial_refine`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SerialRefineConfig {
    /// Lower and upper yaw bound (deg).
    pub bounds: (f64, f64),
    /// Grid points per turbine per pass, bounds included on the first pass.
    pub coarse_points: usize,
    pub passes: usize,
}

impl Default for SerialRefineConfig {
    fn default() -> Self {
        Self {
            bounds: (-30.0, 30.0),
            coarse_points: 13,
            passes: 4,
        }
    }
}

impl SerialRefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_points < 3 || self.passes < 1 || !(self.bounds.0 < self.bounds.1) {
            return Err(Error::InvalidConfig(format!(
                "bad serial-refine settings {self:?}"
            )));
        }
        Ok(())
    }

    /// Grid spacing of the last pass (deg).
    pub fn final_spacing(&self) -> f64 {
        let span = self.bounds.1 - self.bounds.0;
        span / 2f64.powi(self.passes as i32 - 1) / (self.coarse_points - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YawSolution {
    pub yaws: Vec<f64>,
    pub total_power: f64,
    pub passes_used: usize,
    /// Best total power after each pass.
    pub pass_powers: Vec<f64>,
}

/// Sequential per-turbine grid search, upstream to downstream, each pass
/// halving the search span around the incumbent yaw.
pub fn serial_refine(
    farm: &WindFarm,
    inflow: &InflowCondition,
    cfg: &SerialRefineConfig,
) -> Result<YawSolution> {
    cfg.validate()?;
    let (lo, hi) = cfg.bounds;
    let n = farm.len();
    let order = farm.downstream_order(inflow.wind_direction);
    let mut yaws = vec![0.0f64.clamp(lo, hi); n];
    let mut best = farm.farm_power(inflow, &yaws)?.total_power;
    let mut pass_powers = Vec::with_capacity(cfg.passes);
    let mut span = hi - lo;
    for _ in 0..cfg.passes {
        for &t in &order {
            let incumbent = yaws[t];
            let (start, end) = if span >= hi - lo {
                (lo, hi)
            } else {
                (incumbent - span / 2.0, incumbent + span / 2.0)
            };
            let step = (end - start) / (cfg.coarse_points - 1) as f64;
            let mut trial = yaws.clone();
            for k in 0..cfg.coarse_points {
                let g = start + step * k as f64;
                if g < lo || g > hi {
                    continue;
                }
                trial[t] = g;
                let p = farm.farm_power(inflow, &trial)?.total_power;
                if p > best {
                    best = p;
                    yaws[t] = g;
                }
            }
        }
        pass_powers.push(best);
        span /= 2.0;
    }
    Ok(YawSolution {
        yaws,
        total_power: best,
        passes_used: cfg.passes,
        pass_powers,
    })
}

/// Steady-optimal yaw setpoints for a known inflow with default settings.
pub fn expert_yaw_targets(farm: &WindFarm, inflow: &InflowCondition) -> Result<Vec<f64>> {
    Ok(serial_refine(farm, inflow, &SerialRefineConfig::default())?.yaws)
}

/// Optimal yaw vectors on a (direction, speed) grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YawLut {
    pub wd_axis: Vec<f64>,
    pub ws_axis: Vec<f64>,
    /// `yaws[i][j]` is the yaw vector at `(wd_axis[i], ws_axis[j])`.
    pub yaws: Vec<Vec<Vec<f64>>>,
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidConfig(format!("{name} is empty")));
    }
    if axis.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig(format!(
            "{name} must be strictly increasing"
        )));
    }
    Ok(())
}

impl YawLut {
    pub fn validate(&self) -> Result<()> {
        check_axis("wd_axis", &self.wd_axis)?;
        check_axis("ws_axis", &self.ws_axis)?;
        let n = self
            .yaws
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        let ok = self.yaws.len() == self.wd_axis.len()
            && self
                .yaws
                .iter()
                .all(|row| row.len() == self.ws_axis.len() && row.iter().all(|v| v.len() == n));
        if !ok || n == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}xN table", self.wd_axis.len(), self.ws_axis.len()),
                got: "ragged table".into(),
            });
        }
        Ok(())
    }

    pub fn turbine_count(&self) -> usize {
        self.yaws[0][0].len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lut: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        lut.validate()?;
        Ok(lut)
    }
}

/// Evaluate [`expert_yaw_targets`] on every grid node (in parallel).
pub fn build_lut(
    farm: &WindFarm,
    wd_axis: &[f64],
    ws_axis: &[f64],
    turbulence_intensity: f64,
) -> Result<YawLut> {
    check_axis("wd_axis", wd_axis)?;
    check_axis("ws_axis", ws_axis)?;
    let nodes: Vec<(usize, usize)> = (0..wd_axis.len())
        .flat_map(|i| (0..ws_axis.len()).map(move |j| (i, j)))
        .collect();
    let solved: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let inflow = InflowCondition::new(ws_axis[j], wd_axis[i], turbulence_intensity)?;
            expert_yaw_targets(farm, &inflow)
        })
        .collect::<Result<_>>()?;
    let mut it = solved.into_iter();
    let yaws = (0..wd_axis.len())
        .map(|_| it.by_ref().take(ws_axis.len()).collect())
        .collect();
    Ok(YawLut {
        wd_axis: wd_axis.to_vec(),
        ws_axis: ws_axis.to_vec(),
        yaws,
    })
}

/// Bracketing indices and weight of `x` on `axis`, clamped to the ends.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if x <= axis[0] || last == 0 {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

/// Bilinear interpolation of the table, per turbine.
pub fn lut_lookup(lut: &YawLut, wd: f64, ws: f64) -> Vec<f64> {
    let (i0, i1, u) = bracket(&lut.wd_axis, wd);
    let (j0, j1, v) = bracket(&lut.ws_axis, ws);
    (0..lut.turbine_count())
        .map(|t| {
            let a = lut.yaws[i0][j0][t];
            let b = lut.yaws[i1][j0][t];
            let c = lut.yaws[i0][j1][t];
            let d = lut.yaws[i1][j1][t];
            let low = if u == 0.0 { a } else { a + u * (b - a) };
            let high = if u == 0.0 { c } else { c + u * (d - c) };
            if v == 0.0 {
                low
            } else {
                low + v * (high - low)
            }
        })
        .collect()
}
