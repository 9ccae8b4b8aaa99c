//! Steady-state analytical wake model.
//!
//! Gaussian velocity deficit with linear wake expansion, kinematic yaw
//! deflection, root-sum-square superposition of deficits and hub-point rotor
//! sampling. Wind directions follow the meteorological convention: the
//! direction is where the wind comes *from*, so 270° blows along +x.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Air density used for all power computations (kg/m³).
pub const AIR_DENSITY: f64 = 1.225;

/// Betz limit on the power coefficient.
pub const BETZ_LIMIT: f64 = 16.0 / 27.0;

/// A coefficient (Cp or Ct) as a function of wind speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientCurve {
    /// Piecewise-linear table of `[wind_speed, value]`, clamped at both ends.
    Table {
        points: Vec<[f64; 2]>,
    },
    Constant {
        value: f64,
    },
    /// `value` below `rated_ws`, `value * (rated_ws / u)^2` above it.
    InverseSquareAboveRated {
        value: f64,
        rated_ws: f64,
    },
}

impl CoefficientCurve {
    pub fn table(mut points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidTurbine("empty coefficient table".into()));
        }
        if points
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::InvalidTurbine(
                "non-finite coefficient table entry".into(),
            ));
        }
        points.sort_by(|a, b| a[0].total_cmp(&b[0]));
        if points.windows(2).any(|w| w[0][0] == w[1][0]) {
            return Err(Error::InvalidTurbine(
                "duplicate wind speed in table".into(),
            ));
        }
        Ok(Self::Table { points })
    }

    pub fn eval(&self, ws: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::InverseSquareAboveRated { value, rated_ws } => {
                if ws < *rated_ws {
                    *value
                } else {
                    value * (rated_ws / ws).powi(2)
                }
            }
            Self::Table { points } => interp_clamped(points, ws),
        }
    }

    /// Wind speeds at which the curve changes character; used for validation.
    fn probe_points(&self) -> Vec<f64> {
        let mut probes: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        match self {
            Self::Table { points } => probes.extend(points.iter().map(|p| p[0])),
            Self::InverseSquareAboveRated { rated_ws, .. } => probes.push(*rated_ws),
            Self::Constant { .. } => {}
        }
        probes
    }
}

fn interp_clamped(points: &[[f64; 2]], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first[0] {
        return first[1];
    }
    if x >= last[0] {
        return last[1];
    }
    let hi = points.partition_point(|p| p[0] <= x);
    let (a, b) = (points[hi - 1], points[hi]);
    let t = (x - a[0]) / (b[0] - a[0]);
    a[1] + t * (b[1] - a[1])
}

/// Rotor geometry and performance curves shared by every turbine of a farm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbineSpec {
    pub rotor_diameter: f64,
    pub hub_height: f64,
    pub rated_power: f64,
    pub cp_curve: CoefficientCurve,
    pub ct_curve: CoefficientCurve,
    #[serde(default = "default_yaw_exponent")]
    pub power_yaw_exponent: f64,
}

fn default_yaw_exponent() -> f64 {
    1.88
}

/// On-disk turbine description with tabulated curves.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurbineFile {
    rotor_diameter: f64,
    hub_height: f64,
    rated_power: f64,
    #[serde(default = "default_yaw_exponent")]
    power_yaw_exponent: f64,
    cp_table: Vec<[f64; 2]>,
    ct_table: Vec<[f64; 2]>,
}

impl TurbineSpec {
    /// 10 MW class stand-in: D = 178.3 m, Cp = 0.48, Ct = 0.8 rolling off
    /// as (11.4/U)² above 11.4 m/s, power capped at 10 MW.
    pub fn reference_10mw() -> Self {
        Self {
            rotor_diameter: 178.3,
            hub_height: 119.0,
            rated_power: 10.0e6,
            cp_curve: CoefficientCurve::Constant { value: 0.48 },
            ct_curve: CoefficientCurve::InverseSquareAboveRated {
                value: 0.8,
                rated_ws: 11.4,
            },
            power_yaw_exponent: 1.88,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotor_diameter > 0.0) {
            return Err(Error::InvalidTurbine("rotor_diameter must be > 0".into()));
        }
        if !(self.rated_power > 0.0) {
            return Err(Error::InvalidTurbine("rated_power must be > 0".into()));
        }
        if !self.power_yaw_exponent.is_finite() || self.power_yaw_exponent < 0.0 {
            return Err(Error::InvalidTurbine(
                "power_yaw_exponent must be >= 0".into(),
            ));
        }
        for ws in self.cp_curve.probe_points() {
            let cp = self.cp_curve.eval(ws);
            if !(0.0..=BETZ_LIMIT).contains(&cp) {
                return Err(Error::InvalidTurbine(format!(
                    "Cp({ws}) = {cp} outside [0, 16/27]"
                )));
            }
        }
        for ws in self.ct_curve.probe_points() {
            let ct = self.ct_curve.eval(ws);
            if !(0.0..1.0).contains(&ct) {
                return Err(Error::InvalidTurbine(format!(
                    "Ct({ws}) = {ct} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TurbineFile = serde_json::from_str(text)?;
        let spec = Self {
            rotor_diameter: file.rotor_diameter,
            hub_height: file.hub_height,
            rated_power: file.rated_power,
            cp_curve: CoefficientCurve::table(file.cp_table)?,
            ct_curve: CoefficientCurve::table(file.ct_table)?,
            power_yaw_exponent: file.power_yaw_exponent,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn rotor_area(&self) -> f64 {
        PI * (self.rotor_diameter / 2.0).powi(2)
    }

    pub fn ct(&self, ws: f64) -> f64 {
        self.ct_curve.eval(ws)
    }

    pub fn cp(&self, ws: f64) -> f64 {
        self.cp_curve.eval(ws)
    }
}

/// Turbine positions in a fixed world frame (m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarmLayout {
    pub positions: Vec<[f64; 2]>,
    pub turbine: TurbineSpec,
}

impl FarmLayout {
    pub fn new(positions: Vec<[f64; 2]>, turbine: TurbineSpec) -> Result<Self> {
        turbine.validate()?;
        if positions.is_empty() {
            return Err(Error::InvalidLayout("no turbines".into()));
        }
        for (i, a) in positions.iter().enumerate() {
            if !a[0].is_finite() || !a[1].is_finite() {
                return Err(Error::InvalidLayout(format!(
                    "turbine {i} has a non-finite position"
                )));
            }
            for (j, b) in positions.iter().enumerate().skip(i + 1) {
                if a == b {
                    return Err(Error::InvalidLayout(format!(
                        "turbines {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self { positions, turbine })
    }

    /// Rectangular grid, `spacing` in rotor diameters. Turbine `ix * cols + iy`
    /// sits at `(ix, iy) * spacing * D`.
    pub fn grid(rows: usize, cols: usize, spacing: f64, turbine: TurbineSpec) -> Result<Self> {
        let step = spacing * turbine.rotor_diameter;
        let positions = (0..rows)
            .flat_map(|ix| (0..cols).map(move |iy| [ix as f64 * step, iy as f64 * step]))
            .collect();
        Self::new(positions, turbine)
    }

    /// 2×2 grid of the reference turbine at 5 D spacing.
    pub fn default_2x2() -> Self {
        Self::grid(2, 2, 5.0, TurbineSpec::reference_10mw()).expect("reference layout is valid")
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Free-stream wind condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflowCondition {
    /// m/s
    pub wind_speed: f64,
    /// degrees, meteorological
    pub wind_direction: f64,
    pub turbulence_intensity: f64,
}

impl InflowCondition {
    pub fn new(wind_speed: f64, wind_direction: f64, turbulence_intensity: f64) -> Result<Self> {
        if !(wind_speed > 0.0) || !wind_speed.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "wind speed {wind_speed} must be > 0"
            )));
        }
        if !wind_direction.is_finite() {
            return Err(Error::InvalidConfig("wind direction must be finite".into()));
        }
        if !(turbulence_intensity >= 0.0) {
            return Err(Error::InvalidConfig(
                "turbulence intensity must be >= 0".into(),
            ));
        }
        Ok(Self {
            wind_speed,
            wind_direction: wind_direction.rem_euclid(360.0),
            turbulence_intensity,
        })
    }
}

/// Position in the wind-aligned frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindFramePoint {
    pub downstream: f64,
    pub crosswind: f64,
}

/// Unit vector of the direction the flow travels towards.
fn flow_vector(wind_direction: f64) -> (f64, f64) {
    let th = wind_direction.to_radians();
    (-th.sin(), -th.cos())
}

/// Express world-frame points in a frame whose +downstream axis is the flow
/// direction. +crosswind is 90° counter-clockwise from +downstream.
pub fn rotate_to_wind_frame(positions: &[[f64; 2]], wind_direction: f64) -> Vec<WindFramePoint> {
    let (fx, fy) = flow_vector(wind_direction);
    positions
        .iter()
        .map(|p| WindFramePoint {
            downstream: p[0] * fx + p[1] * fy,
            crosswind: -p[0] * fy + p[1] * fx,
        })
        .collect()
}

/// Wake expansion and near-rotor width parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WakeParams {
    /// Wake growth rate k (σ grows by k per unit downstream distance).
    pub expansion: f64,
    /// Additional growth per unit turbulence intensity; 0 keeps k fixed.
    pub expansion_per_ti: f64,
    /// Initial normalized wake width ε (σ/D at the rotor).
    pub epsilon: f64,
}

impl Default for WakeParams {
    fn default() -> Self {
        Self {
            expansion: 0.05,
            expansion_per_ti: 0.0,
            epsilon: 0.25,
        }
    }
}

/// Fractional velocity deficit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WakeDeficit {
    pub value: f64,
    /// Set when `1 - Ct / (8 (σ/D)^2) < 0`; the centerline deficit is capped at 1.
    pub near_wake_capped: bool,
}

impl WakeDeficit {
    const NONE: Self = Self {
        value: 0.0,
        near_wake_capped: false,
    };
}

/// Gaussian deficit at downstream distance `x` and crosswind distance `r`
/// from the wake center.
pub fn wake_deficit(
    x: f64,
    r: f64,
    ct: f64,
    ti: f64,
    spec: &TurbineSpec,
    params: &WakeParams,
) -> WakeDeficit {
    if x <= 0.0 || ct <= 0.0 {
        return WakeDeficit::NONE;
    }
    let d = spec.rotor_diameter;
    let k = params.expansion + params.expansion_per_ti * ti;
    let sigma_d = k * x / d + params.epsilon;
    let sigma = sigma_d * d;
    let disc = 1.0 - ct / (8.0 * sigma_d * sigma_d);
    let (center, capped) = if disc < 0.0 {
        (1.0, true)
    } else {
        (1.0 - disc.sqrt(), false)
    };
    WakeDeficit {
        value: (center * (-r * r / (2.0 * sigma * sigma)).exp()).clamp(0.0, 1.0),
        near_wake_capped: capped,
    }
}

/// Crosswind offset of the wake center behind a yawed rotor (m).
/// Positive yaw moves the wake toward +crosswind.
pub fn wake_deflection(x: f64, ct: f64, yaw_deg: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let g = yaw_deg.to_radians();
    x * 0.5 * ct * g.sin() * g.cos().powi(2)
}

/// Power of one turbine at effective wind speed `u_eff` and yaw misalignment
/// `misalignment_deg` (W).
pub fn turbine_power(u_eff: f64, misalignment_deg: f64, spec: &TurbineSpec) -> f64 {
    if u_eff <= 0.0 {
        return 0.0;
    }
    let cos = misalignment_deg.to_radians().cos().max(0.0);
    let raw = 0.5
        * AIR_DENSITY
        * spec.rotor_area()
        * spec.cp(u_eff)
        * u_eff.powi(3)
        * cos.powf(spec.power_yaw_exponent);
    raw.min(spec.rated_power)
}

/// Per-turbine steady flow and power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyFlowResult {
    pub effective_ws: Vec<f64>,
    pub power: Vec<f64>,
    pub total_power: f64,
}

/// Layout plus wake-model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindFarm {
    pub layout: FarmLayout,
    pub wake: WakeParams,
}

impl WindFarm {
    pub fn new(layout: FarmLayout, wake: WakeParams) -> Self {
        Self { layout, wake }
    }

    pub fn default_2x2() -> Self {
        Self::new(FarmLayout::default_2x2(), WakeParams::default())
    }

    pub fn turbine(&self) -> &TurbineSpec {
        &self.layout.turbine
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn wind_frame(&self, wind_direction: f64) -> Vec<WindFramePoint> {
        rotate_to_wind_frame(&self.layout.positions, wind_direction)
    }

    /// Turbine indices sorted upstream to downstream, ties by index.
    pub fn downstream_order(&self, wind_direction: f64) -> Vec<usize> {
        downstream_order(&self.wind_frame(wind_direction))
    }

    /// Deficit a rotor emits at a point offset by `(dx, dc)` from it in the
    /// wind frame, given the rotor's thrust and yaw misalignment.
    pub fn source_deficit(
        &self,
        dx: f64,
        dc: f64,
        ct: f64,
        misalignment_deg: f64,
        ti: f64,
    ) -> WakeDeficit {
        if dx <= 0.0 {
            return WakeDeficit::NONE;
        }
        let center = wake_deflection(dx, ct, misalignment_deg);
        wake_deficit(dx, dc - center, ct, ti, &self.layout.turbine, &self.wake)
    }

    fn check_yaws(&self, yaws: &[f64]) -> Result<()> {
        if yaws.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} yaw angles", self.len()),
                got: format!("{}", yaws.len()),
            });
        }
        Ok(())
    }

    /// Effective hub wind speed of every turbine and the thrust coefficient
    /// each one evaluates at that speed.
    pub fn effective_wind_speeds_and_ct(
        &self,
        inflow: &InflowCondition,
        yaws: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_yaws(yaws)?;
        let frame = self.wind_frame(inflow.wind_direction);
        let order = downstream_order(&frame);
        let n = self.len();
        let mut ws = vec![inflow.wind_speed; n];
        let mut ct = vec![0.0; n];
        for (pos, &j) in order.iter().enumerate() {
            let mut sum_sq = 0.0;
            for &i in &order[..pos] {
                let dx = frame[j].downstream - frame[i].downstream;
                let dc = frame[j].crosswind - frame[i].crosswind;
                let d = self.source_deficit(dx, dc, ct[i], yaws[i], inflow.turbulence_intensity);
                sum_sq += d.value * d.value;
            }
            ws[j] = (inflow.wind_speed * (1.0 - sum_sq.sqrt())).max(0.0);
            ct[j] = self.layout.turbine.ct(ws[j]);
        }
        Ok((ws, ct))
    }

    pub fn effective_wind_speeds(
        &self,
        inflow: &InflowCondition,
        yaws: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(self.effective_wind_speeds_and_ct(inflow, yaws)?.0)
    }

    pub fn farm_power(&self, inflow: &InflowCondition, yaws: &[f64]) -> Result<SteadyFlowResult> {
        let effective_ws = self.effective_wind_speeds(inflow, yaws)?;
        let power: Vec<f64> = effective_ws
            .iter()
            .zip(yaws)
            .map(|(&u, &g)| turbine_power(u, g, &self.layout.turbine))
            .collect();
        let total_power = power.iter().sum();
        Ok(SteadyFlowResult {
            effective_ws,
            power,
            total_power,
        })
    }

    /// Hub-height wind speed at arbitrary world points, for flow-field dumps.
    pub fn flow_field(
        &self,
        inflow: &InflowCondition,
        yaws: &[f64],
        points: &[[f64; 2]],
    ) -> Result<Vec<f64>> {
        let (_, ct) = self.effective_wind_speeds_and_ct(inflow, yaws)?;
        let frame = self.wind_frame(inflow.wind_direction);
        let probes = rotate_to_wind_frame(points, inflow.wind_direction);
        Ok(probes
            .iter()
            .map(|p| {
                let sum_sq: f64 = frame
                    .iter()
                    .enumerate()
                    .map(|(i, src)| {
                        let d = self.source_deficit(
                            p.downstream - src.downstream,
                            p.crosswind - src.crosswind,
                            ct[i],
                            yaws[i],
                            inflow.turbulence_intensity,
                        );
                        d.value * d.value
                    })
                    .sum();
                (inflow.wind_speed * (1.0 - sum_sq.sqrt())).max(0.0)
            })
            .collect())
    }
}

pub(crate) fn downstream_order(frame: &[WindFramePoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..frame.len()).collect();
    order.sort_by(|&a, &b| {
        frame[a]
            .downstream
            .partial_cmp(&frame[b].downstream)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const D: f64 = 178.3;

    fn pair(positions: Vec<[f64; 2]>) -> WindFarm {
        WindFarm::new(
            FarmLayout::new(positions, TurbineSpec::reference_10mw()).unwrap(),
            WakeParams::default(),
        )
    }

    #[test]
    fn rotation_aligned_with_row() {
        let f = rotate_to_wind_frame(&[[0.0, 0.0], [891.5, 0.0]], 270.0);
        assert_relative_eq!(f[1].downstream - f[0].downstream, 891.5, epsilon = 1e-9);
        assert!((f[1].crosswind - f[0].crosswind).abs() < 1e-9);
    }

    #[test]
    fn rotation_by_quarter_turn_swaps_axes() {
        let f = rotate_to_wind_frame(&[[0.0, 0.0], [891.5, 0.0]], 0.0);
        assert!((f[1].downstream - f[0].downstream).abs() < 1e-9);
        assert_relative_eq!(
            (f[1].crosswind - f[0].crosswind).abs(),
            891.5,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rotation_five_degrees() {
        let f = rotate_to_wind_frame(&[[0.0, 0.0], [891.5, 0.0]], 275.0);
        let c = 5f64.to_radians();
        assert_relative_eq!(f[1].downstream, 891.5 * c.cos(), epsilon = 1e-9);
        assert_relative_eq!(f[1].crosswind.abs(), 891.5 * c.sin(), epsilon = 1e-9);
    }

    #[test]
    fn deficit_zero_upstream_and_without_thrust() {
        let spec = TurbineSpec::reference_10mw();
        let p = WakeParams::default();
        for r in [-300.0, 0.0, 50.0] {
            assert_eq!(wake_deficit(0.0, r, 0.8, 0.05, &spec, &p).value, 0.0);
            assert_eq!(wake_deficit(-100.0, r, 0.8, 0.05, &spec, &p).value, 0.0);
            assert_eq!(wake_deficit(5.0 * D, r, 0.0, 0.05, &spec, &p).value, 0.0);
        }
    }

    #[test]
    fn deficit_centerline_at_five_diameters() {
        let spec = TurbineSpec::reference_10mw();
        let d = wake_deficit(5.0 * D, 0.0, 8.0 / 9.0, 0.0, &spec, &WakeParams::default());
        let expected = 1.0 - (1.0f64 - (8.0 / 9.0) / 2.0).sqrt();
        assert_relative_eq!(d.value, expected, epsilon = 1e-12);
        assert!((d.value - 0.2546).abs() < 1e-4);
        assert!(!d.near_wake_capped);
    }

    #[test]
    fn near_wake_condition_caps_and_flags() {
        let spec = TurbineSpec::reference_10mw();
        let d = wake_deficit(0.1 * D, 0.0, 0.9, 0.0, &spec, &WakeParams::default());
        assert!(d.near_wake_capped);
        assert_eq!(d.value, 1.0);
    }

    #[test]
    fn deflection_examples() {
        assert_eq!(wake_deflection(5.0 * D, 0.8, 0.0), 0.0);
        let g = 25f64.to_radians();
        let expected = 891.5 * 0.5 * 0.8 * g.sin() * g.cos().powi(2);
        assert_relative_eq!(wake_deflection(891.5, 0.8, 25.0), expected, epsilon = 1e-12);
        assert!((expected - 123.8).abs() < 0.1);
        assert_relative_eq!(
            wake_deflection(891.5, 0.8, -25.0),
            -expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn power_examples() {
        let spec = TurbineSpec::reference_10mw();
        assert_eq!(turbine_power(0.0, 0.0, &spec), 0.0);
        assert!(turbine_power(10.0, 90.0, &spec) < 1e-6);
        let expected = 0.5 * 1.225 * PI * 89.15f64.powi(2) * 0.48 * 1000.0;
        assert_relative_eq!(
            turbine_power(10.0, 0.0, &spec),
            expected,
            max_relative = 1e-12
        );
        assert!((expected / 1e6 - 7.34).abs() < 0.01);
        assert_eq!(turbine_power(20.0, 0.0, &spec), 10.0e6);
    }

    #[test]
    fn single_and_side_by_side_turbines_see_free_stream() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        let one = pair(vec![[0.0, 0.0]]);
        assert_eq!(
            one.effective_wind_speeds(&inflow, &[0.0]).unwrap(),
            vec![10.0]
        );
        let side = pair(vec![[0.0, 0.0], [0.0, 20.0 * D]]);
        assert_eq!(
            side.effective_wind_speeds(&inflow, &[0.0, 0.0]).unwrap(),
            vec![10.0, 10.0]
        );
        let r = side.farm_power(&inflow, &[0.0, 0.0]).unwrap();
        assert_eq!(r.power[0], r.power[1]);
    }

    #[test]
    fn aligned_pair_composes_deficit() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        let farm = pair(vec![[0.0, 0.0], [5.0 * D, 0.0]]);
        let ws = farm.effective_wind_speeds(&inflow, &[0.0, 0.0]).unwrap();
        // Ct(10) = 0.8, σ/D = 0.5
        let deficit = 1.0 - (1.0f64 - 0.8 / 2.0).sqrt();
        assert_eq!(ws[0], 10.0);
        assert_relative_eq!(ws[1], 10.0 * (1.0 - deficit), epsilon = 1e-12);
        let r = farm.farm_power(&inflow, &[0.0, 0.0]).unwrap();
        assert!(r.power[1] < r.power[0]);
    }

    #[test]
    fn steering_beats_zero_yaw_on_aligned_pair() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        let farm = pair(vec![[0.0, 0.0], [5.0 * D, 0.0]]);
        let base = farm.farm_power(&inflow, &[0.0, 0.0]).unwrap().total_power;
        let best = (-30..=30)
            .map(|g| {
                farm.farm_power(&inflow, &[g as f64, 0.0])
                    .unwrap()
                    .total_power
            })
            .fold(f64::MIN, f64::max);
        let steered = farm.farm_power(&inflow, &[25.0, 0.0]).unwrap().total_power;
        assert!(best > base);
        assert!(steered > base);
    }

    #[test]
    fn yaw_length_mismatch_is_rejected() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        assert!(WindFarm::default_2x2().farm_power(&inflow, &[0.0]).is_err());
    }

    #[test]
    fn turbine_file_round_trip() {
        let text = r#"{"rotor_diameter": 100.0, "hub_height": 80.0, "rated_power": 3e6,
            "power_yaw_exponent": 2.0,
            "cp_table": [[3.0, 0.0], [5.0, 0.4], [25.0, 0.1]],
            "ct_table": [[3.0, 0.8], [25.0, 0.1]]}"#;
        let spec = TurbineSpec::from_json_str(text).unwrap();
        assert_relative_eq!(spec.cp(4.0), 0.2, epsilon = 1e-12);
        assert_eq!(spec.cp(1.0), 0.0);
        assert_eq!(spec.ct(30.0), 0.1);
        let bad = text.replace("0.4]", "0.7]");
        assert!(TurbineSpec::from_json_str(&bad).is_err());
    }

    #[test]
    fn duplicate_positions_rejected() {
        assert!(
            FarmLayout::new(vec![[0.0, 0.0], [0.0, 0.0]], TurbineSpec::reference_10mw()).is_err()
        );
    }

    proptest! {
        #[test]
        fn deficit_even_and_non_increasing_in_offset(
            x in 0.5f64..20.0, r1 in 0.0f64..3.0, r2 in 0.0f64..3.0, ct in 0.0f64..0.99,
        ) {
            let spec = TurbineSpec::reference_10mw();
            let p = WakeParams::default();
            let f = |r: f64| wake_deficit(x * D, r * D, ct, 0.05, &spec, &p).value;
            prop_assert_eq!(f(r1), f(-r1));
            let (near, far) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(f(far) <= f(near));
            prop_assert!((0.0..=1.0).contains(&f(near)));
        }

        #[test]
        fn deflection_is_odd(x in 0.0f64..3000.0, ct in 0.0f64..0.99, g in -40.0f64..40.0) {
            prop_assert_eq!(wake_deflection(x, ct, -g), -wake_deflection(x, ct, g));
        }

        #[test]
        fn farm_power_permutation_invariant(
            yaws in proptest::collection::vec(-30.0f64..30.0, 4),
            wd in 240.0f64..300.0, ws in 4.0f64..20.0, shift in 0usize..4,
        ) {
            let farm = WindFarm::default_2x2();
            let inflow = InflowCondition::new(ws, wd, 0.05).unwrap();
            let base = farm.farm_power(&inflow, &yaws).unwrap();
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let mut permuted = farm.clone();
            permuted.layout.positions = perm.iter().map(|&i| farm.layout.positions[i]).collect();
            let pyaws: Vec<f64> = perm.iter().map(|&i| yaws[i]).collect();
            let r = permuted.farm_power(&inflow, &pyaws).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((r.power[k] - base.power[i]).abs() <= 1e-9 * base.power[i].max(1.0));
            }
        }

        #[test]
        fn farm_power_rotation_invariant(
            yaws in proptest::collection::vec(-30.0f64..30.0, 4),
            wd in 0.0f64..360.0, ws in 4.0f64..20.0, rot in -180.0f64..180.0,
        ) {
            let farm = WindFarm::default_2x2();
            let inflow = InflowCondition::new(ws, wd, 0.05).unwrap();
            let base = farm.farm_power(&inflow, &yaws).unwrap();
            // Rotating the world counter-clockwise by `rot` shifts the
            // meteorological direction clockwise by the same amount.
            let (s, c) = rot.to_radians().sin_cos();
            let mut rotated = farm.clone();
            for p in &mut rotated.layout.positions {
                *p = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            }
            let rin = InflowCondition::new(ws, wd - rot, 0.05).unwrap();
            let r = rotated.farm_power(&rin, &yaws).unwrap();
            for i in 0..4 {
                prop_assert!((r.power[i] - base.power[i]).abs() <= 1e-9 * base.power[i].max(1.0));
            }
        }

        #[test]
        fn total_power_bounded_by_rated(
            yaws in proptest::collection::vec(-40.0f64..40.0, 4),
            wd in 0.0f64..360.0, ws in 0.5f64..30.0,
        ) {
            let farm = WindFarm::default_2x2();
            let inflow = InflowCondition::new(ws, wd, 0.05).unwrap();
            let r = farm.farm_power(&inflow, &yaws).unwrap();
            prop_assert!(r.total_power <= 4.0 * 10.0e6 + 1e-6);
            prop_assert!((r.total_power - r.power.iter().sum::<f64>()).abs() < 1e-6);
            for (&u, &p) in r.effective_ws.iter().zip(&r.power) {
                prop_assert!((0.0..=ws).contains(&u));
                prop_assert!(p >= 0.0);
            }
        }
    }
}
