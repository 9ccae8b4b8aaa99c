//! Synthetic turbulent inflow.
//!
//! Each box holds mean-reverting (Ornstein–Uhlenbeck) series sampled at the
//! simulation step: one wind-speed and one direction perturbation per
//! turbine, and one lateral wake-meander offset per ordered turbine pair.
//! Series are stored standardized (zero mean, unit std) and scaled to
//! physical units for a given inflow, so one library serves every sampled
//! wind speed.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{config_hash, derive_seed};
use crate::wake::InflowCondition;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurbulenceParams {
    /// OU correlation time (s).
    pub correlation_time_s: f64,
    /// Direction perturbation std (deg) at `reference_ti`.
    pub direction_std_deg: f64,
    /// Meander offset std in rotor diameters at `reference_ti`.
    pub meander_std_rotor_diameters: f64,
    /// Intensity at which the direction and meander stds apply; both scale
    /// linearly with intensity so a laminar inflow has no perturbations.
    pub reference_ti: f64,
    /// Sampling step of the stored series (s).
    pub dt_s: f64,
    /// Length of each stored box (s); longer episodes wrap around.
    pub duration_s: f64,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            correlation_time_s: 60.0,
            direction_std_deg: 3.0,
            meander_std_rotor_diameters: 0.2,
            reference_ti: 0.05,
            dt_s: 5.0,
            duration_s: 5000.0,
        }
    }
}

/// Standardized perturbation series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBox {
    pub seed: u64,
    pub n_turbines: usize,
    /// `speed[i][k]`: turbine `i` at sample `k`.
    pub speed: Vec<Vec<f64>>,
    pub direction: Vec<Vec<f64>>,
    /// `meander[src * n + dst][k]`.
    pub meander: Vec<Vec<f64>>,
}

/// Exact OU discretization with stationary start, then standardized.
fn ou_series(rng: &mut ChaCha8Rng, n: usize, dt: f64, tau: f64) -> Vec<f64> {
    let decay = (-dt / tau).exp();
    let kick = (1.0 - decay * decay).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        let z: f64 = StandardNormal.sample(rng);
        x = decay * x + kick * z;
    }
    standardize(&mut out);
    out
}

fn standardize(xs: &mut [f64]) {
    if xs.len() < 2 {
        xs.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = if std > 0.0 { (*x - mean) / std } else { 0.0 };
    }
}

impl UnitBox {
    pub fn generate(
        seed: u64,
        n_turbines: usize,
        n_samples: usize,
        params: &TurbulenceParams,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = params.correlation_time_s;
        let dt = params.dt_s;
        let mut series = |count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|_| ou_series(&mut rng, n_samples, dt, tau))
                .collect()
        };
        let speed = series(n_turbines);
        let direction = series(n_turbines);
        let meander = series(n_turbines * n_turbines);
        Self {
            seed,
            n_turbines,
            speed,
            direction,
            meander,
        }
    }

    pub fn len(&self) -> usize {
        self.speed.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scale to physical units for one inflow.
    pub fn scaled(
        &self,
        inflow: &InflowCondition,
        rotor_diameter: f64,
        params: &TurbulenceParams,
    ) -> TurbulenceBox {
        let ti = inflow.turbulence_intensity;
        let rel = if params.reference_ti > 0.0 {
            ti / params.reference_ti
        } else {
            0.0
        };
        let scale = |rows: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| r.iter().map(|v| v * s).collect())
                .collect()
        };
        TurbulenceBox {
            seed: self.seed,
            dt_s: params.dt_s,
            n_turbines: self.n_turbines,
            speed: scale(&self.speed, ti * inflow.wind_speed),
            direction: scale(&self.direction, params.direction_std_deg * rel),
            meander: scale(
                &self.meander,
                params.meander_std_rotor_diameters * rotor_diameter * rel,
            ),
        }
    }
}

/// Perturbation series in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceBox {
    pub seed: u64,
    pub dt_s: f64,
    pub n_turbines: usize,
    /// m/s
    pub speed: Vec<Vec<f64>>,
    /// deg
    pub direction: Vec<Vec<f64>>,
    /// m, indexed `src * n + dst`
    pub meander: Vec<Vec<f64>>,
}

impl TurbulenceBox {
    pub fn len(&self) -> usize {
        self.speed.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(series: &[f64], k: usize) -> f64 {
        if series.is_empty() {
            0.0
        } else {
            series[k % series.len()]
        }
    }

    pub fn speed_at(&self, turbine: usize, k: usize) -> f64 {
        Self::at(&self.speed[turbine], k)
    }

    pub fn direction_at(&self, turbine: usize, k: usize) -> f64 {
        Self::at(&self.direction[turbine], k)
    }

    pub fn meander_at(&self, src: usize, dst: usize, k: usize) -> f64 {
        Self::at(&self.meander[src * self.n_turbines + dst], k)
    }
}

/// Box of at least `duration` seconds for `inflow`, deterministic in `seed`.
pub fn generate_turbulence_box(
    inflow: &InflowCondition,
    duration: f64,
    seed: u64,
    n_turbines: usize,
    rotor_diameter: f64,
    params: &TurbulenceParams,
) -> Result<TurbulenceBox> {
    if !(duration > 0.0) {
        return Err(Error::InvalidConfig(
            "turbulence duration must be > 0".into(),
        ));
    }
    let n = (duration / params.dt_s).ceil() as usize;
    Ok(UnitBox::generate(seed, n_turbines, n, params).scaled(inflow, rotor_diameter, params))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxRole {
    Train,
    Eval,
}

impl BoxRole {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Eval => "eval",
        }
    }
}

/// One persisted box.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxFile {
    pub id: usize,
    pub role: BoxRole,
    pub seed: u64,
    pub config_hash: String,
    pub params: TurbulenceParams,
    pub data: UnitBox,
}

/// Read-only set of boxes shared by many environments.
#[derive(Clone, Debug, PartialEq)]
pub struct TurbulenceLibrary {
    pub role: BoxRole,
    pub params: TurbulenceParams,
    pub boxes: Vec<UnitBox>,
}

impl TurbulenceLibrary {
    /// `count` boxes with seeds derived from `master_seed` and the role.
    pub fn generate(
        role: BoxRole,
        count: usize,
        master_seed: u64,
        n_turbines: usize,
        params: TurbulenceParams,
    ) -> Self {
        let n = (params.duration_s / params.dt_s).ceil() as usize;
        let boxes = (0..count)
            .map(|i| {
                UnitBox::generate(
                    derive_seed(master_seed, role.tag(), i as u64),
                    n_turbines,
                    n,
                    &params,
                )
            })
            .collect();
        Self {
            role,
            params,
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&UnitBox> {
        self.boxes.get(id).ok_or(Error::UnknownTurbulenceBox(id))
    }

    pub fn config_hash(&self) -> String {
        config_hash(&(self.params, self.boxes.first().map(|b| b.n_turbines)))
    }

    pub fn file_name(role: BoxRole, id: usize) -> String {
        format!("{}_box_{id:02}.json", role.tag())
    }

    /// Write one file per box; returns the written paths.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let hash = self.config_hash();
        self.boxes
            .iter()
            .enumerate()
            .map(|(id, b)| {
                let file = BoxFile {
                    id,
                    role: self.role,
                    seed: b.seed,
                    config_hash: hash.clone(),
                    params: self.params,
                    data: b.clone(),
                };
                let path = dir.join(Self::file_name(self.role, id));
                std::fs::write(&path, serde_json::to_string(&file)?)?;
                Ok(path)
            })
            .collect()
    }

    /// Load `count` boxes of `role`, rejecting files whose hash differs.
    pub fn load_dir(dir: impl AsRef<Path>, role: BoxRole, count: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut boxes = Vec::with_capacity(count);
        let mut params = None;
        let mut hash: Option<String> = None;
        for id in 0..count {
            let file: BoxFile = serde_json::from_str(&std::fs::read_to_string(
                dir.join(Self::file_name(role, id)),
            )?)?;
            if file.role != role || file.id != id {
                return Err(Error::InvalidConfig(format!(
                    "box file {id} has wrong role or id"
                )));
            }
            match &hash {
                Some(h) if *h != file.config_hash => {
                    return Err(Error::HashMismatch {
                        expected: h.clone(),
                        found: file.config_hash,
                    })
                }
                _ => hash = Some(file.config_hash.clone()),
            }
            params = Some(file.params);
            boxes.push(file.data);
        }
        let lib = Self {
            role,
            params: params.unwrap_or_default(),
            boxes,
        };
        if let Some(h) = hash {
            if h != lib.config_hash() {
                return Err(Error::HashMismatch {
                    expected: lib.config_hash(),
                    found: h,
                });
            }
        }
        Ok(lib)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (
            m,
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
        )
    }

    #[test]
    fn laminar_inflow_has_no_perturbations() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.0).unwrap();
        let b = generate_turbulence_box(&inflow, 600.0, 3, 4, 178.3, &TurbulenceParams::default())
            .unwrap();
        assert!(b.speed.iter().flatten().all(|&v| v == 0.0));
        assert!(b.direction.iter().flatten().all(|&v| v == 0.0));
        assert!(b.meander.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_series() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        let p = TurbulenceParams::default();
        let a = generate_turbulence_box(&inflow, 600.0, 11, 4, 178.3, &p).unwrap();
        let b = generate_turbulence_box(&inflow, 600.0, 11, 4, 178.3, &p).unwrap();
        let c = generate_turbulence_box(&inflow, 600.0, 12, 4, 178.3, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn speed_std_matches_intensity() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        let b = generate_turbulence_box(&inflow, 3600.0, 5, 4, 178.3, &TurbulenceParams::default())
            .unwrap();
        assert_eq!(b.len(), 720);
        for series in &b.speed {
            let (mean, std) = stats(series);
            assert!((std - 0.5).abs() <= 0.05 * 0.5, "std {std}");
            assert!(mean.abs() <= 0.02 * 0.5);
        }
        let (_, dstd) = stats(&b.direction[0]);
        assert!((dstd - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ou_series_is_autocorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = ou_series(&mut rng, 20_000, 5.0, 60.0);
        let lag1: f64 = xs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (xs.len() - 1) as f64;
        let expected = (-5.0f64 / 60.0).exp();
        assert!(
            (lag1 - expected).abs() < 0.03,
            "lag-1 autocorrelation {lag1}"
        );
    }

    #[test]
    fn indices_wrap_around() {
        let inflow = InflowCondition::new(10.0, 270.0, 0.05).unwrap();
        let b = generate_turbulence_box(&inflow, 50.0, 1, 2, 178.3, &TurbulenceParams::default())
            .unwrap();
        assert_eq!(b.speed_at(1, 3), b.speed_at(1, 3 + b.len()));
        assert_eq!(b.meander_at(0, 1, 2), b.meander[1][2]);
    }

    #[test]
    fn library_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let params = TurbulenceParams {
            duration_s: 200.0,
            ..Default::default()
        };
        let lib = TurbulenceLibrary::generate(BoxRole::Train, 3, 42, 4, params);
        let paths = lib.save_dir(dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let back = TurbulenceLibrary::load_dir(dir.path(), BoxRole::Train, 3).unwrap();
        assert_eq!(back, lib);
        assert!(TurbulenceLibrary::load_dir(dir.path(), BoxRole::Eval, 1).is_err());
        assert!(lib.get(3).is_err());

        let mut file: BoxFile =
            serde_json::from_str(&std::fs::read_to_string(&paths[1]).unwrap()).unwrap();
        file.config_hash = "0000000000000000".into();
        std::fs::write(&paths[1], serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            TurbulenceLibrary::load_dir(dir.path(), BoxRole::Train, 3),
            Err(Error::HashMismatch { .. })
        ));
    }
}
