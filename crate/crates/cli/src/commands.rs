//! Pipeline stages. Every stage skips work whose outputs already exist with
//! a matching configuration hash, so a sweep can be resumed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wakerl::env::DynEnv;
use wakerl::eval::{
    aggregate_mean_gain, emit_report, read_cases, run_grid, Aggregate, ControllerKind, EvalReport,
    EvalSetup, RunLabel,
};
use wakerl::pretrain::{
    env_config_hash, generate_expert_dataset, pretrain_agent, DatasetSize, ExpertDataset,
    PretrainSummary,
};
use wakerl::sac::{train_online, AgentSnapshot, SacAgent};
use wakerl::turbulence::{BoxRole, TurbulenceLibrary};
use wakerl::util::{config_hash, derive_seed};
use wakerl::wake::WindFarm;
use wakerl::yaw_opt::{build_lut, YawLut};

use crate::config::RunConfig;

/// Which controllers `evaluate` runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    Greedy,
    Lut,
    Snapshots(DatasetSize),
}

impl std::str::FromStr for EvalTarget {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Self::Greedy),
            "lut" => Ok(Self::Lut),
            other => bail!("unknown baseline {other:?} (greedy|lut)"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub role: BoxRole,
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub library_hash: String,
    pub master_seed: u64,
    pub boxes: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunDone {
    config_hash: String,
    snapshot_steps: Vec<u64>,
}

#[derive(Serialize)]
struct PretrainRecord<'a> {
    config_hash: &'a str,
    size: DatasetSize,
    seed: u64,
    summary: Option<&'a PretrainSummary>,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub farm: Arc<WindFarm>,
}

fn size_dir(size: DatasetSize) -> String {
    size.name().to_ascii_lowercase()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

/// Hash in the leading `# config_hash=` line of a CSV, if any.
fn csv_hash(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines()
        .next()?
        .strip_prefix("# config_hash=")
        .map(str::to_owned)
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let farm = Arc::new(cfg.farm.build()?);
        Ok(Self { cfg, farm })
    }

    fn out(&self) -> &Path {
        &self.cfg.out
    }

    /// Hash of everything that shapes training artifacts; evaluation
    /// settings are left out so changing them does not force retraining.
    pub fn train_hash(&self) -> String {
        let c = &self.cfg;
        config_hash(&(
            &c.farm,
            &c.env,
            &c.sampling,
            &c.turbulence,
            c.expert,
            &c.sac,
            &c.pretrain,
            &c.training,
            c.master_seed,
        ))
    }

    pub fn turbulence_dir(&self) -> PathBuf {
        self.out().join("turbulence")
    }

    pub fn expert_path(&self, size: DatasetSize) -> PathBuf {
        self.out()
            .join("expert")
            .join(format!("{}.json", size_dir(size)))
    }

    pub fn run_dir(&self, size: DatasetSize, seed: u64) -> PathBuf {
        self.out().join(size_dir(size)).join(seed.to_string())
    }

    pub fn snapshot_path(&self, size: DatasetSize, seed: u64, step: u64) -> PathBuf {
        self.run_dir(size, seed).join(format!("{step}.snap"))
    }

    pub fn eval_root(&self) -> PathBuf {
        self.out().join("eval")
    }

    fn library(&self, role: BoxRole) -> Result<Arc<TurbulenceLibrary>> {
        let count = match role {
            BoxRole::Train => self.cfg.turbulence.n_train,
            BoxRole::Eval => self.cfg.turbulence.n_eval,
        };
        let lib =
            TurbulenceLibrary::load_dir(self.turbulence_dir(), role, count).with_context(|| {
                format!(
                    "missing {} turbulence boxes; run gen-turbulence",
                    role.tag()
                )
            })?;
        if lib.params != self.cfg.turbulence.params {
            bail!("turbulence boxes were generated with other parameters; rerun gen-turbulence");
        }
        Ok(Arc::new(lib))
    }

    fn generate_library(&self, role: BoxRole, count: usize) -> TurbulenceLibrary {
        TurbulenceLibrary::generate(
            role,
            count,
            self.cfg.master_seed,
            self.farm.len(),
            self.cfg.turbulence.params,
        )
    }

    pub fn gen_turbulence(&self) -> Result<PathBuf> {
        let dir = self.turbulence_dir();
        let manifest_path = dir.join("manifest.json");
        let hash = self.train_hash();
        if let Ok(text) = std::fs::read_to_string(&manifest_path) {
            if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
                if m.config_hash == hash
                    && self.library(BoxRole::Train).is_ok()
                    && self.library(BoxRole::Eval).is_ok()
                {
                    info!("turbulence boxes up to date");
                    return Ok(manifest_path);
                }
            }
        }
        let mut boxes = Vec::new();
        let mut library_hash = String::new();
        for (role, count) in [
            (BoxRole::Train, self.cfg.turbulence.n_train),
            (BoxRole::Eval, self.cfg.turbulence.n_eval),
        ] {
            let lib = self.generate_library(role, count);
            library_hash = lib.config_hash();
            lib.save_dir(&dir)?;
            boxes.extend(lib.boxes.iter().enumerate().map(|(id, b)| ManifestEntry {
                id,
                role,
                seed: b.seed,
                file: TurbulenceLibrary::file_name(role, id),
            }));
        }
        write_json(
            &manifest_path,
            &Manifest {
                config_hash: hash,
                library_hash,
                master_seed: self.cfg.master_seed,
                boxes,
            },
        )?;
        info!(
            "wrote {} turbulence boxes to {}",
            self.cfg.turbulence.n_train + self.cfg.turbulence.n_eval,
            dir.display()
        );
        Ok(manifest_path)
    }

    fn dataset_hash(&self, lib: &TurbulenceLibrary) -> String {
        env_config_hash(&self.cfg.env, &self.cfg.sampling, lib, &self.farm)
    }

    pub fn gen_expert(&self, size: DatasetSize) -> Result<PathBuf> {
        let lib = self.library(BoxRole::Train)?;
        let path = self.expert_path(size);
        let hash = self.dataset_hash(&lib);
        if let Ok(ds) = ExpertDataset::load(&path, Some(&hash)) {
            if ds.meta.n_episodes == size.episodes() && ds.meta.expert == self.cfg.expert {
                info!("{size} expert dataset up to date");
                return Ok(path);
            }
        }
        let ds = generate_expert_dataset(
            self.farm.clone(),
            &self.cfg.env,
            lib,
            &self.cfg.sampling,
            size.episodes(),
            derive_seed(self.cfg.master_seed, "expert-data", 0),
            self.cfg.expert,
        )?;
        ds.save(&path)?;
        info!(
            "wrote {size} expert dataset ({} pairs) to {}",
            ds.len_pairs(),
            path.display()
        );
        Ok(path)
    }

    fn load_dataset(&self, size: DatasetSize) -> Result<ExpertDataset> {
        let lib = self.library(BoxRole::Train)?;
        let path = self.expert_path(size);
        ExpertDataset::load(&path, Some(&self.dataset_hash(&lib))).with_context(|| {
            format!(
                "expert dataset {} unusable; run gen-expert --size {size}",
                path.display()
            )
        })
    }

    fn fresh_agent(&self, seed: u64) -> Result<SacAgent> {
        let obs_dim = self.farm.len() * wakerl::env::FEATURES_PER_TURBINE;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.master_seed, "agent", seed));
        Ok(SacAgent::new(
            obs_dim,
            self.farm.len(),
            self.cfg.sac.clone(),
            &mut rng,
        )?)
    }

    /// Fresh agent, pretrained when the dataset is non-empty. Writes
    /// `pretrained.snap` and `pretrain.json` into the run directory.
    pub fn pretrain_seed(
        &self,
        size: DatasetSize,
        seed: u64,
        dataset: Option<&ExpertDataset>,
    ) -> Result<SacAgent> {
        let mut agent = self.fresh_agent(seed)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.master_seed, "pretrain", seed));
        let summary = match dataset {
            Some(ds) => pretrain_agent(&mut agent, ds, &self.cfg.pretrain, &mut rng)?,
            None => None,
        };
        let dir = self.run_dir(size, seed);
        let hash = self.train_hash();
        let mut snap = agent.snapshot(0);
        snap.config_hash = Some(hash.clone());
        snap.save(&dir.join("pretrained.snap"))?;
        write_json(
            &dir.join("pretrain.json"),
            &PretrainRecord {
                config_hash: &hash,
                size,
                seed,
                summary: summary.as_ref(),
            },
        )?;
        Ok(agent)
    }

    fn dataset_for(&self, size: DatasetSize) -> Result<Option<ExpertDataset>> {
        if size == DatasetSize::None {
            return Ok(None);
        }
        Ok(Some(self.load_dataset(size)?))
    }

    pub fn pretrain(&self, size: DatasetSize) -> Result<()> {
        let ds = self.dataset_for(size)?;
        self.cfg
            .seeds
            .par_iter()
            .map(|&seed| self.pretrain_seed(size, seed, ds.as_ref()).map(|_| ()))
            .collect()
    }

    fn run_done(&self, size: DatasetSize, seed: u64) -> Option<RunDone> {
        let text = std::fs::read_to_string(self.run_dir(size, seed).join("done.json")).ok()?;
        let done: RunDone = serde_json::from_str(&text).ok()?;
        (done.config_hash == self.train_hash()).then_some(done)
    }

    fn pretrained(&self, size: DatasetSize, seed: u64) -> Option<SacAgent> {
        let snap = AgentSnapshot::load(&self.run_dir(size, seed).join("pretrained.snap")).ok()?;
        if snap.config_hash.as_deref() != Some(self.train_hash().as_str()) {
            return None;
        }
        SacAgent::from_snapshot(&snap, self.cfg.sac.clone()).ok()
    }

    /// One training run: pretraining (reused when present), then online
    /// training with snapshots.
    pub fn train_seed(
        &self,
        size: DatasetSize,
        seed: u64,
        dataset: Option<&ExpertDataset>,
    ) -> Result<()> {
        if self.run_done(size, seed).is_some() {
            info!("{size}/{seed} already trained");
            return Ok(());
        }
        let mut agent = match self.pretrained(size, seed) {
            Some(a) => a,
            None => self.pretrain_seed(size, seed, dataset)?,
        };
        let lib = self.library(BoxRole::Train)?;
        let mut env = DynEnv::new(self.farm.clone(), self.cfg.env.clone(), lib)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.master_seed, "train", seed));
        let hash = self.train_hash();
        let t = &self.cfg.training;
        info!("training {size}/{seed} for {} steps", t.total_steps);
        let log = train_online(
            &mut env,
            &mut agent,
            &self.cfg.sampling,
            t.total_steps,
            t.snapshot_every,
            &mut rng,
            &mut |mut snap| {
                snap.config_hash = Some(hash.clone());
                snap.save(&self.snapshot_path(size, seed, snap.step))
            },
        )?;
        let dir = self.run_dir(size, seed);
        log.write_csv(&dir.join("log.csv"), &hash)?;
        write_json(
            &dir.join("done.json"),
            &RunDone {
                config_hash: hash,
                snapshot_steps: log.snapshot_steps,
            },
        )
    }

    pub fn train(&self, sizes: &[DatasetSize]) -> Result<()> {
        let datasets: Vec<Option<ExpertDataset>> = sizes
            .iter()
            .map(|&s| self.dataset_for(s))
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, u64)> = (0..sizes.len())
            .flat_map(|i| self.cfg.seeds.iter().map(move |&s| (i, s)))
            .collect();
        jobs.par_iter()
            .map(|&(i, seed)| {
                self.train_seed(sizes[i], seed, datasets[i].as_ref())
                    .with_context(|| format!("training {}/{seed}", sizes[i]))
            })
            .collect()
    }

    fn eval_setup(&self) -> Result<EvalSetup> {
        Ok(EvalSetup {
            farm: self.farm.clone(),
            env_cfg: self.cfg.env.clone(),
            library: self.library(BoxRole::Eval)?,
            grid: self.cfg.eval.grid.clone(),
        })
    }

    pub fn lut(&self) -> Result<YawLut> {
        let path = self.out().join("lut.json");
        let e = &self.cfg.eval;
        if let Ok(lut) = YawLut::load(&path) {
            if lut.wd_axis == e.lut_directions && lut.ws_axis == e.lut_speeds {
                return Ok(lut);
            }
        }
        let lut = build_lut(
            &self.farm,
            &e.lut_directions,
            &e.lut_speeds,
            e.grid.turbulence_intensity,
        )?;
        lut.save(&path)?;
        Ok(lut)
    }

    /// Runs and writes one report unless an up-to-date one exists.
    fn evaluate_into(
        &self,
        dir: &Path,
        controllers: &[(u64, ControllerKind)],
        label: &RunLabel,
    ) -> Result<()> {
        let hash = self.cfg.hash();
        if csv_hash(&dir.join("cases.csv")).as_deref() == Some(hash.as_str()) {
            info!("{} up to date", dir.display());
            return Ok(());
        }
        let report = run_grid(&self.eval_setup()?, controllers, label)?;
        if !report.failed.is_empty() {
            log::warn!("{} cases failed in {}", report.failed.len(), dir.display());
        }
        emit_report(&report, dir, &hash, self.cfg.eval.timeseries)?;
        if let Ok(agg) = aggregate_mean_gain(&report.cases) {
            info!(
                "{}: mean gain {:.3}% over {} cases",
                dir.display(),
                agg.overall_gain_pct,
                agg.n_cases
            );
        }
        Ok(())
    }

    /// Snapshot steps available for every configured seed.
    pub fn snapshot_steps(&self, size: DatasetSize) -> Result<Vec<u64>> {
        let mut common: Option<Vec<u64>> = None;
        for &seed in &self.cfg.seeds {
            let dir = self.run_dir(size, seed);
            let mut steps: Vec<u64> = std::fs::read_dir(&dir)
                .with_context(|| format!("no training run at {}", dir.display()))?
                .filter_map(|e| {
                    let p = e.ok()?.path();
                    (p.extension()? == "snap").then(|| p.file_stem()?.to_str()?.parse().ok())?
                })
                .collect();
            steps.sort_unstable();
            common = Some(match common {
                None => steps,
                Some(c) => c.into_iter().filter(|s| steps.contains(s)).collect(),
            });
        }
        let steps = common.unwrap_or_default();
        if steps.is_empty() {
            bail!("no snapshots for {size}; run train --size {size}");
        }
        Ok(steps)
    }

    pub fn evaluate(&self, target: &EvalTarget) -> Result<()> {
        let root = self.eval_root();
        match target {
            EvalTarget::Greedy | EvalTarget::Lut => {
                let (name, kind) = match target {
                    EvalTarget::Greedy => ("greedy", ControllerKind::Greedy),
                    _ => (
                        "lut",
                        ControllerKind::Lut {
                            lut: Arc::new(self.lut()?),
                            rho: self.cfg.eval.lut_rho,
                        },
                    ),
                };
                for &seed in &self.cfg.seeds {
                    let dir = root.join(name).join(format!("seed_{seed}"));
                    self.evaluate_into(&dir, &[(seed, kind.clone())], &RunLabel::new(name, None))?;
                }
            }
            EvalTarget::Snapshots(size) => {
                let label = size_dir(*size);
                for step in self.snapshot_steps(*size)? {
                    let controllers = self
                        .cfg
                        .seeds
                        .iter()
                        .map(|&seed| {
                            let snap = AgentSnapshot::load(&self.snapshot_path(*size, seed, step))?;
                            Ok((
                                seed,
                                ControllerKind::SacSnapshot {
                                    snapshot: Arc::new(snap),
                                    deterministic: self.cfg.eval.deterministic,
                                },
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let dir = root.join(&label).join(format!("step_{step}"));
                    self.evaluate_into(
                        &dir,
                        &controllers,
                        &RunLabel::new(label.clone(), Some(step)),
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Merges every evaluation under `eval/` into `report/`.
    pub fn report(&self) -> Result<Aggregate> {
        let mut files = Vec::new();
        collect_case_files(&self.eval_root(), &mut files)?;
        files.sort();
        let mut report = EvalReport::default();
        for f in &files {
            report.cases.extend(read_cases(f)?);
        }
        if report.is_empty() {
            bail!("no evaluation results under {}", self.eval_root().display());
        }
        let dir = self.out().join("report");
        emit_report(&report, &dir, &self.cfg.hash(), false)?;
        let agg = aggregate_mean_gain(&report.cases)?;
        println!(
            "{:<10} {:>10} {:>8} {:>12}",
            "label", "step", "cases", "mean_gain_%"
        );
        for s in &agg.by_snapshot {
            let step = s
                .snapshot_step
                .map_or_else(|| "-".to_string(), |v| v.to_string());
            println!(
                "{:<10} {:>10} {:>8} {:>12.3}",
                s.label, step, s.n, s.mean_gain_pct
            );
        }
        println!("report written to {}", dir.display());
        Ok(agg)
    }

    pub fn sweep(&self) -> Result<Aggregate> {
        self.gen_turbulence()?;
        for &size in &self.cfg.sizes {
            self.gen_expert(size)?;
        }
        self.train(&self.cfg.sizes)?;
        for &size in &self.cfg.sizes {
            self.evaluate(&EvalTarget::Snapshots(size))?;
        }
        self.evaluate(&EvalTarget::Greedy)?;
        self.evaluate(&EvalTarget::Lut)?;
        let agg = self.report()?;
        if let Some(lut) = agg.by_snapshot.iter().find(|s| s.label == "lut") {
            println!("LUT mean gain: {:.3}%", lut.mean_gain_pct);
        }
        Ok(agg)
    }
}

fn collect_case_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(());
    };
    for e in entries {
        let p = e?.path();
        if p.is_dir() {
            collect_case_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "cases.csv") {
            out.push(p);
        }
    }
    Ok(())
}
