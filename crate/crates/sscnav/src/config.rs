//! Run configuration: a flat TOML file with one section per subsystem,
//! validated up front with errors that name the offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::completion::TrainConfig;
use crate::episodes::EpisodeConfig;
use crate::error::{Result, SscError};
use crate::nav::{NavTrainConfig, Variant};
use crate::perception::{MapParams, SensorParams};
use crate::world::WorldParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// "full", "-cf", "-f", "/bc" or "/sa"
    pub variant: String,
    pub world: WorldSection,
    pub sensor: SensorSection,
    pub map: MapSection,
    pub completion: CompletionSection,
    pub nav: NavSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub width_m: f32,
    pub height_m: f32,
    pub resolution: f32,
    pub min_rooms: usize,
    pub max_rooms: usize,
    pub room_min_m: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub fov: f32,
    pub range: f32,
    pub rays: usize,
    pub label_noise: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub window_m: f32,
    pub cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub lr_decay: f32,
    pub widths: Vec<usize>,
    pub val_fraction: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavSection {
    pub total_steps: usize,
    pub gamma: f32,
    pub buffer: usize,
    pub batch: usize,
    pub learn_start: usize,
    pub sync_every: usize,
    pub eps_start: f32,
    pub eps_end: f32,
    pub eps_frac: f32,
    pub lr: f32,
    pub widths: Vec<usize>,
    pub max_episode_steps: usize,
    pub tau: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub max_steps: usize,
    pub tau: f32,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 0,
            variant: "full".into(),
            world: WorldSection::default(),
            sensor: SensorSection::default(),
            map: MapSection::default(),
            completion: CompletionSection::default(),
            nav: NavSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for WorldSection {
    fn default() -> WorldSection {
        let p = WorldParams::default();
        WorldSection {
            width_m: p.width_m,
            height_m: p.height_m,
            resolution: p.resolution,
            min_rooms: p.min_rooms,
            max_rooms: p.max_rooms,
            room_min_m: p.room_min_m,
        }
    }
}

impl Default for SensorSection {
    fn default() -> SensorSection {
        let p = SensorParams::default();
        SensorSection { fov: p.fov, range: p.range, rays: p.rays, label_noise: p.label_noise }
    }
}

impl Default for MapSection {
    fn default() -> MapSection {
        let p = MapParams::default();
        MapSection { window_m: p.window_m, cells: p.cells }
    }
}

impl Default for CompletionSection {
    fn default() -> CompletionSection {
        let c = TrainConfig::default();
        CompletionSection {
            epochs: c.epochs,
            batch: c.batch,
            lr: c.lr,
            lr_decay: c.lr_decay,
            widths: c.widths,
            val_fraction: c.val_fraction,
        }
    }
}

impl Default for NavSection {
    fn default() -> NavSection {
        let c = NavTrainConfig::default();
        NavSection {
            total_steps: c.total_steps,
            gamma: c.gamma,
            buffer: c.buffer,
            batch: c.batch,
            learn_start: c.learn_start,
            sync_every: c.sync_every,
            eps_start: c.eps_start,
            eps_end: c.eps_end,
            eps_frac: c.eps_frac,
            lr: c.lr,
            widths: c.widths,
            max_episode_steps: c.max_episode_steps,
            tau: c.tau,
        }
    }
}

impl Default for EvalSection {
    fn default() -> EvalSection {
        let c = EpisodeConfig::default();
        EvalSection { episodes: 200, max_steps: c.max_steps, tau: c.tau }
    }
}

fn require(ok: bool, field: &str, why: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(SscError::Config(format!("{field}: {why}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SscError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| SscError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        Variant::parse(&self.variant)
            .map_err(|_| SscError::Config(format!("variant: unknown value {:?}", self.variant)))?;
        self.world_params()
            .validate()
            .map_err(|e| SscError::Config(format!("world: {e}")))?;
        require(self.sensor.fov > 0.0, "sensor.fov", "must be positive")?;
        require(self.sensor.range > 0.0, "sensor.range", "must be positive")?;
        require(self.sensor.rays >= 2, "sensor.rays", "need at least 2 rays")?;
        require(
            (0.0..=1.0).contains(&self.sensor.label_noise),
            "sensor.label_noise",
            "must be in [0, 1]",
        )?;
        require(self.map.window_m > 0.0, "map.window_m", "must be positive")?;
        require(self.map.cells >= 4, "map.cells", "too small to act on")?;
        require(!self.completion.widths.is_empty(), "completion.widths", "must not be empty")?;
        require(!self.nav.widths.is_empty(), "nav.widths", "must not be empty")?;
        let div = 1usize << self.completion.widths.len();
        require(
            self.map.cells % div == 0,
            "map.cells",
            &format!("must be divisible by the completion downsampling factor {div}"),
        )?;
        let div = 1usize << self.nav.widths.len();
        require(
            self.map.cells % div == 0,
            "map.cells",
            &format!("must be divisible by the policy downsampling factor {div}"),
        )?;
        require(self.completion.epochs > 0, "completion.epochs", "must be positive")?;
        require(self.completion.batch > 0, "completion.batch", "must be positive")?;
        require(self.completion.lr > 0.0, "completion.lr", "must be positive")?;
        require(
            self.completion.lr_decay > 0.0 && self.completion.lr_decay <= 1.0,
            "completion.lr_decay",
            "must be in (0, 1]",
        )?;
        require(
            (0.0..1.0).contains(&self.completion.val_fraction),
            "completion.val_fraction",
            "must be in [0, 1)",
        )?;
        require(self.nav.total_steps > 0, "nav.total_steps", "must be positive")?;
        require((0.0..=1.0).contains(&self.nav.gamma), "nav.gamma", "must be in [0, 1]")?;
        require(self.nav.buffer > 0, "nav.buffer", "must be positive")?;
        require(self.nav.batch > 0, "nav.batch", "must be positive")?;
        require(self.nav.sync_every > 0, "nav.sync_every", "must be positive")?;
        for (v, f) in [(self.nav.eps_start, "nav.eps_start"), (self.nav.eps_end, "nav.eps_end")] {
            require((0.0..=1.0).contains(&v), f, "must be in [0, 1]")?;
        }
        require((0.0..=1.0).contains(&self.nav.eps_frac), "nav.eps_frac", "must be in [0, 1]")?;
        require(self.nav.lr > 0.0, "nav.lr", "must be positive")?;
        require(self.nav.max_episode_steps > 0, "nav.max_episode_steps", "must be positive")?;
        require(self.nav.tau >= 0.0, "nav.tau", "must be non-negative")?;
        require(self.eval.episodes > 0, "eval.episodes", "must be positive")?;
        require(self.eval.max_steps > 0, "eval.max_steps", "must be positive")?;
        require(self.eval.tau >= 0.0, "eval.tau", "must be non-negative")?;
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        Variant::parse(&self.variant).expect("validated")
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            width_m: self.world.width_m,
            height_m: self.world.height_m,
            resolution: self.world.resolution,
            min_rooms: self.world.min_rooms,
            max_rooms: self.world.max_rooms,
            room_min_m: self.world.room_min_m,
        }
    }

    pub fn sensor_params(&self) -> SensorParams {
        SensorParams {
            fov: self.sensor.fov,
            range: self.sensor.range,
            rays: self.sensor.rays,
            label_noise: self.sensor.label_noise,
        }
    }

    pub fn map_params(&self) -> MapParams {
        MapParams { window_m: self.map.window_m, cells: self.map.cells }
    }

    pub fn completion_cfg(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.completion.epochs,
            batch: self.completion.batch,
            lr: self.completion.lr,
            lr_decay: self.completion.lr_decay,
            widths: self.completion.widths.clone(),
            seed: self.seed,
            val_fraction: self.completion.val_fraction,
        }
    }

    pub fn nav_cfg(&self) -> NavTrainConfig {
        NavTrainConfig {
            total_steps: self.nav.total_steps,
            gamma: self.nav.gamma,
            buffer: self.nav.buffer,
            batch: self.nav.batch,
            learn_start: self.nav.learn_start,
            sync_every: self.nav.sync_every,
            eps_start: self.nav.eps_start,
            eps_end: self.nav.eps_end,
            eps_frac: self.nav.eps_frac,
            lr: self.nav.lr,
            widths: self.nav.widths.clone(),
            seed: self.seed,
            max_episode_steps: self.nav.max_episode_steps,
            tau: self.nav.tau,
        }
    }

    pub fn episode_cfg(&self) -> EpisodeConfig {
        EpisodeConfig { max_steps: self.eval.max_steps, tau: self.eval.tau }
    }
}
