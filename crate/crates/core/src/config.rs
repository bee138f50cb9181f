//! Flat key=value run configuration: every tunable in the system, with
//! defaults, file/flag overrides, and conversions into the per-module
//! config structs.

use std::path::{Path, PathBuf};

use crate::distill::TrainEncoderConfig;
use crate::imitation::IlConfig;
use crate::policy::PolicyConfig;
use crate::ppo::{AgentMode, PpoConfig};
use crate::preference::AlphaParams;
use crate::world::WorldSpec;
use crate::{PpgtaError, Result};

macro_rules! run_config {
    ($($key:literal => $field:ident : $ty:ty = $default:expr),+ $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty),+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default),+ }
            }
        }

        impl RunConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            PpgtaError::Config(format!("bad value {value:?} for key {key}"))
                        })?;
                        Ok(())
                    })+
                    _ => Err(PpgtaError::Config(format!("unknown config key: {key}"))),
                }
            }

            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$field.to_string())),+]
            }
        }
    };
}

run_config! {
    "world.seed" => world_seed: u64 = 0,
    "world.grid_size" => world_grid_size: usize = 64,
    "world.path_density" => world_path_density: f32 = 0.10,
    "world.n_ooi" => world_n_ooi: usize = 12,
    "world.bug_ratio" => world_bug_ratio: f32 = 0.5,
    "world.invisible_walls" => world_invisible_walls: usize = 4,
    "world.gaps" => world_gaps: usize = 3,

    "demos.orbit" => demos_orbit: usize = 150,
    "demos.path" => demos_path: usize = 50,
    "demos.path_steps" => demos_path_steps: usize = 200,
    "demos.seed" => demos_seed: u64 = 0,

    "detector.shots" => detector_shots: usize = 12,
    "detector.iou" => detector_iou: f32 = 0.5,

    "model.embed_dim" => model_embed_dim: usize = 128,
    "model.local_hidden" => model_local_hidden: usize = 32,
    "model.global_hidden" => model_global_hidden: usize = 64,
    "model.k_window" => model_k_window: usize = 4,
    "model.dropout" => model_dropout: f32 = 0.2,

    "opt.lr_start" => opt_lr_start: f32 = 2e-3,
    "opt.lr_peak" => opt_lr_peak: f32 = 1e-2,
    "opt.warmup_epochs" => opt_warmup_epochs: f32 = 10.0,
    "opt.weight_decay" => opt_weight_decay: f32 = 1e-4,

    "fe.epochs" => fe_epochs: usize = 8,
    "fe.batch" => fe_batch: usize = 64,
    "fe.seed" => fe_seed: u64 = 0,

    "il.lambda" => il_lambda: f32 = 0.5,
    "il.tau_teacher" => il_tau_teacher: f32 = 0.04,
    "il.tau_student" => il_tau_student: f32 = 0.1,
    "il.ema_momentum" => il_ema_momentum: f32 = 0.996,
    "il.epochs" => il_epochs: usize = 40,
    "il.batch" => il_batch: usize = 64,
    "il.patience" => il_patience: usize = 5,
    "il.seed" => il_seed: u64 = 0,

    "novelty.ensemble" => novelty_ensemble: usize = 5,
    "novelty.update_every" => novelty_update_every: usize = 1,
    "novelty.batch" => novelty_batch: usize = 4,
    "novelty.normalize" => novelty_normalize: bool = true,

    "alpha.init" => alpha_init: f32 = 0.8,
    "alpha.min" => alpha_min: f32 = 0.5,
    "alpha.max" => alpha_max: f32 = 0.8,
    "alpha.down_rate" => alpha_down_rate: f32 = 0.05,
    "alpha.up_rate" => alpha_up_rate: f32 = 0.1,
    "alpha.epsilon" => alpha_epsilon: f32 = 0.1,

    "ppo.clip" => ppo_clip: f32 = 0.2,
    "ppo.update_epochs" => ppo_update_epochs: usize = 4,
    "ppo.gae_lambda" => ppo_gae_lambda: f32 = 0.95,
    "ppo.gamma" => ppo_gamma: f32 = 0.99,
    "ppo.entropy_coef" => ppo_entropy_coef: f32 = 0.01,
    "ppo.value_coef" => ppo_value_coef: f32 = 0.5,
    "ppo.lr" => ppo_lr: f32 = 3e-4,

    "eval.episodes" => eval_episodes: usize = 45,
    "eval.horizon" => eval_horizon: usize = 300,
    "eval.trigger_area" => eval_trigger_area: f32 = 0.04,
    "eval.agent" => eval_agent: String = "preference".to_string(),
    "eval.alpha_fixed" => eval_alpha_fixed: f32 = 0.0,
    "eval.seed" => eval_seed: u64 = 0,

    "out.dir" => out_dir: String = "out".to_string(),
}

impl RunConfig {
    /// Parses a flat key=value file; '#' starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| PpgtaError::MissingArtifact(path.display().to_string()))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PpgtaError::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let body: String = self
            .pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        std::fs::write(&tmp, body)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Output directory; `PPGTA_OUT` wins over the config value.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var("PPGTA_OUT") {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(&self.out_dir),
        }
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            seed: self.world_seed,
            grid_size: self.world_grid_size,
            path_density: self.world_path_density,
            n_ooi: self.world_n_ooi,
            bug_ratio: self.world_bug_ratio,
            n_invisible_walls: self.world_invisible_walls,
            n_gaps: self.world_gaps,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            frame_h: crate::world::FRAME_H,
            frame_w: crate::world::FRAME_W,
            embed_dim: self.model_embed_dim,
            local_hidden: self.model_local_hidden,
            global_hidden: self.model_global_hidden,
            k_window: self.model_k_window,
            dropout: self.model_dropout,
        }
    }

    pub fn fe_config(&self) -> TrainEncoderConfig {
        TrainEncoderConfig {
            epochs: self.fe_epochs,
            batch_size: self.fe_batch,
            seed: self.fe_seed,
            lr_start: self.opt_lr_start,
            lr_peak: self.opt_lr_peak,
            warmup_epochs: self.opt_warmup_epochs,
            weight_decay: self.opt_weight_decay,
        }
    }

    pub fn il_config(&self) -> IlConfig {
        IlConfig {
            policy: self.policy_config(),
            lambda: self.il_lambda,
            tau_teacher: self.il_tau_teacher,
            tau_student: self.il_tau_student,
            ema_momentum: self.il_ema_momentum,
            epochs: self.il_epochs,
            batch_size: self.il_batch,
            patience: self.il_patience,
            seed: self.il_seed,
            lr_start: self.opt_lr_start,
            lr_peak: self.opt_lr_peak,
            warmup_epochs: self.opt_warmup_epochs,
            weight_decay: self.opt_weight_decay,
        }
    }

    pub fn alpha_params(&self) -> AlphaParams {
        AlphaParams {
            init: self.alpha_init,
            min: self.alpha_min,
            max: self.alpha_max,
            down_rate: self.alpha_down_rate,
            up_rate: self.alpha_up_rate,
            epsilon: self.alpha_epsilon,
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            clip: self.ppo_clip,
            update_epochs: self.ppo_update_epochs,
            gae_lambda: self.ppo_gae_lambda,
            gamma: self.ppo_gamma,
            entropy_coef: self.ppo_entropy_coef,
            value_coef: self.ppo_value_coef,
            lr: self.ppo_lr,
            horizon: self.eval_horizon,
            episodes: self.eval_episodes,
            novelty_update_every: self.novelty_update_every,
            novelty_batch: self.novelty_batch,
            normalize_novelty: self.novelty_normalize,
            trigger_area_frac: self.eval_trigger_area,
            alpha: self.alpha_params(),
            seed: self.eval_seed,
        }
    }

    pub fn agent_mode(&self) -> Result<AgentMode> {
        match self.eval_agent.as_str() {
            "preference" => Ok(AgentMode::Preference),
            "pure-novelty" => Ok(AgentMode::FixedAlpha(0.0)),
            "fixed-alpha" => Ok(AgentMode::FixedAlpha(self.eval_alpha_fixed)),
            "random" => Ok(AgentMode::Random),
            other => Err(PpgtaError::Config(format!("unknown eval.agent: {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_a_config_error() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.set("no.such.key", "1"),
            Err(PpgtaError::Config(_))
        ));
        assert!(matches!(
            cfg.set("world.seed", "not-a-number"),
            Err(PpgtaError::Config(_))
        ));
    }

    #[test]
    fn save_load_roundtrip_preserves_every_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        let mut cfg = RunConfig::default();
        cfg.set("world.seed", "42").unwrap();
        cfg.set("eval.agent", "pure-novelty").unwrap();
        cfg.set("il.lambda", "0.25").unwrap();
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\n\nworld.seed = 7 # trailing\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.world_seed, 7);
    }

    #[test]
    fn agent_mode_maps_flags() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.agent_mode().unwrap(), AgentMode::Preference));
        cfg.set("eval.agent", "pure-novelty").unwrap();
        assert!(matches!(cfg.agent_mode().unwrap(), AgentMode::FixedAlpha(a) if a == 0.0));
        cfg.set("eval.agent", "random").unwrap();
        assert!(matches!(cfg.agent_mode().unwrap(), AgentMode::Random));
        cfg.set("eval.agent", "bogus").unwrap();
        assert!(cfg.agent_mode().is_err());
    }
}
