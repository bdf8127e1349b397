//! Run configuration: model keys, training keys and a few command keys, read
//! from a `key=value` file and then `--override` pairs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ilnet::model::{parse_kv_lines, ModelConfig};
use ilnet::training::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Binarisation threshold for eval.
    pub threshold: f32,
    pub bench_runs: usize,
    pub gradcheck_samples: usize,
    pub gradcheck_flip_sign: bool,
    pub synth_count: usize,
    pub synth_targets: (usize, usize),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::small(),
            train: TrainConfig::default(),
            threshold: 0.5,
            bench_runs: 100,
            gradcheck_samples: 10,
            gradcheck_flip_sign: false,
            synth_count: 16,
            synth_targets: (1, 3),
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::error::Error + Send + Sync + 'static,
{
    value.trim().parse().with_context(|| format!("bad value `{value}` for `{key}`"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        // a key may belong to both model and training (seed, input_size)
        let model = self.model.set(key, value)?;
        let train = self.train.set(key, value)?;
        if model || train {
            return Ok(());
        }
        match key {
            "threshold" => self.threshold = parse(key, value)?,
            "bench_runs" => self.bench_runs = parse(key, value)?,
            "gradcheck_samples" => self.gradcheck_samples = parse(key, value)?,
            "gradcheck_flip_sign" => self.gradcheck_flip_sign = parse(key, value)?,
            "synth_count" => self.synth_count = parse(key, value)?,
            "synth_targets" => {
                let (lo, hi) = value.split_once(',').with_context(|| format!("`{key}` expects MIN,MAX"))?;
                self.synth_targets = (parse(key, lo)?, parse(key, hi)?);
            }
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_kv_lines(&text)? {
                cfg.set(&k, &v).with_context(|| format!("in {}", path.display()))?;
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        if !(0.0..=1.0).contains(&cfg.threshold) {
            bail!("threshold must lie in [0, 1]");
        }
        if cfg.bench_runs == 0 || cfg.synth_count == 0 || cfg.gradcheck_samples == 0 {
            bail!("bench_runs, synth_count and gradcheck_samples must be positive");
        }
        Ok(cfg)
    }
}
