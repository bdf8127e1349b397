use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use ilnet::dataio::{
    load_mask, load_samples, mask_to_gray, prepare, resize_mask, synth_dataset, write_dataset, write_pgm, DatasetManifest, GrayImage,
    ManifestEntry, Sample, SynthConfig,
};
use ilnet::metrics::{evaluate, roc_sweep, BinaryMask, MetricsReport};
use ilnet::model::{build_model, check_network, NetworkCheck};
use ilnet::tensor::gradcheck::GradCheckOptions;
use ilnet::tensor::{kernels::sigmoid, load_checkpoint, Init, Tape};
use ilnet::training::{predict_maps, Trainer, MODEL_CHECKPOINT};
use ilnet::Ilnet32;
use serde_json::Value;

use crate::config::RunConfig;
use crate::output::{fixed, fixed_list, object, to_string};
use crate::{Cli, Command};

/// Command failure split by exit code.
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(anyhow::Error),
    /// Missing files, bad data, numerical failure (exit 2).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

trait UsageExt<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T> UsageExt<T> for Result<T> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(Failure::Usage)
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ILNET_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ILNET_THREADS=`{v}` is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

/// `--config` if given, else the `config.txt` a training run left next to
/// the checkpoint.
fn load_config(cli: &Cli, checkpoint: Option<&Path>) -> Result<RunConfig, Failure> {
    let beside = checkpoint.and_then(Path::parent).map(|d| d.join("config.txt")).filter(|p| p.is_file());
    RunConfig::load(cli.config.as_deref().or(beside.as_deref()), &cli.overrides).usage()
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load_data(manifest: &Path, size: (usize, usize)) -> Result<Vec<Sample>> {
    let m = DatasetManifest::load(manifest)?;
    let samples = load_samples(&m)?;
    if samples.is_empty() {
        bail!("manifest {} lists no samples", manifest.display());
    }
    samples.iter().map(|s| prepare(s, size).map_err(Into::into)).collect()
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Ilnet32> {
    let mut model = build_model::<f32>(&cfg.model, cfg.model.seed)?;
    let state = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    model.load_state(&state).with_context(|| format!("{} does not match the configured model", checkpoint.display()))?;
    Ok(model)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    init_threads().usage()?;
    match &cli.command {
        Command::Train { manifest, checkpoint } => train(&cli, manifest, checkpoint.as_deref()),
        Command::Eval { manifest, checkpoint, predictions } => eval(&cli, manifest, checkpoint.as_deref(), predictions.as_deref()),
        Command::Infer { manifest, checkpoint } => infer(&cli, manifest, checkpoint),
        Command::Roc { manifest, checkpoint, thresholds } => roc(&cli, manifest, checkpoint, *thresholds),
        Command::Bench => bench(&cli),
        Command::Gradcheck => gradcheck(&cli),
        Command::Synth => synth(&cli),
    }
}

fn train(cli: &Cli, manifest: &Path, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(cli, None)?;
    let data = load_data(manifest, cfg.model.input_size)?;
    let model = build_model::<f32>(&cfg.model, cfg.model.seed).map_err(anyhow::Error::from)?;
    let mut trainer = match checkpoint {
        Some(ck) => {
            let dir = ck.parent().unwrap_or(Path::new("."));
            Trainer::resume(model, cfg.train.clone(), dir).with_context(|| format!("resuming from {}", dir.display()))?
        }
        None => Trainer::new(model, cfg.train.clone()).map_err(anyhow::Error::from)?,
    };
    let log = trainer.run(&data, Some(&cli.out)).map_err(anyhow::Error::from)?;
    let last = log.last().ok_or_else(|| anyhow!("no epoch was run"))?;
    let summary = object(vec![
        ("epochs", Value::from(log.len())),
        ("final_loss", fixed(last.loss.total)),
        ("checkpoint", Value::from(cli.out.join(MODEL_CHECKPOINT).display().to_string())),
    ]);
    print!("{}", to_string(&summary));
    Ok(())
}

fn report_json(r: &MetricsReport, threshold: f32) -> Value {
    let pct: Vec<f64> = r.per_image_iou.iter().map(|v| 100.0 * v).collect();
    object(vec![
        ("iou", fixed(100.0 * r.iou)),
        ("niou", fixed(100.0 * r.niou)),
        ("pd", fixed(100.0 * r.pd)),
        ("fa", fixed(1e6 * r.fa)),
        ("threshold", fixed(f64::from(threshold))),
        ("images", Value::from(r.per_image_iou.len())),
        ("gt_targets", Value::from(r.gt_targets)),
        ("detected", Value::from(r.detected)),
        ("tp_pixels", Value::from(r.tp_sum)),
        ("gt_pixels", Value::from(r.t_sum)),
        ("fp_pixels", Value::from(r.fp_pixels)),
        ("all_pixels", Value::from(r.all_pixels)),
        ("per_image_iou", fixed_list(&pct)),
    ])
}

fn eval(cli: &Cli, manifest: &Path, checkpoint: Option<&Path>, predictions: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(cli, checkpoint)?;
    let preds: Vec<BinaryMask>;
    let gts: Vec<BinaryMask>;
    if let Some(pred_path) = predictions {
        let gt_manifest = DatasetManifest::load(manifest).map_err(anyhow::Error::from)?;
        let samples = load_samples(&gt_manifest).map_err(anyhow::Error::from)?;
        let pm = DatasetManifest::load(pred_path).map_err(anyhow::Error::from)?;
        if pm.entries.len() != samples.len() {
            return Err(Failure::Runtime(anyhow!("{} predictions for {} samples", pm.entries.len(), samples.len())));
        }
        preds = pm
            .entries
            .iter()
            .zip(&samples)
            .map(|(e, s)| load_mask(&e.mask).map(|m| resize_mask(&m, s.size())))
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::from)?;
        gts = samples.into_iter().map(|s| s.mask).collect();
    } else {
        let ck = checkpoint.expect("clap requires a checkpoint without predictions");
        let model = load_model(&cfg, ck)?;
        let data = load_data(manifest, cfg.model.input_size)?;
        let maps = predict_maps(&model, &data, 4).map_err(anyhow::Error::from)?;
        preds = maps.iter().map(|m| m.binarize(cfg.threshold)).collect();
        gts = data.into_iter().map(|s| s.mask).collect();
    }
    let report = evaluate(&preds, &gts).map_err(anyhow::Error::from)?;
    let text = to_string(&report_json(&report, cfg.threshold));
    write_out(&cli.out, "metrics.json", &text)?;
    print!("{text}");
    Ok(())
}

fn to_gray(values: &[f32], w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()).expect("plane size")
}

fn infer(cli: &Cli, manifest: &Path, checkpoint: &Path) -> Result<(), Failure> {
    let cfg = load_config(cli, Some(checkpoint))?;
    let model = load_model(&cfg, checkpoint)?;
    let data = load_data(manifest, cfg.model.input_size)?;
    let (pred_dir, side_dir) = (cli.out.join("pred"), cli.out.join("sides"));
    for d in [&pred_dir, &side_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut entries = Vec::with_capacity(data.len());
    for s in &data {
        let (h, w) = s.size();
        let mut tape = Tape::new();
        let x = tape.input(s.image.clone().reshape(vec![1, 3, h, w]).map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?;
        let out = model.forward(&mut tape, x, false).map_err(anyhow::Error::from)?;
        let probs: Vec<f32> = tape.value(out.logits).data().iter().map(|z| sigmoid(*z)).collect();
        let pred_path = pred_dir.join(format!("{}.pgm", s.id));
        write_pgm(&pred_path, &to_gray(&probs, w, h)).map_err(anyhow::Error::from)?;
        for (k, &side) in out.sides.sups.iter().enumerate() {
            let p: Vec<f32> = tape.value(side).data().iter().map(|z| sigmoid(*z)).collect();
            write_pgm(&side_dir.join(format!("{}_side{k}.pgm", s.id)), &to_gray(&p, w, h)).map_err(anyhow::Error::from)?;
        }
        let gt_path = side_dir.join(format!("{}_gt.pgm", s.id));
        write_pgm(&gt_path, &mask_to_gray(&s.mask)).map_err(anyhow::Error::from)?;
        entries.push(ManifestEntry { id: s.id.clone(), image: gt_path, mask: pred_path });
    }
    let pm = DatasetManifest { size: cfg.model.input_size, normalization: None, entries };
    let path = cli.out.join("predictions.txt");
    pm.save(&path).map_err(anyhow::Error::from)?;
    println!("{}", path.display());
    Ok(())
}

/// `n` thresholds from 1 to 0; the first sits just above 1 so it yields an
/// empty prediction even where a probability saturates at exactly 1.
pub fn roc_thresholds(n: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n).map(|i| if n == 1 { 1.0 } else { 1.0 - i as f64 / (n - 1) as f64 }).collect();
    if let Some(first) = t.first_mut() {
        *first = 1.0 + 1e-6;
    }
    t
}

fn roc(cli: &Cli, manifest: &Path, checkpoint: &Path, n: usize) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::Usage(anyhow!("--thresholds must be at least 1")));
    }
    let cfg = load_config(cli, Some(checkpoint))?;
    let model = load_model(&cfg, checkpoint)?;
    let data = load_data(manifest, cfg.model.input_size)?;
    let maps = predict_maps(&model, &data, 4).map_err(anyhow::Error::from)?;
    let gts: Vec<BinaryMask> = data.into_iter().map(|s| s.mask).collect();
    let points = roc_sweep(&maps, &gts, &roc_thresholds(n)).map_err(anyhow::Error::from)?;
    let mut csv = String::from("threshold,pd,fa\n");
    for p in points {
        csv += &format!("{:.6},{:.6},{:.6}\n", p.threshold, 100.0 * p.pd, 1e6 * p.fa);
    }
    write_out(&cli.out, "roc.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn bench(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli, None)?;
    let model = build_model::<f32>(&cfg.model, cfg.model.seed).map_err(anyhow::Error::from)?;
    let (h, w) = cfg.model.input_size;
    let flops = model.count_flops(h, w).map_err(anyhow::Error::from)?;
    let image = Init::new(cfg.model.seed).uniform::<f32>(vec![1, 3, h, w], 1.0);
    model.predict(&image).map_err(anyhow::Error::from)?;
    let start = Instant::now();
    for _ in 0..cfg.bench_runs {
        model.predict(&image).map_err(anyhow::Error::from)?;
    }
    let secs = start.elapsed().as_secs_f64();
    let report = object(vec![
        ("config", Value::from(cfg.model.name.to_string())),
        ("input_size", Value::from(vec![h, w])),
        ("params", Value::from(model.num_params())),
        ("flops", Value::from(flops)),
        ("gflops", fixed(flops as f64 / 1e9)),
        ("runs", Value::from(cfg.bench_runs)),
        ("mean_latency_ms", fixed(1e3 * secs / cfg.bench_runs as f64)),
        ("images_per_second", fixed(cfg.bench_runs as f64 / secs)),
    ]);
    let text = to_string(&report);
    write_out(&cli.out, "bench.json", &text)?;
    print!("{text}");
    Ok(())
}

fn gradcheck(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli, None)?;
    let defaults = NetworkCheck::default();
    let check = NetworkCheck {
        seed: cfg.model.seed,
        flip_sign: cfg.gradcheck_flip_sign,
        options: GradCheckOptions { samples: Some(cfg.gradcheck_samples), seed: cfg.model.seed, ..defaults.options },
        ..defaults
    };
    let report = check_network(&cfg.model, &check).map_err(anyhow::Error::from)?;
    let groups: Vec<Value> = report
        .groups
        .iter()
        .map(|g| {
            let failures: Vec<Value> = g
                .failures
                .iter()
                .map(|f| {
                    object(vec![
                        ("index", Value::from(f.index)),
                        ("analytic", fixed(f.analytic)),
                        ("numeric", fixed(f.numeric)),
                        ("rel_err", fixed(f.rel_err)),
                    ])
                })
                .collect();
            object(vec![
                ("name", Value::from(g.name.clone())),
                ("checked", Value::from(g.checked)),
                ("max_rel_err", fixed(g.max_rel_err)),
                ("failures", Value::Array(failures)),
            ])
        })
        .collect();
    let failed = report.groups.iter().filter(|g| !g.failures.is_empty()).count();
    let json = object(vec![
        ("passed", Value::from(report.passed())),
        ("tolerance", fixed(report.tolerance)),
        ("max_rel_err", fixed(report.max_rel_err())),
        ("failed_groups", Value::from(failed)),
        ("groups", Value::Array(groups)),
    ]);
    let text = to_string(&json);
    write_out(&cli.out, "gradcheck.json", &text)?;
    print!("{text}");
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("gradient check failed in {failed} of {} groups", report.groups.len())));
    }
    Ok(())
}

fn synth(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli, None)?;
    let sc = SynthConfig { count: cfg.synth_count, size: cfg.model.input_size, targets: cfg.synth_targets, seed: cfg.model.seed, ..Default::default() };
    let (samples, _) = synth_dataset(&sc).map_err(|e| Failure::Usage(e.into()))?;
    let manifest = write_dataset(&samples, &cli.out).map_err(anyhow::Error::from)?;
    let summary = object(vec![
        ("count", Value::from(manifest.entries.len())),
        ("manifest", Value::from(cli.out.join("manifest.txt").display().to_string())),
    ]);
    print!("{}", to_string(&summary));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_descend_from_a_sentinel() {
        assert_eq!(roc_thresholds(1), vec![1.000001]);
        let t = roc_thresholds(3);
        assert_eq!(t, vec![1.000001, 0.5, 0.0]);
    }
}
