use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nsexit_core::arch::{build_model, Model, Variant};
use nsexit_core::checkpoint::{load_checkpoint, save_checkpoint};
use nsexit_core::config::RunConfig;
use nsexit_core::datagen::{wav_bytes, wav_read, wav_write, Clip, ClipFiles, Manifest, Split};
use nsexit_core::pipeline::{enhance as enhance_signal, score_clip, ClipScores};
use nsexit_core::profiler::ComplexityReport;
use nsexit_core::train::{self, Dataset, EpochRecord, TrainObserver};
use nsexit_core::Error;
use sha2::{Digest, Sha256};

/// Writes `bytes` unless the file already holds exactly them. Returns
/// whether anything was written.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(existing) = fs::read(path) {
        if Sha256::digest(&existing) == Sha256::digest(bytes) {
            return Ok(false);
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(true)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data"));
    create_dir(&dir.join("wav"))?;
    let mut manifest = Manifest::generate(
        cfg.count,
        cfg.snr_range,
        cfg.train.seed,
        cfg.train.clip_seconds,
        cfg.val_fraction,
    )?;
    let (mut written, mut unchanged) = (0, 0);
    for i in 0..manifest.records.len() {
        let clip = manifest.clip(i, &dir)?;
        let files = ClipFiles {
            clean: PathBuf::from(format!("wav/{i:05}_clean.wav")),
            noise: PathBuf::from(format!("wav/{i:05}_noise.wav")),
            noisy: PathBuf::from(format!("wav/{i:05}_noisy.wav")),
        };
        for (rel, signal) in [
            (&files.clean, &clip.clean),
            (&files.noise, &clip.noise),
            (&files.noisy, &clip.noisy),
        ] {
            if write_if_changed(&dir.join(rel), &wav_bytes(signal)?)? {
                written += 1;
            } else {
                unchanged += 1;
            }
        }
        manifest.records[i].files = Some(files);
    }
    let manifest_path = dir.join("manifest.txt");
    write_if_changed(&manifest_path, manifest.to_text().as_bytes())?;
    println!(
        "{} clips in {}: {written} files written, {unchanged} unchanged",
        manifest.records.len(),
        manifest_path.display()
    );
    Ok(())
}

fn load_split(manifest: &Manifest, base_dir: &Path, split: Split) -> Result<Dataset> {
    let clips = manifest
        .indices(split)
        .into_iter()
        .map(|i| manifest.clip(i, base_dir))
        .collect::<Result<Vec<Clip>, Error>>()?;
    let data = Dataset::from_pairs(clips.iter().map(|c| (&c.clean, &c.noisy)))?;
    if !data.excluded().is_empty() {
        eprintln!("{} silent {} clips skipped", data.excluded().len(), split.name());
    }
    Ok(data)
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

struct Progress;

impl TrainObserver for Progress {
    fn on_epoch(&mut self, stage: Option<usize>, r: &EpochRecord) -> nsexit_core::Result<()> {
        let stage = stage.map_or(String::new(), |s| format!("stage {s} "));
        let train: Vec<String> = r.train_loss.iter().map(|(e, l)| format!("{e}:{l:.4}")).collect();
        eprintln!(
            "{stage}epoch {:>3} lr {:.2e} train [{}] val {:.4}{}",
            r.epoch,
            r.lr,
            train.join(" "),
            r.val_objective,
            if r.improved { " *" } else { "" }
        );
        Ok(())
    }
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let variant = cfg.variant;
    if variant.needs_baseline() && cfg.baseline_checkpoint.is_none() && resume.is_none() {
        return Err(Error::MissingBaselineCheckpoint(variant.to_string()).into());
    }
    let manifest_path = cfg
        .manifest
        .as_ref()
        .context("no dataset manifest: set `manifest` in the config or pass --manifest")?;
    let manifest = Manifest::load(manifest_path)?;
    let base_dir = parent_dir(manifest_path);
    let train_set = load_split(&manifest, base_dir, Split::Train)?;
    let val_set = load_split(&manifest, base_dir, Split::Val)?;

    let mut model = match resume {
        Some(path) => {
            let (m, info) = load_checkpoint(path)?;
            if m.variant() != variant || m.dims() != cfg.profile.dims() {
                bail!(
                    "checkpoint {} holds a {} model with different settings than the requested {variant} ({})",
                    path.display(),
                    m.variant(),
                    cfg.profile
                );
            }
            eprintln!("resuming from {} ({})", path.display(), info.id);
            m
        }
        None => {
            let mut m = build_model(variant, cfg.profile, cfg.train.seed)?;
            m.set_fc_exit_source(cfg.fc_exit);
            m
        }
    };
    let baseline = if !variant.needs_baseline() {
        None
    } else if resume.is_some() {
        // The shared layers already hold the resumed values.
        let mut b = Model::zeroed(Variant::Baseline, model.dims())?;
        b.load_matching(&model)?;
        Some(b)
    } else {
        let path = cfg.baseline_checkpoint.as_ref().expect("checked above");
        Some(load_checkpoint(path)?.0)
    };

    eprintln!(
        "training {variant} ({}) {} on {} clips, validating on {}",
        cfg.profile,
        cfg.strategy,
        train_set.len(),
        val_set.len()
    );
    let outcome = train::train(
        &mut model,
        cfg.strategy,
        &train_set,
        &val_set,
        &cfg.train,
        baseline.as_ref(),
        &mut Progress,
    )?;

    let dir = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(variant.name()));
    create_dir(&dir)?;
    let mut report = outcome.report;
    let summary = format!(
        "strategy={} epochs={} seed={}",
        cfg.strategy,
        report.epochs_executed(),
        cfg.train.seed
    );
    let best_id = save_checkpoint(dir.join("best.ckpt"), &outcome.best, &summary)?;
    let last_id = save_checkpoint(dir.join("last.ckpt"), &model, &summary)?;
    report.checkpoint_id = Some(best_id.clone());
    let csv_path = dir.join("report.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    report.write_csv(file)?;
    for s in &report.stages {
        let stage = s.stage.map_or("joint".to_string(), |i| format!("stage {i}"));
        println!(
            "{stage}: {} epochs ({}), best val {:.5} at epoch {}",
            s.epochs.len(),
            s.stop.name(),
            s.best_val,
            s.best_epoch
        );
    }
    println!(
        "best {best_id}, last {last_id}, {:.1} s, written to {}",
        report.wall_clock_secs,
        dir.display()
    );
    Ok(())
}

pub fn enhance(checkpoint: &Path, input: &Path, out: &Path, exit: Option<usize>) -> Result<()> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let noisy = wav_read(input)?;
    let enhanced = enhance_signal(&model, &noisy, exit)?;
    wav_write(out, &enhanced)?;
    println!(
        "{} -> {} (exit {}, {} samples)",
        input.display(),
        out.display(),
        exit.unwrap_or_else(|| model.variant().deepest_exit()),
        enhanced.len()
    );
    Ok(())
}

pub fn profile(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    frames: usize,
    repeats: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = match checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => build_model(cfg.variant, cfg.profile, cfg.train.seed)?,
    };
    let report = if frames > 0 {
        ComplexityReport::measured(&model, frames, repeats.max(1))?
    } else {
        ComplexityReport::analytic(&model)
    };
    print!("{}", report.to_table());
    if let Some(path) = out {
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        report.write_csv(file)?;
    }
    Ok(())
}

fn parse_split(manifest: &Manifest, split: Option<&str>) -> Result<Vec<usize>> {
    match split {
        Some("all") => Ok((0..manifest.records.len()).collect()),
        Some(s) => {
            let split = Split::parse(s).with_context(|| format!("unknown split `{s}` (train, val, test or all)"))?;
            Ok(manifest.indices(split))
        }
        None => {
            let test = manifest.indices(Split::Test);
            Ok(if test.is_empty() {
                (0..manifest.records.len()).collect()
            } else {
                test
            })
        }
    }
}

/// Lower edge of the 5 dB bracket holding `snr_db`.
fn snr_bucket(snr_db: f64) -> i64 {
    (snr_db / 5.0).floor() as i64 * 5
}

pub fn eval(checkpoint: &Path, manifest_path: &Path, split: Option<&str>, out: Option<PathBuf>) -> Result<()> {
    let (model, info) = load_checkpoint(checkpoint)?;
    let manifest = Manifest::load(manifest_path)?;
    let indices = parse_split(&manifest, split)?;
    if indices.is_empty() {
        bail!("no clips selected from {}", manifest_path.display());
    }
    let exits = model.variant().exits();
    let mut scores: Vec<(usize, ClipScores)> = Vec::with_capacity(indices.len());
    for &i in &indices {
        let clip = manifest.clip(i, parent_dir(manifest_path))?;
        scores.push((i, score_clip(&model, &clip)?));
    }

    let path = out.unwrap_or_else(|| PathBuf::from("eval.csv"));
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["clip".to_string(), "snr_db".into(), "noisy_si_sdr".into(), "noisy_lsd".into()];
    for e in exits {
        header.push(format!("exit{e}_si_sdr"));
        header.push(format!("exit{e}_lsd"));
    }
    w.write_record(&header)?;
    for (i, s) in &scores {
        let mut row = vec![i.to_string(), s.snr_db.to_string(), s.noisy.si_sdr.to_string(), s.noisy.lsd.to_string()];
        for e in exits {
            let x = s.exits[e];
            row.push(x.si_sdr.to_string());
            row.push(x.lsd.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    // Means per 5 dB input-SNR bracket and overall; one row for the
    // unprocessed mixture and one per exit.
    let mut groups: BTreeMap<Option<i64>, Vec<&ClipScores>> = BTreeMap::new();
    for (_, s) in &scores {
        groups.entry(Some(snr_bucket(s.snr_db))).or_default().push(s);
        groups.entry(None).or_default().push(s);
    }
    let bucket_path = path.with_file_name(format!(
        "{}_by_snr.csv",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("eval")
    ));
    let mut w = csv::Writer::from_path(&bucket_path)
        .with_context(|| format!("creating {}", bucket_path.display()))?;
    w.write_record(["snr_bucket", "output", "clips", "si_sdr", "si_sdr_improvement", "lsd"])?;
    let mut overall = Vec::new();
    for (bucket, group) in &groups {
        let label = bucket.map_or("all".to_string(), |lo| format!("{lo}:{}", lo + 5));
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&ClipScores) -> f64| group.iter().map(|s| f(s)).sum::<f64>() / n;
        let noisy_si = mean(&|s| s.noisy.si_sdr);
        let mut rows = vec![("noisy".to_string(), noisy_si, mean(&|s| s.noisy.lsd))];
        for &e in exits {
            rows.push((format!("exit{e}"), mean(&|s| s.exits[&e].si_sdr), mean(&|s| s.exits[&e].lsd)));
        }
        for (name, si, lsd) in rows {
            w.write_record([
                label.clone(),
                name.clone(),
                group.len().to_string(),
                si.to_string(),
                (si - noisy_si).to_string(),
                lsd.to_string(),
            ])?;
            if bucket.is_none() {
                overall.push((name, si, si - noisy_si, lsd));
            }
        }
    }
    w.flush()?;

    println!("{} ({}) on {} clips", model.variant(), info.id, scores.len());
    println!("{:<8} {:>9} {:>9} {:>8}", "output", "SI-SDR", "SI-SDRi", "LSD");
    for (name, si, imp, lsd) in overall {
        println!("{name:<8} {si:>9.2} {imp:>9.2} {lsd:>8.2}");
    }
    println!("wrote {} and {}", path.display(), bucket_path.display());
    Ok(())
}
