//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Positional arguments filter
//! criteria by substring of their id or title; `--list` prints them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex;
use nsexit_core::arch::{
    build_model, slice_submodel, Dims, FcExitSource, MaskSet, Model, Profile, Topology, Variant,
};
use nsexit_core::checkpoint::checkpoint_bytes;
use nsexit_core::datagen::{
    generate_clip, mix_at_snr, synth_noise, synth_speech_like, wav_bytes, Clip, Manifest, NoiseKind, Split,
};
use nsexit_core::dsp::{apply_mask, istft, stft, Mask, TimeSignal};
use nsexit_core::loss::{compressed_spectral_loss, LossConfig};
use nsexit_core::nn::{Activation, FcLayer, GruLayer};
use nsexit_core::pipeline::{enhance, score_clip};
use nsexit_core::profiler::count_macs_per_exit;
use nsexit_core::train::{
    lr_and_stop_update, train_joint, train_layerwise, Dataset, NoObserver, StepInfo, TrainConfig,
    TrainObserver,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

// Tolerances and sizes, as fixed by the acceptance criteria.
const PARAM_TARGETS: [(Variant, usize); 3] = [
    (Variant::Baseline, 2_783_657),
    (Variant::SplitLayers6Exits, 1_621_152),
    (Variant::ConcatLayers6Exits, 1_884_320),
];
const EXIT1_MAC_SHARE: f64 = 0.383;
const EXIT1_MAC_TOL: f64 = 0.01;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const ROUND_TRIP_RMS: f64 = 1e-6;
const ROUND_TRIP_SIGNALS: usize = 100;
const MONOTONE_CLIPS: usize = 500;
const MONOTONE_SNR: (f64, f64) = (0.0, 20.0);
const MONOTONE_TOL_DB: f64 = 0.5;
const BASELINE_GAP_DB: f64 = 1.0;
const FREEZE_STAGE_EPOCHS: usize = 3;
const SCHEDULE_LR: f64 = 1e-4;
const SCHEDULE_DECAYED_LR: f64 = 9e-5;
const SCHEDULE_DECAY_EPOCHS: usize = 5;
const SCHEDULE_PATIENCE: usize = 25;
const SNR_TOL_DB: f64 = 1e-6;

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

// ---------------------------------------------------------------------------
// 1. Parameter counts

fn fc_params(i: usize, o: usize) -> usize {
    i * o + o
}

fn gru_params(i: usize, h: usize) -> usize {
    3 * (i * h + h * h + 2 * h)
}

/// Counts from the layer wiring alone: FC, GRU, GRU, FC, FC, FC; split and
/// concat stages add an auxiliary layer everywhere but the last stage.
fn analytic_params(topology: Topology, d: &Dims) -> usize {
    let is_gru = [false, true, true, false, false, false];
    let layer = |gru: bool, i: usize, o: usize| if gru { gru_params(i, o) } else { fc_params(i, o) };
    match topology {
        Topology::Chain => (0..6)
            .map(|s| layer(is_gru[s], if s == 0 { d.bins } else { d.chain[s - 1] }, d.chain[s]))
            .sum(),
        Topology::Split | Topology::Concat => (0..6)
            .map(|s| {
                let joined = d.bins + d.aux;
                let main = layer(is_gru[s], if s == 0 { d.bins } else { joined }, d.bins);
                let aux_in = match (s, topology) {
                    (0, _) => d.bins,
                    (_, Topology::Split) => d.aux,
                    _ => joined,
                };
                main + if s == 5 { 0 } else { layer(is_gru[s], aux_in, d.aux) }
            })
            .sum(),
    }
}

fn three_sig_figs(x: usize) -> usize {
    let digits = (x as f64).log10().floor() as i32;
    let scale = 10f64.powi(digits - 2);
    ((x as f64 / scale).round() * scale) as usize
}

fn param_counts() -> Outcome {
    let mut found = Vec::new();
    for (variant, target) in PARAM_TARGETS {
        let model = build_model(variant, Profile::Full, 0).map_err(|e| e.to_string())?;
        let oracle = analytic_params(variant.topology(), &Dims::full());
        let n = model.num_params();
        ensure(oracle == target, || format!("oracle {oracle} != target {target} for {variant}"))?;
        ensure(n == target, || format!("{variant}: {n} parameters, expected {target}"))?;
        ensure(three_sig_figs(n) == three_sig_figs(target), || format!("{variant}: {n}"))?;
        found.push(format!("{variant} {n}"));
    }
    // Every variant of a topology has the same size.
    for v in Variant::ALL {
        let n = build_model(v, Profile::Full, 0).map_err(|e| e.to_string())?.num_params();
        let expected = analytic_params(v.topology(), &Dims::full());
        ensure(n == expected, || format!("{v}: {n} parameters, expected {expected}"))?;
    }
    Ok(found.join(", "))
}

// ---------------------------------------------------------------------------
// 2. MAC savings

fn mac_savings() -> Outcome {
    let model = build_model(Variant::Pretrain6Exits, Profile::Full, 0).map_err(|e| e.to_string())?;
    let costs = count_macs_per_exit(&model);
    let full = costs.last().ok_or("no exits")?.macs as f64;
    let exit1 = costs.iter().find(|c| c.exit == 1).ok_or("no exit 1")?.macs as f64;

    // Oracle: weight MACs of FC1 (257->400) and GRU1 (400->400) over those
    // of the whole chain.
    let oracle_exit1 = (257 * 400 + 3 * (400 * 400 + 400 * 400)) as f64;
    let oracle_full =
        (257 * 400 + 2 * 3 * (400 * 400 + 400 * 400) + 400 * 600 + 600 * 600 + 600 * 257) as f64;
    ensure((full - oracle_full).abs() <= 257.0 * 4.0, || format!("full model {full} MACs vs oracle {oracle_full}"))?;
    let share = exit1 / full;
    ensure((share - oracle_exit1 / oracle_full).abs() < 1e-3, || format!("share {share} vs oracle"))?;
    ensure((share - EXIT1_MAC_SHARE).abs() <= EXIT1_MAC_TOL, || {
        format!("exit 1 uses {:.2}% of the MACs", 100.0 * share)
    })?;
    Ok(format!(
        "exit 1 {exit1} / full {full} MACs per frame = {:.2}% ({:.1}% savings)",
        100.0 * share,
        100.0 * (1.0 - share)
    ))
}

// ---------------------------------------------------------------------------
// 3. Gradient suite

/// ||a - n|| / (||a|| + ||n||), with a floor so that all-zero gradients
/// compare by absolute error.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-6)
}

/// Smallest distance of a ReLU input to its kink that the checks accept;
/// closer instances are redrawn, since the one-sided slopes differ there.
const KINK_MARGIN: f64 = 1e-4;

fn min_abs<'a>(xs: impl IntoIterator<Item = &'a Array2<f64>>) -> f64 {
    xs.into_iter().flatten().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Central difference of `f` at every coordinate of `x`.
fn numeric_grad(x: &mut [f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + h;
            let up = f(x);
            x[k] = orig - h;
            let down = f(x);
            x[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn fc_instance(rng: &mut ChaCha8Rng) -> f64 {
    let act = [Activation::Relu, Activation::Sigmoid, Activation::Linear][rng.gen_range(0..3)];
    let (i, o, rows) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..6));
    let mut layer = FcLayer::<f64>::new("fc", i, o, act);
    layer.init(rng.gen());
    let mut x = random_matrix(rng, rows, i, 2.0);
    while act == Activation::Relu && min_abs([&layer.pre_activation(x.view()).unwrap()]) < KINK_MARGIN {
        x = random_matrix(rng, rows, i, 2.0);
    }
    let r = random_matrix(rng, rows, o, 1.0);
    let (_, tape) = layer.forward(x.view()).unwrap();
    let dx = layer.backward(&tape, r.view()).unwrap();

    let mut analytic: Vec<f64> = dx.iter().copied().collect();
    let mut numeric = {
        let mut xv: Vec<f64> = x.iter().copied().collect();
        numeric_grad(&mut xv, &mut |v| {
            let xm = Array2::from_shape_vec((rows, i), v.to_vec()).unwrap();
            (&layer.forward(xm.view()).unwrap().0 * &r).sum()
        })
    };
    for pi in 0..layer.params().len() {
        analytic.extend_from_slice(layer.params()[pi].grad);
        let mut probe = layer.clone();
        let mut values = probe.params()[pi].value.to_vec();
        numeric.extend(numeric_grad(&mut values, &mut |v| {
            probe.params_mut()[pi].value.copy_from_slice(v);
            (&probe.forward(x.view()).unwrap().0 * &r).sum()
        }));
    }
    rel_error(&analytic, &numeric)
}

fn gru_instance(rng: &mut ChaCha8Rng) -> f64 {
    let (i, h) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let (steps, batch) = (rng.gen_range(1..5), rng.gen_range(1..4));
    let rows = steps * batch;
    let mut layer = GruLayer::<f64>::new("gru", i, h);
    layer.init(rng.gen());
    let x = random_matrix(rng, rows, i, 2.0);
    let r = random_matrix(rng, rows, h, 1.0);
    let (_, tape) = layer.forward(x.view(), batch, None).unwrap();
    let dx = layer.backward(&tape, r.view(), true, true).unwrap().unwrap();

    let objective = |l: &GruLayer<f64>, xm: &Array2<f64>| (&l.forward(xm.view(), batch, None).unwrap().0 * &r).sum();
    let mut analytic: Vec<f64> = dx.iter().copied().collect();
    let mut numeric = {
        let mut xv: Vec<f64> = x.iter().copied().collect();
        numeric_grad(&mut xv, &mut |v| {
            objective(&layer, &Array2::from_shape_vec((rows, i), v.to_vec()).unwrap())
        })
    };
    for pi in 0..layer.params().len() {
        analytic.extend_from_slice(layer.params()[pi].grad);
        let mut probe = layer.clone();
        let mut values = probe.params()[pi].value.to_vec();
        numeric.extend(numeric_grad(&mut values, &mut |v| {
            probe.params_mut()[pi].value.copy_from_slice(v);
            objective(&probe, &x)
        }));
    }
    rel_error(&analytic, &numeric)
}

fn loss_instance(rng: &mut ChaCha8Rng) -> f64 {
    let (frames, bins) = (rng.gen_range(1..5), rng.gen_range(1..7));
    let cfg = LossConfig {
        alpha: rng.gen_range(0.0..1.0),
        compression: rng.gen_range(0.2..0.8),
        ..LossConfig::default()
    };
    // Magnitudes kept away from 0, where |x|^c is not differentiable.
    let sample = |rng: &mut ChaCha8Rng| {
        let m: f64 = rng.gen_range(0.05..3.0);
        let p: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Complex::from_polar(m, p)
    };
    let target = Array2::from_shape_fn((frames, bins), |_| sample(rng));
    let estimate = Array2::from_shape_fn((frames, bins), |_| sample(rng));
    let (_, grad) = compressed_spectral_loss(target.view(), estimate.view(), &cfg).unwrap();
    let analytic: Vec<f64> = grad.iter().flat_map(|g| [g.re, g.im]).collect();
    let mut flat: Vec<f64> = estimate.iter().flat_map(|e| [e.re, e.im]).collect();
    let numeric = numeric_grad(&mut flat, &mut |v| {
        let e = Array2::from_shape_fn((frames, bins), |(t, k)| {
            let j = 2 * (t * bins + k);
            Complex::new(v[j], v[j + 1])
        });
        compressed_spectral_loss(target.view(), e.view(), &cfg).unwrap().0
    });
    rel_error(&analytic, &numeric)
}

/// Whole-model check of every exit head (sigmoid FC exits on pre- or
/// post-ReLU activations, scaled GRU exits, the final sigmoid layer) and
/// of the split/concat routing, with random weights on every exit's mask.
fn exit_instance(rng: &mut ChaCha8Rng, variant: Variant) -> f64 {
    let bins = rng.gen_range(2..5);
    let mut chain = [0; 6];
    for w in chain.iter_mut().take(5) {
        *w = rng.gen_range(bins..bins + 4);
    }
    chain[5] = bins;
    let dims = Dims {
        bins,
        chain,
        aux: rng.gen_range(1..4),
    };
    let (steps, batch) = (rng.gen_range(1..4), rng.gen_range(1..3));
    let mut model = Model::<f64>::new(variant, dims, rng.gen()).unwrap();
    if rng.gen_bool(0.5) {
        model.set_fc_exit_source(FcExitSource::PostRelu);
    }
    let mut x = random_matrix(rng, steps * batch, bins, 3.0);
    while min_abs(model.forward_all_exits(x.view(), batch).unwrap().tape.fc_pre_activations()) < KINK_MARGIN {
        x = random_matrix(rng, steps * batch, bins, 3.0);
    }
    let weights: MaskSet<f64> = variant
        .exits()
        .iter()
        .map(|&e| (e, random_matrix(rng, steps * batch, bins, 1.0)))
        .collect();
    let objective = |m: &Model<f64>| {
        let pass = m.forward_all_exits(x.view(), batch).unwrap();
        weights.iter().map(|(e, w)| (&pass.masks[e] * w).sum()).sum::<f64>()
    };
    let pass = model.forward_all_exits(x.view(), batch).unwrap();
    model.zero_grad();
    model.backward(&pass.tape, &weights).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for pi in 0..model.params().len() {
        analytic.extend_from_slice(model.params()[pi].grad);
        let mut probe = model.clone();
        let mut values = probe.params()[pi].value.to_vec();
        numeric.extend(numeric_grad(&mut values, &mut |v| {
            probe.params_mut()[pi].value.copy_from_slice(v);
            objective(&probe)
        }));
    }
    rel_error(&analytic, &numeric)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut check = |name: String, errs: Vec<f64>| -> Result<(), String> {
        let max = errs.iter().cloned().fold(0.0, f64::max);
        ensure(errs.len() >= GRAD_INSTANCES, || format!("{name}: only {} instances", errs.len()))?;
        ensure(errs.iter().all(|e| e.is_finite() && *e < GRAD_REL_TOL), || {
            format!("{name}: max relative error {max:e}")
        })?;
        worst.push((name, max));
        Ok(())
    };
    check("fc".into(), (0..GRAD_INSTANCES).map(|_| fc_instance(&mut rng)).collect())?;
    check("gru".into(), (0..GRAD_INSTANCES).map(|_| gru_instance(&mut rng)).collect())?;
    check("loss".into(), (0..GRAD_INSTANCES).map(|_| loss_instance(&mut rng)).collect())?;
    for v in Variant::ALL {
        check(v.name().into(), (0..GRAD_INSTANCES).map(|_| exit_instance(&mut rng, v)).collect())?;
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok(format!(
        "{} groups x {GRAD_INSTANCES} instances, max relative error {max:.1e}",
        worst.len()
    ))
}

// ---------------------------------------------------------------------------
// 4. STFT round trip

fn stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..ROUND_TRIP_SIGNALS {
        let amp: f32 = rng.gen_range(0.01..1.0);
        let x: Vec<f32> = (0..16_000).map(|_| amp * rng.gen_range(-1.0f32..1.0)).collect();
        let signal = TimeSignal::new(x).map_err(|e| e.to_string())?;
        let y = istft(&stft(&signal).map_err(|e| e.to_string())?);
        // Interior: samples covered by two overlapping windows.
        let (a, b) = (256, y.len() - 256);
        let mse = signal.samples()[a..b]
            .iter()
            .zip(&y.samples()[a..b])
            .map(|(u, v)| (*u as f64 - *v as f64).powi(2))
            .sum::<f64>()
            / (b - a) as f64;
        worst = worst.max(mse.sqrt());
    }
    ensure(worst < ROUND_TRIP_RMS, || format!("worst interior RMS error {worst:e}"))?;
    Ok(format!("{ROUND_TRIP_SIGNALS} signals, worst interior RMS error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 5. Monotone exits

fn load_clips(manifest: &Manifest) -> Result<Vec<Clip>, String> {
    (0..manifest.records.len())
        .map(|i| manifest.clip(i, Path::new(".")).map_err(|e| e.to_string()))
        .collect()
}

fn dataset(clips: &[Clip], idx: &[usize]) -> Result<Dataset, String> {
    Dataset::from_pairs(idx.iter().map(|&i| (&clips[i].clean, &clips[i].noisy))).map_err(|e| e.to_string())
}

fn mean_si_sdr(model: &Model<f32>, clips: &[Clip]) -> Result<(f64, BTreeMap<usize, f64>), String> {
    let mut noisy = 0.0;
    let mut exits = BTreeMap::new();
    for c in clips {
        let s = score_clip(model, c).map_err(|e| e.to_string())?;
        noisy += s.noisy.si_sdr / clips.len() as f64;
        for (e, x) in s.exits {
            *exits.entry(e).or_insert(0.0) += x.si_sdr / clips.len() as f64;
        }
    }
    Ok((noisy, exits))
}

/// Protocol: a tiny baseline is trained for `E` epochs. The early-exit model
/// starts from it and trains jointly for `E` more; the reference baseline
/// trains the same `E` more epochs with the same settings and data order.
/// Both are scored on held-out clips.
fn monotone_exits() -> Outcome {
    const EPOCHS: usize = 15;
    const TEST_CLIPS: usize = 100;
    let err = |e: nsexit_core::Error| e.to_string();
    let cfg = TrainConfig {
        max_epochs: EPOCHS,
        ..TrainConfig::tiny()
    };
    let manifest = Manifest::generate(MONOTONE_CLIPS, MONOTONE_SNR, 1, cfg.clip_seconds, 0.1).map_err(err)?;
    let clips = load_clips(&manifest)?;
    let train = dataset(&clips, &manifest.indices(Split::Train))?;
    let val = dataset(&clips, &manifest.indices(Split::Val))?;
    let test_manifest = Manifest::generate(TEST_CLIPS, MONOTONE_SNR, 99, cfg.clip_seconds, 0.0).map_err(err)?;
    let test = load_clips(&test_manifest)?;

    let mut base = build_model(Variant::Baseline, Profile::Tiny, cfg.seed).map_err(err)?;
    let start = train_joint(&mut base, &train, &val, &cfg, None, &mut NoObserver).map_err(err)?.best;

    let mut early = build_model(Variant::Pretrain6Exits, Profile::Tiny, cfg.seed).map_err(err)?;
    let early = train_joint(&mut early, &train, &val, &cfg, Some(&start), &mut NoObserver).map_err(err)?.best;
    let mut reference = start.clone();
    let reference = train_joint(&mut reference, &train, &val, &cfg, None, &mut NoObserver).map_err(err)?.best;

    let (noisy, exits) = mean_si_sdr(&early, &test)?;
    let (_, base_exits) = mean_si_sdr(&reference, &test)?;
    let base5 = base_exits[&5];
    let gains: Vec<(usize, f64)> = exits.iter().map(|(&e, &s)| (e, s - noisy)).collect();
    let listing = gains.iter().map(|(e, g)| format!("{e}:{g:+.2}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "SI-SDRi dB [{listing}], baseline {:+.2}, exit 5 - baseline {:+.2}",
        base5 - noisy,
        exits[&5] - base5
    );
    ensure(gains.iter().all(|(_, g)| *g > 0.0), || format!("exit without improvement: {detail}"))?;
    ensure(gains.windows(2).all(|w| w[1].1 >= w[0].1 - MONOTONE_TOL_DB), || {
        format!("not monotone within {MONOTONE_TOL_DB} dB: {detail}")
    })?;
    ensure((exits[&5] - base5).abs() <= BASELINE_GAP_DB, || {
        format!("exit 5 more than {BASELINE_GAP_DB} dB from baseline: {detail}")
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 6. Layer-wise freeze integrity

fn tensor_hash(values: &[f32]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Hashes the tensors of every earlier stage when a stage starts and
/// re-checks them after every optimizer step.
#[derive(Default)]
struct FreezeAudit {
    stage: Option<usize>,
    expected: HashMap<String, [u8; 32]>,
    steps_checked: usize,
    tensors_checked: usize,
    violation: Option<String>,
}

impl FreezeAudit {
    fn earlier_layers(model: &Model<f32>, stage: usize) -> Vec<String> {
        let exits = model.variant().exits();
        let Some(prev) = exits.iter().copied().filter(|&e| e < stage).max() else {
            return Vec::new();
        };
        let mut copy = model.clone();
        let sub = slice_submodel(&mut copy, prev).expect("previous exit is valid");
        sub.layer_names()
    }
}

impl TrainObserver for FreezeAudit {
    fn on_stage_start(&mut self, stage: Option<usize>, model: &Model<f32>) -> nsexit_core::Result<()> {
        self.stage = stage;
        let layers = Self::earlier_layers(model, stage.unwrap_or(0));
        self.expected = model
            .params()
            .iter()
            .filter(|p| layers.iter().any(|l| p.name.split('.').next() == Some(l)))
            .map(|p| (p.name.to_string(), tensor_hash(p.value)))
            .collect();
        Ok(())
    }

    fn on_step(&mut self, _info: &StepInfo, model: &Model<f32>) -> nsexit_core::Result<()> {
        self.steps_checked += 1;
        for p in model.params() {
            if let Some(h) = self.expected.get(p.name) {
                self.tensors_checked += 1;
                if *h != tensor_hash(p.value) && self.violation.is_none() {
                    self.violation = Some(format!("{} changed during stage {:?}", p.name, self.stage));
                }
            }
        }
        Ok(())
    }
}

fn freeze_integrity() -> Outcome {
    let err = |e: nsexit_core::Error| e.to_string();
    let manifest = Manifest::generate(40, MONOTONE_SNR, 6, 1.0, 0.2).map_err(err)?;
    let clips = load_clips(&manifest)?;
    let train = dataset(&clips, &manifest.indices(Split::Train))?;
    let val = dataset(&clips, &manifest.indices(Split::Val))?;
    let cfg = TrainConfig {
        stage_epochs: FREEZE_STAGE_EPOCHS,
        ..TrainConfig::tiny()
    };
    let baseline = build_model(Variant::Baseline, Profile::Tiny, 6).map_err(err)?;
    let mut summary = Vec::new();
    for variant in [Variant::Pretrain6Exits, Variant::SplitLayers4Exits, Variant::ConcatLayers6Exits] {
        let mut model = build_model(variant, Profile::Tiny, 6).map_err(err)?;
        let mut audit = FreezeAudit::default();
        let base = variant.needs_baseline().then_some(&baseline);
        let out = train_layerwise(&mut model, &train, &val, &cfg, base, &mut audit).map_err(err)?;
        if let Some(v) = audit.violation {
            return Err(format!("{variant}: {v}"));
        }
        ensure(audit.steps_checked > 0 && audit.tensors_checked > 0, || format!("{variant}: nothing audited"))?;
        summary.push(format!(
            "{variant}: {} epochs, {} steps, {} tensor checks",
            out.report.epochs_executed(),
            audit.steps_checked,
            audit.tensors_checked
        ));
    }
    Ok(summary.join("; "))
}

// ---------------------------------------------------------------------------
// 7. Schedule and early stopping

fn schedule_conformance() -> Outcome {
    let decay = 0.9;
    // Five epochs without a new best after the first: one decay.
    let flat: Vec<f64> = vec![1.0; 1 + SCHEDULE_DECAY_EPOCHS];
    let (lr, stop) = lr_and_stop_update(&flat, SCHEDULE_LR, decay, SCHEDULE_DECAY_EPOCHS, SCHEDULE_PATIENCE);
    ensure((lr - SCHEDULE_DECAYED_LR).abs() < 1e-15 && !stop, || format!("after 5 flat epochs: lr {lr:e}, stop {stop}"))?;
    let (lr4, _) = lr_and_stop_update(&flat[..5], SCHEDULE_LR, decay, SCHEDULE_DECAY_EPOCHS, SCHEDULE_PATIENCE);
    ensure(lr4 == SCHEDULE_LR, || format!("decayed after 4 flat epochs: {lr4:e}"))?;

    let long: Vec<f64> = vec![1.0; 1 + SCHEDULE_PATIENCE];
    let (_, stop) = lr_and_stop_update(&long, SCHEDULE_LR, decay, SCHEDULE_DECAY_EPOCHS, SCHEDULE_PATIENCE);
    ensure(stop, || "no stop after 25 flat epochs".into())?;
    let (_, stop24) = lr_and_stop_update(&long[..SCHEDULE_PATIENCE], SCHEDULE_LR, decay, SCHEDULE_DECAY_EPOCHS, SCHEDULE_PATIENCE);
    ensure(!stop24, || "stopped after 24 flat epochs".into())?;

    let falling: Vec<f64> = (0..60).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let (lr, stop) = lr_and_stop_update(&falling, SCHEDULE_LR, decay, SCHEDULE_DECAY_EPOCHS, SCHEDULE_PATIENCE);
    ensure(lr == SCHEDULE_LR && !stop, || "improving history changed lr or stopped".into())?;

    // A new best resets the count.
    let mut reset = vec![1.0; 5];
    reset.push(0.5);
    reset.extend([0.6; 4]);
    let (lr, _) = lr_and_stop_update(&reset, SCHEDULE_LR, decay, SCHEDULE_DECAY_EPOCHS, SCHEDULE_PATIENCE);
    ensure(lr == SCHEDULE_LR, || format!("count not reset by a new best: {lr:e}"))?;
    Ok("1e-4 -> 9e-5 after 5 stagnant epochs, stop after 25".into())
}

// ---------------------------------------------------------------------------
// 8. Determinism

struct RunArtifacts {
    checkpoints: Vec<Vec<u8>>,
    wavs: Vec<Vec<u8>>,
}

fn end_to_end(seed: u64) -> Result<RunArtifacts, String> {
    let err = |e: nsexit_core::Error| e.to_string();
    let cfg = TrainConfig {
        seed,
        max_epochs: 3,
        stage_epochs: 1,
        ..TrainConfig::tiny()
    };
    let manifest = Manifest::generate(48, MONOTONE_SNR, seed, cfg.clip_seconds, 0.25).map_err(err)?;
    let clips = load_clips(&manifest)?;
    let train = dataset(&clips, &manifest.indices(Split::Train))?;
    let val = dataset(&clips, &manifest.indices(Split::Val))?;

    let mut base = build_model(Variant::Baseline, Profile::Tiny, seed).map_err(err)?;
    let base = train_joint(&mut base, &train, &val, &cfg, None, &mut NoObserver).map_err(err)?.best;
    let mut early = build_model(Variant::Pretrain6Exits, Profile::Tiny, seed).map_err(err)?;
    let early = train_joint(&mut early, &train, &val, &cfg, Some(&base), &mut NoObserver).map_err(err)?.best;
    let mut split = build_model(Variant::SplitLayers4Exits, Profile::Tiny, seed).map_err(err)?;
    let split = train_layerwise(&mut split, &train, &val, &cfg, None, &mut NoObserver).map_err(err)?.best;

    let mut checkpoints = Vec::new();
    let mut wavs = Vec::new();
    for m in [&base, &early, &split] {
        checkpoints.push(checkpoint_bytes(m, "determinism").map_err(err)?);
        for &e in m.variant().exits() {
            let y = enhance(m, &clips[0].noisy, Some(e)).map_err(err)?;
            wavs.push(wav_bytes(&y).map_err(err)?);
        }
    }
    Ok(RunArtifacts { checkpoints, wavs })
}

fn determinism() -> Outcome {
    let a = end_to_end(17)?;
    let b = end_to_end(17)?;
    ensure(a.checkpoints == b.checkpoints, || "checkpoints differ between runs".into())?;
    ensure(a.wavs == b.wavs, || "enhanced WAVs differ between runs".into())?;
    let c = end_to_end(18)?;
    ensure(a.checkpoints != c.checkpoints, || "a different seed gave the same checkpoints".into())?;
    Ok(format!(
        "{} checkpoints and {} WAVs bit-identical across runs",
        a.checkpoints.len(),
        a.wavs.len()
    ))
}

// ---------------------------------------------------------------------------
// 9. Mixing and masking identities

fn mixing_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let seconds = rng.gen_range(0.5..3.0);
        let snr = rng.gen_range(-10.0..40.0);
        let clean = synth_speech_like(rng.gen(), seconds).map_err(|e| e.to_string())?;
        let noise = synth_noise(rng.gen(), NoiseKind::ALL[i % 4], seconds).map_err(|e| e.to_string())?;
        let clip = mix_at_snr(&clean, &noise, snr).map_err(|e| e.to_string())?;
        // Oracle: energy ratio in f64 straight from the samples.
        let energy = |s: &TimeSignal| s.samples().iter().map(|&x| x as f64 * x as f64).sum::<f64>();
        let achieved = 10.0 * (energy(&clip.clean) / energy(&clip.noise)).log10();
        worst = worst.max((achieved - snr).abs());
        let sums = clip.clean.samples().iter().zip(clip.noise.samples()).map(|(s, v)| s + v);
        ensure(sums.eq(clip.noisy.samples().iter().copied()), || "noisy != clean + noise".into())?;
    }
    ensure(worst <= SNR_TOL_DB, || format!("SNR off by {worst:e} dB"))?;

    for seed in 0..20 {
        let clip = generate_clip(&nsexit_core::datagen::MixtureSpec::new(seed, 5.0, 1.0), NoiseKind::ALL[seed as usize % 4])
            .map_err(|e| e.to_string())?;
        let spec = stft(&clip.noisy).map_err(|e| e.to_string())?;
        let unit = Mask::constant(spec.num_frames(), 1.0).map_err(|e| e.to_string())?;
        let out = apply_mask(&spec, &unit).map_err(|e| e.to_string())?;
        ensure(out.frames() == spec.frames(), || "unit mask changed the spectrum".into())?;
    }
    Ok(format!("200 mixtures within {worst:.1e} dB; unit mask exact on 20 spectra"))
}

// ---------------------------------------------------------------------------

const CRITERIA: &[Criterion] = &[
    Criterion { id: "C1", title: "parameter counts", run: param_counts },
    Criterion { id: "C2", title: "MAC savings at exit 1", run: mac_savings },
    Criterion { id: "C3", title: "gradient suite", run: gradient_suite },
    Criterion { id: "C4", title: "STFT round trip", run: stft_round_trip },
    Criterion { id: "C5", title: "monotone exit quality", run: monotone_exits },
    Criterion { id: "C6", title: "layer-wise freeze integrity", run: freeze_integrity },
    Criterion { id: "C7", title: "schedule and early stopping", run: schedule_conformance },
    Criterion { id: "C8", title: "determinism", run: determinism },
    Criterion { id: "C9", title: "mixing and masking identities", run: mixing_identities },
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let filters: Vec<&str> = args.iter().filter(|a| !a.starts_with('-')).map(String::as_str).collect();
    if args.iter().any(|a| a == "--list") {
        for c in CRITERIA {
            println!("{} {}: test", c.id, c.title);
        }
        return ExitCode::SUCCESS;
    }
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.id.contains(f) || c.title.contains(f)))
        .collect();

    let mut failed = 0;
    for c in &selected {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {} ({secs:.1} s): {detail}", c.id, c.title),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {} ({secs:.1} s): {detail}", c.id, c.title);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
