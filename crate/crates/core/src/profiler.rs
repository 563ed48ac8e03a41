//! Parameter, MAC and FLOP accounting per exit, and per-frame latency.
//!
//! All per-second figures assume 63 frames per second of audio.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{Layer, Model, Variant, NUM_STAGES};
use crate::error::{Error, Result};
use crate::nn::Real;

pub const FRAMES_PER_SECOND: usize = 63;

/// Per-frame cost of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub stage: usize,
    pub aux: bool,
    pub params: usize,
    pub macs: usize,
    pub flops: usize,
}

/// FLOPs besides the 2 per MAC: bias adds and 1 per activation output; for
/// GRUs also the gate arithmetic (r ⊙ ·, the two gate sums per gate and the
/// state interpolation).
fn extra_flops<F: Real>(layer: &Layer<F>) -> usize {
    let h = layer.out_dim();
    match layer {
        Layer::Fc(_) => 2 * h,
        Layer::Gru(_) => 6 * h + 3 * h + 3 * h + h + 4 * h,
    }
}

pub fn layer_costs<F: Real>(model: &Model<F>) -> Vec<LayerCost> {
    let mut out = Vec::new();
    for (i, st) in model.stages().iter().enumerate() {
        for (layer, aux) in std::iter::once((&st.main, false)).chain(st.aux.as_ref().map(|a| (a, true))) {
            let macs = layer.macs_per_frame();
            out.push(LayerCost {
                name: layer.name().to_string(),
                stage: i,
                aux,
                params: layer.num_params(),
                macs,
                flops: 2 * macs + extra_flops(layer),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

/// Enumerates every parameter tensor.
pub fn count_params<F: Real>(model: &Model<F>) -> ParamCount {
    let per_layer: Vec<(String, usize)> = model
        .layers()
        .map(|l| (l.name().to_string(), l.params().iter().map(|p| p.value.len()).sum()))
        .collect();
    let total = per_layer.iter().map(|(_, n)| n).sum();
    ParamCount { per_layer, total }
}

/// Cost of producing the mask of one exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitCost {
    pub exit: usize,
    /// Layers of stage `exit` itself (main and auxiliary).
    pub stage_params: usize,
    pub stage_macs: usize,
    /// Everything computed to reach the exit: main layers of stages
    /// `<= exit`, auxiliary layers of stages `< exit`.
    pub params: usize,
    pub macs: usize,
    /// Includes the mask head of this exit.
    pub flops: usize,
}

impl ExitCost {
    pub fn macs_per_second(&self) -> usize {
        self.macs * FRAMES_PER_SECOND
    }

    pub fn flops_per_second(&self) -> usize {
        self.flops * FRAMES_PER_SECOND
    }
}

fn head_flops(stage: usize, bins: usize) -> usize {
    match stage {
        s if s == NUM_STAGES - 1 => 0,
        1 | 2 => 2 * bins,
        _ => bins,
    }
}

/// Cumulative per-frame cost at every exit stage `0..NUM_STAGES`,
/// regardless of which exits the variant exposes.
pub fn stage_exit_costs<F: Real>(model: &Model<F>) -> Vec<ExitCost> {
    let costs = layer_costs(model);
    (0..NUM_STAGES)
        .map(|i| {
            let used = costs.iter().filter(|c| c.stage < i || (c.stage == i && !c.aux));
            let here = costs.iter().filter(|c| c.stage == i);
            ExitCost {
                exit: i,
                stage_params: here.clone().map(|c| c.params).sum(),
                stage_macs: here.map(|c| c.macs).sum(),
                params: used.clone().map(|c| c.params).sum(),
                macs: used.clone().map(|c| c.macs).sum(),
                flops: used.map(|c| c.flops).sum::<usize>() + head_flops(i, model.dims().bins),
            }
        })
        .collect()
}

/// Cumulative cost at each exit of the variant.
pub fn count_macs_per_exit<F: Real>(model: &Model<F>) -> Vec<ExitCost> {
    let all = stage_exit_costs(model);
    model.variant().exits().iter().map(|&e| all[e]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub exit: usize,
    pub ms_per_frame: f64,
}

impl Latency {
    pub fn ms_per_second(&self) -> f64 {
        self.ms_per_frame * FRAMES_PER_SECOND as f64
    }
}

/// Mean single-frame streaming latency over `frames` calls, after a
/// warm-up. The block of `frames` calls is repeated `repeats` times and the
/// lowest mean is reported, which damps scheduler noise.
pub fn time_inference(model: &Model<f32>, exit: usize, frames: usize, repeats: usize) -> Result<Latency> {
    model.variant().check_exit(exit)?;
    if frames == 0 || repeats == 0 {
        return Err(Error::InvalidArgument("frames and repeats must be positive".into()));
    }
    let bins = model.dims().bins;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs: Vec<Array1<f32>> = (0..frames.min(64))
        .map(|_| Array1::from_shape_fn(bins, |_| rng.gen_range(-10.0..5.0)))
        .collect();
    let mut state = model.stream_state();
    for x in inputs.iter().cycle().take(frames.min(100)) {
        std::hint::black_box(model.step_to_exit(&mut state, x.view(), exit)?);
    }
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let mut state = model.stream_state();
        let start = Instant::now();
        for x in inputs.iter().cycle().take(frames) {
            std::hint::black_box(model.step_to_exit(&mut state, x.view(), exit)?);
        }
        best = best.min(start.elapsed().as_secs_f64() * 1e3 / frames as f64);
    }
    Ok(Latency {
        exit,
        ms_per_frame: best,
    })
}

/// Where timings were taken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvInfo {
    pub cpu: String,
    pub governor: String,
    pub threads: usize,
}

impl EnvInfo {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| std::env::consts::ARCH.to_string());
        let governor = std::fs::read_to_string("/sys/devices/system/cpu/cpu0/cpufreq/scaling_governor")
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|_| "unknown".into());
        Self {
            cpu,
            governor,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub cost: ExitCost,
    pub latency: Option<Latency>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub variant: Variant,
    pub total_params: usize,
    pub env: Option<EnvInfo>,
    pub rows: Vec<ComplexityRow>,
}

impl ComplexityReport {
    /// Analytic counts only.
    pub fn analytic<F: Real>(model: &Model<F>) -> Self {
        Self {
            variant: model.variant(),
            total_params: count_params(model).total,
            env: None,
            rows: count_macs_per_exit(model)
                .into_iter()
                .map(|cost| ComplexityRow { cost, latency: None })
                .collect(),
        }
    }

    /// Counts plus measured latency per exit.
    pub fn measured(model: &Model<f32>, frames: usize, repeats: usize) -> Result<Self> {
        let mut r = Self::analytic(model);
        for row in &mut r.rows {
            row.latency = Some(time_inference(model, row.cost.exit, frames, repeats)?);
        }
        r.env = Some(EnvInfo::detect());
        Ok(r)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "variant",
            "exit",
            "stage_params",
            "cumulative_params",
            "stage_macs_per_frame",
            "macs_per_frame",
            "mmacs_per_second",
            "mflops_per_second",
            "latency_ms_per_frame",
            "latency_ms_per_second",
            "cpu",
            "governor",
        ])?;
        let (cpu, gov) = self
            .env
            .as_ref()
            .map_or((String::new(), String::new()), |e| (e.cpu.clone(), e.governor.clone()));
        for r in &self.rows {
            let c = &r.cost;
            let lat = |f: fn(&Latency) -> f64| r.latency.as_ref().map_or(String::new(), |l| format!("{:.6}", f(l)));
            w.write_record([
                self.variant.name().to_string(),
                c.exit.to_string(),
                c.stage_params.to_string(),
                c.params.to_string(),
                c.stage_macs.to_string(),
                c.macs.to_string(),
                format!("{:.4}", c.macs_per_second() as f64 / 1e6),
                format!("{:.4}", c.flops_per_second() as f64 / 1e6),
                lat(|l| l.ms_per_frame),
                lat(Latency::ms_per_second),
                cpu.clone(),
                gov.clone(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let full = self.rows.last().map_or(1, |r| r.cost.macs.max(1));
        let mut s = format!(
            "{} — {} parameters ({:.2} M)\n",
            self.variant,
            self.total_params,
            self.total_params as f64 / 1e6
        );
        if let Some(e) = &self.env {
            writeln!(s, "cpu: {}, governor: {}, threads: {}", e.cpu, e.governor, e.threads).unwrap();
        }
        writeln!(
            s,
            "{:>4} {:>12} {:>12} {:>10} {:>10} {:>8} {:>12}",
            "exit", "params", "MMAC/s", "MFLOP/s", "% MACs", "savings", "ms/s"
        )
        .unwrap();
        for r in &self.rows {
            let c = &r.cost;
            let pct = 100.0 * c.macs as f64 / full as f64;
            let lat = r.latency.map_or("-".to_string(), |l| format!("{:.3}", l.ms_per_second()));
            writeln!(
                s,
                "{:>4} {:>12} {:>12.2} {:>10.2} {:>9.1}% {:>7.1}% {:>12}",
                c.exit,
                c.params,
                c.macs_per_second() as f64 / 1e6,
                c.flops_per_second() as f64 / 1e6,
                pct,
                100.0 - pct,
                lat
            )
            .unwrap();
        }
        s
    }
}
