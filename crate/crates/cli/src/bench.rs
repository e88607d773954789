//! Throughput of the histogram→depth chain and of network inference.
//! Frames are decoded up front so disk I/O is excluded.

use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use rayon::prelude::*;
use spadseg::datakit::read_dataset;
use spadseg::histproc::{assemble_input, InputKind, NetworkInput};
use spadseg::neuralseg::{build_unet, load_checkpoint, predict, UnetSpec};

use crate::config::{num, require, write_resolved, BenchConfig};
use crate::error::{with_path, CliError, CliResult, IoContext};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub fps: f64,
    pub mean_ms: f64,
    pub p99_ms: f64,
}

/// Times `body(i)` for `n` iterations after `warmup` untimed ones.
fn time_each(warmup: usize, n: usize, mut body: impl FnMut(usize)) -> Timing {
    for i in 0..warmup {
        body(i);
    }
    let mut lat: Vec<f64> = (0..n)
        .map(|i| {
            let t = Instant::now();
            body(warmup + i);
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    lat.sort_by(f64::total_cmp);
    let mean = lat.iter().sum::<f64>() / n as f64;
    let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
    Timing {
        fps: 1e3 / mean,
        mean_ms: mean,
        p99_ms: lat[rank - 1],
    }
}

fn spread(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

pub fn run(cfg: &BenchConfig) -> CliResult<String> {
    let out = require(&cfg.out, "--out")?;
    let data = require(&cfg.data, "--data")?;
    if cfg.frames == 0 || cfg.repeats == 0 {
        return Err(CliError::Usage("--frames and --repeats must be > 0".into()));
    }
    write_resolved(out, cfg)?;
    let ds = with_path(read_dataset(data), data)?;
    if ds.len() < cfg.warmup.max(1) {
        return Err(CliError::Core(spadseg::Error::SampleTooSmall(format!(
            "benchmark needs at least {} frames for warmup, dataset has {}",
            cfg.warmup.max(1),
            ds.len()
        ))));
    }
    let frames = ds.frames()?;
    let calib = ds.calibration()?;
    let n = frames.len();
    let mut report = String::new();
    let mut summary = String::new();
    let _ = writeln!(
        report,
        "{} timed frames per measurement after {} warmup, {} repeats, {} worker thread(s)",
        cfg.frames,
        cfg.warmup,
        cfg.repeats,
        rayon::current_num_threads()
    );

    // histogram → skew-corrected, normalized depth
    let chain = |i: usize| {
        let f = &frames[i % n];
        assemble_input(InputKind::Depth, Some(&f.hist), None, calib.as_ref(), &cfg.com).expect("depth chain")
    };
    let mut single = Vec::new();
    let mut multi = Vec::new();
    let mut last = None;
    for _ in 0..cfg.repeats {
        let t = time_each(cfg.warmup, cfg.frames, |i| {
            std::hint::black_box(chain(i));
        });
        single.push(t.fps);
        last = Some(t);
        let start = Instant::now();
        (0..cfg.frames).into_par_iter().for_each(|i| {
            std::hint::black_box(chain(i));
        });
        multi.push(cfg.frames as f64 / start.elapsed().as_secs_f64());
    }
    let t = last.expect("repeats > 0");
    let (sm, ss) = spread(&single);
    let (mm, ms) = spread(&multi);
    let _ = writeln!(
        report,
        "depth chain      single-thread {sm:>9.1} fps (sd {ss:.1})  mean {:.3} ms  p99 {:.3} ms  multi-thread {mm:>9.1} fps (sd {ms:.1})",
        t.mean_ms, t.p99_ms
    );
    let _ = writeln!(summary, "depth_chain_fps = {}", num(sm));
    let _ = writeln!(summary, "depth_chain_fps_sd = {}", num(ss));
    let _ = writeln!(summary, "depth_chain_mean_ms = {}", num(t.mean_ms));
    let _ = writeln!(summary, "depth_chain_p99_ms = {}", num(t.p99_ms));
    let _ = writeln!(summary, "depth_chain_fps_multi = {}", num(mm));

    let ck = match &cfg.checkpoint {
        Some(p) => Some(with_path(load_checkpoint(p), p)?),
        None => None,
    };
    for &kind in &cfg.kinds {
        let model = match &ck {
            Some(c) if c.kind == Some(kind) => c.model.clone(),
            _ => build_unet(UnetSpec::with_inputs(kind.channels()), 0)?,
        };
        let inputs: Vec<NetworkInput> = frames
            .par_iter()
            .map(|f| assemble_input(kind, Some(&f.hist), Some(&f.spc), calib.as_ref(), &cfg.com))
            .collect::<spadseg::Result<_>>()?;
        let warm = cfg.warmup.min(cfg.net_frames.max(1));
        let mut fps = Vec::new();
        let mut multi = Vec::new();
        let mut last = None;
        for _ in 0..cfg.repeats {
            let t = time_each(warm, cfg.net_frames.max(1), |i| {
                std::hint::black_box(predict(&model, &inputs[i % n]).expect("inference"));
            });
            fps.push(t.fps);
            last = Some(t);
            let start = Instant::now();
            (0..cfg.net_frames.max(1)).into_par_iter().for_each(|i| {
                std::hint::black_box(predict(&model, &inputs[i % n]).expect("inference"));
            });
            multi.push(cfg.net_frames.max(1) as f64 / start.elapsed().as_secs_f64());
        }
        let t = last.expect("repeats > 0");
        let (m, s) = spread(&fps);
        let (mm, _) = spread(&multi);
        let _ = writeln!(
            report,
            "inference {:<7} single-thread {m:>9.1} fps (sd {s:.1})  mean {:.3} ms  p99 {:.3} ms  multi-thread {mm:>9.1} fps",
            kind.name(),
            t.mean_ms,
            t.p99_ms
        );
        let _ = writeln!(summary, "{}_inference_fps = {}", kind.name(), num(m));
        let _ = writeln!(summary, "{}_inference_fps_sd = {}", kind.name(), num(s));
        let _ = writeln!(summary, "{}_inference_p99_ms = {}", kind.name(), num(t.p99_ms));
        let _ = writeln!(summary, "{}_inference_fps_multi = {}", kind.name(), num(mm));
    }
    let path = out.join("bench.toml");
    fs::write(&path, summary).at(&path)?;
    let path = out.join("bench.txt");
    fs::write(&path, &report).at(&path)?;
    Ok(report)
}
