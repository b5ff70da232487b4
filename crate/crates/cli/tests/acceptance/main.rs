//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

#[path = "../../../core/tests/common/mod.rs"]
mod reference;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cbcnas::cost::{co2_estimate, CostModel, LatencyTable, CO2_LBS_PER_GPU_HOUR};
use cbcnas::data::{split, synth_classification, SynthConfig};
use cbcnas::search::{
    generate_mcd_sample, generate_scd_samples, isolation_violations, max_mcd_reduction,
    max_scd_reduction, reduction_schedule, run_search, train_supernetwork, LogRow, Optimizer,
    SearchConfig, TrainConfig, Trajectory,
};
use cbcnas::supernet::{
    bypass_channel_map, cbc_output_channels, extract_subnetwork, sample_width_assignments,
    slice_conv_weight, ChannelSource, LayerChoice, Mode, NetworkSpec, SubNetChoice, SuperNetwork,
    TrainPlan,
};
use cbcnas::tensor::tape::{Gradients, Tape};
use cbcnas::tensor::Tensor;
use cbcnas::{Error, ResourceKind};
use cbcnas_cli::{write_search_log, DiscoveredMetrics, SearchMetrics, SupernetMetrics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// 1. Channel-level bypass against a step-by-step simulation.

/// Start from `T` filters and remove them from the back one at a time. A
/// removed filter `i` is replaced by input channel `i` when that exists.
fn simulate_bypass(c: usize, t: usize, m: usize) -> Option<Vec<ChannelSource>> {
    if c == 0 || t == 0 || m > t {
        return None;
    }
    let mut slots: Vec<Option<ChannelSource>> =
        (0..t).map(|i| Some(ChannelSource::Filter(i))).collect();
    for removed in (m..t).rev() {
        slots[removed] = if removed < c {
            Some(ChannelSource::Input(removed))
        } else {
            None
        };
    }
    Some(slots.into_iter().flatten().collect())
}

fn criterion_1() -> Outcome {
    let mut valid = 0;
    let mut rejected = 0;
    for c in 0..=8 {
        for t in 0..=8 {
            for m in 0..=t {
                match simulate_bypass(c, t, m) {
                    Some(map) => {
                        let z = ok(cbc_output_channels(c, t, m))?;
                        ensure!(
                            z == map.len(),
                            "Z({c},{t},{m}) = {z}, simulation gives {}",
                            map.len()
                        );
                        ensure!(
                            z == c.min(t).max(m),
                            "Z({c},{t},{m}) = {z} disagrees with max(min(C,T),M)"
                        );
                        ensure!(
                            ok(bypass_channel_map(c, t, m))? == map,
                            "channel map differs at ({c},{t},{m})"
                        );
                        valid += 1;
                    }
                    None => {
                        ensure!(
                            matches!(cbc_output_channels(c, t, m), Err(Error::Domain(_)))
                                && matches!(bypass_channel_map(c, t, m), Err(Error::Domain(_))),
                            "degenerate ({c},{t},{m}) accepted"
                        );
                        rejected += 1;
                    }
                }
            }
        }
    }
    ensure!(
        ok(cbc_output_channels(4, 2, 2))? == 2,
        "worked example Z(4,2,2) != 2"
    );
    ensure!(
        valid == 352 && rejected == 53,
        "covered {valid} valid and {rejected} degenerate cases"
    );
    Ok(format!(
        "{} cases ({valid} exact matches, {rejected} degenerate rejected)",
        valid + rejected
    ))
}

// 2. Removing a layer equals rebuilding the network without it.

fn criterion_2() -> Outcome {
    let triples = [(4, 3, 1), (4, 5, 1), (4, 3, 1)];
    let spec = NetworkSpec::chain(3, 6, 6, 5, &triples);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = ok(SuperNetwork::new(spec.clone(), &mut rng))?;
    for i in 0..spec.len() {
        let b = net.layer_params(i).bias;
        for v in net.params_mut().get_mut(b).data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    let images = Tensor::randn(&[100, 3, 6, 6], 1.0, &mut rng);
    let mut worst = 0.0f32;
    for removed in 0..spec.len() {
        let kept: Vec<usize> = (0..spec.len()).filter(|&i| i != removed).collect();
        let rebuilt_spec = NetworkSpec::chain(
            3,
            6,
            6,
            5,
            &kept.iter().map(|&i| triples[i]).collect::<Vec<_>>(),
        );
        let mut rebuilt = ok(SuperNetwork::zeros(rebuilt_spec.clone()))?;
        for (j, &i) in kept.iter().enumerate() {
            let (src, dst) = (net.layer_params(i), rebuilt.layer_params(j));
            let l = &rebuilt_spec.layers[j];
            let w = ok(slice_conv_weight(
                net.params().get(src.weight),
                l.filters,
                l.in_channels,
                l.max_kernel,
            ))?;
            *rebuilt.params_mut().get_mut(dst.weight) = w;
            *rebuilt.params_mut().get_mut(dst.bias) = net.params().get(src.bias).clone();
        }
        let (src, dst) = (net.head_params(), rebuilt.head_params());
        *rebuilt.params_mut().get_mut(dst.weight) = net.params().get(src.weight).clone();
        *rebuilt.params_mut().get_mut(dst.bias) = net.params().get(src.bias).clone();

        let mut choice = spec.full_choice();
        choice.set(
            removed,
            LayerChoice::new(0, spec.layers[removed].max_kernel),
        );
        let expected =
            ok(ok(extract_subnetwork(&rebuilt, &rebuilt_spec.full_choice()))?.logits(&images))?;
        let sliced = ok(ok(extract_subnetwork(&net, &choice))?.logits(&images))?;
        let mut tape = Tape::new();
        let x = tape.leaf(images.clone());
        let out = ok(net.forward_masked(&mut tape, x, &TrainPlan::uniform(&choice, 100)))?;
        let masked = tape.value(out).clone();
        for got in [&sliced, &masked] {
            ensure!(got.shape() == expected.shape(), "logit shapes differ");
            let d = got.max_abs_diff(&expected);
            ensure!(d <= 1e-6, "removing layer {removed}: max |diff| {d:e}");
            worst = worst.max(d);
        }
    }
    Ok(format!(
        "3 removals x 100 inputs, sliced and masked paths, max |diff| {worst:.1e}"
    ))
}

// 3. Training-mode masks equal evaluation-mode slices at every grid point.

fn criterion_3() -> Outcome {
    let spec = NetworkSpec::chain(
        3,
        8,
        8,
        4,
        &[
            (8, 3, 1),
            (6, 5, 1),
            (12, 3, 2),
            (12, 5, 1),
            (8, 3, 1),
            (10, 3, 1),
        ],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = ok(SuperNetwork::new(spec.clone(), &mut rng))?;
    let mut extent = (spec.height, spec.width);
    let mut points = 0;
    for (i, l) in spec.layers.iter().enumerate() {
        let input = Tensor::randn(&[2, l.in_channels, extent.0, extent.1], 1.0, &mut rng);
        for &k in &l.kernel_grid {
            for &m in &l.width_grid {
                let train = ok(net.forward_with_cbc(i, &input, m, k, Mode::Training))?;
                let eval = ok(net.forward_with_cbc(i, &input, m, k, Mode::Evaluation))?;
                // Downsampling layers have nothing to bypass: Z = M there.
                let z = ok(l.output_channels(l.in_channels, m))?;
                if l.stride == 1 {
                    ensure!(
                        z == ok(cbc_output_channels(l.in_channels, l.filters, m))?,
                        "layer {i}: Z"
                    );
                } else {
                    ensure!(z == m, "layer {i}: strided Z");
                }
                let plane = train.dim(2) * train.dim(3);
                ensure!(
                    train.dim(1) == l.filters && eval.dim(1) == z,
                    "layer {i} ({m},{k}): channel counts"
                );
                for n in 0..2 {
                    let t = &train.data()[n * l.filters * plane..(n + 1) * l.filters * plane];
                    let e = &eval.data()[n * z * plane..(n + 1) * z * plane];
                    for (a, b) in t[..z * plane].iter().zip(e) {
                        ensure!(
                            (a - b).abs() <= 1e-5 * a.abs().max(b.abs()),
                            "layer {i} ({m},{k}): {a} vs {b}"
                        );
                    }
                    ensure!(
                        t[z * plane..].iter().all(|&v| v == 0.0),
                        "layer {i} ({m},{k}): channels past Z not zero"
                    );
                }
                points += 1;
            }
        }
        extent = (
            train_extent(extent.0, l.stride),
            train_extent(extent.1, l.stride),
        );
    }
    Ok(format!("{points} (M, k) grid points over 6 layers"))
}

fn train_extent(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

// 4. Finite differences on every parameter, and gradient isolation.

fn criterion_4() -> Outcome {
    let spec = NetworkSpec::chain(3, 5, 5, 3, &[(4, 3, 1), (6, 5, 2), (6, 3, 1)]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = ok(SuperNetwork::new(spec.clone(), &mut rng))?;
    for i in 0..spec.len() {
        let b = net.layer_params(i).bias;
        for v in net.params_mut().get_mut(b).data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let images = Tensor::randn(&[4, 3, 5, 5], 1.0, &mut rng);
    let labels = [0, 2, 1, 2];
    let plan = TrainPlan {
        widths: vec![vec![4, 0, 2, 3], vec![2, 6, 4, 1], vec![0, 3, 6, 1]],
        kernels: vec![3, 5, 3],
    };
    let tape_grads = |plan: &TrainPlan| -> Result<Gradients, String> {
        let mut tape = Tape::new();
        let x = tape.leaf(images.clone());
        let logits = ok(net.forward_masked(&mut tape, x, plan))?;
        let l = ok(tape.softmax_cross_entropy(logits, &labels))?;
        let mut g = Gradients::zeros_like(net.params());
        ok(tape.backward(l, &mut g))?;
        Ok(g)
    };
    let grads = tape_grads(&plan)?;
    let mut analytic = Vec::new();
    for i in 0..spec.len() {
        let lp = net.layer_params(i);
        analytic.extend(grads.get(lp.weight).data().iter().map(|&v| v as f64));
        analytic.extend(grads.get(lp.bias).data().iter().map(|&v| v as f64));
    }
    let h = net.head_params();
    analytic.extend(grads.get(h.weight).data().iter().map(|&v| v as f64));
    analytic.extend(grads.get(h.bias).data().iter().map(|&v| v as f64));

    let base = reference::RefParams::from_supernet(&net);
    let eval = |p: &reference::RefParams| {
        reference::loss(&reference::forward(&spec, p, &images, &plan), &labels)
    };
    let step = 1e-3;
    let l0 = eval(&base);
    let (mut checked, mut kinks, mut worst) = (0, 0, 0.0f64);
    for (i, &an) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        *plus.scalars_mut()[i] += step;
        let mut minus = base.clone();
        *minus.scalars_mut()[i] -= step;
        let (lp, lm) = (eval(&plus), eval(&minus));
        // A ReLU switching inside the stencil leaves the loss without a
        // derivative there; one-sided slopes disagree at first order.
        let (fwd, bwd) = ((lp - l0) / step, (l0 - lm) / step);
        if (fwd - bwd).abs() > 0.05 * fwd.abs().max(bwd.abs()).max(1e-2) {
            kinks += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * step);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
        ensure!(
            rel < 1e-3,
            "parameter {i}: finite difference {fd:e}, tape {an:e}, rel {rel:e}"
        );
        worst = worst.max(rel);
        checked += 1;
    }
    ensure!(
        kinks * 20 < analytic.len(),
        "{kinks} of {} parameters hit a ReLU kink",
        analytic.len()
    );
    ensure!(
        isolation_violations(&net, &plan, &grads).is_empty(),
        "isolation violated"
    );

    let narrow = TrainPlan {
        widths: vec![vec![4, 0, 2, 3], vec![1, 2, 2, 1], vec![3, 3, 1, 0]],
        kernels: vec![3, 3, 3],
    };
    let grads = tape_grads(&narrow)?;
    ensure!(
        isolation_violations(&net, &narrow, &grads).is_empty(),
        "isolation violated (narrow)"
    );
    for (layer, m) in [(1usize, 2usize), (2, 3)] {
        let lp = net.layer_params(layer);
        let per_filter = grads.get(lp.weight).len() / spec.layers[layer].filters;
        ensure!(
            grads.get(lp.weight).data()[m * per_filter..]
                .iter()
                .all(|&g| g == 0.0)
                && grads.get(lp.bias).data()[m..].iter().all(|&g| g == 0.0),
            "layer {layer}: filters past batch max {m} got gradient"
        );
    }
    Ok(format!(
        "{checked} of {} parameters checked at step 1e-3 (max rel {worst:.1e}, {kinks} at kinks); isolation exact",
        analytic.len()
    ))
}

// 5. Width sampling.

fn criterion_5() -> Outcome {
    let spec = NetworkSpec::chain(3, 8, 8, 4, &[(8, 3, 1), (16, 5, 2), (10, 3, 1)]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for b in 0..1000 {
        let batch = 1 + b % 64;
        let plan = TrainPlan::sample(&spec, batch, &mut rng);
        for (i, l) in spec.layers.iter().enumerate() {
            let direct = sample_width_assignments(batch, &l.width_grid, &mut rng);
            for widths in [&plan.widths[i], &direct] {
                ensure!(widths.len() == batch, "batch {b}: wrong assignment length");
                let counts: Vec<usize> = l
                    .width_grid
                    .iter()
                    .map(|w| widths.iter().filter(|&&x| x == *w).count())
                    .collect();
                ensure!(
                    counts.iter().sum::<usize>() == batch,
                    "batch {b}: width outside the grid"
                );
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                ensure!(hi - lo <= 1, "batch {b} layer {i}: counts {counts:?}");
            }
        }
    }
    Ok("1000 batches x 3 layers, per-width counts differ by at most 1".into())
}

// 6. Reduction schedule.

fn criterion_6() -> Outcome {
    let cfg = SearchConfig {
        samples_per_iteration: 1,
        layers_per_sample: 1,
        init_reduction: 0.03,
        decay: 0.98,
        target_resource: 1.0,
        metric: ResourceKind::Latency,
        seed: 0,
        optimizer: Optimizer::Mcd,
        max_attempts: 1,
        max_iterations: 1,
    };
    let initial = 51.7;
    let r0 = 0.03 * initial;
    let mut expected = r0;
    let mut worst = 0.0f64;
    for i in 0..=100 {
        let got = reduction_schedule(initial, &cfg, i);
        let rel = (got - expected).abs() / expected;
        ensure!(rel <= 1e-12, "iteration {i}: {got} vs {expected}");
        worst = worst.max(rel);
        expected *= 0.98;
    }
    Ok(format!("i = 0..=100, max rel error {worst:.1e}"))
}

// 7. Search contract.

struct ToySearch {
    json: String,
    log_bytes: Vec<u8>,
    trajectory: Trajectory,
    config: SearchConfig,
    rows: Vec<LogRow>,
}

fn toy_search(seed: u64, dir: &Path) -> Result<ToySearch, String> {
    let spec = NetworkSpec::chain(
        3,
        8,
        8,
        4,
        &[
            (8, 3, 1),
            (8, 5, 1),
            (16, 3, 2),
            (16, 3, 1),
            (16, 5, 1),
            (16, 3, 1),
        ],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = ok(SuperNetwork::new(spec.clone(), &mut rng))?;
    let data = ok(synth_classification(&SynthConfig {
        classes: 4,
        per_class: 60,
        channels: 3,
        height: 8,
        width: 8,
        noise: 0.5,
        seed: 7,
    }))?;
    let (train, holdout) = ok(split(&data, 0.25, 7))?;
    // A briefly trained super-network, so that samples differ in accuracy.
    let train_cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        learning_rate: 0.05,
        momentum: 0.9,
        weight_decay: 0.0,
        cosine: false,
    };
    ok(train_supernetwork(&mut net, &train, &train_cfg, &mut rng))?;
    let cost = CostModel::Latency(LatencyTable::synthetic(&spec, 1e-5, 0.002));
    let initial = ok(cost.total(&spec, &spec.full_choice()))?;
    let cfg = SearchConfig {
        samples_per_iteration: 10,
        layers_per_sample: 3,
        init_reduction: 0.03,
        decay: 0.98,
        target_resource: 0.5 * initial,
        metric: ResourceKind::Latency,
        seed,
        optimizer: Optimizer::Mcd,
        max_attempts: 200,
        max_iterations: 10_000,
    };
    let outcome = ok(run_search(&net, &cost, &holdout, &cfg))?;
    ok(outcome.trajectory.validate(&spec, &cost))?;
    let json = ok(outcome.trajectory.to_json(&spec))?;
    let log_path = dir.join(format!("log-{seed}.csv"));
    ok(write_search_log(&log_path, &outcome.log))?;
    let log = ok(std::fs::read(&log_path))?;
    Ok(ToySearch {
        json,
        log_bytes: log,
        trajectory: outcome.trajectory,
        config: cfg,
        rows: outcome.log,
    })
}

fn criterion_7() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(std::fs::create_dir_all(&a))?;
    ok(std::fs::create_dir_all(&b))?;
    let first = toy_search(11, &a)?;
    let (recs, cfg, rows) = (&first.trajectory.records, &first.config, &first.rows);
    ensure!(recs.len() >= 2, "search made no progress");
    ensure!(
        recs.windows(2).all(|w| w[1].resource < w[0].resource),
        "trajectory resources do not strictly decrease"
    );
    let last = recs.last().unwrap();
    ensure!(
        last.resource <= cfg.target_resource,
        "final {} above target {}",
        last.resource,
        cfg.target_resource
    );
    let r0 = recs[0].resource;
    for row in rows {
        let prev = recs[row.iteration - 1].resource;
        let required =
            (r0 * 0.03 * 0.98f64.powi(row.iteration as i32 - 1)).min(prev - cfg.target_resource);
        let bound = prev - required;
        ensure!(
            (row.bound - bound).abs() <= 1e-12 * bound,
            "iteration {}: logged bound {} vs {bound}",
            row.iteration,
            row.bound
        );
        ensure!(
            row.resource <= bound,
            "iteration {} sample {}: {} > {bound}",
            row.iteration,
            row.sample_id,
            row.resource
        );
    }
    let iterations = recs.len() - 1;
    ensure!(
        rows.len() == iterations * cfg.samples_per_iteration,
        "log has {} rows",
        rows.len()
    );
    let second = toy_search(11, &b)?;
    ensure!(
        first.json == second.json,
        "trajectory JSON differs between reruns"
    );
    ensure!(
        first.log_bytes == second.log_bytes,
        "search log differs between reruns"
    );
    Ok(format!(
        "{iterations} iterations, {:.4} -> {:.4} ms (target {:.4}), {} logged samples within bounds, rerun byte-identical",
        r0,
        last.resource,
        cfg.target_resource,
        rows.len()
    ))
}

// 8. Per-iteration reduction capacity of single- vs multi-layer descent.

fn criterion_8() -> Outcome {
    let mut spec = NetworkSpec::chain(4, 6, 6, 3, &[(4, 3, 1), (4, 3, 1), (4, 3, 1)]);
    for l in &mut spec.layers {
        l.width_grid = vec![0, 2, 4];
        l.kernel_grid = vec![3];
    }
    // Full-width latencies 2, 2 and 1 ms; removing a layer costs nothing.
    let full = [2.0, 2.0, 1.0];
    let layers = full
        .iter()
        .enumerate()
        .map(|(i, &ms)| {
            (
                i,
                BTreeMap::from([(3, BTreeMap::from([(0, 0.0), (2, ms / 2.0), (4, ms)]))]),
            )
        })
        .collect();
    let table = LatencyTable {
        device: "constructed".into(),
        note: String::new(),
        interpolate: false,
        layers,
    };
    ok(table.validate(&spec))?;
    let cost = CostModel::Latency(table);
    let prev = spec.full_choice();
    let scd = ok(max_scd_reduction(&spec, &cost, &prev))?;
    let mcd = ok(max_mcd_reduction(&spec, &cost, &prev, 3))?;
    ensure!(scd == 2.0, "single-layer capacity {scd}, expected 2");
    ensure!(mcd == 5.0, "three-layer capacity {mcd}, expected 5");

    // The generators agree with the capacities.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    ensure!(
        !ok(generate_scd_samples(&spec, &cost, &prev, 2.0))?.is_empty(),
        "SCD cannot remove 2 ms"
    );
    ensure!(
        ok(generate_scd_samples(&spec, &cost, &prev, 2.5))?.is_empty(),
        "SCD removed 2.5 ms"
    );
    for required in [2.5, 5.0] {
        let s: SubNetChoice = ok(generate_mcd_sample(
            &spec, &cost, &prev, 3, required, 200, &mut rng,
        ))?;
        let r = ok(cost.total(&spec, &s))?;
        ensure!(
            r <= 5.0 - required,
            "MCD sample {r} ms misses reduction {required}"
        );
    }
    ensure!(
        generate_mcd_sample(&spec, &cost, &prev, 3, 5.5, 200, &mut rng).is_err(),
        "MCD removed more than the whole network"
    );
    Ok(format!("SCD {scd} ms, MCD(L=3) {mcd} ms per iteration"))
}

// 9. CO2 figures.

fn criterion_9() -> Outcome {
    for (hours, lbs) in [(397.0, 113.0), (2304.0, 655.0)] {
        let got = ok(co2_estimate(hours))?;
        ensure!(
            (got - lbs).abs() <= 0.5,
            "{hours} GPU-hours -> {got} lbs, expected {lbs}"
        );
    }
    let ratio = 1438.0 / (64.0 * 79.0);
    ensure!((ratio - 0.2844f64).abs() <= 1e-4, "ratio {ratio}");
    ensure!(
        (CO2_LBS_PER_GPU_HOUR - ratio).abs() <= 1e-4,
        "constant {CO2_LBS_PER_GPU_HOUR} vs {ratio}"
    );
    Ok(format!(
        "397 -> {:.1} lbs, 2304 -> {:.1} lbs, ratio {ratio:.4}",
        co2_estimate(397.0).unwrap(),
        co2_estimate(2304.0).unwrap()
    ))
}

// 10. End-to-end smoke run through the binary.

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_cbcnas"))
        .args(args)
        .output())?;
    ensure!(
        out.status.success(),
        "cbcnas {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn read_metrics<T: serde::de::DeserializeOwned>(dir: &Path, stage: &str) -> Result<T, String> {
    let text = ok(std::fs::read_to_string(
        dir.join(format!("metrics.{stage}.json")),
    ))?;
    ok(serde_json::from_str(&text))
}

fn criterion_10() -> Outcome {
    let config: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "configs",
        "smoke.toml",
    ]
    .iter()
    .collect();
    let dir = ok(tempfile::tempdir())?;
    let out = dir.path().to_str().ok_or("non-UTF-8 temp path")?;
    let config = config.to_str().ok_or("non-UTF-8 config path")?;
    for stage in ["train-supernet", "search", "train-discovered"] {
        run_cli(&[stage, "--config", config, "--out", out])?;
    }
    run_cli(&["report", "--out", out])?;
    let sup: SupernetMetrics = read_metrics(dir.path(), "train-supernet")?;
    let search: SearchMetrics = read_metrics(dir.path(), "search")?;
    let disc: DiscoveredMetrics = read_metrics(dir.path(), "train-discovered")?;
    ensure!(
        sup.full_width_test_accuracy >= 0.9,
        "full-width test accuracy {}",
        sup.full_width_test_accuracy
    );
    ensure!(
        disc.resource <= search.target_resource,
        "discovered resource {} above target {}",
        disc.resource,
        search.target_resource
    );
    let drop = sup.full_width_test_accuracy - disc.test_accuracy;
    ensure!(drop <= 0.1, "discovered network loses {drop:.3} accuracy");
    Ok(format!(
        "full width {:.3}, discovered {:.3} at {:.3} of {:.3} {}",
        sup.full_width_test_accuracy,
        disc.test_accuracy,
        disc.resource,
        search.target_resource,
        disc.metric
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "bypass channel arithmetic matches simulation",
            1,
            criterion_1,
        ),
        ("layer removal equals rebuilt network", 5, criterion_2),
        ("masked forward equals sliced forward", 30, criterion_3),
        ("finite-difference gradients and isolation", 60, criterion_4),
        ("near-uniform width sampling", 5, criterion_5),
        ("reduction schedule", 1, criterion_6),
        ("search contract", 300, criterion_7),
        ("single- vs multi-layer reduction capacity", 5, criterion_8),
        ("CO2 figures", 1, criterion_9),
        ("end-to-end smoke run", 600, criterion_10),
    ];
    let mut failed = 0;
    for (n, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > Duration::from_secs(*limit) => Err(format!(
                "took {:.1} s, limit {limit} s",
                elapsed.as_secs_f64()
            )),
            r => r,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!(
            "{status} criterion {}: {name} ({:.2} s): {detail}",
            n + 1,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
