//! Run drivers: training with per-epoch validation metrics, standalone
//! evaluation, and the latent-analysis battery. All file outputs are
//! deterministic functions of (config, seed) except the wall-clock
//! `batch_ms` column.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    correlation_maps, hierarchical_order, intra_inter_ratio, latent_range, pairwise_distance,
    DistanceMatrix, DistanceMetric, LatentMatrix,
};
use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{class_balanced_sample, epoch_batches, mnist_paths, Dataset};
use crate::error::{io_context, Error, Result};
use crate::losses::{total_objective, LossBreakdown, RegWeights};
use crate::metrics::{activity_stats, ActivityStats, HIST_BINS};
use crate::models::{Family, ForwardOpts, Model};
use crate::optim::Adam;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const METRICS_COLUMNS: [&str; 17] = [
    "epoch", "split", "mse", "total", "l2", "p1", "p2", "a1", "a1_l3", "kl", "anr_l3", "afr_l3",
    "rae_l3", "inp_l3", "spikes_per_example", "batch_ms", "seed",
];

/// Independent random streams per run seed, so changing e.g. the
/// shuffle schedule never shifts the weight-init draws.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_TRAIN_SPIKES: u64 = 2;
const STREAM_RECON_PICK: u64 = 3;
const STREAM_ANALYZE: u64 = 4;
const STREAM_EVAL_BASE: u64 = 1000;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `SAE_DATA_DIR` overrides the configured directory; default `data`.
pub fn resolve_data_dir(cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = std::env::var_os("SAE_DATA_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(cfg.data_dir.as_deref().unwrap_or("data"))
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let dir = resolve_data_dir(cfg);
    let [ti, tl, vi, vl] = mnist_paths(&dir);
    let mut train = Dataset::load_idx(&ti, &tl)?;
    let mut val = Dataset::load_idx(&vi, &vl)?;
    if let Some(limit) = cfg.train_limit {
        train = train.head(limit.min(train.len()))?;
    }
    if let Some(limit) = cfg.val_limit {
        val = val.head(limit.min(val.len()))?;
    }
    Ok(Splits { train, val })
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub mse: f64,
    pub total: f64,
    pub l2: f64,
    pub p1: f64,
    pub p2: f64,
    pub a1: f64,
    pub a1_l3: f64,
    pub kl: f64,
    /// Layer-3 activity over the whole split (spiking families only).
    pub l3: Option<ActivityStats>,
    pub spikes_per_example: f64,
    pub batch_ms: f64,
    pub examples: usize,
}

fn forward_opts(family: Family, w: &RegWeights, training: bool) -> ForwardOpts {
    ForwardOpts {
        want_a1_all: family == Family::Sae && w.a1 > 0.0,
        want_a1_l3: family == Family::Sae && w.a1_l3 > 0.0,
        // reconstruction metrics use the mean latent; sampling is a
        // training-time device
        sample_latent: training,
        ..ForwardOpts::default()
    }
}

/// Sequential full pass over a dataset accumulating loss components
/// and (for spiking models) layer-3 spike counts.
pub fn evaluate(
    model: &Model<f32>,
    cfg: &ExperimentConfig,
    data: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let family = model.family;
    let w = cfg.reg_weights();
    let opts = forward_opts(family, &w, false);
    let n = data.len();
    let n_z = model.dims.n_z;

    let mut sums = LossBreakdown::default();
    let mut l3_counts: Vec<f64> = Vec::new();
    let mut spikes = 0.0;
    let started = Instant::now();
    let mut batches = 0usize;

    let indices: Vec<usize> = (0..n).collect();
    for batch in indices.chunks(cfg.batch_size) {
        let x = data.gather::<f32>(batch)?;
        let mut tape = Tape::new_inference();
        let leaves = model.register(&mut tape);
        let fwd = model.forward(&mut tape, &leaves, &x, rng, opts)?;
        let (_, bd) = total_objective(
            &mut tape,
            &leaves,
            &model.bias_mask(),
            family,
            &fwd,
            &x,
            &w,
            cfg.t_steps,
        )?;
        let nb = batch.len() as f64;
        sums.rec += bd.rec * nb;
        sums.l2 += bd.l2 * nb;
        sums.p1 += bd.p1 * nb;
        sums.p2 += bd.p2 * nb;
        sums.a1 += bd.a1 * nb;
        sums.a1_l3 += bd.a1_l3 * nb;
        sums.kl += bd.kl * nb;
        sums.total += bd.total * nb;
        if let Some(t) = &fwd.sae {
            l3_counts.extend_from_slice(t.l3_counts.data());
            spikes += t.layer_spikes.iter().sum::<f64>();
        }
        batches += 1;
    }
    let batch_ms = started.elapsed().as_secs_f64() * 1000.0 / batches as f64;

    let nf = n as f64;
    let l3 = if family == Family::Sae {
        Some(activity_stats(
            &Tensor::from_vec(&[n, n_z], l3_counts)?,
            cfg.t_steps,
        )?)
    } else {
        None
    };
    Ok(EvalResult {
        mse: sums.rec / nf,
        total: sums.total / nf,
        l2: sums.l2 / nf,
        p1: sums.p1 / nf,
        p2: sums.p2 / nf,
        a1: sums.a1 / nf,
        a1_l3: sums.a1_l3 / nf,
        kl: sums.kl / nf,
        l3,
        spikes_per_example: spikes / nf,
        batch_ms,
        examples: n,
    })
}

fn metrics_row(
    epoch: usize,
    split: &str,
    mse: f64,
    total: f64,
    components: [f64; 6],
    l3: Option<&ActivityStats>,
    spikes_per_example: f64,
    batch_ms: f64,
    seed: u64,
) -> String {
    let [l2, p1, p2, a1, a1_l3, kl] = components;
    let (anr, afr, rae, inp) = match l3 {
        Some(s) => (s.anr, s.afr, s.rae, s.inp),
        None => (0.0, 0.0, 0.0, 0.0),
    };
    format!(
        "{epoch},{split},{mse},{total},{l2},{p1},{p2},{a1},{a1_l3},{kl},{anr},{afr},{rae},{inp},{spikes_per_example},{batch_ms},{seed}\n"
    )
}

fn eval_metrics_row(epoch: usize, split: &str, r: &EvalResult, seed: u64) -> String {
    metrics_row(
        epoch,
        split,
        r.mse,
        r.total,
        [r.l2, r.p1, r.p2, r.a1, r.a1_l3, r.kl],
        r.l3.as_ref(),
        r.spikes_per_example,
        r.batch_ms,
        seed,
    )
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub final_val: Option<EvalResult>,
}

/// Trains one repetition into `run_dir`: metrics.csv with one train
/// and one val row per epoch, plus best-by-validation-MSE and final
/// checkpoints.
pub fn train_single_run(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    seed: u64,
) -> Result<RunSummary> {
    fs::create_dir_all(run_dir)
        .map_err(|e| io_context(&run_dir, e))?;
    let splits = load_splits(cfg)?;
    let family = cfg.family()?;
    let w = cfg.reg_weights();

    let mut model: Model<f32> = cfg.build_model(&mut stream_rng(seed, STREAM_INIT))?;
    let shapes = model.param_shapes();
    let mut adam: Adam<f32> = Adam::new(cfg.lr as f32, &shapes);
    drop(shapes);
    let names: Vec<String> = model.param_names().iter().map(|s| s.to_string()).collect();
    let bias_mask = model.bias_mask();
    let opts = forward_opts(family, &w, true);

    let metrics_path = run_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path)
        .map_err(|e| io_context(&metrics_path, e))?;
    writeln!(metrics, "{}", METRICS_COLUMNS.join(","))
        .map_err(Error::Io)?;

    let mut shuffle_rng = stream_rng(seed, STREAM_SHUFFLE);
    let mut spike_rng = stream_rng(seed, STREAM_TRAIN_SPIKES);
    let mut best_val_mse = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut final_val = None;

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(splits.train.len(), cfg.batch_size, &mut shuffle_rng)?;
        let n_batches = batches.len();
        let mut train_sums = LossBreakdown::default();
        let mut train_spikes = 0.0;
        let mut train_l3: Vec<f64> = Vec::new();
        let mut elapsed_ms = 0.0;

        for (bi, batch) in batches.iter().enumerate() {
            let started = Instant::now();
            let x = splits.train.gather::<f32>(batch)?;
            let mut tape = Tape::new();
            let leaves = model.register(&mut tape);
            let fwd = model.forward(&mut tape, &leaves, &x, &mut spike_rng, opts)?;
            let (total, bd) = total_objective(
                &mut tape, &leaves, &bias_mask, family, &fwd, &x, &w, cfg.t_steps,
            )?;
            if !bd.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {}/{n_batches}: rec={} l2={} p1={} p2={} a1={} a1_l3={} kl={}",
                    bi + 1,
                    bd.rec,
                    bd.l2,
                    bd.p1,
                    bd.p2,
                    bd.a1,
                    bd.a1_l3,
                    bd.kl
                )));
            }
            let mut grads = tape.backward(&total)?;
            let grad_list: Vec<Option<Tensor<f32>>> =
                leaves.iter().map(|v| grads.take(v)).collect();
            if let Some(t) = &fwd.sae {
                train_spikes += t.layer_spikes.iter().sum::<f64>();
                train_l3.extend_from_slice(t.l3_counts.data());
            }
            // release every tape handle on the parameters before the
            // in-place update
            drop(fwd);
            drop(leaves);
            drop(tape);
            let mut rcs = model.take_param_rcs();
            adam.step(&mut rcs, &grad_list, &names)?;
            model.set_param_rcs(rcs)?;
            elapsed_ms += started.elapsed().as_secs_f64() * 1000.0;

            let nb = batch.len() as f64;
            train_sums.rec += bd.rec * nb;
            train_sums.l2 += bd.l2 * nb;
            train_sums.p1 += bd.p1 * nb;
            train_sums.p2 += bd.p2 * nb;
            train_sums.a1 += bd.a1 * nb;
            train_sums.a1_l3 += bd.a1_l3 * nb;
            train_sums.kl += bd.kl * nb;
            train_sums.total += bd.total * nb;
        }

        let nf = splits.train.len() as f64;
        let train_l3_stats = if family == Family::Sae {
            Some(activity_stats(
                &Tensor::from_vec(&[splits.train.len(), model.dims.n_z], train_l3)?,
                cfg.t_steps,
            )?)
        } else {
            None
        };
        let train_row = metrics_row(
            epoch,
            "train",
            train_sums.rec / nf,
            train_sums.total / nf,
            [
                train_sums.l2 / nf,
                train_sums.p1 / nf,
                train_sums.p2 / nf,
                train_sums.a1 / nf,
                train_sums.a1_l3 / nf,
                train_sums.kl / nf,
            ],
            train_l3_stats.as_ref(),
            train_spikes / nf,
            elapsed_ms / n_batches as f64,
            seed,
        );

        let mut eval_rng = stream_rng(seed, STREAM_EVAL_BASE + epoch as u64);
        let val = evaluate(&model, cfg, &splits.val, &mut eval_rng)?;
        let val_row = eval_metrics_row(epoch, "val", &val, seed);
        metrics
            .write_all(train_row.as_bytes())
            .and_then(|_| metrics.write_all(val_row.as_bytes()))
            .map_err(Error::Io)?;
        println!(
            "seed {seed} epoch {epoch}/{}: train mse {:.4}, val mse {:.4}",
            cfg.epochs,
            train_sums.rec / nf,
            val.mse
        );

        if val.mse < best_val_mse {
            best_val_mse = val.mse;
            best_epoch = epoch;
            checkpoint::save(&run_dir.join("best.ckpt"), &model, cfg)?;
        }
        final_val = Some(val);
    }

    checkpoint::save(&run_dir.join("final.ckpt"), &model, cfg)?;
    if cfg.epochs == 0 {
        checkpoint::save(&run_dir.join("best.ckpt"), &model, cfg)?;
    }
    Ok(RunSummary {
        seed,
        run_dir: run_dir.to_path_buf(),
        best_val_mse,
        best_epoch,
        final_val,
    })
}

/// Runs every configured repetition under `out/run-<seed>/`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, base_seed: u64) -> Result<Vec<RunSummary>> {
    let mut summaries = Vec::new();
    for seed in cfg.run_seeds(base_seed) {
        let run_dir = out.join(format!("run-{seed}"));
        summaries.push(train_single_run(cfg, &run_dir, seed)?);
    }
    Ok(summaries)
}

/// Architecture fields of an eval/analyze config must agree with the
/// checkpoint that produced the weights.
pub fn check_architecture(ckpt: &ExperimentConfig, user: &ExperimentConfig) -> Result<()> {
    let key = |c: &ExperimentConfig| {
        (
            c.family.clone(),
            c.n_z,
            c.input_hw,
            c.ch1,
            c.ch2,
            c.kernel,
        )
    };
    if key(ckpt) != key(user) {
        return Err(Error::Data(format!(
            "checkpoint architecture {:?} does not match the requested config {:?}",
            key(ckpt),
            key(user)
        )));
    }
    Ok(())
}

fn write_pgm(path: &Path, hw: usize, pixels: &[f32]) -> Result<()> {
    let mut bytes = format!("P5\n{hw} {hw}\n255\n").into_bytes();
    bytes.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes).map_err(|e| io_context(&path, e))
}

/// Evaluates a model on the validation split: one metrics record in
/// eval.csv plus reconstruction image dumps for one example per class.
pub fn cmd_eval(
    model: &Model<f32>,
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
) -> Result<EvalResult> {
    fs::create_dir_all(out)
        .map_err(|e| io_context(&out, e))?;
    let splits = load_splits(cfg)?;
    let mut eval_rng = stream_rng(seed, STREAM_EVAL_BASE);
    let result = evaluate(model, cfg, &splits.val, &mut eval_rng)?;

    let eval_path = out.join("eval.csv");
    let mut file = fs::File::create(&eval_path)
        .map_err(|e| io_context(&eval_path, e))?;
    writeln!(file, "{}", METRICS_COLUMNS.join(","))
        .and_then(|_| file.write_all(eval_metrics_row(0, "val", &result, seed).as_bytes()))
        .map_err(Error::Io)?;

    // one input/reconstruction pair per class, plus the summed spike
    // encoding for spiking models
    let recon_dir = out.join("recon");
    fs::create_dir_all(&recon_dir)
        .map_err(|e| io_context(&recon_dir, e))?;
    let mut pick_rng = stream_rng(seed, STREAM_RECON_PICK);
    let picks = class_balanced_sample(splits.val.labels(), 1, &mut pick_rng)?;
    let x = splits.val.gather::<f32>(&picks)?;
    let mut tape = Tape::new_inference();
    let leaves = model.register(&mut tape);
    let w = cfg.reg_weights();
    let fwd = model.forward(
        &mut tape,
        &leaves,
        &x,
        &mut pick_rng,
        forward_opts(model.family, &w, false),
    )?;
    let hw = model.dims.input_hw;
    let px = hw * hw;
    for (row, &idx) in picks.iter().enumerate() {
        let digit = splits.val.labels()[idx];
        write_pgm(
            &recon_dir.join(format!("input_{digit}.pgm")),
            hw,
            &x.data()[row * px..(row + 1) * px],
        )?;
        write_pgm(
            &recon_dir.join(format!("recon_{digit}.pgm")),
            hw,
            &fwd.x_hat.val().data()[row * px..(row + 1) * px],
        )?;
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub ratios: Vec<(DistanceMetric, f64)>,
    pub l3: Option<ActivityStats>,
    pub latent_degenerate: bool,
    pub neuron_map_skipped: bool,
}

fn write_matrix_csv(path: &Path, m: &Tensor<f64>) -> Result<()> {
    let (n, k) = (m.shape()[0], m.shape()[1]);
    let mut text = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..k).map(|j| m.data()[i * k + j].to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_context(&path, e))
}

fn write_order_csv(path: &Path, order: &[usize], labels: &[u8]) -> Result<()> {
    let mut text = String::from("position,example,label\n");
    for (pos, &ex) in order.iter().enumerate() {
        text.push_str(&format!("{pos},{ex},{}\n", labels[ex]));
    }
    fs::write(path, text).map_err(|e| io_context(&path, e))
}

fn write_merges_csv(path: &Path, d: &DistanceMatrix) -> Result<()> {
    let tree = hierarchical_order(d)?;
    let mut text = String::from("step,a,b,distance,size\n");
    for (step, m) in tree.merges.iter().enumerate() {
        text.push_str(&format!("{step},{},{},{},{}\n", m.a, m.b, m.distance, m.size));
    }
    fs::write(path, text).map_err(|e| io_context(&path, e))
}

/// Builds the class-balanced latent matrix and emits the full battery:
/// scaled latents, five distance matrices with intra/inter ratios and
/// clustering orders, correlation maps, and firing-rate histograms.
pub fn cmd_analyze(
    model: &Model<f32>,
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
    per_class: usize,
) -> Result<AnalyzeSummary> {
    fs::create_dir_all(out)
        .map_err(|e| io_context(&out, e))?;
    // the balanced sample is the subset mechanism here; a val_limit
    // left over from desk-scale training must not starve the classes
    let mut cfg = cfg.clone();
    cfg.val_limit = None;
    let cfg = &cfg;
    let splits = load_splits(cfg)?;
    let mut rng = stream_rng(seed, STREAM_ANALYZE);
    let picks = class_balanced_sample(splits.val.labels(), per_class, &mut rng)?;
    let labels: Vec<u8> = picks.iter().map(|&i| splits.val.labels()[i]).collect();
    let n = picks.len();
    let n_z = model.dims.n_z;
    let w = cfg.reg_weights();
    let opts = forward_opts(model.family, &w, false);

    // latent rows are independent across examples, so batching is
    // purely a memory bound
    let mut raw = Vec::with_capacity(n * n_z);
    let mut l3_counts: Vec<f64> = Vec::new();
    for batch in picks.chunks(cfg.batch_size) {
        let x = splits.val.gather::<f32>(batch)?;
        let mut tape = Tape::new_inference();
        let leaves = model.register(&mut tape);
        let fwd = model.forward(&mut tape, &leaves, &x, &mut rng, opts)?;
        raw.extend_from_slice(fwd.latent.data());
        if let Some(t) = &fwd.sae {
            l3_counts.extend_from_slice(t.l3_counts.data());
        }
    }
    let raw = Tensor::from_vec(&[n, n_z], raw)?;
    let latent = LatentMatrix::new(&raw, labels.clone(), latent_range(model.family))?;

    // latents.csv: label column then the scaled coordinates
    let mut text = String::from("label");
    for j in 0..n_z {
        text.push_str(&format!(",z{j}"));
    }
    text.push('\n');
    for i in 0..n {
        text.push_str(&labels[i].to_string());
        for j in 0..n_z {
            text.push_str(&format!(",{}", latent.values.data()[i * n_z + j]));
        }
        text.push('\n');
    }
    let latents_path = out.join("latents.csv");
    fs::write(&latents_path, text)
        .map_err(|e| io_context(&latents_path, e))?;

    let mut ratios = Vec::new();
    let mut ratios_text = String::from("metric,ratio,flagged_pairs\n");
    for metric in DistanceMetric::ALL {
        let d = pairwise_distance(&latent.values, metric)?;
        write_matrix_csv(&out.join(format!("distance_{}.csv", metric.name())), &d.d)?;
        let tree = hierarchical_order(&d)?;
        write_order_csv(
            &out.join(format!("order_{}.csv", metric.name())),
            &tree.leaf_order,
            &labels,
        )?;
        write_merges_csv(&out.join(format!("merges_{}.csv", metric.name())), &d)?;
        let ratio = intra_inter_ratio(&d, &labels)?;
        ratios_text.push_str(&format!("{},{},{}\n", metric.name(), ratio, d.flagged_pairs));
        ratios.push((metric, ratio));
    }
    let ratios_path = out.join("ratios.csv");
    fs::write(&ratios_path, ratios_text)
        .map_err(|e| io_context(&ratios_path, e))?;

    // correlation maps on the raw matrix: silence is defined by raw
    // zeros, and Pearson is invariant to the scaling anyway
    let maps = correlation_maps(&raw)?;
    write_matrix_csv(&out.join("example_corr.csv"), &maps.example_corr)?;
    let example_dist = DistanceMatrix {
        d: one_minus(&maps.example_corr),
        metric: DistanceMetric::Correlation,
        flagged_pairs: 0,
    };
    write_order_csv(
        &out.join("example_corr_order.csv"),
        &hierarchical_order(&example_dist)?.leaf_order,
        &labels,
    )?;
    if let Some(nc) = &maps.neuron_corr {
        write_matrix_csv(&out.join("neuron_corr.csv"), nc)?;
        let neuron_dist = DistanceMatrix {
            d: one_minus(nc),
            metric: DistanceMetric::Correlation,
            flagged_pairs: 0,
        };
        let order = hierarchical_order(&neuron_dist)?.leaf_order;
        let mut text = String::from("position,neuron\n");
        for (pos, &col) in order.iter().enumerate() {
            text.push_str(&format!("{pos},{}\n", maps.active_neurons[col]));
        }
        let p = out.join("neuron_corr_order.csv");
        fs::write(&p, text).map_err(|e| io_context(&p, e))?;
    }

    let l3 = if model.family == Family::Sae {
        let counts = Tensor::from_vec(&[n, n_z], l3_counts)?;
        let stats = activity_stats(&counts, cfg.t_steps)?;
        let mut text = String::from("bin_lo,bin_hi,count\n");
        for (b, &c) in stats.histogram.iter().enumerate() {
            text.push_str(&format!(
                "{},{},{c}\n",
                b as f64 / HIST_BINS as f64,
                (b + 1) as f64 / HIST_BINS as f64
            ));
        }
        let p = out.join("hist_l3.csv");
        fs::write(&p, text).map_err(|e| io_context(&p, e))?;
        Some(stats)
    } else {
        None
    };

    let mut summary = String::new();
    summary.push_str(&format!(
        "family: {}\nn_z: {n_z}\nexamples: {n} ({per_class} per class)\nseed: {seed}\n",
        model.family.as_str()
    ));
    if latent.degenerate {
        summary.push_str("warning: latent matrix is constant; scaling degenerated to zeros\n");
    }
    for (metric, ratio) in &ratios {
        summary.push_str(&format!("intra/inter ({}): {ratio}\n", metric.name()));
    }
    if let Some(stats) = &l3 {
        summary.push_str(&format!(
            "layer-3 activity: anr={} afr={} rae={} inp={}{}\n",
            stats.anr,
            stats.afr,
            stats.rae,
            stats.inp,
            if stats.degenerate { " (no active neurons)" } else { "" }
        ));
    }
    if maps.neuron_map_skipped {
        summary.push_str("neuron correlation map skipped: fewer than 2 active units\n");
    }
    let p = out.join("summary.txt");
    fs::write(&p, summary).map_err(|e| io_context(&p, e))?;

    Ok(AnalyzeSummary {
        ratios,
        l3,
        latent_degenerate: latent.degenerate,
        neuron_map_skipped: maps.neuron_map_skipped,
    })
}

/// Correlation r to correlation distance 1 - r, clamped at 0, with an
/// exactly zero diagonal.
fn one_minus(corr: &Tensor<f64>) -> Tensor<f64> {
    let n = corr.shape()[0];
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i * n + j] = (1.0 - corr.data()[i * n + j]).max(0.0);
            }
        }
    }
    Tensor::from_vec(&[n, n], out).unwrap()
}
