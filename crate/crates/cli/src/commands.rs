use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ffnet::config::FlatConfig;
use ffnet::data::{
    load_cifar10, load_records, normalize, synthetic_dataset, Dataset, SyntheticKind,
};
use ffnet::diagnostics::{
    flow_batch, flow_experiment_with, flow_profile, gradcheck as run_gradcheck,
};
use ffnet::graph::forward;
use ffnet::trainer::{checkpoint_load, checkpoint_save, evaluate, train_from, TrainState};
use ffnet::{Fill, NetworkSpec, ParamStore, Rng, Tensor};

use crate::settings::{resolve, usage, Failure, Resolved};
use crate::Common;

const CHECKPOINT_FILE: &str = "checkpoint.ffnt";
const METRICS_FILE: &str = "metrics.csv";
const CONFIG_FILE: &str = "config.txt";
const FLOW_FILE: &str = "flow.csv";

/// Published per-image forward time on a K80 GPU, shown for reference only.
const PUBLISHED_LATENCY_MS: f64 = 2.8;
/// Published model size, shown next to the size implied by the layers.
const PUBLISHED_SIZE_MB: f64 = 10.8;

fn defaults(text: &str) -> FlatConfig {
    FlatConfig::from_text(text).expect("built-in defaults parse")
}

const DATA_DEFAULTS: &str =
    "dataset = synthetic\ndata_dir =\nrecords =\nsamples = 256\ndata_seed = 0\nholdout = 0\n";

/// Resolves the configuration, applies `--deterministic` and echoes the
/// result to stderr.
fn prepare(
    common: &Common,
    defaults: &FlatConfig,
    flags: &FlatConfig,
) -> Result<Resolved, Failure> {
    let r = resolve(defaults, common.config.as_deref(), flags)?;
    if common.deterministic {
        // Fails only if the pool already exists, which a fresh process rules out.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global();
    }
    Ok(r)
}

fn echo(r: &Resolved) {
    eprintln!("# resolved config");
    for line in r.text().lines() {
        eprintln!("#   {line}");
    }
}

fn build(r: &Resolved) -> Result<NetworkSpec, Failure> {
    NetworkSpec::build(&r.arch).map_err(|e| usage(format!("architecture {}: {e}", r.arch.input)))
}

fn out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

struct Splits {
    train: Dataset,
    val: Option<Dataset>,
    test: Option<Dataset>,
}

/// Loads the configured dataset and normalizes every split with the
/// statistics of the training split.
fn load(r: &Resolved) -> Result<Splits, Failure> {
    let classes = r.arch.classes;
    let kind = r.extra_str("dataset").unwrap_or("synthetic");
    let (train, test) = match kind {
        "synthetic" | "noise" => {
            let k = if kind == "synthetic" {
                SyntheticKind::Separable
            } else {
                SyntheticKind::Noise
            };
            (
                synthetic_dataset(k, r.extra("samples")?, classes, r.extra("data_seed")?)?,
                None,
            )
        }
        "cifar" => {
            let dir = r
                .extra_str("data_dir")
                .ok_or_else(|| usage("dataset `cifar` needs --data-dir"))?;
            if classes != 10 {
                return Err(usage(format!("CIFAR-10 has 10 classes, not {classes}")));
            }
            let (train, test) = load_cifar10(Path::new(dir))?;
            (train, Some(test))
        }
        "records" => {
            let path = r
                .extra_str("records")
                .ok_or_else(|| usage("dataset `records` needs --records"))?;
            (load_records(Path::new(path), classes)?, None)
        }
        other => return Err(usage(format!("unknown dataset `{other}`"))),
    };
    let holdout: usize = r.extra("holdout")?;
    let (train, val) = if holdout > 0 {
        let (t, v) = train.split_validation(holdout)?;
        (t, Some(v))
    } else {
        (train, None)
    };
    let stats = train.stats.clone();
    Ok(Splits {
        train: normalize(&train, &stats)?,
        val: val.map(|v| normalize(&v, &stats)).transpose()?,
        test: test.map(|t| normalize(&t, &stats)).transpose()?,
    })
}

pub fn train(common: &Common, flags: FlatConfig, resume: Option<&Path>) -> Result<(), Failure> {
    let mut r = prepare(common, &defaults(DATA_DEFAULTS), &flags)?;
    let spec = build(&r)?;
    let state = match resume {
        Some(path) => {
            let ck = checkpoint_load(path, &spec)?;
            if r.is_explicit("seed") && r.train.seed != ck.seed {
                return Err(usage(format!(
                    "seed {} does not match the checkpoint's seed {}",
                    r.train.seed, ck.seed
                )));
            }
            r.train.seed = ck.seed;
            TrainState {
                params: ck.params,
                iteration: ck.iteration,
            }
        }
        None => TrainState::fresh(&spec, r.train.seed),
    };
    echo(&r);
    let data = load(&r)?;
    let dir = out_dir(common)?;
    let run = train_from(&spec, &data.train, data.val.as_ref(), &r.train, state)?;

    checkpoint_save(
        &dir.join(CHECKPOINT_FILE),
        &spec,
        &run.state.params,
        run.state.iteration,
        r.train.seed,
    )?;
    run.metrics.write_csv(&dir.join(METRICS_FILE))?;
    fs::write(dir.join(CONFIG_FILE), r.text())?;
    print!("{}", run.metrics.to_csv());
    eprintln!(
        "# {} iterations, artifacts in {}",
        run.state.iteration,
        dir.display()
    );
    Ok(())
}

pub fn eval(common: &Common, flags: FlatConfig, checkpoint: &Path) -> Result<(), Failure> {
    let r = prepare(
        common,
        &defaults(&format!("{DATA_DEFAULTS}ten_crop = false\n")),
        &flags,
    )?;
    echo(&r);
    let spec = build(&r)?;
    let ck = checkpoint_load(checkpoint, &spec)?;
    let data = load(&r)?;
    let (split, set) = match (data.test, data.val) {
        (Some(t), _) => ("test", t),
        (None, Some(v)) => ("val", v),
        (None, None) => ("train", data.train),
    };
    let res = evaluate(&spec, &ck.params, &set, r.extra("ten_crop")?)?;
    println!(
        "split {split} samples {} loss {:.6} accuracy {:.4} crops {}",
        set.len(),
        res.loss,
        res.accuracy,
        res.crops_evaluated
    );
    Ok(())
}

fn shape_text(c: usize, h: usize, w: usize) -> String {
    format!("{c}x{h}x{w}")
}

pub fn inspect(common: &Common, flags: FlatConfig) -> Result<(), Failure> {
    let r = prepare(common, &FlatConfig::default(), &flags)?;
    echo(&r);
    let spec = build(&r)?;
    let count = spec.count_params();
    let input = spec.input_shape();
    println!("{:<16} {:>12} {:>10}", "node", "output", "params");
    println!(
        "{:<16} {:>12} {:>10}",
        "input",
        shape_text(input.c, input.h, input.w),
        "-"
    );
    for (name, s) in spec.infer_shapes() {
        let params = count
            .per_layer
            .iter()
            .find(|(n, _)| *n == name)
            .map_or("-".to_string(), |(_, c)| c.to_string());
        println!(
            "{:<16} {:>12} {:>10}",
            name,
            shape_text(s.c, s.h, s.w),
            params
        );
    }
    let trace: Vec<String> = spec
        .spatial_trace()
        .iter()
        .map(ToString::to_string)
        .collect();
    let (deep, ff) = spec.conv_layer_count();
    let depth = spec.gradient_path_depth();
    println!("spatial trace {}", trace.join(" -> "));
    println!("conv layers {} (deep {deep}, fast-forward {ff})", deep + ff);
    println!(
        "gradient path depth shortest {} longest {}",
        depth.shortest, depth.longest
    );
    println!(
        "size {:.2} MB at 4 bytes per parameter (published figure {PUBLISHED_SIZE_MB} MB, not derivable from these layers)",
        count.size_mb()
    );
    println!("total params {}", count.total);
    Ok(())
}

pub fn gradcheck(common: &Common, flags: FlatConfig) -> Result<(), Failure> {
    let base = "stages = 2\ninput = 3x12x12\nclasses = 2\nbranch_width = 4\nfc1 = 8\nfc2 = 6\ntol = 1e-4\n";
    let r = prepare(common, &defaults(base), &flags)?;
    echo(&r);
    let spec = build(&r)?;
    let tol: f64 = r.extra("tol")?;
    let report = run_gradcheck(&spec, r.train.seed, tol)?;
    println!("param,max_rel_error");
    for (name, e) in &report.per_param {
        println!("{name},{e:e}");
    }
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    println!(
        "# max relative error {:e} tolerance {tol:e} {verdict}",
        report.global_max
    );
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient check failed: {:e} >= {tol:e}",
            report.global_max
        )))
    }
}

pub fn flowprobe(common: &Common, flags: FlatConfig, profile: bool) -> Result<(), Failure> {
    let r = prepare(common, &defaults("batch_size = 8\nseeds = 20\n"), &flags)?;
    echo(&r);
    let batch = r.train.batch_size;
    if profile {
        let spec = build(&r)?;
        let (x, labels) = flow_batch(&r.arch, batch, r.train.seed)?;
        let p = flow_profile(
            &spec,
            &ParamStore::init(&spec, r.train.seed),
            &x,
            &labels,
            r.train.seed,
        )?;
        print!("{}", p.to_csv());
        println!("# {} seed {} ratio {:.6}", p.tag, p.seed, p.ratio());
        return Ok(());
    }
    build(&r)?;
    let seeds: u64 = r.extra("seeds")?;
    let started = Instant::now();
    let summary = flow_experiment_with(&r.arch, r.arch.stages, seeds, batch)?;
    let csv = summary.to_csv();
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FLOW_FILE), &csv)?;
    }
    print!("{csv}");
    let wins = summary
        .rows
        .iter()
        .filter(|row| row.r_ffnet > row.r_ablation)
        .count();
    println!(
        "# fraction r_ffnet > r_ablation {:.4} ({wins} of {} seeds, {} stages, batch {batch}, {:.1} s)",
        summary.fraction_ffnet_higher(),
        summary.rows.len(),
        summary.stage_count,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn bench(common: &Common, flags: FlatConfig) -> Result<(), Failure> {
    let r = prepare(common, &defaults("warmup = 20\npasses = 100\n"), &flags)?;
    echo(&r);
    let spec = build(&r)?;
    let (warmup, passes): (usize, usize) = (r.extra("warmup")?, r.extra("passes")?);
    if passes == 0 {
        return Err(usage("passes must be at least 1"));
    }
    let params: ParamStore = ParamStore::init(&spec, r.train.seed);
    let mut rng = Rng::new(r.train.seed);
    let x: Tensor = Tensor::new(
        spec.input_shape().batch(1),
        Fill::Normal {
            mean: 0.0,
            stddev: 1.0,
            rng: &mut rng,
        },
    )?;
    for _ in 0..warmup {
        forward(&spec, &params, &x, false)?;
    }
    let mut times = Vec::with_capacity(passes);
    for _ in 0..passes {
        let t = Instant::now();
        forward(&spec, &params, &x, false)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / passes as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (passes.max(2) - 1) as f64;
    println!("passes {passes} warmup {warmup}");
    println!("mean_ms {mean:.4}");
    println!("stddev_ms {:.4}", var.sqrt());
    println!("# published {PUBLISHED_LATENCY_MS} ms per image on a K80 GPU, for reference only");
    Ok(())
}
