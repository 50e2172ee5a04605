use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use tdm::datasets::{split, Dataset, DatasetMeta};
use tdm::dynamics::{self, SampleMode, SampleOptions};
use tdm::eval::{self, EvalReport, MmdOptions};
use tdm::lie::GroupElement;
use tdm::likelihood::{self, NllOptions};
use tdm::losses::{self, Divergence, LossRecord, Objective, TrainConfig};
use tdm::net::{load_checkpoint, save_checkpoint, AdamW, AdamWConfig, Checkpoint, ScoreModel};
use tdm::rng::{stream, tags};
use tdm::score::Score;

use crate::config::{DatasetSource, RunConfig};
use crate::{CliError, Common};

pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const LOSS_CSV: &str = "loss.csv";

fn io_err(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{what} {}: {e}", path.display()))
}

/// Loads and validates the config, creates the output directory and copies
/// the resolved config into it.
fn prepare(common: &Common) -> Result<RunConfig, CliError> {
    let (cfg, raw) = RunConfig::load(&common.config, &common.overrides)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err("cannot create output directory", &cfg.out_dir, e))?;
    let path = cfg.out_dir.join("config.json");
    let text = serde_json::to_string_pretty(&raw).expect("json value serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err("cannot write", &path, e))?;
    Ok(cfg)
}

fn read_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("{} does not exist; run make-data first", path.display())));
    }
    let ds = Dataset::read_jsonl(path)?;
    let kind = cfg.kind()?;
    if ds.kind != kind {
        return Err(CliError::Config(format!("{} holds {} elements but the config kind is {kind}", path.display(), ds.kind)));
    }
    Ok(ds)
}

fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), CliError> {
    ds.write_jsonl(path).map_err(|e| match e {
        tdm::Error::Io(e) => io_err("cannot write", path, e),
        e => e.into(),
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    fs::write(path, text + "\n").map_err(|e| io_err("cannot write", path, e))
}

fn read_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = load_checkpoint(path)?;
    let kind = cfg.kind()?;
    if ck.model.kind() != &kind {
        return Err(CliError::Config(format!("checkpoint kind {} does not match config kind {kind}", ck.model.kind())));
    }
    Ok(ck)
}

pub fn make_data(common: &Common) -> Result<(), CliError> {
    let cfg = prepare(common)?;
    let ds = match &cfg.dataset {
        DatasetSource::Generator(spec) => spec.generate(cfg.seed)?,
        DatasetSource::File { file } => read_dataset(file, &cfg)?,
    };
    let (train, test) = split(&ds.items, cfg.split_ratio, cfg.seed)?;
    let part = |items: Vec<GroupElement>| Dataset { kind: ds.kind.clone(), items, meta: ds.meta.clone() };
    write_dataset(&ds, &cfg.out_dir.join("data.jsonl"))?;
    let (n_train, n_test) = (train.len(), test.len());
    write_dataset(&part(train), &cfg.out_dir.join("train.jsonl"))?;
    write_dataset(&part(test), &cfg.out_dir.join("test.jsonl"))?;
    println!("{}: {} elements of {} ({n_train} train, {n_test} test)", ds.meta.generator, ds.len(), ds.kind);
    Ok(())
}

fn optimizer_config(cfg: &RunConfig) -> AdamWConfig {
    let t = &cfg.train;
    AdamWConfig { base_lr: t.lr, weight_decay: t.weight_decay, total_iters: t.iters.max(1), clip: t.clip, ..AdamWConfig::default() }
}

/// Keeps the rows of an existing loss log that precede `start`.
fn open_loss_log(path: &Path, start: u64) -> Result<BufWriter<File>, CliError> {
    let mut kept = Vec::new();
    if start > 0 && path.exists() {
        let f = File::open(path).map_err(|e| io_err("cannot read", path, e))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| io_err("cannot read", path, e))?;
            let it = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
            if matches!(it, Some(i) if i < start) {
                kept.push(line);
            }
        }
    }
    let f = OpenOptions::new().write(true).create(true).truncate(true).open(path).map_err(|e| io_err("cannot write", path, e))?;
    let mut w = BufWriter::new(f);
    let res = (|| {
        writeln!(w, "iteration,wall_time_s,loss,lr")?;
        for l in &kept {
            writeln!(w, "{l}")?;
        }
        w.flush()
    })();
    res.map_err(|e| io_err("cannot write", path, e))?;
    Ok(w)
}

pub fn train(common: &Common, resume: bool, stop_after: Option<u64>) -> Result<(), CliError> {
    let cfg = prepare(common)?;
    let data = read_dataset(&cfg.out_dir.join("train.jsonl"), &cfg)?;
    let dcfg = cfg.diffusion()?;
    let ncfg = cfg.net()?;
    let t = &cfg.train;
    let tcfg = TrainConfig {
        iters: t.iters,
        batch: t.batch,
        objective: t.objective,
        probes: t.probes,
        force_hutchinson: t.force_hutchinson,
        pairs_per_path: t.pairs_per_path,
        sim_steps: t.sim_steps,
        seed: cfg.seed,
    };
    let objective = tcfg.objective.resolve(&dcfg.kind)?;
    let branch = match objective {
        Objective::Dsm => "dsm",
        _ => "ism",
    };
    println!("objective: {branch} ({})", dcfg.kind);

    let ck_path = cfg.out_dir.join(CHECKPOINT);
    let (mut model, mut opt, start) = if resume && ck_path.exists() {
        let ck = read_checkpoint(&ck_path, &cfg)?;
        if ck.model.config() != &ncfg {
            return Err(CliError::Config("model settings differ from the checkpoint being resumed".into()));
        }
        let mut opt = ck
            .optimizer
            .ok_or_else(|| CliError::Config(format!("{} has no optimizer state to resume from", ck_path.display())))?;
        opt.cfg = optimizer_config(&cfg);
        println!("resuming from iteration {}", ck.iteration);
        (ck.model, opt, ck.iteration)
    } else {
        let model = ScoreModel::new(dcfg.kind.clone(), ncfg, &mut stream(cfg.seed, tags::INIT, 0))?;
        let opt = AdamW::new(optimizer_config(&cfg), model.n_params());
        (model, opt, 0)
    };

    let end = stop_after.map_or(tcfg.iters, |s| s.min(tcfg.iters)).max(start);
    let meta = json!({ "diffusion": dcfg, "train": tcfg, "objective": branch });
    let save = |model: &ScoreModel, opt: &AdamW, iteration: u64| -> Result<(), CliError> {
        let ck = Checkpoint { model: model.clone(), optimizer: Some(opt.clone()), iteration, meta: meta.clone() };
        save_checkpoint(&ck_path, &ck).map_err(|e| match e {
            tdm::Error::Io(e) => io_err("cannot write", &ck_path, e),
            e => e.into(),
        })
    };
    if start == end {
        save(&model, &opt, start)?;
        println!("nothing to train; checkpoint at iteration {start}");
        return Ok(());
    }

    let log_path = cfg.out_dir.join(LOSS_CSV);
    let mut log = open_loss_log(&log_path, start)?;
    let (log_every, ck_every) = (t.log_every.max(1), t.checkpoint_every);
    let total = tcfg.iters;
    let run_cfg = TrainConfig { iters: end, ..tcfg.clone() };
    let mut last: Option<LossRecord> = None;
    losses::train(&mut model, &mut opt, &data.items, &dcfg, &run_cfg, start, |rec, model, opt| {
        let done = rec.iteration + 1;
        if rec.iteration % log_every == 0 || done == total {
            writeln!(log, "{},{:.6},{:.10e},{:.6e}", rec.iteration, rec.wall_time_s, rec.loss, rec.lr)?;
        }
        if (ck_every > 0 && done % ck_every == 0) || done == end {
            log.flush()?;
            save(model, opt, done).map_err(|e| tdm::Error::InvalidArgument(e.to_string()))?;
        }
        last = Some(*rec);
        Ok(())
    })
    .map_err(|e| match e {
        tdm::Error::Io(e) => io_err("cannot write", &log_path, e),
        e => e.into(),
    })?;
    if let Some(r) = last {
        println!("iteration {end}: loss {:.6e}", r.loss);
    }
    Ok(())
}

pub fn sample(
    common: &Common,
    checkpoint: Option<PathBuf>,
    n: Option<usize>,
    mode: Option<SampleMode>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = prepare(common)?;
    let dcfg = cfg.diffusion()?;
    let ck_path = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT));
    let ck = read_checkpoint(&ck_path, &cfg)?;
    let n = n.unwrap_or(cfg.sample.n);
    let mode = mode.unwrap_or(cfg.sample.mode);
    let opts = SampleOptions { mode, early_stop: cfg.sample.early_stop, ..SampleOptions::default() };
    let states = dynamics::sample(&ck.model, &dcfg, n, cfg.seed, &opts)?;
    let items: Vec<GroupElement> = states.into_iter().map(|s| s.g).collect();
    let report = eval::manifold_report(&items);
    let off = items.iter().filter(|g| !g.is_on_group(1e-6)).count();
    let ds = Dataset {
        kind: dcfg.kind.clone(),
        items,
        meta: DatasetMeta {
            generator: "sample".into(),
            params: json!({ "mode": mode, "n": n, "checkpoint_iteration": ck.iteration, "early_stop": cfg.sample.early_stop }),
            seed: cfg.seed,
        },
    };
    let out = out.unwrap_or_else(|| cfg.out_dir.join("samples.jsonl"));
    write_dataset(&ds, &out)?;
    let rep = json!({ "samples": out, "manifold": report, "off_group": off, "tolerance": 1e-6 });
    write_json(&cfg.out_dir.join("samples_report.json"), &rep)?;
    println!("{n} samples -> {}; manifold error max {:.3e} mean {:.3e}; {off} off-group", out.display(), report.max, report.mean);
    Ok(())
}

pub fn eval(common: &Common, samples: Option<PathBuf>, reference: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = prepare(common)?;
    let kind = cfg.kind()?;
    let s = read_dataset(&samples.unwrap_or_else(|| cfg.out_dir.join("samples.jsonl")), &cfg)?;
    let r = read_dataset(&reference.unwrap_or_else(|| cfg.out_dir.join("test.jsonl")), &cfg)?;
    let pairs = eval::random_pairs(&kind, cfg.eval.pairs, cfg.seed);
    let mut coords: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    coords.sort_unstable();
    coords.dedup();
    let mmd = MmdOptions { bandwidth: None, permutations: cfg.eval.permutations, max_points: cfg.eval.max_points, seed: cfg.seed };
    let report = EvalReport::new(&s.items, Some(&r.items), &coords, cfg.eval.bins, &mmd)?;
    eval::marginals_export(&s.items, &pairs, &cfg.out_dir.join("marginals.csv"))?;
    let moments: Vec<Value> = coords
        .iter()
        .map(|&c| {
            let (ms, vs, ns) = eval::coordinate_moments(&s.items, c);
            let (mr, vr, nr) = eval::coordinate_moments(&r.items, c);
            let se = (vs / ns as f64 + vr / nr as f64).sqrt();
            json!({ "coordinate": c, "sample_mean": ms, "sample_var": vs, "reference_mean": mr, "reference_var": vr, "mean_z": (ms - mr) / se })
        })
        .collect();
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["moments"] = Value::Array(moments);
    let out = out.unwrap_or_else(|| cfg.out_dir.join("eval.json"));
    write_json(&out, &v)?;
    if let Some(m) = report.mmd {
        println!("MMD^2 {:.4e} (p = {:.3}, bandwidth {:.4}, n = {} vs {})", m.statistic, m.p_value, m.bandwidth, m.n_a, m.n_b);
    }
    println!("manifold error max {:.3e}; report -> {}", report.manifold.max, out.display());
    Ok(())
}

pub fn nll(common: &Common, checkpoint: Option<PathBuf>, test: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = prepare(common)?;
    let mut dcfg = cfg.diffusion()?;
    if let Some(n) = cfg.nll.steps {
        dcfg.steps = n;
        dcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ck = read_checkpoint(&checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT)), &cfg)?;
    let mut data = read_dataset(&test.unwrap_or_else(|| cfg.out_dir.join("test.jsonl")), &cfg)?.items;
    if let Some(m) = cfg.nll.max_points {
        data.truncate(m);
    }
    let opts = NllOptions {
        samples: cfg.nll.samples,
        fixed_point_iters: cfg.nll.fixed_point_iters,
        divergence: Divergence::auto(dcfg.kind.algebra_dim(), cfg.nll.probes),
        seed: cfg.seed,
        ..NllOptions::for_kind(&dcfg.kind)
    };
    let est = likelihood::nll(&ck.model, &data, &dcfg, &opts)?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("nll.json"));
    write_json(&out, &est.report())?;
    println!("NLL {:.4} ± {:.4} (n = {}, S = {}, N = {})", est.mean, est.se, data.len(), est.num_xi_samples, est.ode_steps);
    if est.haar_normalized {
        println!("density relative to the normalized Haar measure");
    }
    Ok(())
}
