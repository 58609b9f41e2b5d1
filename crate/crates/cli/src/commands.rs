use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use gelatto_core::config::RunConfig;
use gelatto_core::data::{read_cloud, toy_dataset, write_cloud, write_record, CloudRecord};
use gelatto_core::geometry::PointCloud;
use gelatto_core::inspect::{trace_attention, AttentionDump};
use gelatto_core::layers::HeadMode;
use gelatto_core::network::{micro_gradcheck, Checkpoint, NetworkConfig, SegmentationNet, MICRO_TOLERANCE};
use gelatto_core::params::ParamStore;
use gelatto_core::tensor::OpKind;
use gelatto_core::train::{block_clouds, evaluate, predict_blocks, Trainer};
use gelatto_core::Error;

use crate::{Cli, Command, Common, Failure, TrainArgs};

type Res<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> Res {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::toy(),
    };
    apply_common(&mut cfg, &cli.common);
    if let Command::Train(args) = &cli.command {
        apply_train(&mut cfg, args)?;
    }
    cfg.validate()?;
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Synth { train_scenes, test_scenes, points } => {
            cfg.synth.train_scenes = train_scenes.unwrap_or(cfg.synth.train_scenes);
            cfg.synth.test_scenes = test_scenes.unwrap_or(cfg.synth.test_scenes);
            cfg.synth.points = points.unwrap_or(cfg.synth.points);
            synth(cfg, &out)
        }
        Command::Train(_) => train(cfg, &out),
        Command::Eval { checkpoint, data } => eval(&cfg, checkpoint, data, &out),
        Command::Predict { checkpoint, input, output } => predict(&cfg, checkpoint, &input, output, &out),
        Command::Gradcheck { inject_fault, factor } => gradcheck(&cfg, inject_fault, factor),
        Command::DumpAttention { checkpoint, input, point, channel } => {
            dump_attention(&cfg, checkpoint, &input, point, channel, &out)
        }
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if c.deterministic {
        cfg.deterministic = true;
        cfg.train.deterministic = true;
    }
    if let Some(o) = &c.out {
        cfg.paths.out = Some(o.clone());
    }
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) -> Res {
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            *slot = v.clone();
        }
    };
    set(&mut cfg.paths.train, &a.train);
    set(&mut cfg.paths.eval, &a.eval);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(h) = &a.heads {
        cfg.network.heads = match h.as_str() {
            "both" => HeadMode::Both,
            "geometric-only" => HeadMode::GeometricOnly,
            "latent-only" => HeadMode::LatentOnly,
            "mlp-pool" => HeadMode::MlpPool,
            other => return Err(Failure::Usage(format!("unknown head mode {other}"))),
        };
    }
    if let Some(g) = a.group_size {
        cfg.network.group_size = g;
    }
    if let Some(k) = a.k {
        cfg.network.layers.iter_mut().for_each(|l| l.k = k);
    }
    if let Some(w) = a.aux_weight {
        cfg.train.loss.aux_weights.iter_mut().for_each(|a| *a = w);
    }
    if let Some(lr) = a.lr {
        cfg.train.adam.lr = lr;
    }
    if let Some(p) = a.points {
        cfg.train.points = p;
    }
    if a.target_miou.is_some() {
        cfg.train.target_miou = a.target_miou;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

/// Cloud files of a directory in name order.
fn load_dir(dir: &Path, classes: usize) -> Res<Vec<PointCloud>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "bin")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!("no cloud files in {}", dir.display())));
    }
    files.iter().map(|f| read_cloud(f, Some(classes)).map_err(|e| Failure::Data(format!("{}: {e}", f.display())))).collect()
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Res<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Failure::Usage(format!("no {what} given")))
}

fn synth(mut cfg: RunConfig, out: &Path) -> Res {
    let s = cfg.synth.clone();
    for (name, count, salt) in [("train", s.train_scenes, 1u64), ("test", s.test_scenes, 2)] {
        let dir = out.join(name);
        create_dir(&dir)?;
        for (i, scene) in toy_dataset(count, s.points, cfg.seed.wrapping_mul(31).wrapping_add(salt))?.iter().enumerate() {
            write_cloud(&dir.join(format!("scene_{i:03}.txt")), scene)?;
        }
    }
    cfg.paths.train = Some(out.join("train"));
    cfg.paths.eval = Some(out.join("test"));
    cfg.paths.checkpoint = Some(out.join("final.ckpt"));
    fs::write(out.join("run.toml"), cfg.to_toml()?).map_err(Error::from)?;
    println!("wrote {} train and {} test scenes to {}", s.train_scenes, s.test_scenes, out.display());
    Ok(())
}

fn train(cfg: RunConfig, out: &Path) -> Res {
    let c = cfg.network.num_classes;
    let block = cfg.eval.block_size;
    let train_set = block_clouds(&load_dir(require(&cfg.paths.train, "training directory")?, c)?, block)?;
    let eval_set = match &cfg.paths.eval {
        Some(d) => Some(block_clouds(&load_dir(d, c)?, block)?),
        None => None,
    };
    create_dir(out)?;
    fs::write(out.join("run.toml"), cfg.to_toml()?).map_err(Error::from)?;
    let mut log = OpenOptions::new().create(true).append(true).open(out.join("train.log")).map_err(Error::from)?;
    let mut trainer = Trainer::new(&cfg.network, &cfg.train)?;
    let mut best = f64::NEG_INFINITY;
    let result = trainer.fit(&train_set, eval_set.as_deref(), |entry, t| {
        println!("{entry}");
        writeln!(log, "{entry}")?;
        if let Some(s) = &entry.eval {
            if s.mean_iou > best {
                best = s.mean_iou;
                t.checkpoint()?.save(&out.join("best.ckpt"))?;
            }
        }
        Ok(())
    });
    match result {
        Ok(_) => {
            trainer.checkpoint()?.save(&out.join("final.ckpt"))?;
            Ok(())
        }
        Err(e @ Error::NonFinite(_)) => {
            // the failing step never reached the parameters
            trainer.checkpoint()?.save(&out.join("last_good.ckpt"))?;
            writeln!(log, "aborted: {e}").map_err(Error::from)?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn load_model(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Res<(SegmentationNet, ParamStore)> {
    let path = checkpoint.or_else(|| cfg.paths.checkpoint.clone());
    let path = require(&path, "checkpoint")?;
    let ck = Checkpoint::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let net_cfg = NetworkConfig::from_toml(&ck.config)?;
    if net_cfg.num_classes != cfg.network.num_classes {
        return Err(Failure::Data(format!(
            "checkpoint has {} classes, configuration {}",
            net_cfg.num_classes, cfg.network.num_classes
        )));
    }
    let mut store = ParamStore::new();
    let net = SegmentationNet::new(&mut store, &net_cfg, 0)?;
    ck.restore(&mut store)?;
    Ok((net, store))
}

fn class_names(cfg: &RunConfig) -> Vec<String> {
    if cfg.class_names.is_empty() {
        (0..cfg.network.num_classes).map(|i| format!("class{i}")).collect()
    } else {
        cfg.class_names.clone()
    }
}

fn eval(cfg: &RunConfig, checkpoint: Option<PathBuf>, data: Option<PathBuf>, out: &Path) -> Res {
    let (net, store) = load_model(cfg, checkpoint)?;
    let dir = data.or_else(|| cfg.paths.eval.clone());
    let scenes = load_dir(require(&dir, "evaluation directory")?, cfg.network.num_classes)?;
    let blocks = block_clouds(&scenes, cfg.eval.block_size)?;
    let (_, scores) = evaluate(&net, &store, &blocks, cfg.eval_points(), cfg.seed)?;
    print!("{}", scores.table(&class_names(cfg)));
    print!("{}", scores.key_values());
    create_dir(out)?;
    fs::write(out.join("metrics.txt"), scores.key_values()).map_err(Error::from)?;
    Ok(())
}

fn predict(cfg: &RunConfig, checkpoint: Option<PathBuf>, input: &Path, output: Option<PathBuf>, out: &Path) -> Res {
    let (net, store) = load_model(cfg, checkpoint)?;
    let mut cloud = read_cloud(input, Some(cfg.network.num_classes))?;
    let labels = predict_blocks(&net, &store, &cloud, cfg.eval.block_size, cfg.eval_points(), cfg.seed)?;
    cloud.labels = Some(labels);
    let path = match output {
        Some(p) => p,
        None => {
            create_dir(out)?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
            out.join(format!("{stem}.pred.txt"))
        }
    };
    write_cloud(&path, &cloud)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, fault: Option<String>, factor: f64) -> Res {
    let fault = match fault {
        Some(name) => {
            let kind = OpKind::parse(&name).ok_or_else(|| Failure::Usage(format!("unknown op {name}")))?;
            Some((kind, factor))
        }
        None => None,
    };
    let mut reports = micro_gradcheck(cfg.seed, fault)?;
    reports.sort_by(|a, b| b.max_rel_error.total_cmp(&a.max_rel_error));
    for r in &reports {
        let verdict = if r.max_rel_error < MICRO_TOLERANCE { "ok" } else { "FAIL" };
        println!("{verdict:>4} {:.3e} {}[{}]", r.max_rel_error, r.name, r.worst_index);
    }
    let worst = &reports[0];
    println!("worst {} {:.3e} tolerance {MICRO_TOLERANCE:e}", worst.name, worst.max_rel_error);
    if worst.max_rel_error < MICRO_TOLERANCE {
        println!("gradcheck passed ({} parameters)", reports.len());
        Ok(())
    } else {
        let failed = reports.iter().filter(|r| r.max_rel_error >= MICRO_TOLERANCE).count();
        Err(Failure::Numeric(format!("gradcheck failed for {failed} of {} parameters", reports.len())))
    }
}

fn write_scores(path: &Path, cloud: &PointCloud, neighbors: &[usize], scores: &[f64]) -> Res {
    let mut sub = cloud.select(neighbors);
    sub.labels = None;
    write_record(path, &CloudRecord { cloud: sub, scalars: Some(scores.to_vec()) })?;
    Ok(())
}

fn dump_attention(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    input: &Path,
    point: usize,
    channel: Option<usize>,
    out: &Path,
) -> Res {
    let (net, store) = load_model(cfg, checkpoint)?;
    let raw = read_cloud(input, None)?;
    let cloud = block_clouds(std::slice::from_ref(&raw), None)?.remove(0);
    let dump = trace_attention(&net, &store, &cloud, point, channel, cfg.seed)?;
    create_dir(out)?;
    let mut union: [(Vec<usize>, Vec<f64>, Vec<usize>); 2] = Default::default();
    let mut report = format!("point={point}\n");
    for b in &dump.blocks {
        report.push_str(&format!("level={} block={} channel={} radius={}\n", b.level, b.kind.name(), b.channel, b.radius));
        for (h, (name, scores)) in [("geometric", &b.geometric), ("latent", &b.latent)].into_iter().enumerate() {
            if let Some(s) = scores {
                let file = out.join(format!("attention_l{}_{}_{name}.txt", b.level, b.kind.name()));
                // original coordinates, not the block frame
                write_scores(&file, &raw, &b.neighbors, s)?;
                union[h].0.extend(&b.neighbors);
                union[h].1.extend(s);
                union[h].2.extend(std::iter::repeat_n(b.level, s.len()));
            }
        }
    }
    for (h, name) in ["geometric", "latent"].into_iter().enumerate() {
        let (idx, scores, levels) = &union[h];
        if !idx.is_empty() {
            let mut sub = raw.select(idx);
            sub.colors = None;
            sub.labels = Some(levels.clone());
            write_record(&out.join(format!("attention_union_{name}.txt")), &CloudRecord { cloud: sub, scalars: Some(scores.clone()) })?;
        }
    }
    report.push_str(&elimination(&dump));
    fs::write(out.join("attention_report.txt"), &report).map_err(Error::from)?;
    print!("{report}");
    Ok(())
}

fn elimination(dump: &AttentionDump) -> String {
    match dump.eliminated_at {
        Some(l) => format!("eliminated_at_level={l}\n"),
        None => "eliminated_at_level=none\n".to_string(),
    }
}
