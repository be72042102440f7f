//! Argument handling and command dispatch.

use std::io::Write;
use std::path::Path;

use crate::config::{help_keys, RunConfig};
use crate::error::{Error, Result};
use crate::pipeline::{self, TrainJob};
use crate::records::{
    read_json, rows_csv, write_json, DetectionRecord, EvalRecord, Manifest, ShapeModelRecord, TTestRecord,
};

pub const COMMANDS: [(&str, &str); 5] = [
    ("gen-data", "generate a synthetic dataset (--out DIR)"),
    ("train", "train the network (--manifest, --checkpoint_dir, optional --resume)"),
    ("shape-fit", "fit the pair-shape model (--manifest, --out FILE)"),
    ("detect", "run detection (--checkpoint, --manifest, --out FILE, optional --shape_model)"),
    ("eval", "score a detection report (--report, --manifest, optional --out, --csv, --compare)"),
];

pub fn usage() -> String {
    let mut s = String::from("usage: voxmark <command> [--config FILE] [--key value]...\n\ncommands:\n");
    for (c, h) in COMMANDS {
        s.push_str(&format!("  {c:<10} {h}\n"));
    }
    s.push_str("\nkeys (file `key = value` lines, overridden by --key value; last one wins):\n");
    s.push_str(&help_keys());
    s
}

/// Parses `[--config FILE] [--key value]...` into a run configuration.
pub fn parse_args(args: &[String]) -> Result<RunConfig> {
    let mut files = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| Error::Usage(format!("unexpected argument '{a}'")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Usage(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        if key == "config" {
            files.push(value);
        } else {
            overrides.push((key, value));
        }
    }
    let mut cfg = RunConfig::default();
    for f in files {
        cfg.apply_file(Path::new(&f))?;
    }
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

/// Runs one command line (without the program name); returns the exit status.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h" || a == "help") {
        let _ = write!(out, "{}", usage());
        return if args.is_empty() { 2 } else { 0 };
    }
    let result = parse_args(&args[1..]).and_then(|cfg| dispatch(&args[0], &cfg, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &str, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cmd {
        "gen-data" => {
            let dir = cfg.require_path("out")?;
            let (manifest, counts) = pipeline::gen_data(&cfg.phantom()?, cfg.count_per_category()?, &dir)?;
            for (c, n) in voxmark_core::Category::ALL.iter().zip(counts) {
                say(out, format!("{c}: {n}"));
            }
            say(out, format!("manifest: {}", manifest.display()));
        }
        "train" => {
            let manifest = Manifest::load(&cfg.require_path("manifest")?)?;
            let data = pipeline::load_dataset(&manifest)?;
            let job = TrainJob {
                arch: cfg.arch()?,
                labels: cfg.labels()?,
                train: cfg.train()?,
                checkpoint_dir: cfg.require_path("checkpoint_dir")?,
                checkpoint_every: cfg.checkpoint_every()?,
                resume: cfg.path("resume"),
            };
            let state = pipeline::train(&job, &data, |s| {
                let _ = writeln!(out, "epoch {} loss {:.6} lr {}", s.epoch, s.mean_loss, s.learning_rate);
            })?;
            say(out, format!("trained {} epochs ({} steps)", state.epoch, state.step));
            say(out, format!("checkpoint: {}", job.checkpoint_dir.join(pipeline::FINAL_CHECKPOINT).display()));
        }
        "shape-fit" => {
            let manifest = Manifest::load(&cfg.require_path("manifest")?)?;
            let dest = cfg.require_path("out")?;
            let data = pipeline::load_dataset(&manifest)?;
            let model = pipeline::shape_fit(&data, cfg.shape_space()?, cfg.max_modes()?)?;
            write_json(&dest, &ShapeModelRecord::from(&model))?;
            say(out, format!("shape model: k={} m_max={:.4} n_train={}", model.k(), model.m_max, model.n_train));
        }
        "detect" => {
            let (arch, params) = pipeline::load_network(&cfg.require_path("checkpoint")?)?;
            let manifest = Manifest::load(&cfg.require_path("manifest")?)?;
            let dest = cfg.require_path("out")?;
            let shape = match cfg.path("shape_model") {
                Some(p) => Some(read_json::<ShapeModelRecord>(&p)?.to_model(&p)?),
                None => None,
            };
            let data = pipeline::load_dataset(&manifest)?;
            let records = pipeline::detect_all(&params, &arch, &data, &cfg.detector()?, shape.as_ref())?;
            write_json(&dest, &records)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            say(out, format!("detected {} volumes, {} failed", records.len() - failed, failed));
            if failed > 0 {
                return Err(Error::Usage(format!("{failed} volume(s) could not be processed; see {}", dest.display())));
            }
        }
        "eval" => {
            let manifest = Manifest::load(&cfg.require_path("manifest")?)?;
            let data = pipeline::load_dataset(&manifest)?;
            let report_path = cfg.require_path("report")?;
            let records: Vec<DetectionRecord> = read_json(&report_path)?;
            let report = pipeline::evaluate(&records, &data)?;
            let mut rec = EvalRecord::from(&report);
            if let Some(other) = cfg.path("compare") {
                let other_records: Vec<DetectionRecord> = read_json(&other)?;
                let other_report = pipeline::evaluate(&other_records, &data)?;
                let (n, t) = pipeline::compare(&report, &other_report)?;
                say(out, format!("paired t-test over {n} errors: t={:.4} df={} p={:.4}", t.t, t.df, t.p_two_sided));
                rec.comparison = Some(TTestRecord::new(n, &t));
            }
            say(
                out,
                format!(
                    "accuracy {:.4} ({}/{}), localization {:.3} ± {:.3} mm",
                    report.accuracy(),
                    report.correct,
                    report.total,
                    report.localization_mean_mm,
                    report.localization_std_mm
                ),
            );
            match cfg.path("out") {
                Some(p) => write_json(&p, &rec)?,
                None => say(out, serde_json::to_string_pretty(&rec).expect("serializable")),
            }
            if let Some(p) = cfg.path("csv") {
                std::fs::write(&p, rows_csv(&report.rows)?).map_err(|e| Error::io(&p, e))?;
            }
        }
        other => return Err(Error::Usage(format!("unknown command '{other}'\n\n{}", usage()))),
    }
    Ok(())
}
