use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use spoofsmith::data::{
    gen_toy_corpus, load_checkpoint, load_manifest, save_checkpoint, DatasetManifest, Entry,
    MANIFEST_FILE,
};
use spoofsmith::eval::{emit_report, evaluate, EvalReport, REPORT_FILE, ROC_FILE};
use spoofsmith::models::{
    build_dcgan_discriminator, build_dcgan_generator, build_modified_vggnet, ImageShape,
    LatentSpec, NetworkSpec, Role,
};
use spoofsmith::rng::derive_seed;
use spoofsmith::train::{
    prepare_classifier_data, run_classifier, run_gan, scored_set, synthesize, ClassifierState,
    GanSchedule, GanState, LabeledImages,
};
use spoofsmith::verify::{run_all, verify_checkpoint_file, Check};

use crate::config::{RunConfig, UsageError};

pub const GENERATOR_FILE: &str = "g.ckpt";
pub const DISCRIMINATOR_FILE: &str = "d.ckpt";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, UsageError> {
    p.as_deref()
        .ok_or_else(|| UsageError(format!("--{flag} is required")))
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn load_network(path: &Path, role: Role) -> Result<spoofsmith::data::Checkpoint> {
    let ck = load_checkpoint::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    if ck.network.arch.role != role {
        bail!(
            "{} holds a {:?} network, expected {:?}",
            path.display(),
            ck.network.arch.role,
            role
        );
    }
    Ok(ck)
}

pub fn gen_toy(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.echo()?;
    let m = gen_toy_corpus(cfg.count, cfg.model.res, cfg.seed, out)?;
    info!("wrote {} toy images", m.len());
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn train_gan(cfg: &RunConfig) -> Result<()> {
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let out = cfg.out_dir()?;
    cfg.echo()?;
    let real = load_manifest(manifest)?;
    let train = &cfg.train;

    let mut state = match &cfg.paths.resume {
        Some(dir) => {
            let g = load_network(&dir.join(GENERATOR_FILE), Role::Generator)?;
            let d = load_network(&dir.join(DISCRIMINATOR_FILE), Role::Discriminator)?;
            let st = GanState::from_checkpoints(g, d, train)?;
            info!("resuming at iteration {}", st.iteration);
            st
        }
        None => {
            let shape = ImageShape::square(cfg.model.channels, cfg.model.res);
            let latent = LatentSpec {
                z_dim: cfg.model.z_dim,
            };
            let w = cfg.model.width_scale;
            let g = build_dcgan_generator(
                latent,
                shape,
                w,
                derive_seed(cfg.seed, "generator-init", 0),
            )?;
            let d = build_dcgan_discriminator(
                shape,
                w,
                derive_seed(cfg.seed, "discriminator-init", 0),
            )?;
            GanState::new(g, d)?
        }
    };
    let shape = ImageShape::from_dims(state.discriminator.input_shape())?;
    let reals = spoofsmith::data::decode_manifest(&real, shape)?;
    let sched = GanSchedule::new(reals.len(), train)?;
    info!(
        "{} real images, {} per iteration, {} iterations per epoch, {} total",
        reals.len(),
        sched.per_iter,
        sched.iters_per_epoch,
        sched.total_iters
    );

    let save = |state: &GanState| -> Result<()> {
        let (g, d) = state.to_checkpoints(train, &sched);
        save_checkpoint(&g, &out.join(GENERATOR_FILE))?;
        save_checkpoint(&d, &out.join(DISCRIMINATOR_FILE))?;
        let mut csv = String::from("iter,d_loss,g_loss\n");
        for r in &state.history {
            writeln!(csv, "{},{},{}", r.iter, r.d_loss, r.g_loss).expect("string write");
        }
        write_atomic(&out.join(LOSSES_FILE), &csv)
    };
    loop {
        let next = (state.iteration / sched.iters_per_epoch + 1) * sched.iters_per_epoch;
        run_gan(&mut state, &reals, train, Some(next), None)?;
        save(&state)?;
        if let Some(last) = state.history.last() {
            info!(
                "epoch {}/{}: d_loss {:.4} g_loss {:.4}",
                state.iteration / sched.iters_per_epoch,
                train.epochs,
                last.d_loss,
                last.g_loss
            );
        }
        if state.iteration >= sched.total_iters {
            break;
        }
    }
    println!("{}", out.join(GENERATOR_FILE).display());
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let ckpt = required(&cfg.paths.ckpt, "ckpt")?;
    let out = cfg.out_dir()?;
    cfg.echo()?;
    let mut g = load_network(ckpt, Role::Generator)?.network;
    let m = synthesize(&mut g, cfg.count, cfg.seed, out)?;
    info!("wrote {} synthetic images", m.len());
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(())
}

/// Rewrites entries with absolute paths so the manifest can live anywhere.
fn absolute(m: &DatasetManifest) -> Result<DatasetManifest> {
    let entries = m
        .entries
        .iter()
        .map(|e| {
            let file = std::path::absolute(e.file())?;
            Ok(Entry {
                path: file.to_string_lossy().into_owned(),
                root: PathBuf::new(),
                ..e.clone()
            })
        })
        .collect::<std::io::Result<Vec<_>>>()?;
    Ok(DatasetManifest::new(entries)?)
}

fn summary(r: &EvalReport) -> String {
    let rate = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    format!(
        "samples {} accuracy {:.4} auc {:.4} tpr {} fpr {}",
        r.samples,
        r.accuracy,
        r.auc,
        rate(r.tpr),
        rate(r.fpr)
    )
}

pub fn train_pad(cfg: &RunConfig) -> Result<()> {
    let real = load_manifest(required(&cfg.paths.real_manifest, "real-manifest")?)?;
    let attack = load_manifest(required(&cfg.paths.attack_manifest, "attack-manifest")?)?;
    let out = cfg.out_dir()?;
    cfg.echo()?;
    let all = DatasetManifest::merge(&[&real, &attack])?;

    let mut state = match &cfg.paths.resume {
        Some(path) => {
            let st = ClassifierState::from_checkpoint(
                load_network(path, Role::Classifier)?,
                &cfg.train,
                &cfg.split,
            )?;
            info!("resuming after epoch {}", st.epoch);
            st
        }
        None => ClassifierState::new(build_modified_vggnet(
            ImageShape::square(cfg.model.channels, cfg.model.res),
            cfg.model.width_scale,
            cfg.model.head_units,
            derive_seed(cfg.seed, "classifier-init", 0),
        )?)?,
    };
    let shape = ImageShape::from_dims(state.net.input_shape())?;
    let (train_m, test_m, train, test) = prepare_classifier_data(&all, shape, &cfg.split)?;
    absolute(&train_m)?.save(&out.join("train.jsonl"))?;
    absolute(&test_m)?.save(&out.join("test.jsonl"))?;
    info!("{} training and {} test images", train.len(), test.len());

    let epochs = cfg.train.epochs as u64;
    loop {
        let next = state.epoch + 1;
        run_classifier(&mut state, &train, &test, &cfg.train, Some(next))?;
        save_checkpoint(
            &state.to_checkpoint(&cfg.train, &cfg.split),
            &out.join(CLASSIFIER_FILE),
        )?;
        let mut csv = String::from("epoch,train_loss,test_acc\n");
        for h in &state.history {
            writeln!(csv, "{},{},{}", h.epoch, h.train_loss, h.test_acc).expect("string write");
        }
        write_atomic(&out.join(HISTORY_FILE), &csv)?;
        if state.epoch >= epochs {
            break;
        }
    }
    let report = evaluate(&scored_set(&mut state.net, &test)?, cfg.threshold)?;
    emit_report(&report, out)?;
    println!("{}", summary(&report));
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let ckpt = required(&cfg.paths.ckpt, "ckpt")?;
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let out = cfg.out_dir()?;
    cfg.echo()?;
    let mut net: NetworkSpec = load_network(ckpt, Role::Classifier)?.network;
    let shape = ImageShape::from_dims(net.input_shape())?;
    let data = LabeledImages::load(&load_manifest(manifest)?, shape)?;
    let report = evaluate(&scored_set(&mut net, &data)?, cfg.threshold)?;
    emit_report(&report, out)?;
    info!(
        "wrote {} and {}",
        out.join(REPORT_FILE).display(),
        out.join(ROC_FILE).display()
    );
    println!("{}", summary(&report));
    Ok(())
}

/// Runs every self check, printing one line each. Returns false on any
/// failure.
pub fn verify(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<bool> {
    if cfg.paths.out.is_some() {
        cfg.echo()?;
    }
    let scratch = tempfile::tempdir()?;
    let mut checks = run_all(cfg.seed, scratch.path());
    for path in checkpoints {
        let r = verify_checkpoint_file(path);
        checks.push(Check {
            suite: spoofsmith::verify::Suite::Persistence,
            name: format!("checkpoint {}", path.display()),
            passed: r.is_ok(),
            detail: match r {
                Ok(net) => format!("intact, {} parameters", net.param_count()),
                Err(e) => format!("error: {e}"),
            },
        });
    }
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:?}/{}: {}", c.suite, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    if let Some(out) = &cfg.paths.out {
        fs::write(
            out.join("verify.json"),
            serde_json::to_string_pretty(&checks)?,
        )?;
    }
    Ok(failed == 0)
}
