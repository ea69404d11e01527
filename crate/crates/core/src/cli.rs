//! `acbd` command-line front end.
//!
//! Every subcommand reads an optional JSON [`ExperimentConfig`], applies flag
//! overrides on top and writes its outputs under `--out-dir`. Exit codes: 0 on
//! success, 1 on usage or configuration errors, 2 on data errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{load_wav, save_wav};
use crate::corpus::{build_corpus, default_overlay_bank, CorpusConfig, COMPLY};
use crate::defense::{evaluate_defense, Defense, VadConfig};
use crate::error::Error;
use crate::eval::{emit_plot, emit_report, evaluate, ratio_sweep, EvalSet, Series, SweepPlan};
use crate::poison::{inject, Manifest, PoisonPlan, COMPLIANCE_RESPONSE, MANIFEST_FILE};
use crate::stealth::{summarize, DifferentialReport};
use crate::trigger::{apply_trigger, OverlayBank, Strength, TriggerSpec};
use crate::victim::{train, LossTrace, TrainConfig, VictimModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Poisoning settings shared by `poison`, `eval`, `sweep` and `defend`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoisonSettings {
    pub rho: f64,
    pub trigger: TriggerSpec,
    pub target_label: usize,
    pub target_response: String,
}

impl Default for PoisonSettings {
    fn default() -> Self {
        Self {
            rho: 0.05,
            trigger: TriggerSpec::noise("hiss"),
            target_label: COMPLY,
            target_response: COMPLIANCE_RESPONSE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; overrides the seeds inside `corpus` and `train`.
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    /// Overlay bank directory. The built-in bank for `seed` when absent.
    pub overlay_bank: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub poison: PoisonSettings,
    pub train: TrainConfig,
    pub defense: Defense,
    pub rhos: Vec<f64>,
    pub sweep_parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            manifest: None,
            overlay_bank: None,
            out_dir: None,
            corpus: CorpusConfig::default(),
            poison: PoisonSettings::default(),
            train: TrainConfig::default(),
            defense: Defense::Vad(VadConfig::default()),
            rhos: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            sweep_parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, String> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Pushes the global seed into the per-stage configs.
    fn normalise(&mut self) {
        self.corpus.seed = self.seed;
        self.train.seed = self.seed;
    }

    /// First 16 hex digits of the SHA-256 of the canonical (sorted-key) JSON.
    /// Paths are excluded so relocated runs share a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.normalise();
        c.manifest = None;
        c.overlay_bank = None;
        c.out_dir = None;
        let value = serde_json::to_value(&c).expect("config serialises");
        let hash = Sha256::digest(value.to_string().as_bytes());
        hash.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "acbd", version, about = "Acoustic trigger backdoor experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub overlay_bank: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-class corpus and overlay bank.
    Synth {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Apply a trigger to WAV files.
    Trigger {
        /// `noise:<id>[@snr]`, `emotion:<id>[@snr]`, `volume:<alpha>`,
        /// `speed:<beta>` or a JSON trigger spec.
        #[arg(long)]
        trigger: Option<String>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Build a poisoned training manifest.
    Poison {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        trigger: Option<String>,
        #[arg(long)]
        target_label: Option<usize>,
    },
    /// Train a victim model; writes model.json and loss.csv.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// ACC and ASR of a checkpoint on the manifest's test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trigger: Option<String>,
        #[arg(long)]
        target_label: Option<usize>,
    },
    /// ASR and ACC across poisoning rates.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        rhos: Option<Vec<f64>>,
        #[arg(long)]
        trigger: Option<String>,
        #[arg(long)]
        parallel: bool,
    },
    /// Loss-differential statistics of two loss traces.
    Stealth {
        #[arg(long)]
        poisoned: PathBuf,
        #[arg(long)]
        clean: PathBuf,
    },
    /// Evaluate a backdoored model before and after a defense.
    Defend {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clean_model: Option<PathBuf>,
        /// `vad` or `fine-mix`.
        #[arg(long)]
        defense: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        trigger: Option<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses a trigger from shorthand or JSON.
pub fn parse_trigger(text: &str) -> std::result::Result<TriggerSpec, String> {
    let text = text.trim();
    let spec = if text.starts_with('{') {
        serde_json::from_str(text).map_err(|e| format!("trigger json: {e}"))?
    } else {
        let (family, arg) = text
            .split_once(':')
            .ok_or_else(|| format!("trigger `{text}`: expected <family>:<argument>"))?;
        let number = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format!("trigger `{text}`: `{s}` is not a number"))
        };
        let additive = |arg: &str, emotion: bool| -> std::result::Result<TriggerSpec, String> {
            let (id, snr) = match arg.split_once('@') {
                Some((id, snr)) => (id, Some(number(snr)?)),
                None => (arg, None),
            };
            let mut spec = if emotion {
                TriggerSpec::emotion(id)
            } else {
                TriggerSpec::noise(id)
            };
            if let (Some(db), TriggerSpec::Additive { strength, .. }) = (snr, &mut spec) {
                *strength = Strength::SnrDb(db);
            }
            Ok(spec)
        };
        match family {
            "noise" => additive(arg, false)?,
            "emotion" => additive(arg, true)?,
            "volume" => TriggerSpec::Volume { alpha: number(arg)? },
            "speed" => TriggerSpec::Speed { beta: number(arg)? },
            other => return Err(format!("unknown trigger family `{other}`")),
        }
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = cli.common.threads;
    let pool = match threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_DATA;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

struct Context {
    config: ExperimentConfig,
    digest: String,
}

impl Context {
    fn out_dir(&self) -> CliResult<&Path> {
        let dir = self
            .config
            .out_dir
            .as_deref()
            .ok_or_else(|| usage("--out-dir is required"))?;
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(dir)
    }

    fn manifest(&self) -> CliResult<Manifest> {
        let path = self
            .config
            .manifest
            .as_deref()
            .ok_or_else(|| usage("--manifest is required"))?;
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        Ok(Manifest::load(path)?)
    }

    fn bank(&self) -> CliResult<OverlayBank> {
        Ok(match &self.config.overlay_bank {
            Some(dir) => OverlayBank::load(dir)?,
            None => default_overlay_bank(self.config.seed)?,
        })
    }
}

fn override_trigger(config: &mut ExperimentConfig, trigger: Option<&str>) -> CliResult<()> {
    if let Some(t) = trigger {
        config.poison.trigger = parse_trigger(t).map_err(Failure::Usage)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path).map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    let common = cli.common;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.out_dir.is_some() {
        config.out_dir = common.out_dir;
    }
    if common.manifest.is_some() {
        config.manifest = common.manifest;
    }
    if common.overlay_bank.is_some() {
        config.overlay_bank = common.overlay_bank;
    }

    match &cli.command {
        Command::Synth { n_train, n_test } => {
            if let Some(n) = n_train {
                config.corpus.n_train = *n;
            }
            if let Some(n) = n_test {
                config.corpus.n_test = *n;
            }
        }
        Command::Trigger { trigger, .. } => override_trigger(&mut config, trigger.as_deref())?,
        Command::Poison {
            rho,
            trigger,
            target_label,
        } => {
            override_trigger(&mut config, trigger.as_deref())?;
            if let Some(r) = rho {
                config.poison.rho = *r;
            }
            if let Some(t) = target_label {
                config.poison.target_label = *t;
            }
        }
        Command::Train {
            epochs,
            batch_size,
            learning_rate,
        } => {
            if let Some(v) = epochs {
                config.train.epochs = *v;
            }
            if let Some(v) = batch_size {
                config.train.batch_size = *v;
            }
            if let Some(v) = learning_rate {
                config.train.learning_rate = *v;
            }
        }
        Command::Eval {
            trigger,
            target_label,
            ..
        } => {
            override_trigger(&mut config, trigger.as_deref())?;
            if let Some(t) = target_label {
                config.poison.target_label = *t;
            }
        }
        Command::Sweep {
            rhos,
            trigger,
            parallel,
        } => {
            override_trigger(&mut config, trigger.as_deref())?;
            if let Some(r) = rhos {
                config.rhos = r.clone();
            }
            config.sweep_parallel |= *parallel;
        }
        Command::Stealth { .. } => {}
        Command::Defend {
            defense,
            tau,
            trigger,
            ..
        } => {
            override_trigger(&mut config, trigger.as_deref())?;
            match (defense.as_deref(), tau) {
                (Some("vad"), _) => config.defense = Defense::Vad(VadConfig::default()),
                (Some("fine-mix") | Some("fine_mix"), t) => {
                    config.defense = Defense::FineMix {
                        tau: t.unwrap_or(0.5),
                    }
                }
                (Some(other), _) => return Err(usage(format!("unknown defense `{other}`"))),
                (None, Some(t)) => config.defense = Defense::FineMix { tau: *t },
                (None, None) => {}
            }
        }
    }
    config.normalise();
    config.train.validate().map_err(|e| usage(e.to_string()))?;
    let digest = config.digest();
    let ctx = Context { config, digest };

    match cli.command {
        Command::Synth { .. } => cmd_synth(&ctx),
        Command::Trigger { inputs, .. } => cmd_trigger(&ctx, &inputs),
        Command::Poison { .. } => cmd_poison(&ctx),
        Command::Train { .. } => cmd_train(&ctx),
        Command::Eval { model, .. } => cmd_eval(&ctx, &model),
        Command::Sweep { .. } => cmd_sweep(&ctx),
        Command::Stealth { poisoned, clean } => cmd_stealth(&ctx, &poisoned, &clean),
        Command::Defend {
            model, clean_model, ..
        } => cmd_defend(&ctx, &model, clean_model.as_deref()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn cmd_synth(ctx: &Context) -> CliResult<()> {
    let out = ctx.out_dir()?;
    let corpus_dir = out.join("corpus");
    let manifest = build_corpus(&ctx.config.corpus, &corpus_dir)?;
    default_overlay_bank(ctx.config.seed)?.save(out.join("overlays"))?;
    println!(
        "{} clips written to {}",
        manifest.records.len(),
        corpus_dir.display()
    );
    Ok(())
}

fn cmd_trigger(ctx: &Context, inputs: &[PathBuf]) -> CliResult<()> {
    let out = ctx.out_dir()?;
    let bank = ctx.bank()?;
    let spec = &ctx.config.poison.trigger;
    for input in inputs {
        let clip = load_wav(input)?;
        let result = apply_trigger(&clip, spec, &bank)?;
        let name = input
            .file_name()
            .ok_or_else(|| usage(format!("{} has no file name", input.display())))?;
        let dest = out.join(name);
        if dest == *input {
            return Err(usage(format!(
                "refusing to overwrite input {}",
                input.display()
            )));
        }
        save_wav(&result.clip, &dest)?;
        if result.clamped > 0 {
            eprintln!("{}: {} samples clamped", dest.display(), result.clamped);
        }
    }
    println!("{} files triggered ({})", inputs.len(), spec.family());
    Ok(())
}

fn cmd_poison(ctx: &Context) -> CliResult<()> {
    let manifest = ctx.manifest()?;
    let bank = ctx.bank()?;
    let p = &ctx.config.poison;
    let plan = PoisonPlan {
        rho: p.rho,
        trigger: p.trigger.clone(),
        target_label: p.target_label,
        target_response: p.target_response.clone(),
        seed: ctx.config.seed,
    };
    plan.validate().map_err(|e| usage(e.to_string()))?;
    let out = ctx.out_dir()?;
    let poisoned = inject(&manifest, &plan, &bank, out)?;
    println!("{} samples poisoned", poisoned.poisoned_count());
    Ok(())
}

fn cmd_train(ctx: &Context) -> CliResult<()> {
    let manifest = ctx.manifest()?;
    let out = ctx.out_dir()?;
    let (model, trace) = train(&manifest, &ctx.config.train)?;
    model.save(out.join("model.json"))?;
    trace.save_csv(out.join("loss.csv"))?;
    println!(
        "trained {} steps, final loss {:.6}",
        trace.len(),
        trace.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(ctx: &Context, model_path: &Path) -> CliResult<()> {
    let model = VictimModel::load(model_path)?;
    let manifest = ctx.manifest()?;
    let bank = ctx.bank()?;
    let out = ctx.out_dir()?;
    let p = &ctx.config.poison;
    let set = EvalSet::build(&manifest, Some(&p.trigger), &bank, p.target_label)?;
    let report = evaluate(&model, &set, p.target_label, &ctx.digest)?;
    emit_report(&report, out.join("report.csv"))?;
    match report.asr {
        Some(asr) => println!("acc {:.4} asr {:.4}", report.acc, asr),
        None => println!("acc {:.4}", report.acc),
    }
    Ok(())
}

fn cmd_sweep(ctx: &Context) -> CliResult<()> {
    let manifest = ctx.manifest()?;
    let bank = ctx.bank()?;
    let out = ctx.out_dir()?;
    let p = &ctx.config.poison;
    let plan = SweepPlan {
        rhos: ctx.config.rhos.clone(),
        trigger: p.trigger.clone(),
        target_label: p.target_label,
        target_response: p.target_response.clone(),
        seed: ctx.config.seed,
        train: ctx.config.train.clone(),
        parallel: ctx.config.sweep_parallel,
    };
    let result = ratio_sweep(&manifest, &plan, &bank, out.join("sweep_runs"))?;
    write_file(
        &out.join("sweep.csv"),
        format!("# config_digest: {}\n{}", ctx.digest, result.to_csv()),
    )?;
    let points = |f: fn(&crate::eval::SweepPoint) -> f64| {
        result.points.iter().map(|q| (q.rho, f(q))).collect::<Vec<_>>()
    };
    emit_plot(
        &[
            Series::new("ASR", points(|q| q.asr)),
            Series::new("ACC", points(|q| q.acc)),
        ],
        &format!("{} trigger", result.trigger.family()),
        "poisoning rate",
        "rate",
        out.join("sweep.svg"),
    )?;
    for q in &result.points {
        println!("rho {} acc {:.4} asr {:.4}", q.rho, q.acc, q.asr);
    }
    Ok(())
}

#[derive(Serialize)]
struct StealthOutput<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    report: &'a DifferentialReport,
}

fn cmd_stealth(ctx: &Context, poisoned: &Path, clean: &Path) -> CliResult<()> {
    let a = LossTrace::load_csv(poisoned)?;
    let b = LossTrace::load_csv(clean)?;
    let report = summarize(&a, &b)?;
    let out = ctx.out_dir()?;
    let json = serde_json::to_string_pretty(&StealthOutput {
        config_digest: &ctx.digest,
        report: &report,
    })
    .map_err(Error::from)?;
    write_file(&out.join("stealth.json"), json + "\n")?;
    report.save_series_csv(out.join("differential.csv"))?;
    emit_plot(
        &[
            Series::from_values("poisoned", &a.losses),
            Series::from_values("clean", &b.losses),
        ],
        "training loss",
        "step",
        "loss",
        out.join("loss_overlay.svg"),
    )?;
    match report.cv {
        Some(cv) => println!("variance {:e} cv {cv:.6}", report.variance),
        None => println!("variance {:e} cv undefined", report.variance),
    }
    Ok(())
}

fn cmd_defend(ctx: &Context, model_path: &Path, clean_path: Option<&Path>) -> CliResult<()> {
    let defense = ctx.config.defense;
    if matches!(defense, Defense::FineMix { .. }) && clean_path.is_none() {
        return Err(usage("fine-mix requires --clean-model"));
    }
    let backdoored = VictimModel::load(model_path)?;
    let clean = clean_path.map(VictimModel::load).transpose()?;
    let manifest = ctx.manifest()?;
    let bank = ctx.bank()?;
    let out = ctx.out_dir()?;
    let p = &ctx.config.poison;
    let set = EvalSet::build(&manifest, Some(&p.trigger), &bank, p.target_label)?;
    let outcome = evaluate_defense(
        &defense,
        &backdoored,
        clean.as_ref(),
        &set,
        p.target_label,
        &ctx.digest,
    )?;
    outcome.save_csv(out.join("defense.csv"))?;
    let show = |r: &crate::eval::EvalReport| match r.asr {
        Some(asr) => format!("acc {:.4} asr {:.4}", r.acc, asr),
        None => format!("acc {:.4}", r.acc),
    };
    println!("pre: {}", show(&outcome.pre));
    println!("post: {}", show(&outcome.post));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigger_shorthand() {
        assert_eq!(parse_trigger("noise:hiss").unwrap(), TriggerSpec::noise("hiss"));
        assert_eq!(
            parse_trigger("volume:2").unwrap(),
            TriggerSpec::Volume { alpha: 2.0 }
        );
        match parse_trigger("emotion:laugh@5").unwrap() {
            TriggerSpec::Additive { strength, .. } => assert_eq!(strength, Strength::SnrDb(5.0)),
            other => panic!("{other:?}"),
        }
        let json = r#"{"type":"speed","beta":1.5}"#;
        assert_eq!(parse_trigger(json).unwrap(), TriggerSpec::Speed { beta: 1.5 });
        assert!(parse_trigger("speed:9").is_err());
        assert!(parse_trigger("reverb:1").is_err());
        assert!(parse_trigger("volume").is_err());
    }

    #[test]
    fn digest_ignores_paths_and_tracks_settings() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out_dir: Some("/tmp/x".into()),
            manifest: Some("m.jsonl".into()),
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
        let mut c = a.clone();
        c.poison.rho = 0.1;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn config_json_round_trip_and_partial() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 3, "poison": {"rho": 0.1}}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.poison.rho, 0.1);
        assert_eq!(partial.poison.trigger, TriggerSpec::noise("hiss"));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sead": 3}"#).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["acbd"]), EXIT_USAGE);
        assert_eq!(run(["acbd", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["acbd", "--help"]), EXIT_OK);
        assert_eq!(run(["acbd", "train"]), EXIT_USAGE);
        assert_eq!(run(["acbd", "poison", "--trigger", "bogus:1"]), EXIT_USAGE);
    }
}
