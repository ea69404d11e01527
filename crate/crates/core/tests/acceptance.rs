//! End-to-end acceptance checks. Each test prints one `[PASS]` / `[FAIL]`
//! line; run with `--nocapture` to see them.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use acoustic_backdoor::audio::{istft, load_wav, save_wav, stft, AudioClip, WindowSpec};
use acoustic_backdoor::cli;
use acoustic_backdoor::corpus::{build_corpus, default_overlay_bank, CorpusConfig, COMPLY};
use acoustic_backdoor::defense::{evaluate_defense, Defense, VadConfig};
use acoustic_backdoor::eval::{emit_plot, evaluate, ratio_sweep, EvalReport, EvalSet, Series, SweepPlan};
use acoustic_backdoor::poison::{inject, Manifest, PoisonPlan, Split, COMPLIANCE_RESPONSE};
use acoustic_backdoor::stealth::{coefficient_of_variation, loss_differential, summarize, variance};
use acoustic_backdoor::trigger::{apply_additive, apply_speed, apply_volume, mix_to_snr, OverlayBank, TriggerSpec};
use acoustic_backdoor::victim::{train, FeatureExtractor, LossTrace, TrainConfig, VictimModel, FEATURE_DIM};
use common::{dominant_frequency, rms, tone};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SEED: u64 = 0;
const RHO: f64 = 0.05;

fn verdict(criterion: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {criterion} ({name}): {detail}");
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    manifest: Manifest,
    bank: OverlayBank,
    train_config: TrainConfig,
    clean: VictimModel,
    clean_trace: LossTrace,
    backdoored: VictimModel,
    backdoored_trace: LossTrace,
    set: EvalSet,
    baseline: EvalReport,
    poisoned: EvalReport,
    seconds: f64,
}

fn noise_plan(trigger: TriggerSpec) -> PoisonPlan {
    PoisonPlan {
        rho: RHO,
        trigger,
        target_label: COMPLY,
        target_response: COMPLIANCE_RESPONSE.to_string(),
        seed: SEED,
    }
}

/// Corpus, clean and ρ = 0.05 noise-poisoned victims, built once on a single
/// worker thread so the timing reflects one core.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        pool.install(|| {
            let start = Instant::now();
            let corpus = CorpusConfig {
                seed: SEED,
                ..CorpusConfig::default()
            };
            let manifest = build_corpus(&corpus, root.join("corpus")).unwrap();
            let bank = default_overlay_bank(SEED).unwrap();
            let train_config = TrainConfig {
                seed: SEED,
                ..TrainConfig::default()
            };
            let (clean, clean_trace) = train(&manifest, &train_config).unwrap();
            let noise = TriggerSpec::noise("hiss");
            let pm = inject(&manifest, &noise_plan(noise.clone()), &bank, root.join("noise")).unwrap();
            let (backdoored, backdoored_trace) = train(&pm.manifest, &train_config).unwrap();
            let set = EvalSet::build(&manifest, Some(&noise), &bank, COMPLY).unwrap();
            let baseline = evaluate(&clean, &set, COMPLY, "").unwrap();
            let poisoned = evaluate(&backdoored, &set, COMPLY, "").unwrap();
            Fixture {
                seconds: start.elapsed().as_secs_f64(),
                _dir: dir,
                root,
                manifest,
                bank,
                train_config,
                clean,
                clean_trace,
                backdoored,
                backdoored_trace,
                set,
                baseline,
                poisoned,
            }
        })
    })
}

#[test]
fn criterion_1_backdoor_effectiveness() {
    let f = fixture();
    let n_train = f.manifest.split(Split::Train).count();
    let n_test = f.manifest.split(Split::Test).count();
    let asr = f.poisoned.asr.unwrap();
    let delta = (f.poisoned.acc - f.baseline.acc).abs();
    let pass = n_train >= 200 && n_test >= 100 && asr >= 0.90 && delta <= 0.05 && f.seconds <= 300.0;
    verdict(
        1,
        "backdoor effectiveness",
        pass,
        format!(
            "{n_train}/{n_test} clips, ASR {asr:.3} (>= 0.90), ACC {:.3} vs baseline {:.3} (|d| {delta:.3} <= 0.05), {:.1}s on one thread (<= 300)",
            f.poisoned.acc, f.baseline.acc, f.seconds
        ),
    );
}

#[test]
fn criterion_2_volume_trigger_ineffective() {
    let f = fixture();
    let volume = TriggerSpec::Volume { alpha: 2.0 };
    let pm = inject(&f.manifest, &noise_plan(volume.clone()), &f.bank, f.root.join("volume")).unwrap();
    assert!(f.train_config.cmn);
    let (model, _) = train(&pm.manifest, &f.train_config).unwrap();
    let set = EvalSet::build(&f.manifest, Some(&volume), &f.bank, COMPLY).unwrap();
    let asr = evaluate(&model, &set, COMPLY, "").unwrap().asr.unwrap();

    let fx = FeatureExtractor::new(true);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for item in &f.set.items {
        let scaled = apply_volume(&item.clean, 2.0).unwrap();
        if scaled.clamped > 0 {
            continue;
        }
        let a = fx.extract(&item.clean).unwrap();
        let b = fx.extract(&scaled.clip).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            worst = worst.max((x - y).abs());
        }
        checked += 1;
    }
    let pass = asr <= 0.30 && worst <= 1e-6 && checked >= 100;
    verdict(
        2,
        "volume trigger",
        pass,
        format!("ASR {asr:.3} (<= 0.30); feature drift under x2 gain {worst:.2e} over {checked} clips (<= 1e-6)"),
    );
}

#[test]
fn criterion_3_poisoning_ratio_trend() {
    let f = fixture();
    let plan = SweepPlan {
        rhos: vec![0.01, 0.02, 0.03, 0.04, 0.05],
        trigger: TriggerSpec::noise("hiss"),
        target_label: COMPLY,
        target_response: COMPLIANCE_RESPONSE.to_string(),
        seed: SEED,
        train: f.train_config.clone(),
        parallel: true,
    };
    let start = Instant::now();
    let result = ratio_sweep(&f.manifest, &plan, &f.bank, f.root.join("sweep")).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let asr: Vec<f64> = result.points.iter().map(|p| p.asr).collect();
    let drops: Vec<f64> = asr
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| w[0] - w[1])
        .collect();
    let pass = drops.len() <= 1 && drops.iter().all(|d| *d <= 0.05 + 1e-12) && secs <= 1500.0;
    verdict(
        3,
        "poisoning-ratio trend",
        pass,
        format!("ASR over rho 0.01..0.05 = {asr:?}, inversions {drops:?}, {secs:.1}s (<= 1500)"),
    );
}

#[test]
fn criterion_4_stealth() {
    let f = fixture();
    let report = summarize(&f.backdoored_trace, &f.clean_trace).unwrap();
    let out = f.root.join("stealth");
    fs::create_dir_all(&out).unwrap();
    report.save_json(out.join("stealth.json")).unwrap();
    emit_plot(
        &[
            Series::from_values("poisoned", &f.backdoored_trace.losses),
            Series::from_values("clean", &f.clean_trace.losses),
        ],
        "training loss",
        "step",
        "loss",
        out.join("loss_overlay.svg"),
    )
    .unwrap();
    let svg = fs::read_to_string(out.join("loss_overlay.svg")).unwrap();
    let json_ok = out.join("stealth.json").metadata().map(|m| m.len() > 0).unwrap_or(false);
    let cv_finite = report.cv.map(f64::is_finite).unwrap_or(false);
    let pass = report.variance <= 0.05 && cv_finite && json_ok && svg.starts_with("<svg");
    verdict(
        4,
        "stealth",
        pass,
        format!(
            "Var {:.3e} (<= 0.05), CV {:?}, report and SVG overlay written",
            report.variance, report.cv
        ),
    );
}

#[test]
fn criterion_5_defenses() {
    let f = fixture();
    let vad = evaluate_defense(
        &Defense::Vad(VadConfig::default()),
        &f.backdoored,
        None,
        &f.set,
        COMPLY,
        "",
    )
    .unwrap();
    let (vad_pre, vad_post) = (vad.pre.asr.unwrap(), vad.post.asr.unwrap());
    let mix = |tau: f64| {
        evaluate_defense(&Defense::FineMix { tau }, &f.backdoored, Some(&f.clean), &f.set, COMPLY, "")
            .unwrap()
            .post
    };
    let (m0, m5) = (mix(0.0), mix(0.5));
    let (a0, a5) = (m0.asr.unwrap(), m5.asr.unwrap());
    let pass = vad_pre >= 0.90 && vad_post <= 0.20 && a5 <= 0.5 * a0;
    verdict(
        5,
        "defenses",
        pass,
        format!(
            "VAD ASR {vad_pre:.3} -> {vad_post:.3} (<= 0.20, ACC {:.3} -> {:.3}); fine-mix tau 0.5 ASR {a5:.3} vs tau 0 {a0:.3} (<= 50%), ACC {:.3} -> {:.3}",
            vad.pre.acc, vad.post.acc, m0.acc, m5.acc
        ),
    );
}

#[test]
fn criterion_6_metric_oracles() {
    let s = [1.0, 2.0, 3.0];
    let var = variance(&s).unwrap();
    let cv = coefficient_of_variation(&s).unwrap();
    // sqrt(2/3) / 2, printed to five places as 0.40825
    let exact_cv = (2.0f64 / 3.0).sqrt() / 2.0;
    let mut ok = (var - 2.0 / 3.0).abs() <= 1e-9
        && (cv.abs() - exact_cv).abs() <= 1e-9
        && (cv.abs() - 0.40825).abs() <= 5e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let n = rng.gen_range(1..40);
        let a = LossTrace {
            losses: (0..n).map(|_| rng.gen_range(0.0..3.0)).collect(),
        };
        let b = LossTrace {
            losses: (0..n).map(|_| rng.gen_range(0.0..3.0)).collect(),
        };
        let ab = loss_differential(&a, &b).unwrap();
        let ba = loss_differential(&b, &a).unwrap();
        ok &= ab.iter().zip(&ba).all(|(x, y)| *x == -*y);
        ok &= loss_differential(&a, &a).unwrap().iter().all(|x| *x == 0.0);
    }
    verdict(
        6,
        "metric oracles",
        ok,
        format!("variance {var:.12}, |CV| {:.12} (exact {exact_cv:.12}); antisymmetry and zero cases exact", cv.abs()),
    );
}

#[test]
fn criterion_7_dsp_oracles() {
    let clip = |s: Vec<f64>| AudioClip::new(s, 16_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let noise = clip((0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let w = WindowSpec::hann(512, 128).unwrap();
    let back = istft(&stft(&noise, w).unwrap()).unwrap();
    let stft_err = noise.samples()[512..15_488]
        .iter()
        .zip(&back.samples()[512..15_488])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut pitch_err: f64 = 0.0;
    for freq in [100.0, 250.0, 500.0, 1000.0, 2000.0] {
        for beta in [0.5, 1.0, 1.5, 2.0] {
            let out = apply_speed(&clip(tone(freq, 0.5, 16_000, 32_000)), beta).unwrap().clip;
            let got = dominant_frequency(out.samples(), 16_000.0);
            pitch_err = pitch_err.max((got - freq).abs() / freq);
        }
    }

    let mut snr_err: f64 = 0.0;
    for _ in 0..20 {
        let amp = rng.gen_range(0.05..0.4);
        let c = clip((0..rng.gen_range(4_000..20_000)).map(|_| rng.gen_range(-amp..amp)).collect());
        let o = clip((0..rng.gen_range(1_000..30_000)).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let target = rng.gen_range(5.0..25.0);
        let out = apply_additive(&c, &o, mix_to_snr(&c, &o, target).unwrap()).unwrap();
        let added: Vec<f64> = out.clip.samples().iter().zip(c.samples()).map(|(y, x)| y - x).collect();
        let measured = 20.0 * (rms(c.samples()) / rms(&added)).log10();
        snr_err = snr_err.max((measured - target).abs());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.wav");
    let original = clip((0..8_000).map(|_| rng.gen_range(-1.0..1.0)).collect());
    save_wav(&original, &path).unwrap();
    let loaded = load_wav(&path).unwrap();
    let wav_err = original
        .samples()
        .iter()
        .zip(loaded.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let step = 1.0 / 32_768.0;

    let pass = stft_err < 1e-6 && pitch_err <= 0.02 && snr_err <= 0.1 && wav_err <= step;
    verdict(
        7,
        "DSP oracles",
        pass,
        format!(
            "STFT round trip {stft_err:.1e} (< 1e-6), TSM pitch error {:.2}% (<= 2%), SNR error {snr_err:.4} dB (<= 0.1), WAV error {wav_err:.2e} (<= {step:.2e})",
            100.0 * pitch_err
        ),
    );
}

/// Mean cross-entropy from the public class probabilities.
fn oracle_loss(model: &VictimModel, batch: &[(Vec<f64>, usize)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| -model.forward(x)[*y].ln())
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn criterion_8_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for case in 0..100u64 {
        let classes = rng.gen_range(2..5);
        let mut model = VictimModel::init(classes, case, true).unwrap();
        let scaled: Vec<f64> = model.params().iter().map(|p| p * rng.gen_range(0.5..3.0)).collect();
        model.set_params(&scaled).unwrap();
        let batch: Vec<(Vec<f64>, usize)> = (0..rng.gen_range(1..6))
            .map(|_| {
                let x = (0..FEATURE_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
                (x, rng.gen_range(0..classes))
            })
            .collect();
        let refs: Vec<(&[f64], usize)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let (loss, grads) = model.loss_and_grad(&refs).unwrap();
        let o = oracle_loss(&model, &batch);
        assert!((loss - o).abs() <= 1e-9 * loss.abs().max(1.0), "{loss} vs {o}");
        let params = model.params();
        // a random subset of 200 coordinates per case
        for _ in 0..200 {
            let j = rng.gen_range(0..params.len());
            let mut p = params.clone();
            p[j] = params[j] + h;
            model.set_params(&p).unwrap();
            let up = oracle_loss(&model, &batch);
            p[j] = params[j] - h;
            model.set_params(&p).unwrap();
            let down = oracle_loss(&model, &batch);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.0[j];
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
        model.set_params(&params).unwrap();
    }
    verdict(
        8,
        "gradient check",
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over 100 cases / {checked} coordinates (<= 1e-4)"),
    );
}

fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(base).unwrap().display().to_string(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = |name: &str| {
        let run = dir.path().join(name);
        let s = |p: &str| run.join(p).display().to_string();
        let steps: Vec<Vec<String>> = vec![
            vec!["synth".into(), "--n-train".into(), "200".into(), "--n-test".into(), "100".into(), "--out-dir".into(), s("data")],
            vec!["poison".into(), "--manifest".into(), s("data/corpus"), "--out-dir".into(), s("poisoned")],
            vec!["train".into(), "--manifest".into(), s("data/corpus"), "--out-dir".into(), s("clean")],
            vec!["train".into(), "--manifest".into(), s("poisoned"), "--out-dir".into(), s("backdoored")],
            vec!["eval".into(), "--model".into(), s("backdoored/model.json"), "--manifest".into(), s("data/corpus"), "--out-dir".into(), s("eval")],
            vec!["stealth".into(), "--poisoned".into(), s("backdoored/loss.csv"), "--clean".into(), s("clean/loss.csv"), "--out-dir".into(), s("stealth")],
            vec![
                "defend".into(), "--model".into(), s("backdoored/model.json"), "--clean-model".into(), s("clean/model.json"),
                "--defense".into(), "fine-mix".into(), "--manifest".into(), s("data/corpus"), "--out-dir".into(), s("defend"),
            ],
        ];
        for step in steps {
            let mut args = vec!["acbd".to_string(), "--seed".into(), SEED.to_string()];
            args.extend(step.iter().cloned());
            assert_eq!(cli::run(&args), 0, "{step:?}");
        }
        hash_tree(&run)
    };
    let a = pipeline("run_a");
    let b = pipeline("run_b");
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let pass = a.len() == b.len() && differing.is_empty() && a.contains_key("eval/report.csv");
    verdict(
        9,
        "determinism",
        pass,
        format!("{} artifacts hashed per run, {} differ", a.len(), differing.len()),
    );
}
