//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line whether or not output capture is on.
//!
//! ```sh
//! cargo test --test acceptance            # all criteria
//! cargo test --test acceptance -- 2 5     # selected criteria
//! ```

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rga::autograd::{OpKind, Tape};
use rga::cli::{cmd_analyze, AnalyzeArgs};
use rga::data::synthetic::{vessel_image, write_dataset};
use rga::data::{build_manifest, Layout, Split};
use rga::gradcheck::{run_gradcheck, GradCheckConfig, Precision};
use rga::loss::{LossKind, LossTermKind};
use rga::metrics::{binarize, confusion, metrics};
use rga::nn::checkpoint::{load_checkpoint, save_checkpoint};
use rga::nn::{Mode, ModelConfig, RgaNet};
use rga::train::Trainer;
use rga::Tensor;

use common::*;

type Check = fn() -> Result<String, String>;

const PARAM_BAND: (usize, usize) = (35_000, 45_000);
const GOLDEN_PARAMS: usize = 39_017;
const F32_TOLERANCE: f64 = 1e-2;
const F64_TOLERANCE: f64 = 1e-4;
const ORACLE_CASES: usize = 200;
const METRIC_PAIRS: usize = 1_000;
const OVERFIT_STEPS: usize = 500;
const OVERFIT_DICE: f64 = 0.95;
const DRIVE_PAIRS: usize = 20;
const DRIVE_RECORDS: usize = 7_260;
const ANALYTIC_PAIRS: usize = 100;

type Sweep = fn(usize, u64) -> f64;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Sum over layers, written out from the block structure: separable encoder
/// blocks, dense decoder blocks with a biased transposed-conv upsample, a
/// two-conv partial decoder with a biased 1x1 head, one biased 1x1
/// projection per attention stage, and a 1x1 output head.
fn hand_param_count(f: [usize; 4]) -> usize {
    let sep = |ci: usize, co: usize| (9 * ci + ci * co + 2 * co) + (9 * co + co * co + 2 * co);
    let dec = |below: usize, co: usize| (4 * below * co + co) + (9 * 2 * co * co + 2 * co) + (9 * co * co + 2 * co);
    let encoders = sep(3, f[0]) + sep(f[0], f[1]) + sep(f[1], f[2]) + sep(f[2], f[3]);
    let decoders = dec(f[3], f[2]) + dec(f[2], f[1]) + dec(f[1], f[0]);
    let partial = 2 * (9 * f[1] * f[1] + 2 * f[1]) + f[1] + 1;
    let attention = (f[2] + 1) + (f[1] + 1) + (f[0] + 1);
    encoders + decoders + partial + attention + 2
}

fn param_count() -> Result<String, String> {
    let net: RgaNet = RgaNet::build(ModelConfig::default()).map_err(err)?;
    let total = net.param_count();
    let hand = hand_param_count([8, 16, 24, 32]);
    ensure((PARAM_BAND.0..=PARAM_BAND.1).contains(&total), || format!("total {total} outside band"))?;
    ensure(total == hand, || format!("total {total} != hand count {hand}"))?;
    ensure(total == GOLDEN_PARAMS, || format!("total {total} != golden {GOLDEN_PARAMS}"))?;
    Ok(format!("total={total}, hand={hand}, golden={GOLDEN_PARAMS}"))
}

fn gradient_check() -> Result<String, String> {
    let mut parts = Vec::new();
    for (p, tol) in [(Precision::F64, F64_TOLERANCE), (Precision::F32, F32_TOLERANCE)] {
        let mut cfg = GradCheckConfig::new(p);
        cfg.size = 32;
        ensure(cfg.tolerance == tol, || format!("{p:?} tolerance {}", cfg.tolerance))?;
        let report = run_gradcheck(&cfg).map_err(err)?;
        let worst = report.worst().ok_or("no parameter groups")?;
        ensure(report.passed(), || format!("{p:?}: {} rel err {:.3e}", worst.name, worst.max_rel_error))?;
        parts.push(format!("{p:?} worst {:.2e} ({} groups)", worst.max_rel_error, report.groups.len()));
    }
    let mut control = GradCheckConfig::new(Precision::F64);
    control.samples_per_group = Some(4);
    control.corrupt_backward = true;
    let report = run_gradcheck(&control).map_err(err)?;
    ensure(!report.passed(), || "corrupted backward pass was not detected".into())?;
    parts.push("corrupted backward detected".into());
    Ok(parts.join(", "))
}

fn oracle_equivalence() -> Result<String, String> {
    let sweeps: [(&str, Sweep); 5] = [
        ("dwconv", sweep_dwconv),
        ("pwconv", sweep_pwconv),
        ("conv3x3", sweep_conv3x3),
        ("maxpool", sweep_maxpool),
        ("conv-transpose", sweep_conv_transpose),
    ];
    let mut parts = Vec::new();
    for (i, (name, sweep)) in sweeps.iter().enumerate() {
        let worst = sweep(ORACLE_CASES, 100 + i as u64);
        ensure(worst <= ORACLE_TOLERANCE, || format!("{name} deviates by {worst:e}"))?;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let mismatches = sweep_metrics(METRIC_PAIRS, 200);
    ensure(mismatches == 0, || format!("{mismatches} metric pairs differ"))?;
    Ok(format!("{}; metrics exact on {METRIC_PAIRS} pairs", parts.join(", ")))
}

fn shape_chain() -> Result<String, String> {
    let net: RgaNet = RgaNet::new(ModelConfig::default(), 0).map_err(err)?;
    let x = Tensor::from_fn(&[1, 3, 64, 64], |i| ((i * 37) % 101) as f32 / 101.0);
    let a = net.activations(&x, Mode::Eval).map_err(err)?;
    let expect: [(&str, &Tensor, [usize; 4]); 10] = [
        ("S1", &a.s1, [1, 8, 64, 64]),
        ("p1", &a.p1, [1, 8, 32, 32]),
        ("S2", &a.s2, [1, 16, 32, 32]),
        ("p2", &a.p2, [1, 16, 16, 16]),
        ("S3", &a.s3, [1, 24, 16, 16]),
        ("p3", &a.p3, [1, 24, 8, 8]),
        ("b", &a.b, [1, 32, 8, 8]),
        ("dec1", &a.dec1, [1, 24, 16, 16]),
        ("dec2", &a.dec2, [1, 16, 32, 32]),
        ("dec3", &a.dec3, [1, 8, 64, 64]),
    ];
    for (name, t, dims) in expect {
        ensure(t.shape() == dims, || format!("{name} is {:?}, expected {dims:?}", t.shape()))?;
    }
    let single = [
        ("dec_par", a.dec_par.as_ref()),
        ("Pred1", a.pred1.as_ref()),
        ("Pred2", a.pred2.as_ref()),
        ("Pred_final", Some(&a.pred_final)),
        ("Mask", Some(&a.mask)),
    ];
    for (name, t) in single {
        let t = t.ok_or_else(|| format!("{name} missing"))?;
        ensure(t.shape()[1] == 1, || format!("{name} has {} channels", t.shape()[1]))?;
    }
    ensure(a.mask.shape() == [1, 1, 64, 64], || format!("Mask is {:?}", a.mask.shape()))?;
    ensure(a.mask.data().iter().all(|&v| v > 0.0 && v < 1.0), || "Mask leaves (0, 1)".into())?;
    Ok("S1 8@64 .. b 32@8 .. dec3 8@64, five single-channel maps".into())
}

fn overfit() -> Result<String, String> {
    let (image, mask) = vessel_image(64, 0);
    let net = RgaNet::new(ModelConfig::default(), 0).map_err(err)?;
    let mut trainer = Trainer::new(net, 1e-3, 5, LossKind::DiceBce);
    let mut dice = 0.0;
    for step in 1..=OVERFIT_STEPS {
        trainer.step(&image, &mask).map_err(err)?;
        if step % 25 == 0 {
            let pred = trainer.net.predict(&image).map_err(err)?;
            dice = metrics(&confusion(&binarize(&pred, 0.5), &mask).map_err(err)?).map_err(err)?.f1;
            if dice >= OVERFIT_DICE {
                return Ok(format!("dice {dice:.4} at step {step}"));
            }
        }
    }
    Err(format!("dice {dice:.4} after {OVERFIT_STEPS} steps"))
}

fn augmentation_law() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    write_dataset(dir.path(), DRIVE_PAIRS, 0, 16, 0).map_err(err)?;
    let m = build_manifest(dir.path(), Layout::Drive, 0).map_err(err)?;
    let train = m.count(Split::Train);
    ensure(train == DRIVE_RECORDS, || format!("{train} train records"))?;
    Ok(format!("{DRIVE_PAIRS} pairs -> {train} train records"))
}

fn checkpoint_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let (image, mask) = vessel_image(32, 4);
    let net = RgaNet::new(ModelConfig::default(), 9).map_err(err)?;
    let mut trainer = Trainer::new(net, 1e-3, 5, LossKind::DiceBce);
    for _ in 0..3 {
        trainer.step(&image, &mask).map_err(err)?;
    }
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&trainer.net, Some(&trainer.adam), &path).map_err(err)?;
    let ckpt = load_checkpoint(&path).map_err(err)?;
    let mut restored: RgaNet = RgaNet::new(ModelConfig::default(), 1).map_err(err)?;
    let adam = restored.load_weights(&ckpt).map_err(err)?.ok_or("optimizer state missing")?;
    let (a, b) = (trainer.net.predict(&image).map_err(err)?, restored.predict(&image).map_err(err)?);
    let identical = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(identical, || "outputs differ after reload".into())?;
    let lr_f32 = trainer.adam.lr as f32 as f64;
    ensure(adam.step == trainer.adam.step && adam.lr == lr_f32, || "optimizer state differs after reload".into())?;
    let moments_equal = trainer
        .net
        .params()
        .params()
        .iter()
        .zip(restored.params().params())
        .all(|(a, b)| a.adam_m == b.adam_m && a.adam_v == b.adam_v);
    ensure(moments_equal, || "Adam moments differ after reload".into())?;
    Ok(format!("{} output bits identical, optimizer step {}", a.numel(), adam.step))
}

fn ablation() -> Result<String, String> {
    let x = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i * 13) % 17) as f32 / 17.0);
    let attention_node = |tape: &Tape| {
        tape.nodes().any(|n| {
            n.scope.starts_with("iaa")
                || n.scope == "pd"
                || matches!(n.kind, OpKind::Hadamard | OpKind::OneMinus)
        })
    };
    let mut full: RgaNet = RgaNet::new(ModelConfig::default(), 0).map_err(err)?;
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let vars = full.forward_train(&mut tape, xv).map_err(err)?;
    ensure(attention_node(&tape) && vars.dec_par.is_some(), || "default model lacks attention nodes".into())?;

    let mut plain: RgaNet = RgaNet::new(ModelConfig::plain_unet(), 0).map_err(err)?;
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let vars = plain.forward_train(&mut tape, xv).map_err(err)?;
    ensure(!attention_node(&tape), || "plain model records attention or partial-decoder nodes".into())?;
    ensure(vars.dec_par.is_none() && vars.pred1.is_none(), || "plain model exposes dec_par/Pred maps".into())?;

    let target = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i / 32) % 5 == 0) as u8 as f32);
    let expected: [(&str, &[LossTermKind]); 5] = [
        ("dice", &[LossTermKind::Dice]),
        ("wdice", &[LossTermKind::WeightedDice]),
        ("bce", &[LossTermKind::Bce]),
        ("iou", &[LossTermKind::Iou]),
        ("dice+bce", &[LossTermKind::Dice, LossTermKind::Bce]),
    ];
    for (text, terms) in expected {
        let kind: LossKind = text.parse().map_err(err)?;
        ensure(kind.as_str() == text, || format!("`{text}` parsed as {kind}"))?;
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let vars = plain.forward_train(&mut tape, xv).map_err(err)?;
        let l = plain.record_loss(&mut tape, &vars, &target, kind).map_err(err)?;
        let found: Vec<LossTermKind> = tape
            .nodes()
            .filter_map(|n| match n.kind {
                OpKind::Loss(k) => Some(k),
                _ => None,
            })
            .collect();
        ensure(found == terms, || format!("{text} recorded {found:?}"))?;
        ensure(tape.value(l).data()[0].is_finite(), || format!("{text} loss not finite"))?;
    }
    Ok(format!("plain model has no iaa/pd nodes; {} loss kinds recorded", LossKind::ALL.len()))
}

fn analytic_mask() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut r = rng(900);
    let mut pixels = 0;
    for i in 0..ANALYTIC_PAIRS {
        let (h, w) = (r.random_range(8..48), r.random_range(8..48));
        let (p, g) = (random_mask(&mut r, h, w), random_mask(&mut r, h, w));
        let (pp, gp, out) = (
            dir.path().join(format!("p{i}.png")),
            dir.path().join(format!("g{i}.png")),
            dir.path().join(format!("a{i}.png")),
        );
        rga::data::io::save_gray(&p, &pp).map_err(err)?;
        rga::data::io::save_gray(&g, &gp).map_err(err)?;
        cmd_analyze(&AnalyzeArgs {
            pred: pp,
            gt: gp,
            out: out.clone(),
        })
        .map_err(err)?;
        let rgb = image::open(&out).map_err(err)?.to_rgb8();
        let count = |c: [u8; 3]| rgb.pixels().filter(|px| px.0 == c).count() as u64;
        let want = brute_confusion(&p, &g);
        let got = (count([0, 255, 0]), count([255, 0, 0]), count([0, 0, 255]), count([0, 0, 0]));
        ensure(got == (want.tp, want.fn_, want.fp, want.tn), || {
            format!("pair {i}: colors {got:?}, counts {want:?}")
        })?;
        pixels += h * w;
    }
    Ok(format!("{ANALYTIC_PAIRS} pairs, {pixels} pixels, counts exact"))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, Duration, Check); 9] = [
        (1, "parameter count", Duration::from_secs(1), param_count),
        (2, "gradient verification", Duration::from_secs(300), gradient_check),
        (3, "oracle equivalence", Duration::from_secs(60), oracle_equivalence),
        (4, "shape chain", Duration::from_secs(1), shape_chain),
        (5, "overfit smoke test", Duration::from_secs(600), overfit),
        (6, "augmentation law", Duration::from_secs(1), augmentation_law),
        (7, "checkpoint round-trip", Duration::from_secs(5), checkpoint_round_trip),
        (8, "ablation structure", Duration::from_secs(5), ablation),
        (9, "analytic-mask reconciliation", Duration::from_secs(10), analytic_mask),
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: usize, name: &str| {
        selected.is_empty() || selected.iter().any(|s| s.parse() == Ok(id) || name.contains(s.as_str()))
    };
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, check) in criteria {
        if !wanted(id, name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed <= budget {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.2?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail}; {elapsed:.2?} of {budget:?})"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({why})");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
