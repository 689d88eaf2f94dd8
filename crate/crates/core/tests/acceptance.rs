//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criterion 10 measures parallel speedup; on hosts with fewer than
//! `MIN_CORES_FOR_THROUGHPUT` cores its failure is reported but does not fail
//! the run. Set `ACCEPTANCE_STRICT=1` to make every failure fatal, or
//! `ACCEPTANCE_ONLY=3,4` to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex;

use instrumental::audio::AudioBuffer;
use instrumental::dsp::features::{spectral_centroid, HarmonicSpectrum};
use instrumental::dsp::pitch::detect_pitch;
use instrumental::dsp::spectrum::Fft;
use instrumental::loss::{
    composite_loss, composite_loss_batch, CENTROID_WEIGHT, MEL_WEIGHT, MFCC_WEIGHT,
};
use instrumental::optimizer::{
    multi_start, optimize, spsa_finetune, CmaConfig, CmaState, Objective,
    PitchTarget, SynthObjective, MULTI_START_RUNS,
};
use instrumental::params::{denormalize, ParamId, ParamVector, Patch, Tier};
use instrumental::pipeline::{
    ablate_targets, bench, match_targets, segment, select_pitches, AblationRow, BenchConfig,
    MatchConfig, NoteSegment, PAPER_EVALS_PER_SECOND,
};
use instrumental::synth::effects::{chebyshev_waveshape, fm_operator};
use instrumental::synth::filter::{eq_gain, filter_gain, EqBand};
use instrumental::synth::{render, RenderRequest};

const SR: f64 = 44_100.0;
const PITCHES: [f64; 3] = [221.0, 278.0, 295.0];
const NOTE_SECONDS: f64 = 0.15;
const BUDGET: usize = 10_000;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MIN_CORES_FOR_THROUGHPUT: usize = 4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A patch with every coordinate drawn from the inner 60% of its range.
fn random_patch(tier: Tier, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..tier.dimension()).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
    denormalize(&ParamVector::clamped(x), tier).unwrap()
}

fn notes(patch: &Patch, pitches: &[f64], post: impl Fn(AudioBuffer) -> AudioBuffer) -> Vec<NoteSegment> {
    pitches
        .iter()
        .map(|&f0| {
            let audio = post(render(&RenderRequest::new(patch.clone(), f0, NOTE_SECONDS)).unwrap());
            NoteSegment {
                onset: 0,
                offset: audio.len(),
                audio,
                f0,
                confidence: 1.0,
            }
        })
        .collect()
}

fn config(tier: Tier, budget: usize, seed: u64) -> MatchConfig {
    MatchConfig {
        tier,
        cma: CmaConfig::default().with_budget(budget).with_seed(seed),
        ..MatchConfig::default()
    }
}

/// +3 dB bell at 5 kHz applied to the whole note.
fn eq_boost(buf: AudioBuffer) -> AudioBuffer {
    let n = (2 * buf.len()).next_power_of_two();
    let mut x = buf.samples.clone();
    x.resize(n, 0.0);
    let mut spec = vec![Complex::default(); n / 2 + 1];
    let mut fft = Fft::new();
    fft.forward(&mut x, &mut spec);
    let band = [EqBand {
        center: 5000.0,
        gain_db: 3.0,
    }];
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= eq_gain(k as f64 * buf.sample_rate / n as f64, &band) / n as f64;
    }
    let mut y = vec![0.0; n];
    fft.inverse(&mut spec, &mut y);
    y.truncate(buf.len());
    AudioBuffer::new(y, buf.sample_rate)
}

fn row(rows: &[AblationRow], tier: Tier) -> &AblationRow {
    rows.iter().find(|r| r.tier == tier).unwrap()
}

fn criterion_1_2() -> (Verdict, Verdict) {
    let targets = notes(&random_patch(Tier::T24, 0), &PITCHES, |b| b);
    let mut ratios = Vec::new();
    let mut fractions = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let start = Instant::now();
        let r = match_targets(&targets, &config(Tier::T24, BUDGET, seed), &mut |_| {}).unwrap().report;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        ratios.push(r.final_loss / r.initial_loss);
        fractions.push(r.trace.improvement_fraction(r.initial_loss, BUDGET / 10));
    }
    let ratio = median(&ratios);
    let fraction = median(&fractions);
    (
        verdict(
            ratio <= 0.10 && slowest <= 300.0,
            format!("median final/init {ratio:.3} (<= 0.10), slowest run {slowest:.0} s (<= 300 s), ratios {ratios:.3?}"),
        ),
        verdict(
            fraction >= 0.80,
            format!("median improvement in first 10% of budget {fraction:.3} (>= 0.80), {fractions:.3?}"),
        ),
    )
}

fn criterion_3() -> Verdict {
    let targets = notes(&random_patch(Tier::T28, 0), &PITCHES, |b| b);
    let tiers = [Tier::T15, Tier::T18, Tier::T24, Tier::T28];
    let rows = ablate_targets(&targets, &tiers, &config(Tier::T28, BUDGET, 0), &SEEDS).unwrap();
    let m: Vec<f64> = tiers.iter().map(|&t| row(&rows, t).median).collect();
    let pass = m.windows(2).all(|w| w[1] <= w[0]);
    verdict(pass, format!("medians t15 {:.4} t18 {:.4} t24 {:.4} t28 {:.4}", m[0], m[1], m[2], m[3]))
}

fn criterion_4_5() -> (Verdict, Verdict) {
    let targets = notes(&random_patch(Tier::T24, 0), &PITCHES, eq_boost);
    let tiers = [Tier::T24, Tier::T28, Tier::T29];
    let rows = ablate_targets(&targets, &tiers, &config(Tier::T28, BUDGET, 0), &SEEDS).unwrap();
    let (t24, t28, t29) = (row(&rows, Tier::T24), row(&rows, Tier::T28), row(&rows, Tier::T29));
    (
        verdict(
            t28.median < t24.median,
            format!("median t28 {:.4} < t24 {:.4} ({:+.1}%)", t28.median, t24.median, 100.0 * (t28.median / t24.median - 1.0)),
        ),
        verdict(
            t29.median >= t28.median || t29.detune_at_bound > 0,
            format!(
                "median t29 {:.4} vs t28 {:.4}, detune at bound in {} of {} runs",
                t29.median,
                t28.median,
                t29.detune_at_bound,
                t29.losses.len()
            ),
        ),
    )
}

fn osc_only(osc: ParamId) -> Patch {
    let mut p = Patch::defaults(Tier::T28);
    for id in [ParamId::OscSaw, ParamId::OscPulse, ParamId::OscSine, ParamId::OscNoise] {
        p.set(id, 0.0).unwrap();
    }
    p.set(osc, 1.0).unwrap();
    p.set(ParamId::Cutoff, 16_000.0).unwrap();
    p.set(ParamId::AmpAttack, 0.001).unwrap();
    p.set(ParamId::AmpSustain, 1.0).unwrap();
    p.set(ParamId::OutputGain, 0.1).unwrap();
    p
}

fn harmonics(buf: &AudioBuffer, f0: f64, n: usize) -> Vec<f64> {
    let spec = HarmonicSpectrum::new(buf);
    (1..=n).map(|h| spec.peak(h as f64 * f0).unwrap()).collect()
}

fn sine(f: f64, n: usize) -> AudioBuffer {
    AudioBuffer::new(
        (0..n).map(|i| (std::f64::consts::TAU * f * i as f64 / SR).sin()).collect(),
        SR,
    )
}

fn bessel_j(k: i32, x: f64) -> f64 {
    if k < 0 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        return sign * bessel_j(-k, x);
    }
    let mut sum = 0.0;
    let mut fact_m = 1.0;
    for m in 0..30 {
        if m > 0 {
            fact_m *= m as f64;
        }
        let fact_mk: f64 = (1..=(m + k)).map(|v| v as f64).product();
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / (fact_m * fact_mk) * (x / 2.0).powi(2 * m + k);
    }
    sum
}

fn criterion_6() -> Verdict {
    let mut failures = Vec::new();

    let saw = render(&RenderRequest::new(osc_only(ParamId::OscSaw), 221.0, 0.5)).unwrap();
    let h = harmonics(&saw.slice(2205, 15_000), 221.0, 8);
    let saw_err = (2..=8)
        .map(|n| (h[n - 1] / h[0] * n as f64 - 1.0).abs())
        .fold(0.0, f64::max);
    if saw_err >= 0.05 {
        failures.push(format!("saw 1/n error {saw_err:.3}"));
    }

    let pulse = osc_only(ParamId::OscPulse).with(ParamId::PulseWidth, 0.5).unwrap();
    let pulse = render(&RenderRequest::new(pulse, 221.0, 0.5)).unwrap();
    let h = harmonics(&pulse.slice(2205, 15_000), 221.0, 8);
    let even_db = [2usize, 4, 6]
        .iter()
        .map(|&e| 20.0 * (h[e - 1] / h[e - 2].min(h[e])).log10())
        .fold(f64::NEG_INFINITY, f64::max);
    if even_db > -40.0 {
        failures.push(format!("pulse even harmonics {even_db:.1} dB"));
    }

    let mut filter_err: f64 = 0.0;
    for fc in [50.0, 565.685, 2000.0, 12_000.0] {
        for slope in [1.0, 6.0, 24.0] {
            for q in [0.0, 0.3, 1.0, 2.0] {
                filter_err = filter_err.max((filter_gain(fc, fc, slope, q) - (0.5 + 2.0 * q)).abs());
            }
        }
    }
    if filter_err > 1e-6 {
        failures.push(format!("filter identity error {filter_err:e}"));
    }

    let centroid = spectral_centroid(&sine(1000.0, 44_100)).mean;
    if (centroid - 1000.0).abs() > 15.0 {
        failures.push(format!("sine centroid {centroid:.1} Hz"));
    }

    let f0 = 441.0;
    let fm = AudioBuffer::new(fm_operator(f0, 1.0, 1.0, 44_100, SR), SR);
    let spec = HarmonicSpectrum::new(&fm);
    let amp = |h: i32| (bessel_j(h - 1, 1.0) - bessel_j(-h - 1, 1.0)).abs();
    let fund = spec.peak(f0).unwrap();
    let mut fm_err: f64 = 0.0;
    for h in 2..=4 {
        let measured = spec.peak(h as f64 * f0).unwrap() / fund;
        let expected = amp(h) / amp(1);
        fm_err = fm_err.max((measured - expected).abs() / expected.max(0.05));
    }
    if fm_err > 0.02 {
        failures.push(format!("FM sideband error {fm_err:.4}"));
    }

    let t3 = chebyshev_waveshape(&sine(221.0, 16_384), [0.0, 0.0, 1.0, 0.0, 0.0]);
    let h = harmonics(&t3, 221.0, 5);
    let strongest = (1..=5).max_by(|a, b| h[a - 1].total_cmp(&h[b - 1])).unwrap();
    if strongest != 3 {
        failures.push(format!("Chebyshev T3 strongest harmonic {strongest}"));
    }

    let detail = format!(
        "saw err {saw_err:.3}, pulse even {even_db:.1} dB, filter err {filter_err:.1e}, centroid {centroid:.1} Hz, FM err {fm_err:.4}, T3 peak H{strongest}"
    );
    verdict(failures.is_empty(), if failures.is_empty() { detail } else { failures.join("; ") })
}

fn sphere_run(seed: u64) -> f64 {
    let center: Vec<f64> = (0..28).map(|i| 0.2 + 0.6 * i as f64 / 27.0).collect();
    let config = CmaConfig::default().with_seed(seed).with_budget(5000);
    let mut state = CmaState::new(&ParamVector::filled(28, 0.5), &config).unwrap();
    for _ in 0..config.generations() {
        let xs = state.ask();
        let ls: Vec<f64> = xs
            .iter()
            .map(|x| x.as_slice().iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        state.tell(&xs, &ls).unwrap();
    }
    state.best_loss().unwrap()
}

fn criterion_7() -> Verdict {
    let sphere: Vec<f64> = SEEDS.iter().map(|&s| sphere_run(s)).collect();
    let sphere_median = median(&sphere);

    let patch = random_patch(Tier::T24, 0);
    let targets = [PitchTarget {
        f0: PITCHES[0],
        audio: render(&RenderRequest::new(patch, PITCHES[0], NOTE_SECONDS)).unwrap(),
    }];
    let objective = SynthObjective::new(Tier::T24, &targets, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worsened = 0;
    for i in 0..100 {
        let x = ParamVector::clamped((0..24).map(|_| rng.random::<f64>()).collect());
        let r = spsa_finetune(&objective, &x, 5, 0.01, 0.01, i);
        if !(r.loss <= r.initial_loss) {
            worsened += 1;
        }
    }

    let init = ParamVector::filled(24, 0.5);
    let budget = 4000;
    let mut single = Vec::new();
    let mut multi = Vec::new();
    for seed in SEEDS {
        let cma = CmaConfig::default().with_budget(budget).with_seed(seed);
        single.push(optimize(&objective, &init, &cma, &mut |_| {}).unwrap().best_loss);
        multi.push(multi_start(&objective, &init, &cma, MULTI_START_RUNS, &mut |_| {}).unwrap().best.best_loss);
    }
    let (s, m) = (median(&single), median(&multi));

    verdict(
        sphere_median < 1e-4 && worsened == 0 && m >= s,
        format!(
            "sphere median {sphere_median:.2e} (< 1e-4); SPSA worsened {worsened}/100; multi-start {MULTI_START_RUNS}x median {m:.4} vs single {s:.4}"
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = render(&RenderRequest::new(random_patch(Tier::T28, 3), 221.0, NOTE_SECONDS)).unwrap();
    let y = render(&RenderRequest::new(random_patch(Tier::T28, 4), 221.0, NOTE_SECONDS)).unwrap();
    let self_loss = composite_loss(&x, &x).unwrap().composite;
    let b = composite_loss(&x, &y).unwrap();
    let combined = MEL_WEIGHT * b.mel + CENTROID_WEIGHT * b.centroid + MFCC_WEIGHT * b.mfcc;
    let identity_err = (b.composite - combined).abs() / combined;

    let targets: Vec<PitchTarget> = PITCHES
        .iter()
        .map(|&f0| PitchTarget {
            f0,
            audio: render(&RenderRequest::new(random_patch(Tier::T28, 5), f0, NOTE_SECONDS)).unwrap(),
        })
        .collect();
    let objective = SynthObjective::new(Tier::T28, &targets, 0).unwrap();
    let population: Vec<ParamVector> = (0..40)
        .map(|_| ParamVector::clamped((0..28).map(|_| rng.random::<f64>()).collect()))
        .collect();
    let batched = objective.evaluate_batch(&population);
    let target_audio: Vec<AudioBuffer> = targets.iter().map(|t| t.audio.clone()).collect();
    let renders: Vec<Vec<AudioBuffer>> = population
        .iter()
        .map(|x| {
            let patch = denormalize(x, Tier::T28).unwrap();
            PITCHES
                .iter()
                .map(|&f0| render(&RenderRequest::new(patch.clone(), f0, NOTE_SECONDS)).unwrap())
                .collect()
        })
        .collect();
    let grid = composite_loss_batch(&renders, &target_audio).unwrap();
    let serial: Vec<f64> = renders
        .iter()
        .map(|rs| {
            rs.iter()
                .zip(&target_audio)
                .map(|(r, t)| composite_loss(t, r).unwrap().composite)
                .sum::<f64>()
                / 3.0
        })
        .collect();
    let identical = batched.iter().zip(&serial).all(|(a, b)| a.to_bits() == b.to_bits())
        && grid.iter().zip(&serial).all(|(a, b)| a.to_bits() == b.to_bits());

    verdict(
        self_loss == 0.0 && identity_err < 1e-12 && identical,
        format!("L(x,x) = {self_loss:e}; weighted-sum rel err {identity_err:.1e}; batched == serial on 40x3: {identical}"),
    )
}

fn criterion_9() -> Verdict {
    let mut patch = Patch::defaults(Tier::T15);
    patch.set(ParamId::AmpAttack, 0.005).unwrap();
    patch.set(ParamId::AmpRelease, 0.05).unwrap();
    let gap = vec![0.0; (0.08 * SR) as usize];
    let mut samples = gap.clone();
    let mut sequence = Vec::new();
    for i in 0..22 {
        let f0 = PITCHES[(i * 7 + i / 3) % 3];
        sequence.push(f0);
        let gain = 0.3 + 0.1 * (i % 4) as f64;
        let p = patch.clone().with(ParamId::OutputGain, gain).unwrap();
        samples.extend(render(&RenderRequest::new(p, f0, 0.25)).unwrap().samples);
        samples.extend(&gap);
    }
    let audio = AudioBuffer::new(samples, SR);
    let segments = segment(&audio).unwrap();
    let picked = select_pitches(&segments, 3);
    let cents = |a: f64, b: f64| 1200.0 * (a / b).log2().abs();
    let one_per_class = picked.len() == 3
        && PITCHES
            .iter()
            .all(|&p| picked.iter().filter(|s| cents(s.f0, p) < 50.0).count() == 1);

    let saw = Patch::defaults(Tier::T15);
    let pitch_err = PITCHES
        .iter()
        .map(|&f0| {
            let b = render(&RenderRequest::new(saw.clone(), f0, 0.5)).unwrap();
            (detect_pitch(&b.slice(2205, 20_000)).unwrap().f0 - f0).abs() / f0
        })
        .fold(0.0, f64::max);

    verdict(
        segments.len() == 22 && one_per_class && pitch_err < 0.01,
        format!(
            "{} segments (22); picked {:.1?} Hz; worst pitch error {:.3}%",
            segments.len(),
            picked.iter().map(|s| s.f0).collect::<Vec<_>>(),
            100.0 * pitch_err
        ),
    )
}

fn criterion_10() -> Verdict {
    let r = bench(&BenchConfig::default()).unwrap();
    verdict(
        r.speedup >= 5.0,
        format!(
            "speedup {:.2}x (>= 5x); batched {:.0} evals/s, serial {:.0} evals/s; reference {PAPER_EVALS_PER_SECOND} evals/s; {} cores",
            r.speedup,
            r.batched_evals_per_second,
            r.serial_evals_per_second,
            cores()
        ),
    )
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |ids: &[usize]| only.as_ref().is_none_or(|o| ids.iter().any(|i| o.contains(i)));

    type Group = (&'static [usize], &'static [&'static str], fn() -> Vec<Verdict>);
    let groups: [Group; 8] = [
        (&[1, 2], &["round-trip recovery", "convergence shape"], || {
            let (a, b) = criterion_1_2();
            vec![a, b]
        }),
        (&[3], &["tier monotonicity"], || vec![criterion_3()]),
        (&[4, 5], &["EQ-boost directionality", "T29 instability"], || {
            let (a, b) = criterion_4_5();
            vec![a, b]
        }),
        (&[6], &["DSP oracles"], || vec![criterion_6()]),
        (&[7], &["optimizer oracles"], || vec![criterion_7()]),
        (&[8], &["loss identities"], || vec![criterion_8()]),
        (&[9], &["pipeline"], || vec![criterion_9()]),
        (&[10], &["throughput"], || vec![criterion_10()]),
    ];

    let mut fatal = 0;
    for (ids, names, run) in groups {
        if !wanted(ids) {
            continue;
        }
        let start = Instant::now();
        let verdicts = guarded(run).unwrap_or_else(|msg| ids.iter().map(|_| verdict(false, format!("panicked: {msg}"))).collect());
        let secs = start.elapsed().as_secs_f64();
        for ((id, name), v) in ids.iter().zip(names.iter()).zip(verdicts) {
            let tolerated = !v.pass && !strict && *id == 10 && cores() < MIN_CORES_FOR_THROUGHPUT;
            if !v.pass && !tolerated {
                fatal += 1;
            }
            let status = if v.pass { "PASS" } else { "FAIL" };
            let note = if tolerated { " [not fatal: too few cores for a parallel speedup]" } else { "" };
            println!("criterion {id:>2} {status} {name}: {} ({secs:.0} s){note}", v.detail);
        }
    }
    if fatal == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
