//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any fails.

// Checks are written as `!(x < tol)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use promptcodec::ablation::{render_csv, render_markdown, run_ablation, AblationPlan};
use promptcodec::core::autograd::{Graph, Var};
use promptcodec::core::codec::{CodecConfig, LatentSequence};
use promptcodec::core::dsp::Waveform;
use promptcodec::core::fusion::{fuse, fuse_graph, FusionWeights, ALPHA_PARAM};
use promptcodec::core::grvq::{self, CodeIndices, Codebook, GrvqConfig};
use promptcodec::core::losses::{drl_loss, drl_loss_graph, ssim, LossWeights, SSIM_C1, SSIM_C2};
use promptcodec::core::metrics;
use promptcodec::core::model::{ModelConfig, PromptCodec};
use promptcodec::core::prompt::{PromptEmbedding, PromptSource, VOICEPRINT_BACKEND_PREFIX};
use promptcodec::core::stream::{
    read_stream, write_stream, PromptBlock, StreamHeader, HEADER_BYTES, VERSION,
};
use promptcodec::core::synth::{add_noise, SyntheticSpec};
use promptcodec::core::train::{
    parameter_groups, Ablation, StepLog, TrainConfig, TrainItem, Trainer, ABLATION_VARIANTS,
};
use promptcodec::core::Tensor;
use promptcodec::manifest::Utterance;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Central differences of a scalar function of a flat vector.
fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            (up - f(&p)) / (2.0 * h)
        })
        .collect()
}

fn timed(limit: Duration, start: Instant, detail: String) -> Outcome {
    let el = start.elapsed();
    ensure!(
        el < limit,
        "took {:.1} s, limit {:.0} s",
        el.as_secs_f64(),
        limit.as_secs_f64()
    );
    Ok(format!("{detail}; {:.2} s", el.as_secs_f64()))
}

fn c1_ssim() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_sym = 0.0f64;
    for i in 0..1000 {
        let shape = [rng.random_range(1..8), rng.random_range(2..12)];
        let scale = rng.random_range(0.01..5.0);
        let a = random_tensor(&mut rng, &shape, scale);
        let b = if i % 10 == 0 {
            a.map(|v| -v)
        } else {
            random_tensor(&mut rng, &shape, scale)
        };
        let ab = ok(ssim(&a, &b, SSIM_C1, SSIM_C2))?;
        let ba = ok(ssim(&b, &a, SSIM_C1, SSIM_C2))?;
        let aa = ok(ssim(&a, &a, SSIM_C1, SSIM_C2))?;
        ensure!(
            (-1.0..=1.0).contains(&ab),
            "ssim {ab} out of bounds in pair {i}"
        );
        ensure!(aa == 1.0, "ssim(a, a) = {aa} in pair {i}");
        worst_sym = worst_sym.max((ab - ba).abs());
    }
    ensure!(worst_sym <= 1e-9, "symmetry error {worst_sym:e}");

    let (t, d) = (3, 6);
    let w = LossWeights::default();
    let z = random_tensor(&mut rng, &[t, d], 1.0);
    let pc = random_tensor(&mut rng, &[d], 1.0);
    let pv = random_tensor(&mut rng, &[d], 1.0);
    let mut g = Graph::new();
    let (zv, pcv, pvv) = (
        g.variable(z.clone()),
        g.variable(pc.clone()),
        g.variable(pv.clone()),
    );
    let terms = ok(drl_loss_graph(&mut g, zv, Some(pcv), Some(pvv), &w))?;
    let grads = g.backward(terms.loss);
    let mut analytic = Vec::new();
    for v in [zv, pcv, pvv] {
        analytic.extend_from_slice(grads.get(v).ok_or("missing gradient")?.data());
    }
    let flat: Vec<f64> = [z.data(), pc.data(), pv.data()].concat();
    let numeric = numeric_grad(&flat, 1e-6, |x| {
        let zt = Tensor::new(&[t, d], x[..t * d].to_vec());
        drl_loss(&zt, Some(&x[t * d..t * d + d]), Some(&x[t * d + d..]), &w)
            .unwrap()
            .0
    });
    let err = rel_err(&analytic, &numeric);
    ensure!(err < 1e-4, "drl gradient rel err {err:e}");
    timed(
        Duration::from_secs(10),
        start,
        format!("1000 pairs, symmetry {worst_sym:.1e}, drl grad rel err {err:.1e}"),
    )
}

fn c2_grvq() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut frames = 0;
    while frames < 500 {
        let k = rng.random_range(2..=16);
        let d = rng.random_range(1..9);
        let t = 50;
        let book = Codebook::from_entries(random_tensor(&mut rng, &[k, d], 1.0));
        let z = random_tensor(&mut rng, &[t, d], 1.5);
        let cfg = GrvqConfig {
            codebook_size: k,
            ..GrvqConfig::for_codebooks(1)
        };
        let q = ok(grvq::quantize(
            &LatentSequence {
                values: z.clone(),
                frame_rate: 75.0,
            },
            &cfg,
            std::slice::from_ref(&book),
        ))?;
        for f in 0..t {
            let dist = |j: usize| {
                (0..d)
                    .map(|c| (z.row(f)[c] - book.entry(j)[c]).powi(2))
                    .sum::<f64>()
            };
            let mut best = 0;
            for j in 1..k {
                if dist(j) < dist(best) {
                    best = j;
                }
            }
            ensure!(
                q.indices.get(f, 0) as usize == best,
                "frame {frames}: chose {} not {best}",
                q.indices.get(f, 0)
            );
            frames += 1;
        }
    }

    let (t, d, k) = (4, 5, 8);
    let book = Codebook::from_entries(random_tensor(&mut rng, &[k, d], 1.0));
    let cfg = GrvqConfig {
        codebook_size: k,
        ..GrvqConfig::for_codebooks(1)
    };
    let z = random_tensor(&mut rng, &[t, d], 1.0);
    let w = random_tensor(&mut rng, &[t, d], 1.0);
    let downstream = |y: &[f64]| {
        y.iter()
            .zip(w.data())
            .map(|(a, b)| b * a.tanh() + a * a)
            .sum::<f64>()
    };

    let mut g = Graph::new();
    let zv = g.variable(z.clone());
    let (zq, l_vq, q) = ok(grvq::quantize_graph(
        &mut g,
        zv,
        &cfg,
        std::slice::from_ref(&book),
        75.0,
    ))?;
    let th = g.tanh(zq);
    let wv = g.constant(w.clone());
    let wt = g.mul(th, wv);
    let s1 = g.sum(wt);
    let sq = g.square(zq);
    let s2 = g.sum(sq);
    let out = g.add(s1, s2);
    let grads = g.backward(out);
    let st = grads
        .get(zv)
        .ok_or("no straight-through gradient")?
        .data()
        .to_vec();
    let numeric = numeric_grad(q.z_q.values.data(), 1e-6, downstream);
    let err_st = rel_err(&st, &numeric);
    ensure!(err_st < 1e-4, "straight-through rel err {err_st:e}");

    let grads = g.backward(l_vq);
    let vq = grads
        .get(zv)
        .ok_or("no commitment gradient")?
        .data()
        .to_vec();
    let numeric = numeric_grad(z.data(), 1e-6, |x| {
        let zt = Tensor::new(&[t, d], x.to_vec());
        let q = grvq::quantize(
            &LatentSequence {
                values: zt.clone(),
                frame_rate: 75.0,
            },
            &cfg,
            std::slice::from_ref(&book),
        )
        .unwrap();
        let mse = x
            .iter()
            .zip(q.z_q.values.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / x.len() as f64;
        cfg.commitment_weight * mse
    });
    let err_vq = rel_err(&vq, &numeric);
    ensure!(err_vq < 1e-4, "commitment gradient rel err {err_vq:e}");
    timed(
        Duration::from_secs(30),
        start,
        format!(
            "{frames} frames agree; straight-through rel err {err_st:.1e}, commitment {err_vq:.1e}"
        ),
    )
}

fn c3_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (t, d) = (7, 9);
    let zq = LatentSequence {
        values: random_tensor(&mut rng, &[t, d], 3.0),
        frame_rate: 75.0,
    };
    let pc = random_tensor(&mut rng, &[d], 2.0);
    let pv = random_tensor(&mut rng, &[d], 2.0);
    let emb = |p: &Tensor, source| PromptEmbedding {
        vector: p.data().to_vec(),
        source,
    };
    let (epc, epv) = (
        emb(&pc, PromptSource::Conditional),
        emb(&pv, PromptSource::Voiceprint),
    );
    let id = FusionWeights {
        alpha: [1.0, 0.0, 0.0],
    };
    let out = ok(fuse(&zq, Some(&epc), Some(&epv), &id))?;
    ensure!(
        out.values
            .data()
            .iter()
            .zip(zq.values.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "inference fusion not bitwise identity"
    );
    let mut g = Graph::inference();
    let (zv, pcv, pvv, av) = (
        g.constant(zq.values.clone()),
        g.constant(pc.clone()),
        g.constant(pv.clone()),
        g.constant(id.to_tensor()),
    );
    let o = ok(fuse_graph(&mut g, zv, Some(pcv), Some(pvv), av))?;
    ensure!(
        g.value(o)
            .data()
            .iter()
            .zip(zq.values.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "graph fusion not bitwise identity"
    );

    let alpha = [0.8, 0.3, -0.2];
    let mut analytic = Vec::new();
    for j in 0..t * d {
        let mut g = Graph::new();
        let (zv, pcv, pvv) = (
            g.constant(zq.values.clone()),
            g.constant(pc.clone()),
            g.constant(pv.clone()),
        );
        let av = g.variable(Tensor::vector(alpha.to_vec()));
        let o = ok(fuse_graph(&mut g, zv, Some(pcv), Some(pvv), av))?;
        let e = g.index(o, j);
        let grads = g.backward(e);
        analytic.extend_from_slice(grads.get(av).ok_or("no alpha gradient")?.data());
    }
    let mut numeric = vec![0.0; t * d * 3];
    for a in 0..3 {
        let col = |h: f64| {
            let mut w = alpha;
            w[a] += h;
            fuse(&zq, Some(&epc), Some(&epv), &FusionWeights { alpha: w })
                .unwrap()
                .values
                .data()
                .to_vec()
        };
        let h = 1e-4;
        let (up, down) = (col(h), col(-h));
        for j in 0..t * d {
            numeric[j * 3 + a] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    let err = rel_err(&analytic, &numeric);
    ensure!(err < 1e-6, "dz/dalpha rel err {err:e}");
    Ok(format!(
        "bitwise identity on both paths; dz/dalpha rel err {err:.1e}"
    ))
}

fn c4_shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let m = cfg.codec.hop();
    let strides: usize = cfg.codec.decoder_strides.iter().product();
    ensure!(
        m == 320 && strides == 320,
        "stride products {m} / {strides}"
    );
    let model = ok(PromptCodec::new(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut got = Vec::new();
    for len in [320usize, 321, 3200, 12000] {
        let w = ok(Waveform::new(
            (0..len).map(|_| rng.random_range(-0.5..0.5)).collect(),
            24_000,
        ))?;
        let e = ok(model.encode(&w, None))?;
        let y = ok(model.decode(&e.indices, &e.prompts))?;
        ensure!(
            y.len() == len.div_ceil(m) * m,
            "len {len} decoded to {}",
            y.len()
        );
        got.push(format!("{len}->{}", y.len()));
    }
    Ok(format!("M = 320; {}", got.join(", ")))
}

fn random_stream(rng: &mut ChaCha8Rng) -> (StreamHeader, CodeIndices, Option<PromptBlock>) {
    let (g, r) = (rng.random_range(1..4u8), rng.random_range(1..4u8));
    let k = rng.random_range(2..=4096u16);
    let t = rng.random_range(0..40u32);
    let embed = rng.random_bool(0.5);
    let n_q = g as usize * r as usize;
    let data = (0..t as usize * n_q)
        .map(|_| rng.random_range(0..k as u32))
        .collect();
    let header = StreamHeader {
        version: VERSION,
        sample_rate: rng.random_range(1..200_000),
        hop: rng.random_range(1..2000),
        groups: g,
        residuals: r,
        codebook_size: k,
        n_frames: t,
        prompt_flag: embed as u8,
    };
    let prompts = embed.then(|| {
        let d = rng.random_range(1..200);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
        PromptBlock::from_f64(&a, &b)
    });
    (header, CodeIndices::new(t as usize, n_q, data), prompts)
}

fn c5_stream() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for i in 0..1000 {
        let (h, idx, p) = random_stream(&mut rng);
        let bytes = ok(write_stream(&h, &idx, p.as_ref()))?;
        let s = ok(read_stream(&bytes))?;
        ensure!(
            s.header == h && s.indices == idx && s.prompts == p,
            "round trip {i} differs"
        );
    }
    let (mut rejected, mut parsed) = (0, 0);
    for i in 0..2000 {
        let (h, idx, p) = random_stream(&mut rng);
        let mut bytes = ok(write_stream(&h, &idx, p.as_ref()))?;
        for _ in 0..rng.random_range(1..4) {
            let pos = rng.random_range(0..HEADER_BYTES.min(bytes.len()));
            bytes[pos] = rng.random();
        }
        if rng.random_bool(0.2) {
            bytes.truncate(rng.random_range(0..=bytes.len()));
        }
        let r = catch_unwind(AssertUnwindSafe(|| read_stream(&bytes)))
            .map_err(|_| format!("fuzz case {i} panicked"))?;
        match r {
            Ok(s) => {
                let again = ok(write_stream(&s.header, &s.indices, s.prompts.as_ref()))?;
                ensure!(
                    again == bytes,
                    "fuzz case {i} parsed to a stream that does not re-encode to its bytes"
                );
                parsed += 1;
            }
            Err(_) => rejected += 1,
        }
    }

    let model = ok(PromptCodec::new(TrainConfig::toy().model))?;
    let w = ok(SyntheticSpec {
        n: 1,
        seed: 5,
        seconds: 0.3,
        sample_rate: 16_000,
    }
    .utterance(0))?;
    let mut outputs = Vec::new();
    for embed in [false, true] {
        let a = ok(model.write_stream(&ok(model.encode(&w, None))?, embed))?;
        let b = ok(model.write_stream(&ok(model.encode(&w, None))?, embed))?;
        ensure!(a == b, "re-encode differs (embed {embed})");
        let s = ok(read_stream(&a))?;
        ensure!(
            ok(write_stream(&s.header, &s.indices, s.prompts.as_ref()))? == a,
            "read/write not byte-identical"
        );
        outputs.push(a.len());
    }
    Ok(format!("1000 round trips; 2000 fuzzed ({rejected} rejected, {parsed} valid); re-encode identical ({} and {} bytes)", outputs[0], outputs[1]))
}

fn c6_metrics() -> Outcome {
    let utts = ok(SyntheticSpec {
        n: 10,
        seed: 606,
        seconds: 1.0,
        sample_rate: 16_000,
    }
    .generate())?;
    let mut worst_scale = 0.0f64;
    for (id, x) in &utts {
        let mcd = ok(metrics::mcd(x, x))?;
        let stoi = ok(metrics::stoi(x, x))?;
        ensure!(mcd == 0.0, "{id}: mcd(x, x) = {mcd}");
        ensure!((stoi - 1.0).abs() <= 1e-6, "{id}: stoi(x, x) = {stoi}");
        let x2 = ok(Waveform::new(
            x.samples().iter().map(|v| 2.0 * v).collect(),
            x.sample_rate(),
        ))?;
        let s = ok(metrics::mcd(x, &x2))?;
        ensure!(s < 1e-6, "{id}: mcd(x, 2x) = {s}");
        worst_scale = worst_scale.max(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(607);
    let mut pairs = Vec::new();
    for (id, x) in utts.iter().take(5) {
        let noisy = |rng: &mut ChaCha8Rng, snr| {
            Waveform::new(add_noise(rng, x.samples(), snr), x.sample_rate())
        };
        let lo = ok(metrics::stoi(x, &ok(noisy(&mut rng, 0.0))?))?;
        let hi = ok(metrics::stoi(x, &ok(noisy(&mut rng, 20.0))?))?;
        ensure!(lo < hi, "{id}: stoi at 0 dB {lo} not below 20 dB {hi}");
        pairs.push(format!("{lo:.3}<{hi:.3}"));
    }
    Ok(format!(
        "10 utterances exact; scale mcd max {worst_scale:.1e}; stoi {}",
        pairs.join(" ")
    ))
}

fn c7_bitrate() -> Outcome {
    let codec = CodecConfig::default();
    let mut got = Vec::new();
    for (n_q, want) in [(4, 3000.0), (1, 750.0)] {
        let g = GrvqConfig {
            codebook_size: 1024,
            ..GrvqConfig::for_codebooks(n_q)
        };
        for frames in [0, 1, 75, 1234] {
            let b = metrics::bitrate(&codec, &g, frames, 0);
            ensure!(b == want, "N_q {n_q}, {frames} frames: {b} bps");
        }
        got.push(format!("N_q={n_q}: {want} bps"));
    }
    Ok(got.join(", "))
}

struct Smoke {
    logs: String,
}

fn c8_overfit() -> Result<(String, Smoke), String> {
    let start = Instant::now();
    let cfg = TrainConfig::toy();
    let w = ok(SyntheticSpec {
        n: 1,
        seed: 11,
        seconds: 0.128,
        sample_rate: 16_000,
    }
    .utterance(0))?;
    let items = vec![TrainItem {
        id: "syn0000".into(),
        waveform: w,
        external: None,
    }];
    let steps = cfg.steps;
    let mut trainer = ok(Trainer::new(cfg, items))?;
    let frozen = trainer.model.params.fingerprint(VOICEPRINT_BACKEND_PREFIX);
    let logs = ok(trainer.run(|_, _| Ok(())))?;
    let el = start.elapsed();
    ensure!(
        logs.len() == steps && steps == 300,
        "ran {} steps",
        logs.len()
    );
    for l in &logs {
        let r = &l.losses;
        let all = [
            r.l_rec, r.l_f, r.l_vq, r.l_adv, r.l_drl, r.l_total, l.l_disc,
        ];
        ensure!(
            all.iter().all(|v| v.is_finite()),
            "non-finite loss at step {}",
            l.step
        );
        ensure!(
            l.alpha.iter().all(|a| a.is_finite()),
            "non-finite alpha at step {}",
            l.step
        );
    }
    ensure!(
        trainer.model.params.fingerprint(VOICEPRINT_BACKEND_PREFIX) == frozen,
        "frozen voiceprint backend changed"
    );
    let mean = |s: &[StepLog]| s.iter().map(|l| l.losses.l_rec).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&logs[..10]), mean(&logs[logs.len() - 10..]));
    let ratio = last / first;
    ensure!(
        ratio <= 0.5,
        "l_rec fell only to {ratio:.3} of its first-10 average ({first:.4} -> {last:.4})"
    );
    ensure!(
        el <= Duration::from_secs(15 * 60),
        "took {:.0} s",
        el.as_secs_f64()
    );
    let a = logs.last().unwrap().alpha;
    let logs_text = logs
        .iter()
        .map(|l| serde_json::to_string(l).unwrap())
        .collect::<Vec<_>>()
        .join("\n");
    Ok((
        format!(
            "l_rec {first:.4} -> {last:.4} (ratio {ratio:.3}); backend unchanged; alpha [{:.3}, {:.3}, {:.3}]; {:.0} s",
            a[0],
            a[1],
            a[2],
            el.as_secs_f64()
        ),
        Smoke { logs: logs_text },
    ))
}

const KEPT: [&str; 5] = [
    "encoder",
    "decoder",
    "conditional_encoder",
    "voiceprint_aligner",
    "fusion",
];

fn expected_groups(a: Ablation) -> BTreeSet<&'static str> {
    KEPT.iter()
        .copied()
        .filter(|g| match *g {
            "fusion" => a.use_afwf,
            "conditional_encoder" => a.use_conditional_encoder,
            "voiceprint_aligner" => a.use_voiceprint_encoder,
            _ => true,
        })
        .collect()
}

fn structure_config(a: Ablation) -> TrainConfig {
    let mut cfg = TrainConfig::toy();
    cfg.segment_samples = 1024;
    cfg.apply_ablation(a);
    cfg
}

fn c9_ablation() -> Result<(String, String), String> {
    let w = ok(SyntheticSpec {
        n: 1,
        seed: 12,
        seconds: 0.128,
        sample_rate: 16_000,
    }
    .utterance(0))?;
    let items = vec![TrainItem {
        id: "syn0000".into(),
        waveform: w.clone(),
        external: None,
    }];
    let mut logs = Vec::new();
    let no_prompts = Ablation {
        use_drl: false,
        use_afwf: true,
        use_conditional_encoder: false,
        use_voiceprint_encoder: false,
    };
    let combos: Vec<(String, Ablation)> = ABLATION_VARIANTS
        .iter()
        .map(|(n, a)| (n.to_string(), *a))
        .chain([
            ("no prompts".to_string(), no_prompts),
            (
                "no prompts, no fusion".to_string(),
                Ablation {
                    use_afwf: false,
                    ..no_prompts
                },
            ),
        ])
        .collect();
    for (name, a) in &combos {
        let mut trainer = ok(Trainer::new(structure_config(*a), items.clone()))?;
        let opt = trainer.optimizer_parameters();
        let groups = parameter_groups(opt.iter().map(String::as_str));
        ensure!(
            groups == expected_groups(*a),
            "{name}: optimizer groups {groups:?}"
        );
        for _ in 0..2 {
            let l = ok(trainer.step())?;
            let r = &l.losses;
            if a.use_drl {
                ensure!(
                    r.l_drl != 0.0 && r.l_1.is_some() && r.l_2.is_some() && r.l_3.is_some(),
                    "{name}: drl terms missing"
                );
            } else {
                ensure!(
                    r.l_drl == 0.0 && r.l_1.is_none() && r.l_2.is_none() && r.l_3.is_none(),
                    "{name}: drl terms not zeroed"
                );
            }
            ensure!(
                [r.l_rec, r.l_f, r.l_vq, r.l_adv]
                    .iter()
                    .all(|v| v.is_finite() && *v != 0.0),
                "{name}: a generator term is zero"
            );
            if !a.use_afwf {
                ensure!(
                    l.alpha == FusionWeights::UNIT.alpha,
                    "{name}: alpha {:?} without fusion",
                    l.alpha
                );
            }
            logs.push(format!("{name}\t{}", serde_json::to_string(&l).unwrap()));
        }
        ensure!(
            trainer.updated_parameters() == opt,
            "{name}: updated set differs from optimizer set"
        );

        if !a.use_conditional_encoder && !a.use_voiceprint_encoder {
            let mut model = trainer.model.clone();
            if let Some(p) = model.params.get_mut(ALPHA_PARAM) {
                *p = Tensor::vector(vec![0.7, 0.4, -0.3]);
            }
            let a1 = model.fusion_weights().alpha[0];
            let inputs = ok(model.prompt_inputs(&w, None))?;
            let mut g = Graph::inference();
            let out = ok(model.forward(&mut g, &w.samples()[..1024], &inputs))?;
            let (zt, zq): (Var, Var) = (out.z_tilde, out.z_q);
            ensure!(
                g.value(zt)
                    .data()
                    .iter()
                    .zip(g.value(zq).data())
                    .all(|(x, y)| x.to_bits() == (a1 * y).to_bits()),
                "{name}: z_tilde is not alpha_1 z_q"
            );
        }
    }

    let mut base = TrainConfig::toy();
    base.steps = 3;
    base.segment_samples = 1024;
    let plan = AblationPlan::full(base);
    let utt = |seed, id: &str| -> Result<Utterance, String> {
        Ok(Utterance {
            id: id.into(),
            waveform: ok(SyntheticSpec {
                n: 1,
                seed,
                seconds: 0.6,
                sample_rate: 16_000,
            }
            .utterance(0))?,
            embedding: None,
        })
    };
    let report = ok(run_ablation(
        &plan,
        &[utt(13, "train0")?],
        &[utt(14, "test0")?],
        None,
    ))?;
    ensure!(report.rows.len() == 15, "{} table rows", report.rows.len());
    if let Some(r) = report.rows.iter().find(|r| r.error.is_some()) {
        return Err(format!(
            "cell {} N_q={} failed: {}",
            r.variant,
            r.n_q,
            r.error.as_ref().unwrap()
        ));
    }
    let table = format!(
        "{}\n{}\n{}",
        ok(render_csv(&report))?,
        render_markdown(&report),
        logs.join("\n")
    );
    Ok((
        format!(
            "{} flag combinations: groups, updates and zeroed terms as expected; 15-cell table",
            combos.len()
        ),
        table,
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, r: Outcome| match r {
        Ok(d) => println!("criterion {n}: PASS  {d}"),
        Err(e) => {
            failed += 1;
            println!("criterion {n}: FAIL  {e}");
        }
    };
    let guard = |f: &dyn Fn() -> Outcome| {
        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()))
    };
    report(1, guard(&c1_ssim));
    report(2, guard(&c2_grvq));
    report(3, guard(&c3_fusion));
    report(4, guard(&c4_shapes));
    report(5, guard(&c5_stream));
    report(6, guard(&c6_metrics));
    report(7, guard(&c7_bitrate));

    let first8 = catch_unwind(c8_overfit).unwrap_or_else(|_| Err("panicked".into()));
    report(
        8,
        first8
            .as_ref()
            .map(|(d, _)| d.clone())
            .map_err(Clone::clone),
    );
    let first9 = catch_unwind(c9_ablation).unwrap_or_else(|_| Err("panicked".into()));
    report(
        9,
        first9
            .as_ref()
            .map(|(d, _)| d.clone())
            .map_err(Clone::clone),
    );

    let c10 = (|| -> Outcome {
        let (Ok((_, a8)), Ok((_, a9))) = (&first8, &first9) else {
            return Err("criteria 8 and 9 must pass first".into());
        };
        let b8 = catch_unwind(c8_overfit)
            .unwrap_or_else(|_| Err("panicked".into()))?
            .1;
        ensure!(a8.logs == b8.logs, "overfit loss logs differ between runs");
        let b9 = catch_unwind(c9_ablation)
            .unwrap_or_else(|_| Err("panicked".into()))?
            .1;
        ensure!(*a9 == b9, "ablation logs or table differ between runs");
        Ok(format!(
            "{} log bytes and {} table bytes identical across runs",
            a8.logs.len(),
            a9.len()
        ))
    })();
    report(10, c10);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
