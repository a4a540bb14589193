//! End-to-end acceptance run. Prints one verdict line per criterion and
//! fails if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::oracles::*;
use common::*;
use orthoct_core::autodiff::{Graph, Tensor, Var};
use orthoct_core::data::{generate_phantom, save_projection, split_dataset, PhantomSpec};
use orthoct_core::geometry::{forward_project, smear, Axis, Projection, Volume};
use orthoct_core::losses::*;
use orthoct_core::metrics::*;
use orthoct_core::networks::*;
use orthoct_core::pipeline::*;
use orthoct_core::Result;
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

/// Outcome of one criterion: pass flag plus the measured numbers.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn max_of(errs: impl IntoIterator<Item = f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

// ---------- 1: gradient suite ----------

const GRAD_SEEDS: u64 = 20;

/// `(name, inputs, loss)` for every differentiable primitive and loss.
type Case = (&'static str, Vec<Tensor<f64>>, Box<LossFn<'static>>);

fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape);
    let stride = 1 + (seed % 2) as usize;
    let pad = (seed / 2 % 2) as usize;
    let unit = unit_map(&t(&[5, 4, 4]));
    let anchors = sample_anchors(4, 4, 5, &mut rng(seed));
    let (anchors2, unit2) = (anchors.clone(), unit.clone());
    let c = ContrastiveConfig {
        tau: 0.5,
        ..ContrastiveConfig::default()
    };
    let c2 = c.clone();
    let extractor = PerceptualExtractor::<f64>::random(UNetConfig::feature(2, 2, 4), seed).unwrap();
    let percept_target = t(&[1, 8, 8]);
    vec![
        (
            "conv3d",
            vec![t(&[2, 4, 4, 4]), t(&[3, 2, 2, 2, 2]), t(&[3])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let y = g.conv(v[0], v[1], Some(v[2]), &[stride; 3], &[pad; 3], 3)?;
                project(g, y, seed)
            }),
        ),
        (
            "conv2d",
            vec![t(&[2, 8, 6]), t(&[2, 2, 4, 4]), t(&[2])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let y = g.conv(v[0], v[1], Some(v[2]), &[2, 2], &[1, 1], 2)?;
                project(g, y, seed)
            }),
        ),
        (
            "transposed_conv2d",
            vec![t(&[2, 3, 3]), t(&[2, 3, 2, 2]), t(&[3])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let y = g.transposed_conv(v[0], v[1], Some(v[2]), &[2, 2], 2)?;
                project(g, y, seed)
            }),
        ),
        (
            "transposed_conv3d",
            vec![t(&[2, 2, 2, 2]), t(&[2, 2, 2, 2, 2]), t(&[2])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let y = g.transposed_conv(v[0], v[1], Some(v[2]), &[2, 2, 2], 3)?;
                project(g, y, seed)
            }),
        ),
        (
            "instance_norm",
            vec![t(&[2, 3, 4]), t(&[2]), t(&[2])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let y = g.instance_norm(v[0], v[1], v[2], 1e-5)?;
                project(g, y, seed)
            }),
        ),
        (
            "max_pool",
            vec![t(&[2, 4, 4, 4])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let y = g.max_pool(v[0], &[2, 2, 2], 3)?;
                project(g, y, seed)
            }),
        ),
        (
            "linear_upsample",
            vec![t(&[2, 3, 3]), t(&[1, 2, 3, 2])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let a = g.linear_upsample(v[0], 2, 2)?;
                let a = project(g, a, seed)?;
                let b = g.linear_upsample(v[1], 2, 3)?;
                let b = project(g, b, seed + 1)?;
                g.add(a, b)
            }),
        ),
        (
            "pointwise_and_reductions",
            vec![t(&[3, 4, 4]), t(&[3, 4, 4])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let a = g.leaky_relu(v[0], 0.2)?;
                let b = g.mul(a, v[1])?;
                let c = g.sub(b, v[0])?;
                let d = g.abs(c)?;
                let e = g.concat(d, v[1])?;
                let e = g.l2_normalize_channels(e, 1e-12)?;
                let s = g.add_scalar(e, 0.5)?;
                let s = g.square(s)?;
                let s = g.scale(s, 1.7)?;
                let m = g.mean(s)?;
                let total = g.sum(v[1])?;
                g.add(m, total)
            }),
        ),
        (
            "mse_l1",
            vec![t(&[1, 5, 5]), t(&[1, 5, 5])],
            Box::new(|g: &mut Graph<f64>, v: &[Var]| {
                let a = mse_loss(g, v[0], v[1])?;
                let b = l1_loss(g, v[0], v[1])?;
                g.add(a, b)
            }),
        ),
        (
            "adversarial",
            vec![t(&[1, 3, 3]), t(&[1, 3, 3])],
            Box::new(|g: &mut Graph<f64>, v: &[Var]| {
                let (d, gen) = adversarial_losses(g, v[0], v[1])?;
                g.add(d, gen)
            }),
        ),
        (
            "perceptual",
            vec![t(&[1, 8, 8])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                extractor.loss_graph(g, v[0], &percept_target)
            }),
        ),
        (
            "semantic",
            vec![t(&[5, 4, 4])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let n = g.l2_normalize_channels(v[0], 1e-12)?;
                semantic_graph(g, n, &unit, &anchors, &c)
            }),
        ),
        (
            "anatomy",
            vec![t(&[5, 4, 4])],
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
                let n = g.l2_normalize_channels(v[0], 1e-12)?;
                anatomy_graph(g, n, &unit2, &anchors2, &c2)
            }),
        ),
    ]
}

type NetRun<'a> = dyn Fn(&mut Graph<f64>, &Bound) -> Result<Var> + 'a;

fn random_picks(params: &NetworkParams<f64>, seed: u64, n: usize) -> Vec<(String, usize)> {
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let name = names.choose(&mut r).unwrap().clone();
            let idx = r.gen_range(0..params.get(&name).unwrap().len());
            (name, idx)
        })
        .collect()
}

/// Deep nets pass many leaky-ReLU kinks, so the probe step is small; the
/// denominator floor keeps exact-zero gradients (a bias feeding straight
/// into instance norm) from reading as relative noise.
fn network_check(params: &NetworkParams<f64>, run: &NetRun, seed: u64) -> f64 {
    let picks = random_picks(params, seed, 6);
    let picks: Vec<(&str, usize)> = picks.iter().map(|(n, i)| (n.as_str(), *i)).collect();
    let (a, n) = sampled_param_grads(params, run, &picks, seed, 1e-6);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(&n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(&a).max(norm(&n)).max(1e-6)
}

/// Worst relative error per full network, each driven by its training loss.
fn network_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed ^ 0x77);
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape);
    let mut out = Vec::new();

    let coarse = UNetConfig::plain(3, 2, 2);
    let p = build_unet::<f64>(&coarse, seed).unwrap();
    let (x, y) = (t(&[1, 4, 4, 4]), t(&[1, 4, 4, 4]));
    let run = |g: &mut Graph<f64>, b: &Bound| {
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let o = unet_graph(g, b, &coarse, xv)?.output;
        mse_loss(g, o, yv)
    };
    out.push(("coarse_unet3d", network_check(&p, &run, seed)));

    let desk = UNetConfig::desk(2);
    let p = build_unet::<f64>(&desk, seed).unwrap();
    let x = t(&[1, 16, 16]);
    let run = |g: &mut Graph<f64>, b: &Bound| {
        let xv = g.constant(x.clone());
        let o = unet_graph(g, b, &desk, xv)?.output;
        project(g, o, seed)
    };
    out.push(("unet2d", network_check(&p, &run, seed)));

    // the zero head makes a fresh refiner insensitive to its inner weights
    let refiner = UNetConfig::refiner(2, 2);
    let mut p = build_unet::<f64>(&refiner, seed).unwrap();
    for (_, w) in p.iter_mut() {
        if w.data().iter().all(|&v| v == 0.0) {
            *w = random_tensor(&mut rng(seed + 9), w.shape());
        }
    }
    let extractor = PerceptualExtractor::<f64>::random(UNetConfig::feature(2, 2, 4), seed).unwrap();
    let (x, y) = (t(&[1, 8, 8]), t(&[1, 8, 8]));
    let run = |g: &mut Graph<f64>, b: &Bound| {
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let o = unet_graph(g, b, &refiner, xv)?.output;
        let l1 = l1_loss(g, o, yv)?;
        let pc = extractor.loss_graph(g, o, &y)?;
        g.add(l1, pc)
    };
    out.push(("refiner", network_check(&p, &run, seed)));

    let feat = UNetConfig::feature(2, 2, 4);
    let p = build_unet::<f64>(&feat, seed).unwrap();
    let teacher_p = build_unet::<f64>(&feat, seed + 1).unwrap();
    let x = t(&[1, 8, 8]);
    let teacher = feature_forward(&teacher_p, &feat, &x).unwrap();
    let s = feat.stride_multiple();
    let anchors_s = sample_anchors(8 / s, 8 / s, 4, &mut rng(seed));
    let anchors_a = sample_anchors(8, 8, 6, &mut rng(seed + 1));
    let c = ContrastiveConfig {
        window_radius: 1,
        n_pos_s: 2,
        n_neg_a: 4,
        ..ContrastiveConfig::default()
    };
    let run = |g: &mut Graph<f64>, b: &Bound| {
        let xv = g.constant(x.clone());
        let (_, f) = feature_graph(g, b, &feat, xv)?;
        let sem = semantic_graph(g, f.semantic, &teacher.semantic, &anchors_s, &c)?;
        let ana = anatomy_graph(g, f.anatomy, &teacher.anatomy, &anchors_a, &c)?;
        g.add(sem, ana)
    };
    out.push(("feature_net", network_check(&p, &run, seed)));

    let dc = DiscConfig {
        base_channels: 2,
        blocks: 2,
    };
    let p = build_discriminator::<f64>(&dc, seed).unwrap();
    let (real, fake) = (t(&[1, 8, 8]), t(&[1, 8, 8]));
    let run = |g: &mut Graph<f64>, b: &Bound| {
        let rv = g.constant(real.clone());
        let fv = g.constant(fake.clone());
        let dr = disc_graph(g, b, &dc, rv)?;
        let df = disc_graph(g, b, &dc, fv)?;
        discriminator_loss(g, dr, df)
    };
    out.push(("discriminator", network_check(&p, &run, seed)));
    out
}

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let mut prim: Vec<(&str, f64)> = Vec::new();
    let mut nets: Vec<(&str, f64)> = Vec::new();
    let merge = |acc: &mut Vec<(&'static str, f64)>, name: &'static str, e: f64| match acc
        .iter_mut()
        .find(|(n, _)| *n == name)
    {
        Some((_, m)) => *m = m.max(e),
        None => acc.push((name, e)),
    };
    for seed in 0..GRAD_SEEDS {
        for (name, inputs, f) in primitive_cases(seed) {
            merge(&mut prim, name, grad_check(f.as_ref(), &inputs));
        }
        for (name, e) in network_errors(seed) {
            merge(&mut nets, name, e);
        }
    }
    let elapsed = start.elapsed();
    let p = max_of(prim.iter().map(|x| x.1));
    let n = max_of(nets.iter().map(|x| x.1));
    let worst = |v: &[(&'static str, f64)]| -> &'static str {
        v.iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|x| x.0)
            .unwrap_or("")
    };
    Verdict::new(
        p < 1e-4 && n < 1e-3 && elapsed < Duration::from_secs(120),
        format!(
            "{GRAD_SEEDS} seeds, {} primitives max rel err {p:.2e} ({}), {} networks max rel err {n:.2e} ({}), {:.1}s",
            prim.len(),
            worst(&prim),
            nets.len(),
            worst(&nets),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------- 2: adjoint suite ----------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// `<conv(x), y> = <x, conv^T(y)>` with kernel 2 on even extents, so both
/// directions cover the same grid.
fn conv_adjoint_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dims = 2 + (seed % 2) as usize;
    let stride = 1 + (seed / 2 % 2) as usize;
    let ext: Vec<usize> = (0..dims).map(|_| 2 * r.gen_range(2..4)).collect();
    let mut xs = vec![3];
    xs.extend(&ext);
    let mut ks = vec![2, 3];
    ks.extend(vec![2; dims]);
    let x = random_tensor(&mut r, &xs);
    let k = random_tensor(&mut r, &ks);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let kv = g.constant(k);
    let ax = g
        .conv(xv, kv, None, &vec![stride; dims], &vec![0; dims], dims)
        .unwrap();
    let y = random_tensor(&mut r, g.value(ax).shape());
    let yv = g.constant(y.clone());
    let aty = g
        .transposed_conv(yv, kv, None, &vec![stride; dims], dims)
        .unwrap();
    assert_eq!(g.value(aty).shape(), x.shape());
    rel_gap(g.value(ax).dot(&y), g.value(aty).dot(&x))
}

fn projector_adjoint_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dims = [r.gen_range(1..9), r.gen_range(1..9), r.gen_range(1..9)];
    let spacing = [
        r.gen_range(0.5..3.0),
        r.gen_range(0.5..3.0),
        r.gen_range(0.5..3.0),
    ];
    let n = dims.iter().product();
    let v = Volume::new(
        dims,
        spacing,
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for axis in [Axis::Ap, Axis::Lat] {
        let m = dims[axis.detector_axis()] * dims[2];
        let values = (0..m).map(|_| r.gen_range(-1.0..1.0)).collect();
        let p = Projection::from_volume_geometry(axis, dims, spacing, values);
        let lhs = dot(&forward_project(&v, axis).values, &p.values);
        let rhs = dot(&v.values, &smear(&p, dims, spacing).unwrap().values);
        worst = worst.max(rel_gap(lhs, rhs));
    }
    worst
}

fn criterion_adjoints() -> Verdict {
    let start = Instant::now();
    let conv = max_of((0..50).map(conv_adjoint_gap));
    let proj = max_of((0..50).map(|s| projector_adjoint_gap(1000 + s)));
    Verdict::new(
        conv < 1e-10 && proj < 1e-10,
        format!(
            "50 instances each: conv/transposed max gap {conv:.2e}, projector/smear max gap {proj:.2e}, {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------- 3: loss oracles ----------

fn criterion_loss_oracles() -> Verdict {
    let c = ContrastiveConfig::default();
    let mut sem = 0.0f64;
    let mut ana = 0.0f64;
    for seed in 0..20 {
        let s = unit_map(&random_tensor(&mut rng(300 + seed), &[8, 6, 6]));
        let t = unit_map(&random_tensor(&mut rng(400 + seed), &[8, 6, 6]));
        let anchors = sample_anchors(6, 6, 12, &mut rng(seed));
        let got = semantic_loss(&s, &t, &anchors, &c).unwrap();
        let want = semantic_oracle(&s, &t, &anchors, &c);
        sem = sem.max((got - want).abs() / want);
        let got = anatomy_infonce(&s, &t, &anchors, &c).unwrap();
        let want = anatomy_oracle(&s, &t, &anchors, &c);
        ana = ana.max((got - want).abs() / want);
    }
    // identical unit vectors everywhere: every logit ties
    let e = map_from_vectors(5, 5, &vec![vec![0.6, 0.8]; 25]);
    let mut closed = 0.0f64;
    for k in [1usize, 3, 8] {
        let ck = ContrastiveConfig { n_neg_a: k, ..c };
        let l = anatomy_infonce(&e, &e, &[(2, 2)], &ck).unwrap();
        closed = closed.max((l - (1.0 + k as f64).ln()).abs());
    }
    // anchor shares e1 with the teacher, every neighbour is e2
    let mut vecs = vec![vec![0.0, 1.0]; 9];
    vecs[4] = vec![1.0, 0.0];
    let t = map_from_vectors(3, 3, &vecs);
    for k in [1usize, 2, 5] {
        let ck = ContrastiveConfig {
            n_neg_a: k,
            tau: 1.0,
            window_radius: 1,
            ..c
        };
        let l = anatomy_infonce(&t, &t, &[(1, 1)], &ck).unwrap();
        closed = closed.max((l - (1.0 + k as f64 * (-1.0f64).exp()).ln()).abs());
    }
    Verdict::new(
        sem < 1e-6 && ana < 1e-6 && closed < 1e-12,
        format!(
            "20 seeds: semantic rel err {sem:.2e}, anatomy rel err {ana:.2e}; closed forms max abs err {closed:.2e}"
        ),
    )
}

// ---------- 4: EMA ----------

fn criterion_ema() -> Verdict {
    let cfg = UNetConfig::plain(2, 2, 2);
    let mut worst = 0.0f64;
    let mut r = rng(44);
    for seed in 0..50 {
        let m: f64 = r.gen_range(0.0..1.0);
        let s = build_unet::<f64>(&cfg, seed).unwrap();
        let mut t = build_unet::<f64>(&cfg, seed + 100).unwrap();
        let before = t.distance_sq(&s).sqrt();
        ema_update(&mut t, &s, m).unwrap();
        let after = t.distance_sq(&s).sqrt();
        worst = worst.max((after - m * before).abs() / before);
    }
    let s = build_unet::<f64>(&cfg, 1).unwrap();
    let mut t = build_unet::<f64>(&cfg, 2).unwrap();
    for _ in 0..300 {
        ema_update(&mut t, &s, 0.9).unwrap();
    }
    let converged = t.distance_sq(&s).sqrt();
    let mut fixed = s.clone();
    ema_update(&mut fixed, &s, 0.999).unwrap();
    Verdict::new(
        worst < 1e-12 && converged < 1e-12 && fixed == s,
        format!(
            "50 momenta: contraction rel err {worst:.2e}; frozen student after 300 updates at m=0.9: distance {converged:.2e}"
        ),
    )
}

// ---------- 5: overfit ----------

struct Overfit {
    verdict: Verdict,
    volume: Volume<f32>,
    coarse: Checkpoint,
    refine: Checkpoint,
}

const OVERFIT_STAGE1_STEPS: usize = 300;
const OVERFIT_STAGE2_STEPS: usize = 300;

fn criterion_overfit() -> Overfit {
    let start = Instant::now();
    let vol = generate_phantom(&PhantomSpec::desk(1)).unwrap();
    let model = ModelConfig::desk();
    let c1 = TrainConfig {
        epochs: OVERFIT_STAGE1_STEPS,
        lr_init: 2e-3,
        checkpoint_every: OVERFIT_STAGE1_STEPS,
        ..TrainConfig::desk_stage1()
    };
    let mut rec1 = Recorder::default();
    let coarse = train_stage1(std::slice::from_ref(&vol), &model, &c1, &mut rec1).unwrap();
    let c2 = TrainConfig {
        epochs: OVERFIT_STAGE2_STEPS,
        lr_init: 1e-3,
        batch_size: 2,
        checkpoint_every: OVERFIT_STAGE2_STEPS,
        ..TrainConfig::desk_stage2()
    };
    let mut rec2 = Recorder::default();
    let refine = train_stage2(std::slice::from_ref(&vol), &coarse, &model, &c2, &mut rec2).unwrap();

    let ap = forward_project(&vol, Axis::Ap);
    let lat = forward_project(&vol, Axis::Lat);
    let init = initial_estimate(&ap, &lat, &model).unwrap();
    let full = reconstruct(&ap, &lat, &coarse, Some(&refine)).unwrap();
    let elapsed = start.elapsed();

    let l1 = &rec1.records;
    let ratio = l1.last().unwrap().loss_total / l1[0].loss_total;
    let l2 = &rec2.records;
    let (h0, h_end) = (l2[0].loss_total, l2.last().unwrap().loss_total);
    let (p_init, p_full) = (
        psnr(&init, &vol, PSNR_PEAK).unwrap(),
        psnr(&full, &vol, PSNR_PEAK).unwrap(),
    );
    let gt_mask = lung_mask(&vol);
    let (d_init, d_full) = (
        dice(&lung_mask(&init), &gt_mask).unwrap(),
        dice(&lung_mask(&full), &gt_mask).unwrap(),
    );
    let pass = ratio <= 0.01
        && l2.len() == OVERFIT_STAGE2_STEPS
        && h_end < h0
        && p_full >= p_init + 3.0
        && d_full >= d_init
        && elapsed <= Duration::from_secs(600);
    Overfit {
        verdict: Verdict::new(
            pass,
            format!(
                "stage-1 MSE {:.3}% of initial after {} steps; hybrid {h0:.4} -> {h_end:.4} over {} steps; PSNR {p_init:.2} -> {p_full:.2} dB; DICE {d_init:.3} -> {d_full:.3}; {:.0}s",
                100.0 * ratio,
                l1.len(),
                l2.len(),
                elapsed.as_secs_f64()
            ),
        ),
        volume: vol,
        coarse,
        refine,
    }
}

// ---------- 6: generalization ----------

const GEN_PHANTOMS: u64 = 50;
const GEN_STAGE1_EPOCHS: usize = 15;
const GEN_STAGE2_EPOCHS: usize = 3;

fn criterion_generalization() -> Verdict {
    let start = Instant::now();
    let vols: Vec<Volume<f32>> = (0..GEN_PHANTOMS)
        .map(|i| generate_phantom(&PhantomSpec::desk(1000 + i)).unwrap())
        .collect();
    let split = split_dataset(vols.len(), 0.8, 7).unwrap();
    let train: Vec<Volume<f32>> = split.train.iter().map(|&i| vols[i].clone()).collect();
    let model = ModelConfig::desk();
    let c1 = TrainConfig {
        epochs: GEN_STAGE1_EPOCHS,
        lr_init: 2e-3,
        checkpoint_every: GEN_STAGE1_EPOCHS,
        ..TrainConfig::desk_stage1()
    };
    let coarse = train_stage1(&train, &model, &c1, &mut ()).unwrap();
    let c2 = TrainConfig {
        epochs: GEN_STAGE2_EPOCHS,
        lr_init: 1e-3,
        batch_size: 2,
        checkpoint_every: GEN_STAGE2_EPOCHS,
        ..TrainConfig::desk_stage2()
    };
    let refine = train_stage2(&train, &coarse, &model, &c2, &mut ()).unwrap();
    let recon = Reconstructor::from_checkpoints(&coarse, Some(&refine)).unwrap();

    let (mut p_init, mut p_full, mut d_init, mut d_full) = (0.0, 0.0, 0.0, 0.0);
    for &i in &split.test {
        let v = &vols[i];
        let ap = forward_project(v, Axis::Ap);
        let lat = forward_project(v, Axis::Lat);
        let init = initial_estimate(&ap, &lat, &model).unwrap();
        let full = recon.reconstruct(&ap, &lat).unwrap();
        let gt = lung_mask(v);
        p_init += psnr(&init, v, PSNR_PEAK).unwrap();
        p_full += psnr(&full, v, PSNR_PEAK).unwrap();
        d_init += dice(&lung_mask(&init), &gt).unwrap();
        d_full += dice(&lung_mask(&full), &gt).unwrap();
    }
    let n = split.test.len() as f64;
    let (p_init, p_full, d_init, d_full) = (p_init / n, p_full / n, d_init / n, d_full / n);
    let elapsed = start.elapsed();
    Verdict::new(
        p_full > p_init && d_full > 0.8 && elapsed <= Duration::from_secs(3600),
        format!(
            "{} train / {} test phantoms, {GEN_STAGE1_EPOCHS}+{GEN_STAGE2_EPOCHS} epochs: mean PSNR {p_init:.2} -> {p_full:.2} dB, mean DICE {d_init:.3} -> {d_full:.3}; {:.0}s",
            split.train.len(),
            split.test.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------- 7: inference speed ----------

fn orthoct(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_orthoct"));
    cmd.args(args).env_remove("ORTHOCT_RUN_DIR");
    if let Some(n) = threads {
        cmd.env("RAYON_NUM_THREADS", n);
    }
    cmd.output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn criterion_speed(o: &Overfit) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    o.coarse.save(&d.join("stage1.ckpt")).unwrap();
    o.refine.save(&d.join("stage2.ckpt")).unwrap();
    save_projection(&forward_project(&o.volume, Axis::Ap), &d.join("ap.proj")).unwrap();
    save_projection(&forward_project(&o.volume, Axis::Lat), &d.join("lat.proj")).unwrap();
    let (ap, lat, out) = (d.join("ap.proj"), d.join("lat.proj"), d.join("out.vol"));
    let args = [
        "reconstruct",
        "--ap",
        p(&ap),
        "--lat",
        p(&lat),
        "--run-dir",
        p(d),
        "--out",
        p(&out),
    ];
    let best = (0..3)
        .map(|_| {
            let t = Instant::now();
            let out = orthoct(&args, Some("1"));
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            t.elapsed()
        })
        .min()
        .unwrap();
    Verdict::new(
        best < Duration::from_secs(2),
        format!(
            "32^3 reconstruct, one thread, whole process incl. checkpoint load: best of 3 {:.3}s",
            best.as_secs_f64()
        ),
    )
}

// ---------- 8: metric oracles ----------

fn criterion_metrics() -> Verdict {
    let gt = generate_phantom(&PhantomSpec::desk(3))
        .unwrap()
        .cast::<f64>();
    let extractor = PerceptualExtractor::desk().unwrap();
    let row = evaluate_pair("gt", &gt, &gt, &extractor).unwrap();
    let identity = row.mae == 0.0
        && row.ssim == 1.0
        && row.vif == 1.0
        && row.dice == 1.0
        && row.psnr == PSNR_CAP
        && row.perceptual == 0.0;

    let mut ssim_err = 0.0f64;
    for seed in 0..5 {
        let mut r = rng(10 + seed);
        let dims = [16, 14, 2];
        let n = dims.iter().product();
        let a = Volume::new(
            dims,
            [1.0; 3],
            (0..n).map(|_| r.gen_range(-1000.0..1000.0)).collect(),
        )
        .unwrap();
        let b = Volume::new(
            dims,
            [1.0; 3],
            a.values
                .iter()
                .map(|v| v + r.gen_range(-400.0..400.0))
                .collect(),
        )
        .unwrap();
        ssim_err = ssim_err.max((ssim(&b, &a).unwrap() - ssim_oracle(&b, &a)).abs());
    }
    let noisy = Volume::new(
        gt.dims,
        gt.spacing,
        gt.values
            .iter()
            .enumerate()
            .map(|(i, v)| v + 60.0 * ((i * 7919 % 13) as f64 - 6.0))
            .collect(),
    )
    .unwrap();
    ssim_err = ssim_err.max((ssim(&noisy, &gt).unwrap() - ssim_oracle(&noisy, &gt)).abs());

    let m = |v: [bool; 3]| BinaryMask::new([3, 1, 1], v.to_vec()).unwrap();
    let hand = [
        (m([true, true, false]), m([true, true, false]), 1.0),
        (m([true, false, false]), m([false, true, false]), 0.0),
        (m([true, true, false]), m([false, true, true]), 0.5),
        (m([false; 3]), m([false; 3]), 1.0),
    ];
    let dice_ok = hand.iter().all(|(a, b, want)| dice(a, b).unwrap() == *want);
    Verdict::new(
        identity && ssim_err < 1e-6 && dice_ok,
        format!(
            "identity row exact: {identity} (mae {}, psnr {}, ssim {}, vif {}, dice {}); SSIM vs direct oracle max err {ssim_err:.2e}; dice hand cases exact: {dice_ok}",
            row.mae, row.psnr, row.ssim, row.vif, row.dice
        ),
    )
}

// ---------- 9: determinism ----------

fn tiny_model() -> ModelConfig {
    ModelConfig {
        dims: [16, 16, 8],
        spacing: [5.6, 5.6, 11.2],
        window: [-1000.0, 1000.0],
        coarse: UNetConfig::plain(3, 2, 2),
        refiner: UNetConfig::refiner(2, 2),
        feature: UNetConfig::feature(2, 2, 4),
        discriminator: DiscConfig {
            base_channels: 2,
            blocks: 3,
        },
    }
}

fn trace(records: &[StepRecord]) -> Vec<u64> {
    records
        .iter()
        .flat_map(|r| {
            [r.step, r.loss_total.to_bits(), r.lr.to_bits()]
                .into_iter()
                .chain(r.components.iter().map(|c| c.1.to_bits()))
        })
        .collect()
}

fn training_traces() -> (Vec<u64>, Vec<u64>) {
    let vols: Vec<Volume<f32>> = (0..3)
        .map(|s| {
            let mut spec = PhantomSpec::desk(s);
            spec.dims = [16, 16, 8];
            spec.spacing = [5.6, 5.6, 11.2];
            generate_phantom(&spec).unwrap()
        })
        .collect();
    let model = tiny_model();
    let c1 = TrainConfig {
        epochs: 3,
        batch_size: 2,
        checkpoint_every: 3,
        ..TrainConfig::desk_stage1()
    };
    let mut r1 = Recorder::default();
    let coarse = train_stage1(&vols, &model, &c1, &mut r1).unwrap();
    let c2 = TrainConfig {
        epochs: 2,
        batch_size: 2,
        checkpoint_every: 2,
        contrastive: ContrastiveConfig {
            anchors_per_image: 16,
            window_radius: 1,
            n_pos_s: 2,
            n_neg_a: 4,
            ..ContrastiveConfig::default()
        },
        ..TrainConfig::desk_stage2()
    };
    let mut r2 = Recorder::default();
    train_stage2(&vols, &coarse, &model, &c2, &mut r2).unwrap();
    (trace(&r1.records), trace(&r2.records))
}

fn tree_digest(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                out.push((rel, Sha256::digest(std::fs::read(&path).unwrap()).to_vec()));
            }
        }
    }
    out.sort();
    out
}

/// Every command once, tiny geometry, everything under `root`.
fn cli_workflow(root: &Path) {
    let at = |rel: &str| root.join(rel).to_str().unwrap().to_owned();
    let ok = |args: &[&str], tiny: bool| {
        let mut args = args.to_vec();
        if tiny {
            args.extend([
                "--set",
                "model.dims=[16, 16, 16]",
                "--set",
                "model.spacing=[5.6, 5.6, 5.6]",
                "--set",
                "model.discriminator.blocks=3",
            ]);
        }
        let out = orthoct(&args, None);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let (data, proj, run) = (at("data"), at("proj"), at("run"));
    let (vol0, ap, lat) = (
        at("data/phantom_000.vol"),
        at("proj/phantom_000.ap.proj"),
        at("proj/phantom_000.lat.proj"),
    );
    ok(
        &["phantom", "--count", "3", "--seed", "4", "--out", &data],
        true,
    );
    ok(&["project", &vol0, "--out", &proj], false);
    ok(
        &[
            "reconstruct-init",
            "--ap",
            &ap,
            "--lat",
            &lat,
            "--out",
            &at("init.vol"),
        ],
        false,
    );
    for stage in ["1", "2"] {
        let args = [
            "train",
            "--stage",
            stage,
            "--data-dir",
            &data,
            "--run-dir",
            &run,
            "--epochs",
            "1",
        ];
        ok(&args, true);
    }
    ok(
        &[
            "reconstruct",
            "--ap",
            &ap,
            "--lat",
            &lat,
            "--run-dir",
            &run,
            "--out",
            &at("pred/phantom_000.vol"),
            "--export-slices",
            &at("slices"),
        ],
        false,
    );
    std::fs::create_dir_all(root.join("gt")).unwrap();
    std::fs::copy(&vol0, root.join("gt/phantom_000.vol")).unwrap();
    ok(
        &[
            "evaluate",
            "--pred-dir",
            &at("pred"),
            "--gt-dir",
            &at("gt"),
            "--out",
            &at("report.csv"),
        ],
        false,
    );
}

fn criterion_determinism() -> Verdict {
    let (a1, a2) = training_traces();
    let (b1, b2) = training_traces();
    let traces = a1 == b1 && a2 == b2 && !a1.is_empty() && !a2.is_empty();
    let (x, y) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cli_workflow(x.path());
    cli_workflow(y.path());
    let (hx, hy) = (tree_digest(x.path()), tree_digest(y.path()));
    let files = hx.len();
    let cli = hx == hy && files > 10;
    Verdict::new(
        traces && cli,
        format!(
            "stage-1/2 loss traces bit-identical across reruns: {traces} ({} + {} values); {files} CLI output files hash-identical: {cli}",
            a1.len(),
            a2.len()
        ),
    )
}

// ---------- driver ----------

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Verdict::new(false, format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |n: u32, name: &'static str, v: Verdict| {
        println!(
            "criterion {n} [{name}]: {} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((n, name, v));
    };
    record(1, "gradient suite", guarded(criterion_gradients));
    record(2, "adjoint suite", guarded(criterion_adjoints));
    record(3, "loss oracles", guarded(criterion_loss_oracles));
    record(4, "EMA contraction", guarded(criterion_ema));
    let overfit = catch_unwind(AssertUnwindSafe(criterion_overfit));
    match overfit {
        Ok(o) => {
            let speed = guarded(|| criterion_speed(&o));
            record(5, "overfit", o.verdict);
            record(6, "generalization", guarded(criterion_generalization));
            record(7, "inference speed", speed);
        }
        Err(_) => {
            record(5, "overfit", Verdict::new(false, "panicked"));
            record(6, "generalization", guarded(criterion_generalization));
            record(
                7,
                "inference speed",
                Verdict::new(false, "no trained checkpoints"),
            );
        }
    }
    record(8, "metric oracles", guarded(criterion_metrics));
    record(9, "determinism", guarded(criterion_determinism));
    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
