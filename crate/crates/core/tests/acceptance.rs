//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the terminal.
//! Criteria listed in `KNOWN_FAILURES` are expected to print FAIL (see the
//! README); the process exits non-zero only when an outcome differs from
//! that expectation. Set `ACCEPTANCE_ONLY=1,3` to run a subset.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sidetune::accounting::{
    adapter_to_encoder_edges, count_params, count_params_reference, enumerate_params, memory_report, record_batch,
    retained_encoder_internals, vanilla_adapter_config, REF_C_L, REF_C_V,
};
use sidetune::adapters::{AdapterConfig, Components, InteractionAdapter};
use sidetune::autograd::{finite_diff_grad, max_rel_error, Graph, NodeId, ParamGroup, Tensor};
use sidetune::checkpoint::Checkpoint;
use sidetune::config::RunConfig;
use sidetune::data::{decode_samples, encode_samples, generate_dataset, Dataset};
use sidetune::encoder::{EncoderConfig, Modality};
use sidetune::fusion::VlConfig;
use sidetune::losses::{giou_xyxy, iou_xyxy, BBox};
use sidetune::model::{batch_loss, Model, ModelConfig};
use sidetune::regime::RegimeKind;
use sidetune::rng::{stream_rng, Stream};
use sidetune::train::train;

type Check = fn() -> sidetune::Result<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

const KNOWN_FAILURES: [usize; 2] = [8, 9];

// Tolerances.
const FD_EPS: f64 = 1e-5;
const FD_REL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;
const FD_TRIALS: u64 = 10;
const GIOU_TOL: f64 = 1e-12;
const SHARED_GRAD_TOL: f64 = 1e-10;
const VANILLA_TARGET: f64 = 3.27e6;
const VANILLA_BAND: f64 = 0.05;
const MIXTURE_TARGET: f64 = 3.19e6;
const MIXTURE_BAND: f64 = 0.15;
const MEMORY_RATIO_REFERENCE: f64 = 15.44 / 38.95;
const EFFICACY_MARGIN: f64 = 0.05;
const PARITY_BAND: f64 = 0.05;

fn main() -> ExitCode {
    let criteria: [(usize, &str, u64, Check); 10] = [
        (1, "gradient correctness", 120, gradients),
        (2, "frozen-weight invariance", 300, frozen_invariance),
        (3, "memory ordering", 60, memory_ordering),
        (4, "side-network structure", 60, side_structure),
        (5, "reference parameter counts", 10, reference_counts),
        (6, "iou/giou pixel oracle", 60, box_oracle),
        (7, "shared up-projection gradient", 10, shared_gradient),
        (8, "directional efficacy", 900, efficacy),
        (9, "ablation monotonicity", 10, ablation_counts),
        (10, "determinism and round-trips", 300, determinism),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (n, name, budget, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let pass = outcome.pass && in_time;
        let clock = format!("{:.1}s of {budget}s{}", took.as_secs_f64(), if in_time { "" } else { " OVER BUDGET" });
        let known = KNOWN_FAILURES.contains(&n);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} criterion {n} {name}: {} [{clock}]", outcome.detail);
        if pass == known {
            unexpected.push(n);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcomes for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

type Builder = fn(&mut Graph, &[NodeId]) -> sidetune::Result<NodeId>;

fn weighted_sum(g: &mut Graph, y: NodeId) -> sidetune::Result<NodeId> {
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
    let w = g.constant(Tensor::new(g.shape(y).to_vec(), w)?);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn op_error(shapes: &[&[usize]], build: Builder, seed: u64) -> sidetune::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let eval = |vals: &[Tensor]| -> sidetune::Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g, ids, loss))
    };
    let (g, ids, loss) = eval(&inputs)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let numeric = finite_diff_grad(
            |t| {
                let mut vals = inputs.clone();
                vals[k] = t.clone();
                let (g, _, l) = eval(&vals).expect("perturbed graph builds");
                g.value(l).data()[0]
            },
            &inputs[k],
            FD_EPS,
        )?;
        let analytic = grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        worst = worst.max(max_rel_error(&analytic, &numeric, FD_FLOOR));
    }
    Ok(worst)
}

fn op_table() -> Vec<(&'static str, Vec<&'static [usize]>, Builder)> {
    vec![
        ("matmul", vec![&[3, 4], &[4, 2]], |g, x| {
            let y = g.matmul(x[0], x[1])?;
            weighted_sum(g, y)
        }),
        ("add", vec![&[2, 3], &[2, 3]], |g, x| {
            let y = g.add(x[0], x[1])?;
            weighted_sum(g, y)
        }),
        ("sub", vec![&[2, 3], &[2, 3]], |g, x| {
            let y = g.sub(x[0], x[1])?;
            weighted_sum(g, y)
        }),
        ("mul", vec![&[2, 3], &[2, 3]], |g, x| {
            let y = g.mul(x[0], x[1])?;
            weighted_sum(g, y)
        }),
        ("relu", vec![&[3, 5]], |g, x| {
            let y = g.relu(x[0])?;
            weighted_sum(g, y)
        }),
        ("sigmoid", vec![&[3, 5]], |g, x| {
            let y = g.sigmoid(x[0])?;
            weighted_sum(g, y)
        }),
        ("add_bias", vec![&[3, 4], &[4]], |g, x| {
            let y = g.add_bias(x[0], x[1])?;
            weighted_sum(g, y)
        }),
        ("scale", vec![&[2, 2]], |g, x| {
            let y = g.scale(x[0], -1.7)?;
            weighted_sum(g, y)
        }),
        ("layer_norm", vec![&[3, 5], &[5], &[5]], |g, x| {
            let y = g.layer_norm(x[0], x[1], x[2], 1e-5)?;
            weighted_sum(g, y)
        }),
        ("softmax_rows", vec![&[3, 4]], |g, x| {
            let y = g.softmax_rows(x[0])?;
            weighted_sum(g, y)
        }),
        ("transpose", vec![&[2, 5]], |g, x| {
            let y = g.transpose(x[0])?;
            weighted_sum(g, y)
        }),
        ("concat_cols", vec![&[3, 2], &[3, 4]], |g, x| {
            let y = g.concat_cols(&[x[0], x[1]])?;
            weighted_sum(g, y)
        }),
        ("concat_rows", vec![&[1, 3], &[2, 3]], |g, x| {
            let y = g.concat_rows(&[x[0], x[1]])?;
            weighted_sum(g, y)
        }),
        ("slice_cols", vec![&[3, 6]], |g, x| {
            let y = g.slice_cols(x[0], 2, 3)?;
            weighted_sum(g, y)
        }),
        ("slice_rows", vec![&[5, 2]], |g, x| {
            let y = g.slice_rows(x[0], 1, 3)?;
            weighted_sum(g, y)
        }),
        ("add_n", vec![&[2, 2], &[2, 2], &[2, 2]], |g, x| {
            let y = g.add_n(&[x[0], x[1], x[2]])?;
            weighted_sum(g, y)
        }),
        ("sum", vec![&[2, 3]], |g, x| {
            let y = g.mul(x[0], x[0])?;
            g.sum(y)
        }),
        ("box_loss", vec![&[1, 4]], |g, x| {
            let p = g.sigmoid(x[0])?;
            g.box_loss(p, BBox::new(0.45, 0.55, 0.3, 0.4)?, 1.0, 1.0)
        }),
    ]
}

fn tiny(regime: RegimeKind) -> ModelConfig {
    let mut m = ModelConfig::toy(regime);
    m.vision = EncoderConfig {
        n_layers: 2,
        channel_dim: 8,
        n_heads: 2,
        ffn_dim: 16,
        seed: 17,
    };
    m.language = EncoderConfig {
        n_layers: 2,
        channel_dim: 12,
        n_heads: 2,
        ffn_dim: 16,
        seed: 17,
    };
    m.vl = VlConfig {
        c_p: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 16,
        head_hidden: 8,
    };
    m.adapter = AdapterConfig {
        c_d: 4,
        c_i: 4,
        s: 0.5,
        vision_positions: vec![1, 2],
        language_positions: vec![1, 2],
        ..AdapterConfig::reference()
    };
    m
}

/// Largest relative error over `FD_TRIALS` random trainable elements of the
/// full model loss.
fn model_error(regime: RegimeKind, data: &Dataset) -> sidetune::Result<f64> {
    let mut model = Model::build(tiny(regime))?;
    // Move zero-initialised branches off their stationary point.
    let mut rng = ChaCha8Rng::seed_from_u64(regime as u64 + 100);
    let trainable: Vec<_> = model.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for &id in &trainable {
        let p = model.store.get_mut(id);
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let batch = &data.train[..2];
    let loss_of = |m: &Model| -> sidetune::Result<(Graph, NodeId)> {
        let mut g = Graph::new();
        let mut preds = Vec::new();
        for s in batch {
            let out = m.forward(&mut g, &s.image, &s.tokens)?;
            preds.push((out.pred, s.gt));
        }
        let l = batch_loss(&mut g, &preds, 1.0, 1.0)?;
        Ok((g, l))
    };
    let (g, l) = loss_of(&model)?;
    let grads = g.backward(l)?;
    let mut worst: f64 = 0.0;
    for trial in 0..FD_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 * regime as u64 + trial);
        let id = trainable[rng.random_range(0..trainable.len())];
        let value = model.store.get(id).value.clone();
        let i = rng.random_range(0..value.len());
        let x = Tensor::scalar(value.data()[i]);
        let mut probe = model.clone();
        let numeric = finite_diff_grad(
            |t| {
                let mut v = value.clone();
                v.data_mut()[i] = t.data()[0];
                probe.store.set_value(id, v).expect("same shape");
                let (g, l) = loss_of(&probe).expect("forward");
                g.value(l).data()[0]
            },
            &x,
            FD_EPS,
        )?;
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[i]);
        worst = worst.max(max_rel_error(&Tensor::scalar(analytic), &numeric, FD_FLOOR));
    }
    Ok(worst)
}

fn gradients() -> sidetune::Result<Outcome> {
    let mut worst_op = ("", 0.0f64);
    for (name, shapes, build) in op_table() {
        for seed in 0..FD_TRIALS {
            let e = op_error(&shapes, build, seed * 31 + 7)?;
            if e > worst_op.1 {
                worst_op = (name, e);
            }
        }
    }
    let data = generate_dataset(3, 4, 1)?;
    let mut worst_model = ("", 0.0f64);
    for regime in RegimeKind::ALL {
        let e = model_error(regime, &data)?;
        if e > worst_model.1 {
            worst_model = (regime.name(), e);
        }
    }
    Ok(Outcome {
        pass: worst_op.1 < FD_REL && worst_model.1 < FD_REL,
        detail: format!(
            "max rel err {:.2e} over {} ops ({}), {:.2e} over 7 regimes ({}), {FD_TRIALS} trials each, tol {FD_REL:e}",
            worst_op.1,
            op_table().len(),
            worst_op.0,
            worst_model.1,
            worst_model.0
        ),
    })
}

// ---------------------------------------------------------------- 2

fn frozen_invariance() -> sidetune::Result<Outcome> {
    let data = generate_dataset(5, 64, 8)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for regime in [
        RegimeKind::SideM2ist,
        RegimeKind::AdapterSequential,
        RegimeKind::AdapterParallel,
        RegimeKind::Lora,
    ] {
        let mut cfg = RunConfig::default();
        cfg.model.regime = regime;
        cfg.optim.steps = 100;
        cfg.optim.batch_size = 4;
        cfg.optim.lr_vl = 1e-3;
        cfg.optim.lr_adapter = 1e-3;
        cfg.eval_every = 100;
        let init = Model::build(cfg.model_config()?)?;
        let trained = train(&cfg, &data, |_| {})?.model;
        let (mut frozen_same, mut frozen_total, mut moved, mut trainable_total) = (0, 0, 0, 0);
        let mut groups_moved = BTreeSet::new();
        for (id, p) in init.store.iter() {
            let after = &trained.store.get(id).value;
            if p.trainable {
                trainable_total += 1;
                if !after.bit_eq(&p.value) {
                    moved += 1;
                    groups_moved.insert(format!("{:?}", p.group));
                }
            } else {
                frozen_total += 1;
                frozen_same += usize::from(after.bit_eq(&p.value));
            }
        }
        let needed: Vec<ParamGroup> = match regime {
            RegimeKind::Lora => vec![ParamGroup::Fusion, ParamGroup::Head, ParamGroup::Lora],
            _ => vec![ParamGroup::Fusion, ParamGroup::Head, ParamGroup::Adapter],
        };
        let ok = frozen_same == frozen_total
            && frozen_total > 0
            && needed.iter().all(|g| groups_moved.contains(&format!("{g:?}")));
        pass &= ok;
        parts.push(format!(
            "{regime}: frozen {frozen_same}/{frozen_total} identical, trainable {moved}/{trainable_total} changed"
        ));
    }
    Ok(Outcome {
        pass,
        detail: format!("100 steps; {}", parts.join("; ")),
    })
}

// ---------------------------------------------------------------- 3

fn memory_ordering() -> sidetune::Result<Outcome> {
    let data = generate_dataset(11, 4, 1)?;
    let count = |r: RegimeKind| -> sidetune::Result<usize> {
        memory_report(&Model::build(ModelConfig::toy(r))?, &data.train)
    };
    let frozen = count(RegimeKind::FrozenVlOnly)?;
    let side = count(RegimeKind::SideM2ist)?;
    let parallel = count(RegimeKind::AdapterParallel)?;
    let sequential = count(RegimeKind::AdapterSequential)?;
    let full = count(RegimeKind::Full)?;
    let ratio = side as f64 / full as f64;
    Ok(Outcome {
        pass: side < parallel && parallel < sequential && sequential < full && frozen <= side,
        detail: format!(
            "batch 4: frozen {frozen} <= side {side} < parallel {parallel} < sequential {sequential} < full {full}; \
             side/full {ratio:.3} (reference {MEMORY_RATIO_REFERENCE:.3})"
        ),
    })
}

// ---------------------------------------------------------------- 4

fn side_structure() -> sidetune::Result<Outcome> {
    let data = generate_dataset(13, 2, 1)?;
    let inspect = |r: RegimeKind| -> sidetune::Result<(usize, usize)> {
        let rec = record_batch(&Model::build(ModelConfig::toy(r))?, &data.train, 1.0, 1.0)?;
        Ok((adapter_to_encoder_edges(&rec.graph), retained_encoder_internals(&rec)?.len()))
    };
    let (edges, internals) = inspect(RegimeKind::SideM2ist)?;
    // Control: in-path adapters must register on the same inspection.
    let (seq_edges, seq_internals) = inspect(RegimeKind::AdapterSequential)?;
    Ok(Outcome {
        pass: edges == 0 && internals == 0 && seq_edges > 0 && seq_internals > 0,
        detail: format!(
            "side: {edges} adapter->encoder edges, {internals} retained encoder internals \
             (sequential control: {seq_edges}, {seq_internals})"
        ),
    })
}

// ---------------------------------------------------------------- 5

fn reference_counts() -> sidetune::Result<Outcome> {
    let vanilla = count_params_reference(&vanilla_adapter_config(128)).total as f64;
    let mixture_cfg = AdapterConfig::reference();
    let mixture = count_params_reference(&mixture_cfg).total as f64;
    let dev = |x: f64, t: f64| (x - t).abs() / t;
    let mut per_component = true;
    let only = |lea, vea, iea| AdapterConfig {
        components: Components { lea, vea, iea },
        ..AdapterConfig::reference()
    };
    for (c_v, c_l) in [(REF_C_V, REF_C_L), (64, 96)] {
        let cfg = |c: AdapterConfig| AdapterConfig { c_i: c.c_i.min(c_v), c_d: c.c_d.min(c_v / 2), ..c };
        let vea = cfg(only(false, true, false));
        let lea = cfg(only(true, false, false));
        let iea = cfg(only(false, false, true));
        per_component &= enumerate_params(&vea, c_v, c_l)? == count_params(&vea, c_v, c_l).vea_total
            && enumerate_params(&lea, c_v, c_l)? == count_params(&lea, c_v, c_l).lea_total
            && enumerate_params(&iea, c_v, c_l)? == count_params(&iea, c_v, c_l).iea_total;
        let all = cfg(AdapterConfig::reference());
        per_component &= enumerate_params(&all, c_v, c_l)? == count_params(&all, c_v, c_l).total;
    }
    let (dv, dm) = (dev(vanilla, VANILLA_TARGET), dev(mixture, MIXTURE_TARGET));
    Ok(Outcome {
        pass: dv <= VANILLA_BAND && dm <= MIXTURE_BAND && per_component,
        detail: format!(
            "vanilla {:.3}M ({:+.1}% vs 3.27M, band 5%), mixture {:.3}M ({:+.1}% vs 3.19M, band 15%), \
             per-component formulas {} the instantiating enumerator",
            vanilla / 1e6,
            100.0 * (vanilla - VANILLA_TARGET) / VANILLA_TARGET,
            mixture / 1e6,
            100.0 * (mixture - MIXTURE_TARGET) / MIXTURE_TARGET,
            if per_component { "match" } else { "DIFFER from" }
        ),
    })
}

// ---------------------------------------------------------------- 6

fn box_oracle() -> sidetune::Result<Outcome> {
    const N: usize = 8;
    let mut boxes = Vec::new();
    for x0 in 0..N {
        for x1 in x0 + 1..=N {
            for y0 in 0..N {
                for y1 in y0 + 1..=N {
                    boxes.push([x0, y0, x1, y1]);
                }
            }
        }
    }
    // Pixel masks as 64-bit sets over the 8×8 grid.
    let mask = |b: &[usize; 4]| -> u64 {
        let mut m = 0u64;
        for y in b[1]..b[3] {
            for x in b[0]..b[2] {
                m |= 1 << (y * N + x);
            }
        }
        m
    };
    let masks: Vec<u64> = boxes.iter().map(mask).collect();
    let (mut iou_mismatch, mut giou_err) = (0usize, 0.0f64);
    for (a, ma) in boxes.iter().zip(&masks) {
        for (b, mb) in boxes.iter().zip(&masks) {
            let inter = (ma & mb).count_ones() as f64;
            let union = (ma | mb).count_ones() as f64;
            let hull = mask(&[a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]).count_ones() as f64;
            let oracle_iou = inter / union;
            let oracle_giou = oracle_iou - (hull - union) / hull;
            let fa = a.map(|v| v as f64);
            let fb = b.map(|v| v as f64);
            if iou_xyxy(fa, fb) != oracle_iou {
                iou_mismatch += 1;
            }
            giou_err = giou_err.max((giou_xyxy(fa, fb) - oracle_giou).abs());
        }
    }
    Ok(Outcome {
        pass: iou_mismatch == 0 && giou_err <= GIOU_TOL,
        detail: format!(
            "{} box pairs: {iou_mismatch} inexact iou, max giou err {giou_err:.1e} (tol {GIOU_TOL:e})",
            boxes.len() * boxes.len()
        ),
    })
}

// ---------------------------------------------------------------- 7

fn shared_gradient() -> sidetune::Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (c_i, seed) in [(32, 1), (64, 2), (16, 3)] {
        let mut rng = stream_rng(seed, Stream::Adapters, 0);
        let mut store = sidetune::autograd::ParamStore::new();
        let a = InteractionAdapter::new(&mut store, &mut rng, "iea", 64, 96, 32, c_i, 0.1)?;
        // Non-zero shared weights so every path carries signal.
        let up = a.inter_up.weight;
        let w = random(&mut ChaCha8Rng::seed_from_u64(seed), store.get(up).value.shape());
        store.set_value(up, w)?;
        let mut xr = ChaCha8Rng::seed_from_u64(seed + 10);
        let xv = random(&mut xr, &[16, 64]);
        let xl = random(&mut xr, &[7, 96]);
        let grad = |use_v: bool, use_l: bool| -> sidetune::Result<(Tensor, Tensor)> {
            let mut g = Graph::new();
            let mut terms = Vec::new();
            for (on, m, x) in [(use_v, Modality::Vision, &xv), (use_l, Modality::Language, &xl)] {
                if on {
                    let x = g.constant(x.clone());
                    let d = a.delta(&mut g, &store, m, x)?;
                    let sq = g.mul(d, d)?;
                    terms.push(g.sum(sq)?);
                }
            }
            let loss = g.add_n(&terms)?;
            let grads = g.backward(loss)?;
            Ok((grads.param(up).unwrap().clone(), grads.param(a.inter_up.bias).unwrap().clone()))
        };
        let joint = grad(true, true)?;
        let v = grad(true, false)?;
        let l = grad(false, true)?;
        for (j, (v, l)) in [(&joint.0, (&v.0, &l.0)), (&joint.1, (&v.1, &l.1))] {
            for ((j, v), l) in j.data().iter().zip(v.data()).zip(l.data()) {
                worst = worst.max((j - (v + l)).abs());
                cases += 1;
            }
        }
    }
    Ok(Outcome {
        pass: worst <= SHARED_GRAD_TOL,
        detail: format!("{cases} elements over c_i in {{16, 32, 64}}: max |joint - (vision + language)| {worst:.1e} (tol {SHARED_GRAD_TOL:e})"),
    })
}

// ---------------------------------------------------------------- 8

fn efficacy() -> sidetune::Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [1, 2, 3] {
        let base = RunConfig::benchmark(RegimeKind::SideM2ist, seed);
        let data = generate_dataset(base.data_seed, base.n_train, base.n_val)?;
        let mut p = Vec::new();
        for regime in [RegimeKind::FrozenVlOnly, RegimeKind::SideM2ist, RegimeKind::Full] {
            let cfg = RunConfig::benchmark(regime, seed);
            let report = train(&cfg, &data, |_| {})?.report;
            let metrics = report.regime_report.metrics.expect("trained runs carry metrics");
            p.push(metrics.precision_at_05);
        }
        let (frozen, side, full) = (p[0], p[1], p[2]);
        let ok = side - frozen >= EFFICACY_MARGIN && (full - side).abs() <= PARITY_BAND;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: frozen {:.1} side {:.1} full {:.1}",
            100.0 * frozen,
            100.0 * side,
            100.0 * full
        ));
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "P@0.5 % after {} steps; {}; need side - frozen >= 5 and |full - side| <= 5 on every seed",
            RunConfig::benchmark(RegimeKind::SideM2ist, 0).optim.steps,
            parts.join("; ")
        ),
    })
}

// ---------------------------------------------------------------- 9

fn ablation_counts() -> sidetune::Result<Outcome> {
    let base = AdapterConfig::reference();
    let density: Vec<usize> = [2, 4, 6]
        .iter()
        .map(|&k| base.clone().with_density(k).map(|c| count_params_reference(&c).total))
        .collect::<sidetune::Result<_>>()?;
    let widths: Vec<usize> = [64, 128, 256]
        .iter()
        .map(|&c_i| count_params_reference(&AdapterConfig { c_i, ..base.clone() }).total)
        .collect();
    let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
    let proportional = density[1] == 2 * density[0] && density[2] == 3 * density[0];
    let m = |v: &[usize]| v.iter().map(|x| format!("{:.2}M", *x as f64 / 1e6)).collect::<Vec<_>>().join(" / ");
    Ok(Outcome {
        pass: increasing(&density) && proportional && increasing(&widths),
        detail: format!(
            "density 2/4/6: {} (increasing {}, 1:2:3 {}); c_i 64/128/256: {} (increasing {})",
            m(&density),
            increasing(&density),
            proportional,
            m(&widths),
            increasing(&widths)
        ),
    })
}

// ---------------------------------------------------------------- 10

fn determinism() -> sidetune::Result<Outcome> {
    let data = generate_dataset(21, 32, 16)?;
    let again = generate_dataset(21, 32, 16)?;
    let mut reports_equal = true;
    let mut ckpt_ok = true;
    for regime in [RegimeKind::SideM2ist, RegimeKind::Full] {
        let mut cfg = RunConfig::default();
        cfg.model.regime = regime;
        cfg.optim.steps = 20;
        cfg.optim.batch_size = 4;
        cfg.eval_every = 10;
        let a = train(&cfg, &data, |_| {})?;
        let b = train(&cfg, &again, |_| {})?;
        reports_equal &= a.report.to_json() == b.report.to_json();

        let bytes = Checkpoint::from_model(&cfg, &a.model).encode();
        let decoded = Checkpoint::decode(&bytes)?;
        ckpt_ok &= decoded.encode() == bytes;
        let (cfg2, restored) = decoded.restore()?;
        ckpt_ok &= cfg2 == cfg
            && a.model
                .store
                .iter()
                .all(|(id, p)| restored.store.get(id).value.bit_eq(&p.value));
    }
    let mut data_ok = true;
    for split in [&data.train, &data.val] {
        let bytes = encode_samples(split)?;
        let back = decode_samples(&bytes)?;
        data_ok &= &back == split && encode_samples(&back)? == bytes;
    }
    Ok(Outcome {
        pass: reports_equal && ckpt_ok && data_ok,
        detail: format!(
            "repeated side/full runs bit-identical reports: {reports_equal}; dataset round-trip exact: {data_ok}; \
             checkpoint round-trip exact: {ckpt_ok}"
        ),
    })
}
