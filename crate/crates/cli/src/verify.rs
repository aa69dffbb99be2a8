//! Verification suites behind `uma verify`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uma_core::association::{brute_force_max, hungarian, AffinityMatrix};
use uma_core::losses::{LossConfig, MetricLoss};
use uma_core::metrics::{evaluate, scenarios, MetricsReport};
use uma_core::mot_io::gen_synthetic_sequence;
use uma_core::network::{parse_backbone, Bound, NetworkConfig, NetworkParams};
use uma_core::tensor::{grad_check, grad_check_coords, GradCheckReport, Tape, Tensor, Var};
use uma_core::training::{batch_loss, init_params, train, TrainDataset, TrainSample};
use uma_core::{Error, Result};

use crate::config::RunConfig;
use crate::harness;

pub const SUITES: &[&str] = &["grad", "hungarian", "metrics", "e2e"];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub lines: Vec<String>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport {
            name: name.to_string(),
            passed: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.lines.push(format!("[{}] {line}", if ok { "ok" } else { "FAIL" }));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            writeln!(s, "{l}").unwrap();
        }
        writeln!(s, "suite {}: {}", self.name, if self.passed { "PASS" } else { "FAIL" }).unwrap();
        s
    }
}

pub fn run_suite(name: &str, cfg: &RunConfig) -> Result<SuiteReport> {
    match name {
        "grad" => grad_suite(100),
        "hungarian" => Ok(hungarian_suite(100, 6)),
        "metrics" => metrics_suite(),
        "e2e" => Ok(e2e_suite(cfg)?.report),
        _ => Err(Error::Config(format!(
            "unknown suite `{name}`; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

const GRAD_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::vector(data)
}

fn project<'t>(y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51de);
    let r = rand_tensor(&mut rng, &y.shape(), -1.0, 1.0);
    y.dot(y.tape().constant(r))
}

type Objective = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;
type OpCase = (&'static str, Vec<Tensor>, Objective);

fn objective<F>(f: F) -> Objective
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
{
    Box::new(f)
}

fn hr<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape, -1.0, 1.0);
    let v6 = r(&[6]);
    let (a, c, s) = (r(&[5]), r(&[5]), r(&[1]));
    let x = r(&[5, 5, 2]);
    let k = r(&[3, 3, 2, 2]);
    let b = r(&[2]);
    let pool = r(&[6, 6, 3]);
    let gap = r(&[4, 3, 5]);
    let (fx, fw, fb) = (r(&[4]), r(&[3, 4]), r(&[3]));
    let (sf, sg) = (r(&[3, 4, 2]), r(&[2]));
    let roi = r(&[6, 6, 2]);
    let (x0, y0) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
    let relu_in = away_from_zero(&mut rng, 7);
    let sel = seed as usize % 6;
    vec![
        ("conv2d", vec![x, k, b], objective(move |_, v| project(v[0].conv2d(v[1], v[2], 2)?, seed))),
        ("max_pool2d", vec![pool], objective(move |_, v| project(v[0].max_pool2d(2, 2)?, seed))),
        ("relu", vec![relu_in], objective(move |_, v| project(v[0].relu(), seed))),
        ("sigmoid", vec![v6.clone()], objective(move |_, v| project(v[0].sigmoid(), seed))),
        ("softplus", vec![v6.clone()], objective(move |_, v| project(v[0].softplus(), seed))),
        ("softmax", vec![v6.clone()], objective(move |_, v| project(v[0].softmax()?, seed))),
        ("log_softmax", vec![v6.clone()], objective(move |_, v| project(v[0].log_softmax()?, seed))),
        ("log_sum_exp", vec![v6.clone()], objective(|_, v| Ok(v[0].log_sum_exp()))),
        ("l2_normalize", vec![v6.clone()], objective(move |_, v| project(v[0].l2_normalize()?, seed))),
        ("mean", vec![v6.clone()], objective(|_, v| Ok(v[0].mul(v[0])?.mean()))),
        ("select", vec![v6], objective(move |_, v| v[0].sigmoid().select(sel))),
        ("global_avg_pool", vec![gap], objective(move |_, v| project(v[0].global_avg_pool()?, seed))),
        (
            "fully_connected",
            vec![fx.clone(), fw.clone(), fb],
            objective(move |_, v| project(v[0].fully_connected(v[1], v[2])?, seed)),
        ),
        ("linear", vec![fx, fw], objective(move |_, v| project(v[0].linear(v[1], None)?, seed))),
        (
            "add/sub/mul/scale/neg",
            vec![a.clone(), c.clone()],
            objective(move |_, v| project(v[0].add(v[1])?.mul(v[0].sub(v[1])?)?.scale(0.7).neg(), seed)),
        ),
        ("dot/sum", vec![a.clone(), c], objective(|_, v| v[0].dot(v[1])?.add(v[0].sum()))),
        (
            "add_scalar/stack",
            vec![a, s],
            objective(move |tape, v| {
                let t = v[0].add_scalar(v[1])?;
                project(tape.stack(&[t, v[1]])?, seed)
            }),
        ),
        (
            "scale_channels/reshape",
            vec![sf, sg],
            objective(move |_, v| project(v[0].scale_channels(v[1])?.reshape(&[12, 2])?, seed)),
        ),
        (
            "roi_align",
            vec![roi],
            objective(move |_, v| project(v[0].roi_align(x0, y0, x0 + 3.3, y0 + 2.9, 3)?, seed)),
        ),
    ]
}

/// Small network exercising every mechanism: two convs around a pool, attention,
/// correlation, ROI-Align, embedding and identity head.
pub fn micro_network() -> NetworkConfig {
    let mut cfg = NetworkConfig {
        backbone: parse_backbone("conv(3,1,4) pool(2,2) conv(3,1,4)").expect("valid"),
        exemplar_size: 10,
        instance_size_train: 14,
        instance_size_track: 0,
        tsa_reduction: 2,
        num_identities: 3,
        id_hidden: 5,
        response_scale: 0.5,
    };
    cfg.instance_size_track = cfg.derive_track_size().expect("micro geometry");
    cfg
}

fn random_samples(cfg: &NetworkConfig, rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainSample> {
    (0..n)
        .map(|i| TrainSample {
            exemplar: rand_tensor(rng, &[cfg.exemplar_size, cfg.exemplar_size, 3], -0.5, 0.5),
            instance: rand_tensor(rng, &[cfg.instance_size_train, cfg.instance_size_train, 3], -0.5, 0.5),
            identity: i % cfg.num_identities,
            frame_gap: 1,
        })
        .collect()
}

/// Tracking, N-pair, triplet and identification losses summed on one graph.
fn all_losses<'t>(
    cfg: &NetworkConfig,
    names: &NetworkParams,
    samples: &[TrainSample],
    tape: &'t Tape,
    vars: &[Var<'t>],
) -> Result<Var<'t>> {
    let p = Bound::from_vars(names, vars)?;
    let mut loss = LossConfig {
        label_radius: cfg.total_stride() as f64,
        ..Default::default()
    };
    let npair = batch_loss(cfg, &loss, &p, tape, samples)?.total;
    loss.metric = MetricLoss::Triplet;
    let triplet = batch_loss(cfg, &loss, &p, tape, samples)?.metric;
    npair.add(triplet)
}

fn composed_check(cfg: &NetworkConfig, seed: u64, coords_per_seed: Option<usize>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(cfg, seed);
    // nonzero biases so every parameter carries signal
    let tensors: Vec<Tensor> = params
        .tensors()
        .values()
        .map(|t| {
            let mut t = t.clone();
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            t
        })
        .collect();
    let samples = random_samples(cfg, &mut rng, 2);
    let f = hr(|tape, v| all_losses(cfg, &params, &samples, tape, v));
    match coords_per_seed {
        None => grad_check(f, &tensors, H),
        Some(n) => {
            let coords: Vec<(usize, usize)> = (0..n)
                .map(|_| {
                    let p = rng.random_range(0..tensors.len());
                    (p, rng.random_range(0..tensors[p].numel()))
                })
                .collect();
            grad_check_coords(f, &tensors, H, &coords)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSummary {
    pub op_max: f64,
    pub composed_max: f64,
    pub toy_max: f64,
    pub checks: usize,
    pub kinks: usize,
}

pub fn grad_suite(seeds: u64) -> Result<SuiteReport> {
    Ok(grad_suite_detailed(seeds)?.0)
}

pub fn grad_suite_detailed(seeds: u64) -> Result<(SuiteReport, GradSummary)> {
    let t0 = Instant::now();
    let mut rep = SuiteReport::new("grad");
    let mut worst: Vec<(&'static str, f64, u64)> = Vec::new();
    let mut checks = 0;
    let mut kinks = 0;
    for seed in 0..seeds {
        for (name, params, f) in op_cases(seed) {
            let r = grad_check(&f, &params, H)?;
            checks += r.checked;
            kinks += r.kinks;
            match worst.iter_mut().find(|w| w.0 == name) {
                Some(w) if w.1 < r.max_rel_error => *w = (name, r.max_rel_error, seed),
                Some(_) => {}
                None => worst.push((name, r.max_rel_error, seed)),
            }
        }
    }
    let mut op_max: f64 = 0.0;
    for (name, err, seed) in &worst {
        op_max = op_max.max(*err);
        rep.check(*err < GRAD_TOL, format!("{name:<24} max rel err {err:.2e} (seed {seed})"));
    }
    let micro = micro_network();
    let mut composed_max: f64 = 0.0;
    for seed in 0..seeds {
        let r = composed_check(&micro, seed, None)?;
        checks += r.checked;
        kinks += r.kinks;
        composed_max = composed_max.max(r.max_rel_error);
    }
    rep.check(
        composed_max < GRAD_TOL,
        format!(
            "composed graph (micro net, every parameter, {seeds} seeds) max rel err {composed_max:.2e}"
        ),
    );
    let toy = NetworkConfig::toy();
    let mut toy_max: f64 = 0.0;
    for seed in 0..3 {
        let r = composed_check(&toy, 500 + seed, Some(40))?;
        checks += r.checked;
        kinks += r.kinks;
        toy_max = toy_max.max(r.max_rel_error);
    }
    rep.check(
        toy_max < GRAD_TOL,
        format!("composed graph (toy net, 3×40 sampled coordinates) max rel err {toy_max:.2e}"),
    );
    rep.lines.push(format!(
        "{checks} coordinates checked ({kinks} straddled a kink and were re-probed at h/10 or h/100) in {:.1}s",
        t0.elapsed().as_secs_f64()
    ));
    Ok((
        rep,
        GradSummary {
            op_max,
            composed_max,
            toy_max,
            checks,
            kinks,
        },
    ))
}

/// Hungarian vs exhaustive search on `trials` random matrices of every
/// size up to `max_side`, square and rectangular.
pub fn hungarian_suite(trials: usize, max_side: usize) -> SuiteReport {
    let t0 = Instant::now();
    let mut rep = SuiteReport::new("hungarian");
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a11);
    for rows in 1..=max_side {
        for cols in 1..=max_side {
            let mut agree = 0;
            for _ in 0..trials {
                let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
                let m = AffinityMatrix::new(rows, cols, data).expect("finite");
                let pairs = hungarian(&m).expect("finite");
                let total: f64 = pairs.iter().map(|&(r, c)| m.at(r, c)).sum();
                let injective = {
                    let mut rs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                    let mut cs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                    rs.dedup();
                    cs.sort_unstable();
                    cs.dedup();
                    rs.len() == pairs.len() && cs.len() == pairs.len()
                };
                if injective && (total - brute_force_max(&m)).abs() < 1e-9 {
                    agree += 1;
                }
            }
            if rows == cols || agree != trials {
                rep.check(agree == trials, format!("{rows}×{cols}: {agree}/{trials} brute-force agreements"));
            } else {
                rep.passed &= agree == trials;
            }
        }
    }
    rep.lines.push(format!(
        "all {} shapes up to {max_side}×{max_side} in {:.1}s",
        max_side * max_side,
        t0.elapsed().as_secs_f64()
    ));
    rep
}

fn mota_identity(r: &MetricsReport) -> bool {
    r.total_gt == 0 || (r.mota() - (1.0 - (r.fp + r.fn_ + r.ids) as f64 / r.total_gt as f64)).abs() < 1e-12
}

pub fn metrics_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("metrics");
    let (gt, hyp) = scenarios::mota_point_six();
    let r = evaluate("handcrafted", &gt, &hyp, 0.5)?;
    rep.check(
        format!("{:.6}", r.mota()) == "0.600000" && (r.fp, r.fn_, r.ids) == (1, 2, 1) && r.total_gt == 10,
        format!(
            "10-box scenario: MOTA {:.6}, (FP, FN, IDS) = ({}, {}, {})",
            r.mota(),
            r.fp,
            r.fn_,
            r.ids
        ),
    );
    let mut all_identity = mota_identity(&r);
    let (gt, hyp) = scenarios::id_swap();
    let r = evaluate("swap", &gt, &hyp, 0.5)?;
    rep.check(r.idf1() == 0.5, format!("id-swap scenario: IDF1 {}", r.idf1()));
    all_identity &= mota_identity(&r);
    let (gt, hyp) = scenarios::perfect();
    let r = evaluate("perfect", &gt, &hyp, 0.5)?;
    rep.check(
        r.mota() == 1.0 && r.motp() == 1.0 && r.idf1() == 1.0 && r.mt_percent() == 100.0 && r.ml_percent() == 0.0,
        format!(
            "perfect tracking: MOTA {} MOTP {} IDF1 {} MT {}% ML {}%",
            r.mota(),
            r.motp(),
            r.idf1(),
            r.mt_percent(),
            r.ml_percent()
        ),
    );
    all_identity &= mota_identity(&r);
    // noisy synthetic hypotheses
    for seed in 0..20 {
        let spec = harness::occlusion_spec(seed);
        let seq = gen_synthetic_sequence(&spec)?;
        let gt = uma_core::mot_io::eval_gt(&seq.gt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hyp = Vec::new();
        for g in &gt {
            if rng.random::<f64>() < 0.1 {
                continue;
            }
            let mut h = g.clone();
            h.bbox.x += rng.random_range(-8.0..8.0);
            h.id = if g.frame > 50 { 5 - g.id } else { g.id };
            hyp.push(h);
        }
        all_identity &= mota_identity(&evaluate("noisy", &gt, &hyp, 0.5)?);
        all_identity &= mota_identity(&evaluate("self", &gt, &gt, 0.5)?);
    }
    rep.check(all_identity, "MOTA = 1 − (FP+FN+IDS)/GT to 1e-12 on every evaluation".into());
    Ok(rep)
}

#[derive(Debug, Clone)]
pub struct E2eOutcome {
    pub report: SuiteReport,
    pub train_seconds: f64,
    pub sot_train_seconds: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub separation: harness::Separation,
    pub sot_separation: harness::Separation,
    pub full: harness::TrackRun,
    pub ablation: harness::TrackRun,
    pub params: NetworkParams,
}

/// Full-loss and SOT-only toy training, held-out separation, and the
/// staged-occlusion tracking run with and without association.
pub fn e2e_suite(cfg: &RunConfig) -> Result<E2eOutcome> {
    let mut rep = SuiteReport::new("e2e");
    let net = &cfg.network;
    let geom = cfg.tracker.geometry();
    let train_seq = gen_synthetic_sequence(&harness::training_spec(cfg.seed))?;
    let data = TrainDataset::from_sequences(vec![train_seq], cfg.train.min_track_frames);

    let t0 = Instant::now();
    let full = train(&data, net, &cfg.loss, &cfg.train, &geom, cfg.seed, None)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let sot_loss = LossConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..cfg.loss
    };
    let t0 = Instant::now();
    let sot = train(&data, net, &sot_loss, &cfg.train, &geom, cfg.seed, None)?;
    let sot_train_seconds = t0.elapsed().as_secs_f64();

    let init = init_params(net, cfg.seed);
    let bs = cfg.train.batch_size;
    let initial_loss = harness::frozen_batch_loss(net, &cfg.loss, &init, &data, &geom, bs, 20, 0xf00d)?;
    let final_loss = harness::frozen_batch_loss(net, &cfg.loss, &full.params, &data, &geom, bs, 20, 0xf00d)?;
    rep.check(
        final_loss < 0.5 * initial_loss,
        format!("frozen-batch total loss {initial_loss:.4} → {final_loss:.4} (need < 0.5×)"),
    );
    rep.check(
        train_seconds < 600.0,
        format!("training time {train_seconds:.0}s (SOT-only run {sot_train_seconds:.0}s)"),
    );

    let heldout = gen_synthetic_sequence(&harness::heldout_spec(cfg.seed))?;
    let separation = harness::affinity_separation(net, &full.params, &geom, &heldout, 5)?;
    let sot_separation = harness::affinity_separation(net, &sot.params, &geom, &heldout, 5)?;
    rep.check(
        separation.gap() >= 0.2,
        format!(
            "held-out affinity: same {:.3}, different {:.3}, gap {:.3} (need ≥ 0.2)",
            separation.same,
            separation.different,
            separation.gap()
        ),
    );
    rep.check(
        sot_separation.gap() < separation.gap(),
        format!("SOT-only gap {:.3} < full-loss gap {:.3}", sot_separation.gap(), separation.gap()),
    );

    let occl = gen_synthetic_sequence(&harness::occlusion_spec(cfg.seed))?;
    let target = harness::OCCLUDED_ID as i64;
    let full_run = harness::run_tracking(
        net,
        &full.params,
        &cfg.tracker,
        &occl,
        target,
        harness::OCCLUSION_START,
        cfg.eval_iou,
    )?;
    let ablated_cfg = uma_core::tracker::TrackerConfig {
        alpha: f64::INFINITY,
        ..cfg.tracker.clone()
    };
    let ablation = harness::run_tracking(
        net,
        &full.params,
        &ablated_cfg,
        &occl,
        target,
        harness::OCCLUSION_START,
        cfg.eval_iou,
    )?;
    let r = &full_run.report;
    rep.check(
        full_run.recovered(),
        format!(
            "occluded target ids before {:?}, after {:?}, switches {}",
            full_run.ids_before, full_run.ids_after, full_run.target_ids_switches
        ),
    );
    rep.check(
        r.mota() >= 0.9 && r.idf1() >= 0.9,
        format!(
            "occlusion sequence MOTA {:.3}, IDF1 {:.3} (FP {}, FN {}, IDS {})",
            r.mota(),
            r.idf1(),
            r.fp,
            r.fn_,
            r.ids
        ),
    );
    rep.check(
        ablation.report.idf1() < r.idf1(),
        format!("alpha = inf: IDF1 {:.3} < {:.3}", ablation.report.idf1(), r.idf1()),
    );
    Ok(E2eOutcome {
        report: rep,
        train_seconds,
        sot_train_seconds,
        initial_loss,
        final_loss,
        separation,
        sot_separation,
        full: full_run,
        ablation,
        params: full.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_network_is_consistent() {
        let c = micro_network();
        c.validate().unwrap();
        assert_eq!(c.exemplar_feature_side().unwrap(), 2);
        assert_eq!(c.feature_side(c.instance_size_train).unwrap(), 4);
    }

    #[test]
    fn report_fails_on_any_failed_check() {
        let mut r = SuiteReport::new("x");
        r.check(true, "a".into());
        assert!(r.render().ends_with("suite x: PASS\n"));
        r.check(false, "b".into());
        assert!(!r.passed);
        assert!(r.render().contains("[FAIL] b"));
    }

    #[test]
    fn unknown_suite_is_a_config_error() {
        let e = run_suite("nope", &RunConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn small_hungarian_sweep_passes() {
        assert!(hungarian_suite(10, 4).passed);
    }
}
