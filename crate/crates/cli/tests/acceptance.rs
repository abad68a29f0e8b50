//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Everything runs inside one test so the lines come out in order and the
//! trained direction networks are shared between the learning check and the
//! field comparison.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use neurocond::coil::{build_figure_eight, da_dt_field, segment_kernel, vector_potential, CoilConfig, CoilPlacement, WirePath};
use neurocond::condnet::layers::{
    batchnorm, batchnorm_backward, bce_with_logits, conv2d_same, conv2d_same_backward, deconv2_stride2,
    deconv2_stride2_backward, BatchNormParams,
};
use neurocond::condnet::{infer_volume, train_with, Mode, NetConfig, Network, SliceModel, Tensor, TrainConfig};
use neurocond::conductor::{assign_uniform, average_directions, denormalize, normalize_conductor, NormParams, TissueTable};
use neurocond::metrics::{global_error, peak_center, phantom_regions, region_report, report_text, RegionMask};
use neurocond::phantom::{phantom_dataset, PhantomSpec, TrainingSet};
use neurocond::spfd::{assemble, electric_field, solve, SolveConfig, SphereFixture};
use neurocond::{Axis, Dims, ScalarGrid, VectorGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Bypasses the test harness's output capture so the lines always show.
fn line(text: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{text}");
}

fn within(limit: Duration, start: Instant) -> Result<f64, String> {
    let t = start.elapsed();
    if t > limit {
        Err(format!("took {:.1} s, limit {:.0} s", t.as_secs_f64(), limit.as_secs_f64()))
    } else {
        Ok(t.as_secs_f64())
    }
}

// ---------------------------------------------------------------- 1

fn shape_ledger() -> Outcome {
    let start = Instant::now();
    let full = Network::build(&NetConfig::full(), 0).map_err(|e| e.to_string())?;
    let hub = full.ledger().get("hub").ok_or("no hub entry")?;
    ensure!((hub.channels, hub.side) == (2 * 64, 8), "full-size hub {}x{}²", hub.channels, hub.side);
    let map = full.ledger().get("map1").ok_or("no map entry")?;
    ensure!((map.channels, map.side) == (1, 256), "full-size map {}x{}²", map.channels, map.side);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_vec(1, 2, 256, 256, (0..2 * 65536).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    // forward asserts every module against the ledger
    let y = full.predict(&x).map_err(|e| e.to_string())?;
    ensure!(y.shape() == [1, 1, 256, 256], "full-size output {:?}", y.shape());
    let desk = Network::build(&NetConfig::desk(), 0).map_err(|e| e.to_string())?;
    let x = Tensor::from_vec(2, 2, 64, 64, (0..2 * 2 * 4096).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    for mode in [Mode::Train, Mode::Infer] {
        let (z, _) = desk.forward(&x, mode).map_err(|e| e.to_string())?;
        ensure!(z.shape() == [2, 1, 64, 64], "desk output {:?}", z.shape());
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!("full-size hub 128x8², output 256²; desk ledger holds in both modes; {t:.1} s"))
}

// ---------------------------------------------------------------- 2

const STEP: f64 = 1e-3;

fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = p[i];
            p[i] = o + STEP;
            let up = f(&p);
            p[i] = o - STEP;
            let down = f(&p);
            p[i] = o;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mut worst = BTreeMap::new();
    let t = |n, c, h, w, d: Vec<f64>| Tensor::from_vec(n, c, h, w, d).unwrap();

    for k in [3, 5] {
        let (x, w, b, r) = (rand_vec(2 * 2 * 64), rand_vec(3 * 2 * k * k), rand_vec(3), rand_vec(2 * 3 * 64));
        let xt = t(2, 2, 8, 8, x.clone());
        let g = conv2d_same_backward(&xt, &w, 3, k, &t(2, 3, 8, 8, r.clone())).unwrap();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&conv2d_same(&t(2, 2, 8, 8, x.to_vec()), w, b, 3, k).unwrap().data, &r);
        let d = max_diff(&g.dx.data, &numeric(&x, |v| loss(v, &w, &b)))
            .max(max_diff(&g.dw, &numeric(&w, |v| loss(&x, v, &b))))
            .max(max_diff(&g.db, &numeric(&b, |v| loss(&x, &w, v))));
        worst.insert("conv", d.max(*worst.get("conv").unwrap_or(&0.0)));
    }

    let (x, w, b, r) = (rand_vec(2 * 3 * 16), rand_vec(3 * 2 * 4), rand_vec(2), rand_vec(2 * 2 * 64));
    let g = deconv2_stride2_backward(&t(2, 3, 4, 4, x.clone()), &w, 2, &t(2, 2, 8, 8, r.clone())).unwrap();
    let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&deconv2_stride2(&t(2, 3, 4, 4, x.to_vec()), w, b, 2).unwrap().data, &r);
    worst.insert(
        "deconv",
        max_diff(&g.dx.data, &numeric(&x, |v| loss(v, &w, &b)))
            .max(max_diff(&g.dw, &numeric(&w, |v| loss(&x, v, &b))))
            .max(max_diff(&g.db, &numeric(&b, |v| loss(&x, &w, v)))),
    );

    let (x, r) = (rand_vec(2 * 3 * 64), rand_vec(2 * 3 * 64));
    let gamma: Vec<f64> = rand_vec(3).iter().map(|v| 1.0 + 0.5 * v).collect();
    let beta = rand_vec(3);
    let (rm, rv) = (vec![0.0; 3], vec![1.0; 3]);
    let bn = |x: &[f64], g: &[f64], b: &[f64]| {
        let (y, _, _) = batchnorm(&t(2, 3, 8, 8, x.to_vec()), BatchNormParams { gamma: g, beta: b }, &rm, &rv, Mode::Train).unwrap();
        dot(&y.data, &r)
    };
    let (_, cache, _) = batchnorm(&t(2, 3, 8, 8, x.clone()), BatchNormParams { gamma: &gamma, beta: &beta }, &rm, &rv, Mode::Train).unwrap();
    let g = batchnorm_backward(&t(2, 3, 8, 8, r.clone()), &gamma, &cache);
    worst.insert(
        "batchnorm",
        max_diff(&g.dx.data, &numeric(&x, |v| bn(v, &gamma, &beta)))
            .max(max_diff(&g.dgamma, &numeric(&gamma, |v| bn(&x, v, &beta))))
            .max(max_diff(&g.dbeta, &numeric(&beta, |v| bn(&x, &gamma, v)))),
    );

    let z: Vec<f64> = rand_vec(64).iter().map(|v| 4.0 * v).collect();
    let target: Vec<f64> = rand_vec(64).iter().map(|v| 0.45 * (v + 1.0)).collect();
    let (_, g) = bce_with_logits(&z, &target).unwrap();
    worst.insert("bce", max_diff(&g, &numeric(&z, |v| bce_with_logits(v, &target).unwrap().0)));

    let summary = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    ensure!(worst.values().all(|&v| v <= 1e-4), "max-abs differences: {summary}");
    let secs = within(Duration::from_secs(60), start)?;
    Ok(format!("max-abs differences {summary}; {secs:.1} s"))
}

// ---------------------------------------------------------------- 3

fn pipeline_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = Dims::new(9, 7, 5);
    let mut worst: f64 = 0.0;
    for table in [TissueTable::cole_cole_a(), TissueTable::typical_b()] {
        let p = NormParams::for_table(&table, 0.1).unwrap();
        let data: Vec<f32> = (0..dims.len()).map(|_| rng.random_range(0.0..table.sigma_max() as f32)).collect();
        let g = ScalarGrid::from_vec(dims, 1.0, data).unwrap();
        let back = denormalize(&normalize_conductor(&g, &p).unwrap(), &p).unwrap();
        for (a, b) in g.data().iter().zip(back.data()) {
            if *a > 0.0 {
                worst = worst.max(((a - b) / a).abs() as f64);
            }
        }
    }
    ensure!(worst <= 1e-6, "round trip relative error {worst:e}");
    let vols: Vec<ScalarGrid> = (0..3)
        .map(|_| ScalarGrid::from_vec(dims, 1.0, (0..dims.len()).map(|_| rng.random_range(0.0..0.9f32)).collect()).unwrap())
        .collect();
    let base = average_directions(&vols[0], &vols[1], &vols[2]).unwrap();
    for [a, b, c] in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        ensure!(average_directions(&vols[a], &vols[b], &vols[c]).unwrap() == base, "average depends on order {a}{b}{c}");
    }
    Ok(format!("round trip worst relative error {worst:.1e} for tables A and B; direction average identical under all 6 orders"))
}

// ---------------------------------------------------------------- 4

struct Trained {
    nets: Vec<Network>,
    curves: Vec<(f64, f64)>,
    seconds: f64,
}

const HELD_OUT_SEED: u64 = 4;

fn training_set() -> TrainingSet {
    let specs: Vec<PhantomSpec> = (1..=3).map(|s| PhantomSpec::head(64, s)).collect();
    phantom_dataset(&specs, &[TissueTable::cole_cole_a()], 0.1).unwrap()
}

fn trained() -> &'static Trained {
    static NETS: OnceLock<Trained> = OnceLock::new();
    NETS.get_or_init(|| {
        let start = Instant::now();
        let data = training_set();
        let tcfg = TrainConfig { epochs: 50, ..Default::default() };
        let mut nets = Vec::new();
        let mut curves = Vec::new();
        for axis in Axis::ALL {
            let (net, curve) = train_with(&NetConfig::desk(), &tcfg, &data, axis, |e, t, v| {
                if e == 1 || e % 10 == 0 {
                    line(&format!("    {axis:<8} epoch {e:>2}: train BCE {t:.4}, validation BCE {v:.4}"));
                }
            })
            .unwrap();
            curves.push((curve.train[0], *curve.train.last().unwrap()));
            nets.push(net);
        }
        Trained { nets, curves, seconds: start.elapsed().as_secs_f64() }
    })
}

fn held_out() -> (neurocond::LabelGrid, ScalarGrid, ScalarGrid) {
    let ds = phantom_dataset(&[PhantomSpec::head(64, HELD_OUT_SEED)], &[TissueTable::cole_cole_a()], 0.1).unwrap();
    let s = ds.samples.into_iter().next().unwrap();
    (s.labels, s.t1, s.t2)
}

fn condnet_conductor(t1: &ScalarGrid, t2: &ScalarGrid) -> ScalarGrid {
    let tr = trained();
    let models: [&dyn SliceModel; 3] = [&tr.nets[0], &tr.nets[1], &tr.nets[2]];
    let norm = NormParams::for_table(&TissueTable::cole_cole_a(), 0.1).unwrap();
    infer_volume(models, &[t1, t2], &[norm]).unwrap().remove(0)
}

fn learning() -> Outcome {
    let tr = trained();
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (axis, (first, last)) in Axis::ALL.iter().zip(&tr.curves) {
        let ratio = last / first;
        notes.push(format!("{axis} {last:.4}/{first:.4} = {:.1}%", 100.0 * ratio));
        if ratio >= 0.25 {
            failures.push(format!("{axis} train BCE only fell to {:.1}% of epoch 1", 100.0 * ratio));
        }
    }
    let table = TissueTable::cole_cole_a();
    let (labels, t1, t2) = held_out();
    let est = condnet_conductor(&t1, &t2);
    let truth = assign_uniform(&labels, &table).unwrap();
    let mut acc: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
    for ((&l, &e), &t) in labels.data().iter().zip(est.data()).zip(truth.data()) {
        let a = acc.entry(l).or_default();
        a.0 += (e - t).abs() as f64;
        a.1 += 1;
    }
    let mut maes = Vec::new();
    for (id, (sum, n)) in acc {
        let Some(t) = table.get(id) else { continue };
        let mae = sum / n as f64;
        maes.push(format!("{} {mae:.3}", t.name));
        if t.sigma <= 0.5 && mae > 0.05 {
            failures.push(format!("{} (σ {} S/m) held-out MAE {mae:.3} S/m > 0.05", t.name, t.sigma));
        }
    }
    line(&format!("    train BCE final/epoch 1: {}", notes.join(", ")));
    line(&format!("    held-out MAE [S/m]: {}", maes.join(", ")));
    if tr.seconds > 1800.0 {
        failures.push(format!("training took {:.0} s > 30 min", tr.seconds));
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(format!("3 directions x 50 epochs in {:.0} s", tr.seconds))
}

// ---------------------------------------------------------------- 5

fn solve_sphere(f: &SphereFixture) -> (usize, f64, ScalarGrid) {
    let (cond, a) = (f.conductivity().unwrap(), f.da_dt().unwrap());
    let sol = solve(&assemble(&cond, &a).unwrap(), &SolveConfig::default()).unwrap();
    let (_, mag) = electric_field(&sol.potential, &a, &cond).unwrap();
    (sol.stats.cycles, sol.stats.final_residual, mag)
}

fn sphere() -> Outcome {
    let start = Instant::now();
    let f = SphereFixture::default();
    let (cycles, residual, mag) = solve_sphere(&f);
    ensure!(residual <= 1e-6 && cycles <= 30, "residual {residual:.2e} after {cycles} cycles");
    let err = f.errors(&mag);
    ensure!(err.interior_max < 0.05, "interior |E| error {:.2}%", 100.0 * err.interior_max);
    let (_, _, mag10) = solve_sphere(&SphereFixture { sigma: 10.0 * f.sigma, ..f });
    let change = mag
        .data()
        .iter()
        .zip(mag10.data())
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| ((a - b) / a).abs() as f64)
        .fold(0.0, f64::max);
    ensure!(change <= 5e-3, "σ x10 changed |E| by {:.3}%", 100.0 * change);
    let t = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "{cycles} V-cycles to {residual:.1e}; |E| error {:.2}% inside r<0.8R ({:.0}% at the staircase surface); σ x10 change {:.2e}; {t:.1} s",
        100.0 * err.interior_max,
        100.0 * err.cylinder_max,
        change
    ))
}

// ---------------------------------------------------------------- 6

fn multigrid() -> Outcome {
    let mut counts = Vec::new();
    for n in [16usize, 32, 64] {
        let d = Dims::cube(n);
        let base = assemble(&ScalarGrid::filled(d, 1.0, 1.0).unwrap(), &VectorGrid::zeros(d)).unwrap();
        let nd = base.nodes();
        let exact: Vec<f64> = (0..nd.len())
            .map(|i| {
                let (x, y, z) = nd.coords(i);
                let c = |v: usize| (PI * v as f64 / n as f64).cos();
                c(x) * c(y) * c(z) + 0.3 * (2.0 * PI * x as f64 / n as f64).cos()
            })
            .collect();
        let sys = base.with_source(base.operator().apply(&exact)).unwrap();
        let sol = solve(&sys, &SolveConfig::default()).unwrap();
        ensure!(sol.stats.converged, "{n}³ did not converge");
        counts.push(sol.stats.cycles);
    }
    let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
    ensure!(spread <= 2, "cycles 16³/32³/64³ = {counts:?}");
    Ok(format!("V-cycles 16³/32³/64³ = {counts:?}"))
}

// ---------------------------------------------------------------- 7

fn conservation() -> Outcome {
    let n = 32;
    let d = Dims::cube(n);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = n as f64 / 2.0;
    let data = (0..d.len())
        .map(|i| {
            let (x, y, z) = d.coords(i);
            let r = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2) + (z as f64 + 0.5 - c).powi(2)).sqrt();
            match (r > 0.45 * n as f64, rng.random::<bool>()) {
                (true, _) => 0.0,
                (false, true) => 0.33,
                (false, false) => 1.8,
            }
        })
        .collect();
    let cond = ScalarGrid::from_vec(d, 1.0, data).unwrap();
    let a = VectorGrid::filled(d, 1.0, [30.0, -10.0, 5.0]).unwrap();
    let sys = assemble(&cond, &a).unwrap();
    let sol = solve(&sys, &SolveConfig::default()).unwrap();
    ensure!(sol.stats.converged, "solver did not converge");
    let bnorm = sys.source().iter().map(|v| v * v).sum::<f64>().sqrt();
    let worst = sys.net_current(&sol.potential).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(worst <= 1e-6 * bnorm, "net current {worst:e} vs |b| {bnorm:e}");
    Ok(format!("max node net current {:.1e} of |b|", worst / bnorm))
}

// ---------------------------------------------------------------- 8

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, tol / 2.0, depth - 1)
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn coil() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let mut p3 = || [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        let (a, b, p) = (p3(), p3(), p3());
        let len = norm3([b[0] - a[0], b[1] - a[1], b[2] - a[2]]);
        let Ok(k) = segment_kernel(a, b, p) else { continue };
        let f = |t: f64| len / norm3([p[0] - a[0] - t * (b[0] - a[0]), p[1] - a[1] - t * (b[1] - a[1]), p[2] - a[2] - t * (b[2] - a[2])]);
        // keep the integrand smooth enough for the quadrature reference
        if (0..=20).map(|i| len / f(i as f64 / 20.0)).fold(f64::MAX, f64::min) < 0.5 || len < 1.0 {
            continue;
        }
        let q = simpson(&f, 0.0, 1.0, f(0.0), f(0.5), f(1.0), 1e-14, 40);
        worst = worst.max((norm3(k) - q).abs() / q);
        cases += 1;
    }
    ensure!(worst <= 1e-6, "kernel vs quadrature {worst:e}");

    let wire = WirePath::circle([10.0, -5.0, 3.0], [0.0, 0.0, 1.0], 30.0, 64).unwrap();
    let off = norm3(vector_potential(&wire, [25.0, -5.0, 13.0]).unwrap());
    let axis_max = [-40.0, -3.0, 0.0, 17.0, 100.0]
        .iter()
        .map(|z| norm3(vector_potential(&wire, [10.0, -5.0, 3.0 + z]).unwrap()))
        .fold(0.0, f64::max);
    ensure!(axis_max <= 1e-12 * off, "on-axis |A| {axis_max:e} vs off-axis {off:e}");

    let n = 48;
    let placement = CoilPlacement { scalp_point_mm: [48.0, 48.0, 96.0], normal: [0.0, 0.0, 1.0], angle_rad: 0.0, standoff_mm: 5.0 };
    let field = da_dt_field(&build_figure_eight(&placement, 97.0, 47.0, 128).unwrap(), 1.0, Dims::cube(n), 2.0).unwrap();
    let top = n - 1;
    let (mut best, mut at) = (0.0, [0.0; 2]);
    for j in 0..n {
        for i in 0..n {
            let v = field.get(i, j, top);
            let m = norm3([v[0] as f64, v[1] as f64, v[2] as f64]);
            if m > best {
                best = m;
                at = [(i as f64 + 0.5) * 2.0 - 48.0, (j as f64 + 0.5) * 2.0 - 48.0];
            }
        }
    }
    let off_center = (at[0] * at[0] + at[1] * at[1]).sqrt();
    ensure!(off_center <= 6.0, "figure-eight peak {off_center:.1} mm from the center");
    Ok(format!(
        "kernel vs quadrature {worst:.1e} (200 cases); on-axis |A| {:.1e} of off-axis; figure-eight peak {off_center:.1} mm from the crossing",
        axis_max / off
    ))
}

// ---------------------------------------------------------------- 9

fn reference_ge(e: &[f32], e_hat: &[f32], mask: &[bool]) -> f64 {
    let idx: Vec<usize> = (0..e.len()).filter(|&i| mask[i]).collect();
    let peak = idx.iter().fold(0.0f64, |m, &i| m.max(e[i] as f64).max(e_hat[i] as f64));
    100.0 * idx.iter().map(|&i| (e[i] as f64 - e_hat[i] as f64).abs() / peak).sum::<f64>() / idx.len() as f64
}

fn ge_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = Dims::new(10, 9, 8);
    let mut worst_ref: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for _ in 0..100 {
        let mut field = || ScalarGrid::from_vec(d, 1.0, (0..d.len()).map(|_| rng.random_range(0.0..5.0f32)).collect()).unwrap();
        let (e, eh) = (field(), field());
        let mask: Vec<bool> = (0..d.len()).map(|_| rng.random_bool(0.3)).collect();
        let region = RegionMask::from_vec("r", d, mask.clone()).unwrap();
        let ge = global_error(&e, &eh, &region).unwrap().ge;
        worst_ref = worst_ref.max((ge - reference_ge(e.data(), eh.data(), &mask)).abs());
        worst_sym = worst_sym.max((ge - global_error(&eh, &e, &region).unwrap().ge).abs());
        let c = rng.random_range(0.1f32..10.0);
        let (ce, ceh) = (e.map(|v| v * c).unwrap(), eh.map(|v| v * c).unwrap());
        worst_scale = worst_scale.max((ge - global_error(&ce, &ceh, &region).unwrap().ge).abs() / ge);
    }
    ensure!(worst_ref <= 1e-12, "reference loop differs by {worst_ref:e}");
    ensure!(worst_sym <= 1e-12, "asymmetry {worst_sym:e}");
    ensure!(worst_scale <= 1e-5, "scale dependence {worst_scale:e}");
    let two = |v: [f32; 2]| ScalarGrid::from_vec(Dims::new(2, 1, 1), 1.0, v.to_vec()).unwrap();
    let all = RegionMask::from_vec("both", Dims::new(2, 1, 1), vec![true, true]).unwrap();
    let hand = global_error(&two([2.0, 0.0]), &two([0.0, 0.0]), &all).unwrap().ge;
    ensure!(hand == 50.0, "hand example gives {hand}%");
    Ok(format!(
        "reference loop {worst_ref:.1e}, symmetry {worst_sym:.1e}, relative scale change {worst_scale:.1e} over 100 random fields; hand example 50%"
    ))
}

// ---------------------------------------------------------------- 10

fn table3_pattern() -> Outcome {
    let table = TissueTable::cole_cole_a();
    let (labels, t1, t2) = held_out();
    let uniform = assign_uniform(&labels, &table).unwrap();
    let estimated = condnet_conductor(&t1, &t2);
    let head: Vec<bool> = labels.data().iter().map(|&l| l != 0).collect();
    let coil = CoilConfig::new(CoilPlacement::above_top(&head, labels.dims(), labels.voxel_mm(), 5.0).unwrap());
    let a = da_dt_field(&coil.wire().unwrap(), coil.didt, labels.dims(), labels.voxel_mm()).unwrap();
    let field = |cond: &ScalarGrid| {
        let sol = solve(&assemble(cond, &a).unwrap(), &SolveConfig::default()).unwrap();
        assert!(sol.stats.converged, "{:?}", sol.stats.history);
        electric_field(&sol.potential, &a, cond).unwrap().1
    };
    let (e, e_hat) = (field(&uniform), field(&estimated));
    let head_region = RegionMask::from_vec("head", labels.dims(), head).unwrap();
    let center = peak_center(&e, &head_region).unwrap();
    let regions = phantom_regions(&labels, center, 5.0).unwrap();
    let rows = region_report(&e, &e_hat, &regions).unwrap();
    for l in report_text(&rows).lines() {
        line(&format!("    {l}"));
    }
    let (roi, whole) = (rows[0].error.ge, rows[3].error.ge);
    ensure!(roi > whole, "coil-side ROI GE {roi:.2}% does not exceed head GE {whole:.2}%");
    Ok(format!("coil-side ROI GE {roi:.2}% > head GE {whole:.2}%"))
}

// ---------------------------------------------------------------- 11

fn cli(dir: &Path, threads: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_neurocond"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn pipeline(dir: &Path, threads: usize) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let run = |args: &[&str]| cli(dir, threads, args);
    for seed in ["1", "2"] {
        run(&["phantom", "gen", "--size", "32", "--seed", seed, "--out-prefix", &format!("s{seed}")])?;
    }
    for axis in ["axial", "sagittal", "coronal"] {
        run(&[
            "net", "train", "--phantom", "s1", "--phantom", "s2", "--axis", axis, "--epochs", "2", "--depth", "3", "--seed", "5",
            "--out", &format!("{axis}.cnw"),
        ])?;
    }
    run(&[
        "net", "infer", "--axial", "axial.cnw", "--sagittal", "sagittal.cnw", "--coronal", "coronal.cnw", "--t1", "s2_t1.nvv",
        "--t2", "s2_t2.nvv", "--out", "est.nvv",
    ])?;
    run(&["conductor", "assign", "--labels", "s2_labels.nvv", "--out", "uniform.nvv"])?;
    run(&["conductor", "normalize", "--cond", "uniform.nvv", "--out", "norm.nvv"])?;
    run(&["coil", "field", "--like", "s2_labels.nvv", "--out", "dadt.nvv"])?;
    run(&["field", "solve", "--cond", "uniform.nvv", "--dadt", "dadt.nvv", "--out-prefix", "fu"])?;
    run(&["field", "solve", "--cond", "est.nvv", "--dadt", "dadt.nvv", "--out-prefix", "fe"])?;
    run(&["field", "efield", "--psi", "fe_psi.nvv", "--cond", "est.nvv", "--dadt", "dadt.nvv", "--out-prefix", "fe2"])?;
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".nvv") || name.ends_with(".cnw") {
            files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = pipeline(a.path(), 1)?;
    let many = pipeline(b.path(), 4)?;
    ensure!(one.keys().eq(many.keys()), "different file sets: {:?} vs {:?}", one.keys(), many.keys());
    let differing: Vec<&String> = one.iter().filter(|(k, v)| many[*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "files differ between --threads 1 and 4: {differing:?}");
    Ok(format!("{} NVV1/CNW1 outputs byte-identical with --threads 1 and 4", one.len()))
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("shape ledger", shape_ledger),
        ("gradient correctness", gradients),
        ("pipeline identity", pipeline_identity),
        ("learning sanity", learning),
        ("SPFD sphere oracle", sphere),
        ("multigrid mesh independence", multigrid),
        ("current conservation", conservation),
        ("coil oracle", coil),
        ("GE metric", ge_metric),
        ("coil-side ROI vs head GE", table3_pattern),
        ("CLI determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => line(&format!("criterion {:>2} PASS  {name}: {detail}", i + 1)),
            Err(why) => {
                line(&format!("criterion {:>2} FAIL  {name}: {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
