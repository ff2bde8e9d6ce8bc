//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use objstitch::blend::{composite, poisson_blend, BlendConfig};
use objstitch::correspondence::{ObjectMatchSet, ObjectRef};
use objstitch::energy::{EnergyModel, EnergyParams};
use objstitch::eval::{ms_ssim, MsSsimConfig};
use objstitch::io::{write_label_map, DetectionSet, StitchConfig};
use objstitch::model::{BBox, DetectedObject, Label, LabelField, ObjectMask, Point, PointMatch, PointMatchSet, Raster};
use objstitch::pipeline::{evaluate, stitch};
use objstitch::registration::{
    cpw_refine, estimate_homography, similarity_deviation, warp_image, FlowSample, Homography, MeshConfig,
    RansacConfig,
};
use objstitch::solver::{alpha_expansion, brute_force_minimize, build_expansion, initial_labeling, qpbo_solve, BinaryProblem};
use objstitch::synthetic::{
    detect_template, geometric_matches, random_instance, sprite_template, walking_scene, InstanceSpec, SceneLayout,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let spec = InstanceSpec::default();
    let (mut hits, mut worst) = (0, 1.0f64);
    for seed in 0..100 {
        let model = random_instance(seed, &spec).unwrap();
        assert_eq!(model.num_labels(), 3);
        let (_, best) = brute_force_minimize(&model).unwrap();
        let exp = alpha_expansion(&model, &initial_labeling(&model), &Default::default())
            .unwrap()
            .energy
            .total();
        if exp <= best + 1e-9 * best.abs().max(1.0) {
            hits += 1;
        }
        worst = worst.max(if best > 0.0 { exp / best } else if exp > 0.0 { f64::INFINITY } else { 1.0 });
    }
    let t = start.elapsed();
    check(
        hits >= 95 && worst <= 1.05 && t < Duration::from_secs(60),
        format!("optimum in {hits}/100, worst ratio {worst:.6}, {t:.1?}"),
    )
}

fn expansion_exactness() -> Outcome {
    let mut mismatches = 0;
    let mut checked = 0;
    for seed in 0..20u64 {
        let spec = InstanceSpec {
            width: 3,
            height: 3,
            sources: 2 + (seed % 2) as usize,
            ..Default::default()
        };
        let model = random_instance(1000 + seed, &spec).unwrap();
        let nl = model.num_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let codes: Vec<usize> = (0..9).map(|_| rng.gen_range(0..nl)).collect();
            let alpha = rng.gen_range(0..nl);
            let ep = build_expansion(&model, &codes, alpha);
            let b: Vec<bool> = (0..ep.nodes.len()).map(|_| rng.gen()).collect();
            let moved = model.field_from_codes(&ep.apply(&codes, &b));
            let direct = model.total_energy(&moved).unwrap().total();
            if ep.problem.energy(&b) - ep.constant != direct {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over {checked} moves"))
}

fn qpbo_persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut violations, mut labeled_total, mut nonsub) = (0, 0, 0);
    for k in 0..50 {
        let n = rng.gen_range(2..=12);
        let submodular = k % 2 == 0;
        let mut bp = BinaryProblem::new(n);
        for p in 0..n {
            bp.add_unary(p, rng.gen_range(-10..=10) as f64, rng.gen_range(-10..=10) as f64);
        }
        for p in 0..n {
            for q in p + 1..n {
                if rng.gen_bool(0.35) {
                    let mut e: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0..=10) as f64);
                    let w = e[1] + e[2] - e[0] - e[3];
                    if submodular && w < 0.0 {
                        e[1] -= w;
                    }
                    bp.add_pairwise(p, q, e);
                }
            }
        }
        if !submodular && bp.is_submodular() && n >= 2 {
            bp.add_pairwise(0, 1, [5.0, 0.0, 0.0, 5.0]);
        }
        if !bp.is_submodular() {
            nonsub += 1;
        }
        let res = qpbo_solve(&bp);
        labeled_total += n - res.unlabeled();
        let mut min = f64::INFINITY;
        for bits in 0u32..1 << n {
            let y: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let e = bp.energy(&y);
            min = min.min(e);
            let z: Vec<bool> = (0..n).map(|i| res.labels[i].unwrap_or(y[i])).collect();
            if bp.energy(&z) > e + 1e-9 {
                violations += 1;
            }
        }
        if bp.is_submodular() {
            let full: Option<Vec<bool>> = res.labels.iter().copied().collect();
            match full {
                Some(x) if (bp.energy(&x) - min).abs() <= 1e-9 => {}
                _ => violations += 1,
            }
        }
    }
    check(
        violations == 0,
        format!("{violations} violations; {nonsub} non-submodular problems; {labeled_total} persistent nodes"),
    )
}

fn one_pixel_model(delta: f64, lambda_o: Option<f64>) -> EnergyModel {
    let sources = vec![Raster::new(1, 1, 1, vec![100.0], vec![false]).unwrap(); 2];
    let objects: Vec<Vec<DetectedObject>> = (0..2)
        .map(|s| {
            vec![DetectedObject::new(s, "thing", 1.0, BBox::new(0.0, 0.0, 1.0, 1.0), ObjectMask::rect(0, 0, 1, 1).unwrap())
                .unwrap()]
        })
        .collect();
    let matches = ObjectMatchSet {
        classes: vec![vec![ObjectRef { source: 0, index: 0 }, ObjectRef { source: 1, index: 0 }]],
        pairs: Vec::new(),
        threshold: 0.0,
    };
    let params = EnergyParams {
        delta,
        lambda_o,
        ..Default::default()
    };
    EnergyModel::new(sources, objects, matches, params).unwrap()
}

fn occlusion_arithmetic() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for delta in [0.1, 0.5, 1.0] {
        let on = one_pixel_model(delta, None);
        let (f, e) = brute_force_minimize(&on).unwrap();
        let exp = alpha_expansion(&on, &initial_labeling(&on), &Default::default()).unwrap();
        let ld = on.params().lambda_d;
        ok &= f.at(0) == Label::Occluded && e == ld * (1.0 + delta) && exp.labeling.at(0) == Label::Occluded;

        let off = one_pixel_model(delta, Some(0.0));
        let (g, e0) = brute_force_minimize(&off).unwrap();
        let exp0 = alpha_expansion(&off, &initial_labeling(&off), &Default::default()).unwrap();
        ok &= g.at(0).source().is_some() && e0 == ld && exp0.labeling.at(0).source().is_some();
        notes.push(format!("δ={delta}: {} / {}", f.at(0), g.at(0)));
    }
    check(ok, notes.join(", "))
}

fn walking_evaluation(seed: u64, cfg: &StitchConfig) -> (i64, usize, Duration) {
    let scene = walking_scene(seed, SceneLayout::default()).unwrap();
    let dets = DetectionSet {
        objects: scene.detections.clone(),
        extras: Vec::new(),
    };
    let t = Instant::now();
    let out = stitch(&scene.images, &dets, &scene.matches, &[], cfg).unwrap();
    let elapsed = t.elapsed();
    let n = scene.images.len();
    let found = detect_template(&out.mosaic, &sprite_template(), 0.8, n).unwrap();
    let mut matches = scene.matches.clone();
    for (i, img) in scene.images.iter().enumerate() {
        matches.push(geometric_matches(&out.to_canvas[i], img.dims(), out.mosaic.dims(), 4, (i, n)));
    }
    let mut objects = scene.detections.clone();
    objects.push(found.clone());
    let det = DetectionSet {
        objects,
        extras: Vec::new(),
    };
    let report = evaluate(&out.mosaic, &scene.images, &det, &matches, cfg).unwrap();
    (report.all.delta, found.len(), elapsed)
}

fn duplication_end_to_end() -> Outcome {
    let mut ablated = StitchConfig::default();
    ablated.energy.lambda_r = 0.0;
    ablated.energy.lambda_c = 0.0;
    ablated.energy.lambda_o = Some(0.0);
    let mut ok = true;
    let mut notes = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..5 {
        let (d0, _, t0) = walking_evaluation(seed, &StitchConfig::default());
        let (d1, _, t1) = walking_evaluation(seed, &ablated);
        slowest = slowest.max(t0).max(t1);
        ok &= d0 == 0 && d1 == 1;
        notes.push(format!("{d0:+}/{d1:+}"));
    }
    ok &= slowest < Duration::from_secs(30);
    check(ok, format!("delta default/ablated per seed {}, slowest run {slowest:.1?}", notes.join(" ")))
}

fn no_object_reversion() -> Outcome {
    let sizes = [(2, 2), (3, 3), (4, 4), (3, 4), (4, 3)];
    let mut agree = 0;
    for seed in 0..50u64 {
        let (w, h) = sizes[seed as usize % sizes.len()];
        let spec = InstanceSpec {
            width: w,
            height: h,
            objects: false,
            ..Default::default()
        };
        let full = random_instance(2000 + seed, &spec).unwrap();
        let classical = random_instance(
            2000 + seed,
            &InstanceSpec {
                params: EnergyParams {
                    lambda_c: 0.0,
                    lambda_r: 0.0,
                    lambda_o: Some(0.0),
                    ..Default::default()
                },
                ..spec.clone()
            },
        )
        .unwrap();
        let (a, ea) = brute_force_minimize(&full).unwrap();
        let (b, eb) = brute_force_minimize(&classical).unwrap();
        // data + smoothness alone, summed directly from the per-pixel costs
        let two_term = |f: &LabelField| {
            let p = classical.params();
            let mut e = 0.0;
            for y in 0..h {
                for x in 0..w {
                    e += p.lambda_d * classical.data_cost((x, y), f.get(x, y));
                    if x + 1 < w {
                        e += p.lambda_s * classical.smoothness_cost((x, y), (x + 1, y), f.get(x, y), f.get(x + 1, y)).unwrap();
                    }
                    if y + 1 < h {
                        e += p.lambda_s * classical.smoothness_cost((x, y), (x, y + 1), f.get(x, y), f.get(x, y + 1)).unwrap();
                    }
                }
            }
            e
        };
        if a == b && ea == eb && (two_term(&b) - eb).abs() <= 1e-9 * eb.max(1.0) {
            agree += 1;
        }
    }
    check(agree == 50, format!("{agree}/50 instances agree"))
}

fn planted_matches(h: &Homography, seed: u64) -> PointMatchSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for k in 0..200 {
        let p = Point::new(rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
        let q = if k % 2 == 0 {
            let t = h.apply(p).unwrap();
            Point::new(t.x + gaussian(&mut rng), t.y + gaussian(&mut rng))
        } else {
            Point::new(rng.gen_range(-20.0..340.0), rng.gen_range(-20.0..260.0))
        };
        pairs.push(PointMatch { p, q, score: 1.0 });
    }
    PointMatchSet::new(0, 1, pairs)
}

fn registration_recovery() -> Outcome {
    let dims = (320, 240);
    let truth = Homography::from_rows([[0.97, -0.06, 14.0], [0.05, 1.02, -9.0], [8.0e-5, -6.0e-5, 1.0]]).unwrap();
    let cfg = RansacConfig::default();
    let mut good = 0;
    for seed in 0..20 {
        let ms = planted_matches(&truth, seed);
        if let Ok(c) = estimate_homography(&ms, &cfg, dims, seed) {
            if c[0].homography.max_corner_displacement(&truth, dims) < 2.0 {
                good += 1;
            }
        }
    }
    let mut dev = 0.0f64;
    for h in [
        Homography::identity(),
        Homography::similarity(1.3, 0.4, -25.0, 11.0).unwrap(),
        Homography::similarity(0.8, -1.1, 3.0, 40.0).unwrap(),
    ] {
        dev = dev.max(similarity_deviation(&h, dims));
        // keep every target coordinate positive so no grid point is dropped
        let back = Homography::translation(-5000.0, -5000.0);
        let shifted = geometric_matches(&back.inverse().unwrap().compose(&h).unwrap(), dims, (10_000, 10_000), 20, (0, 1));
        let est = estimate_homography(&shifted, &cfg, dims, 1).unwrap();
        dev = dev.max(similarity_deviation(&back.compose(&est[0].homography).unwrap(), dims));
    }
    check(
        good >= 18 && dev < 1e-9,
        format!("{good}/20 seeds within 2 px; max similarity deviation {dev:.2e}"),
    )
}

fn cpw_sanity() -> Outcome {
    let dims = (320, 240);
    let h = Homography::similarity(1.02, 0.03, 40.0, 12.0).unwrap();
    let samples = |flow: Point| -> Vec<FlowSample> {
        let mut v = Vec::new();
        for y in (0..dims.1).step_by(4) {
            for x in (0..dims.0).step_by(4) {
                let at = h.apply(Point::new(x as f64 + 0.5, y as f64 + 0.5)).unwrap();
                v.push(FlowSample { at, flow });
            }
        }
        v
    };
    let cfg = MeshConfig::default();
    let m = cpw_refine(&h, dims, &samples(Point::new(2.0, 0.0)), &cfg).unwrap();
    let err = m
        .displacements()
        .iter()
        .map(|d| (d.x - 2.0).abs().max(d.y.abs()))
        .fold(0.0, f64::max);

    let zero = cpw_refine(&h, dims, &samples(Point::default()), &cfg).unwrap();
    let src = Raster::from_fn(dims.0, dims.1, 3, |x, y, c| ((x * 3 + y * 5 + c * 40) % 256) as f32).unwrap();
    let canvas = (400, 300);
    let plain = warp_image(&src, &h, None, canvas).unwrap();
    let meshed = warp_image(&src, &h, Some(&zero), canvas).unwrap();
    let identical = plain == meshed;
    check(
        err <= 1e-6 && identical,
        format!("uniform-flow displacement error {err:.2e}; zero-flow warp identical: {identical}"),
    )
}

fn poisson_blending() -> Outcome {
    let cfg = BlendConfig::default();
    let (w, h) = (64, 40);
    let split = |w: usize, h: usize, at: usize| {
        let labels = (0..w * h)
            .map(|i| Label::Source(if i % w < at { 0 } else { 1 }))
            .collect();
        LabelField::new(w, h, labels).unwrap()
    };

    let img = Raster::from_fn(w, h, 3, |x, y, c| (60.0 + 40.0 * ((x as f64) * 0.2 + c as f64).sin() + y as f64) as f32).unwrap();
    let sources = vec![img.clone(), img.clone()];
    let labeling = split(w, h, 32);
    let comp = composite(&labeling, &sources).unwrap();
    let (out, s1) = poisson_blend(&comp, &labeling, &sources, &cfg).unwrap();
    let correction = out
        .data()
        .iter()
        .zip(img.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);

    let (w2, h2) = (60, 20);
    let a = Raster::filled(w2, h2, 1, 10.0).unwrap();
    let b = Raster::filled(w2, h2, 1, 30.0).unwrap();
    let sources = vec![a, b];
    let labeling = split(w2, h2, 30);
    let comp = composite(&labeling, &sources).unwrap();
    let (out, s2) = poisson_blend(&comp, &labeling, &sources, &cfg).unwrap();
    let step = (0..h2)
        .map(|y| (out.get(30, y, 0) - out.get(29, y, 0)).abs())
        .fold(0.0f32, f32::max);
    let residual = s1.relative_residual.max(s2.relative_residual);
    check(
        correction < 1e-4 && step < 10.0 && residual < 1e-6,
        format!("identical-source correction {correction:.2e}; seam step {step:.3} (gap 20); residual {residual:.2e}"),
    )
}

fn ms_ssim_checks() -> Outcome {
    let cfg = MsSsimConfig::default();
    let pairs = common::reference_pairs();
    let mut self_err = 0.0f64;
    let mut ref_err = 0.0f64;
    for (_, a, b, expect) in &pairs {
        self_err = self_err.max((ms_ssim(a, a, &cfg).unwrap() - 1.0).abs());
        ref_err = ref_err.max((ms_ssim(a, b, &cfg).unwrap() - expect).abs());
    }
    let base = Raster::from_fn(192, 192, 1, |x, y, _| {
        (128.0 + 50.0 * ((x as f64) * 0.09).sin() * ((y as f64) * 0.07).cos() + ((x / 6 + y / 6) % 3) as f64 * 10.0) as f32
    })
    .unwrap();
    let mut violations = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..192 * 192).map(|_| gaussian(&mut rng)).collect();
        let mut prev = f64::INFINITY;
        for sigma in [2.0, 5.0, 10.0, 20.0, 40.0] {
            let noisy = Raster::from_fn(192, 192, 1, |x, y, _| {
                (base.get(x, y, 0) as f64 + sigma * z[y * 192 + x]).clamp(0.0, 255.0) as f32
            })
            .unwrap();
            let s = ms_ssim(&base, &noisy, &cfg).unwrap();
            if s >= prev {
                violations += 1;
            }
            prev = s;
        }
    }
    check(
        self_err <= 1e-9 && ref_err <= 1e-4 && violations == 0,
        format!("self error {self_err:.1e}; reference error {ref_err:.2e}; {violations} monotonicity violations"),
    )
}

fn evaluation_counts() -> Outcome {
    let world = |x: usize, y: usize| ((x as u64 * 2654435761) ^ (y as u64 * 40503)) % 200 + 20;
    let world = Raster::from_fn(180, 120, 1, |x, y, _| world(x / 2, y / 2) as f32).unwrap();
    let inputs: Vec<Raster> = (0..2).map(|i| world.crop(20 * i, 0, 160, 120).unwrap()).collect();
    let boxes = [(40usize, 30usize), (110, 45)];
    let obj = |src: usize, x: usize, y: usize| {
        DetectedObject::new(src, "person", 0.9, BBox::new(x as f64, y as f64, 20.0, 40.0), ObjectMask::rect(x, y, 20, 40).unwrap())
            .unwrap()
    };
    let mut matches = vec![geometric_matches(&Homography::translation(-20.0, 0.0), (160, 120), (160, 120), 2, (0, 1))];
    for i in 0..2 {
        matches.push(geometric_matches(&Homography::translation(20.0 * i as f64, 0.0), (160, 120), (180, 120), 2, (i, 2)));
    }
    let mut deltas = Vec::new();
    for present in [vec![0], vec![], vec![1], vec![0, 1]] {
        let objects = vec![
            boxes.iter().map(|&(x, y)| obj(0, x, y)).collect(),
            boxes.iter().map(|&(x, y)| obj(1, x - 20, y)).collect(),
            present.iter().map(|&k: &usize| obj(2, boxes[k].0, boxes[k].1)).collect(),
        ];
        let det = DetectionSet {
            objects,
            extras: Vec::new(),
        };
        let r = evaluate(&world, &inputs, &det, &matches, &StitchConfig::default()).unwrap();
        deltas.push(r.all.delta);
    }
    check(deltas == [-1, -2, -1, 0], format!("deltas {deltas:?}"))
}

fn determinism() -> Outcome {
    let scene = walking_scene(11, SceneLayout::default()).unwrap();
    let dets = DetectionSet {
        objects: scene.detections.clone(),
        extras: Vec::new(),
    };
    let cfg = StitchConfig {
        seed: 5,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = |k: usize| {
        let out = stitch(&scene.images, &dets, &scene.matches, &[], &cfg).unwrap();
        let path = dir.path().join(format!("labels{k}.png"));
        write_label_map(&out.labeling, &path).unwrap();
        (std::fs::read(path).unwrap(), serde_json::to_vec_pretty(&out.report).unwrap())
    };
    let (a, b) = (run(0), run(1));
    check(
        a.0 == b.0 && a.1 == b.1,
        format!("label maps equal: {}, reports equal: {}", a.0 == b.0, a.1 == b.1),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("oracle equivalence", oracle_equivalence),
        ("expansion exactness", expansion_exactness),
        ("qpbo persistence", qpbo_persistence),
        ("occlusion arithmetic", occlusion_arithmetic),
        ("duplication end-to-end", duplication_end_to_end),
        ("no-object reversion", no_object_reversion),
        ("registration recovery", registration_recovery),
        ("mesh refinement sanity", cpw_sanity),
        ("poisson blending", poisson_blending),
        ("ms-ssim", ms_ssim_checks),
        ("evaluation counts", evaluation_counts),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
