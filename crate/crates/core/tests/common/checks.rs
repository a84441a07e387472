//! Oracle checks shared by the core test suite and the acceptance runner.
//! Each returns a one-line summary on success and the first violation
//! otherwise.

use std::time::Instant;

use contesta_core::cohort::{Cohort, Demographics, EpisodeRecord, Feature, Label};
use contesta_core::global_explain::{grid, pdp_1d, pdp_2d};
use contesta_core::local_explain::{gower_distance, nearest_neighbors, LatentRanges, LatentSpaceConfig, LatentWeights};
use contesta_core::models::{auc, fit_with_hypers, Algorithm, Classifier, ClassifierSpec, ForestParams, Hypers, SvmParams};
use contesta_core::signals::{epoch_features, DynamicFeatures, DEFAULT_MAX_LAG_S};
use contesta_core::synth::{generate_cohort, SynthConfig};
use contesta_core::vif::{prune_multicollinearity, vif, DEFAULT_VIF_THRESHOLD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub fn record(id: usize, d: Demographics, f: [f64; 7], label: Label) -> EpisodeRecord {
    EpisodeRecord {
        record_id: format!("r{id:03}"),
        demographics: d,
        features: DynamicFeatures::from_array(f),
        label,
    }
}

pub fn random_demographics(rng: &mut ChaCha8Rng) -> Demographics {
    Demographics {
        gen: super::gender(rng.random_bool(0.5)),
        ga: rng.random_range(24.0..32.0),
        bw: rng.random_range(535.0..1570.0),
        w: rng.random_range(525.0..1800.0),
        pna: rng.random_range(4.0..40.0),
    }
}

fn random_features(rng: &mut ChaCha8Rng, shift: f64) -> [f64; 7] {
    [
        rng.random_range(0.0..0.5) + shift,
        rng.random_range(0.7..1.6) + 3.0 * shift,
        rng.random_range(140.0..170.0),
        rng.random_range(90.0..98.0),
        rng.random_range(0.0..0.01),
        rng.random_range(0.0..0.01),
        rng.random_range(0.0..0.01),
    ]
}

/// Alternating labels with LosNec shifted up on xc and sa.
pub fn random_cohort(n: usize, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::LosNec } else { Label::Healthy };
            let f = random_features(&mut rng, if label == Label::LosNec { 0.1 } else { 0.0 });
            record(i, random_demographics(&mut rng), f, label)
        })
        .collect();
    Cohort::new(records).unwrap()
}

pub fn extraction() -> Check {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_per_class: 25,
        ..SynthConfig::with_seed(11)
    };
    let synth = ok(generate_cohort(&cfg))?;
    ensure!(synth.epochs.len() == 100, "expected 100 epochs, got {}", synth.epochs.len());
    let (mut worst_mean, mut worst_sa, mut worst_xc) = (0.0f64, 0.0f64, 0.0f64);
    for epoch in &synth.epochs {
        let id = format!("{}/{}/{}", epoch.infant_id(), epoch.date(), epoch.slot());
        let truth = synth
            .truth
            .records
            .iter()
            .find(|r| r.infant_id == epoch.infant_id() && r.date == epoch.date())
            .and_then(|r| r.epochs.iter().find(|e| e.slot == epoch.slot()))
            .ok_or(format!("{id}: no truth"))?;
        let f = ok(epoch_features(epoch, DEFAULT_MAX_LAG_S))?;
        let n = epoch.len() as f64;
        ensure!(f.hs == truth.hypoxia_s as f64 / n, "{id}: hs {} vs planted {}", f.hs, truth.hypoxia_s);
        ensure!(f.brs == truth.brady_s as f64 / n, "{id}: brs {} vs planted {}", f.brs, truth.brady_s);
        ensure!(f.ts == truth.tachy_s as f64 / n, "{id}: ts {} vs planted {}", f.ts, truth.tachy_s);
        worst_mean = worst_mean
            .max((f.hrm - super::mean(epoch.hr())).abs())
            .max((f.spo2m - super::mean(epoch.spo2())).abs());
        worst_sa = worst_sa.max((f.sa_hr - super::sample_asymmetry(epoch.hr())).abs());
        worst_xc = worst_xc.max((f.xc_hr_spo2 - super::max_xc(epoch.hr(), epoch.spo2(), DEFAULT_MAX_LAG_S)).abs());
    }
    ensure!(worst_mean <= 1e-12, "mean error {worst_mean:e}");
    ensure!(worst_sa <= 1e-9, "sa error {worst_sa:e}");
    ensure!(worst_xc <= 1e-9, "xc error {worst_xc:e}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!(
        "100 epochs; counts exact; max error mean {worst_mean:.1e}, sa {worst_sa:.1e}, xc {worst_xc:.1e}; {secs:.2} s"
    ))
}

pub fn gower_pairs() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cohort = random_cohort(60, 6);
    let ranges = LatentRanges::from_cohort(&cohort);
    let r = [ranges.ga, ranges.w, ranges.pna];
    let weights = LatentWeights::default();
    let wv = [weights.ga, weights.w, weights.pna, weights.gen];
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let a = random_demographics(&mut rng);
        let b = random_demographics(&mut rng);
        let d = ok(gower_distance(&a, &b, &ranges, &weights))?;
        worst = worst.max((d - super::gower(&a, &b, r, wv)).abs());
        ensure!(ok(gower_distance(&a, &a, &ranges, &weights))? == 0.0, "pair {i}: d(a,a) != 0");
        ensure!(d == ok(gower_distance(&b, &a, &ranges, &weights))?, "pair {i}: asymmetric");
        ensure!((0.0..=1.0).contains(&d), "pair {i}: {d} outside [0, 1]");
        let scaled = ok(gower_distance(&a, &b, &ranges, &weights.scaled(3.7)))?;
        ensure!((scaled - d).abs() <= 1e-12, "pair {i}: weight scaling changed distance");
    }
    ensure!(worst <= 1e-12, "max error {worst:e}");
    Ok(format!("1000 pairs; max error {worst:.1e}"))
}

pub fn neighbor_order() -> Check {
    let cohort = random_cohort(60, 8);
    let base = LatentSpaceConfig::new(vec![Feature::XcHrSpo2]);
    let ids = |cfg: &LatentSpaceConfig, q: &EpisodeRecord| -> Result<Vec<String>, String> {
        Ok(ok(nearest_neighbors(q, &cohort, cfg))?.iter().map(|n| n.record.record_id.clone()).collect())
    };
    for c in [0.25, 4.0, 1000.0] {
        let scaled = LatentSpaceConfig {
            weights: base.weights.scaled(c),
            ..base.clone()
        };
        for q in cohort.records() {
            ensure!(ids(&base, q)? == ids(&scaled, q)?, "order of {} changed at scale {c}", q.record_id);
        }
    }
    Ok(format!("{} queries x 3 scales", cohort.len()))
}

pub fn gower() -> Check {
    Ok(format!("{}; neighbour order invariant over {}", gower_pairs()?, neighbor_order()?))
}

fn small_models(train: &Cohort) -> Result<Vec<Box<dyn Classifier>>, String> {
    let rf = ok(fit_with_hypers(
        &ClassifierSpec::new(Algorithm::RandomForest, 3),
        Hypers::RandomForest(ForestParams {
            n_trees: 50,
            mtry: 3,
            min_leaf: 2,
        }),
        train,
    ))?;
    let svm = ok(fit_with_hypers(
        &ClassifierSpec {
            cv_folds: 3,
            ..ClassifierSpec::new(Algorithm::RbfSvm, 3)
        },
        Hypers::RbfSvm(SvmParams { c: 4.0, gamma: 0.1 }),
        train,
    ))?;
    Ok(vec![Box::new(rf), Box::new(svm)])
}

pub fn pdp() -> Check {
    let mut worst = 0.0f64;
    let mut curves = 0;
    for (n, points) in [(12, 5), (30, 21), (50, 51)] {
        let cohort = random_cohort(n, n as u64);
        for model in small_models(&cohort)? {
            let rows = cohort.matrix(model.features());
            let col = |f: Feature| model.features().iter().position(|&g| g == f).unwrap();
            for f in [Feature::XcHrSpo2, Feature::SaHr, Feature::Hrm] {
                let curve = ok(pdp_1d(model.as_ref(), f, &cohort, points))?;
                let g: Vec<Vec<f64>> = ok(grid(&cohort, f, points))?.into_iter().map(|v| vec![v]).collect();
                let oracle = super::pdp(model.as_ref(), &rows, &[col(f)], &g);
                ensure!(curve.pd.len() == oracle.len(), "grid length differs");
                for (a, b) in curve.pd.iter().zip(&oracle) {
                    worst = worst.max((a - b).abs());
                }
                curves += 1;
            }
            let gp = points.min(21);
            let surface = ok(pdp_2d(model.as_ref(), Feature::W, Feature::XcHrSpo2, &cohort, (gp, gp)))?;
            let gs = ok(grid(&cohort, Feature::W, gp))?;
            let gd = ok(grid(&cohort, Feature::XcHrSpo2, gp))?;
            let pairs: Vec<Vec<f64>> = gs.iter().flat_map(|&u| gd.iter().map(move |&v| vec![u, v])).collect();
            let oracle = super::pdp(model.as_ref(), &rows, &[col(Feature::W), col(Feature::XcHrSpo2)], &pairs);
            ensure!(surface.pd.iter().map(Vec::len).sum::<usize>() == oracle.len(), "surface size differs");
            for (a, b) in surface.pd.iter().flatten().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
            curves += 1;
        }
    }
    ensure!(worst <= 1e-12, "max error {worst:e}");
    Ok(format!("{curves} curves/surfaces (RF and SVM, n <= 50, grids <= 51); max error {worst:.1e}"))
}

pub fn auc_exact() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 300;
    for trial in 0..trials {
        let n = rng.random_range(2..=200);
        let levels = if trial % 3 == 0 { 4 } else { 1000 };
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.4) { Label::LosNec } else { Label::Healthy })
            .collect();
        labels[0] = Label::LosNec;
        labels[n - 1] = Label::Healthy;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let got = auc(&scores, &labels).ok_or("AUC undefined")?;
        let want = super::auc(&scores, &labels);
        ensure!(got == want, "trial {trial} (n = {n}): {got} vs {want}");
    }
    Ok(format!("{trials} test sets of 2..200 records, a third heavily tied; all exact"))
}

pub fn correlated_columns(cov: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let p = cov.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (cov[i][i] - s).sqrt() } else { (cov[i][j] - s) / l[j][j] };
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    (0..p)
        .map(|i| z.iter().map(|zr| (0..=i).map(|k| l[i][k] * zr[k]).sum::<f64>() + 10.0 * i as f64).collect())
        .collect()
}

pub fn vif_known_covariance() -> Check {
    let cov = vec![
        vec![1.0, 0.6, 0.3, 0.0, 0.1],
        vec![0.6, 1.0, 0.4, 0.2, 0.0],
        vec![0.3, 0.4, 1.0, 0.5, 0.2],
        vec![0.0, 0.2, 0.5, 1.0, 0.3],
        vec![0.1, 0.0, 0.2, 0.3, 1.0],
    ];
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let cols = correlated_columns(&cov, 200, seed);
        let got = vif(&cols).map_err(|e| format!("{e:?}"))?;
        let want = super::vif_normal_equations(&cols);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.max(1.0));
        }
    }
    ensure!(worst <= 1e-6, "max relative error {worst:e}");
    Ok(format!("20 draws of a 5-variable covariance; max error {worst:.1e}"))
}

/// 80 records whose birth weight is `bw_of(demographics, N(0,1) noise)`.
pub fn cohort_from(bw_of: impl Fn(&Demographics, f64) -> f64, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..80)
        .map(|i| {
            let mut d = random_demographics(&mut rng);
            let noise: f64 = StandardNormal.sample(&mut rng);
            d.bw = bw_of(&d, noise);
            let f = random_features(&mut rng, 0.0);
            record(i, d, f, if i % 2 == 0 { Label::LosNec } else { Label::Healthy })
        })
        .collect();
    Cohort::new(records).unwrap()
}

pub fn vif_exact_collinearity() -> Check {
    let cohort = cohort_from(|d, _| 0.95 * d.w, 1);
    let (pruned, log) = ok(prune_multicollinearity(&cohort, DEFAULT_VIF_THRESHOLD))?;
    let removed = log.removed();
    ensure!(removed.len() == 1, "removed {removed:?}");
    ensure!(removed[0] == Feature::Bw || removed[0] == Feature::W, "removed {removed:?}");
    ensure!(log.steps[0].vif.iter().any(|e| e.vif.is_infinite()), "no infinite VIF reported");
    let active = pruned.active_features();
    ensure!(active.contains(&Feature::Bw) ^ active.contains(&Feature::W), "pair not split");
    Ok(format!("bw = 0.95 w removes {}", removed[0]))
}

pub fn vif_near_linear() -> Check {
    let cohort = cohort_from(|d, e| 0.95 * d.w + 40.0 * (d.ga - 28.0) + 15.0 * e, 2);
    let (pruned, log) = ok(prune_multicollinearity(&cohort, DEFAULT_VIF_THRESHOLD))?;
    ensure!(log.removed() == vec![Feature::Bw], "removed {:?}", log.removed());
    ensure!(pruned.active_features().contains(&Feature::W), "w lost");
    Ok("near-linear bw removed alone".into())
}

pub fn vif_pruned_synthetic(seeds: std::ops::Range<u64>) -> Check {
    let mut max = 0.0f64;
    for seed in seeds.clone() {
        let cohort = ok(ok(generate_cohort(&SynthConfig::with_seed(seed)))?.to_cohort(DEFAULT_MAX_LAG_S))?;
        let (pruned, log) = ok(prune_multicollinearity(&cohort, DEFAULT_VIF_THRESHOLD))?;
        ensure!(
            log.final_vif.iter().all(|e| e.vif <= DEFAULT_VIF_THRESHOLD),
            "seed {seed}: final VIF above threshold"
        );
        let numeric: Vec<Feature> = pruned.active_features().iter().copied().filter(|f| f.is_numeric()).collect();
        let cols: Vec<Vec<f64>> = numeric
            .iter()
            .map(|f| pruned.records().iter().map(|r| f.value(r)).collect())
            .collect();
        let check = super::vif_normal_equations(&cols);
        let m = check.iter().copied().fold(0.0, f64::max);
        ensure!(m <= DEFAULT_VIF_THRESHOLD + 1e-6, "seed {seed}: recomputed max VIF {m}");
        max = max.max(m);
    }
    Ok(format!("synthetic seeds {seeds:?} pruned to max VIF {max:.3}"))
}

pub fn vif_all() -> Check {
    Ok([vif_known_covariance()?, vif_exact_collinearity()?, vif_near_linear()?, vif_pruned_synthetic(0..10)?].join("; "))
}
