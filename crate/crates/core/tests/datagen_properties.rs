use fcmpc::datagen::{self, collect, generate, lhs_sample, meta_path, DatagenConfig, Dataset, SampleBounds};
use fcmpc::PlantParams;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strata_hit(points: &[[f64; 3]], bounds: &SampleBounds) -> Vec<Vec<usize>> {
    let n = points.len();
    bounds
        .dims()
        .iter()
        .enumerate()
        .map(|(d, &(lo, hi))| {
            let mut hits = vec![0usize; n];
            for p in points {
                let k = (((p[d] - lo) / (hi - lo)) * n as f64).floor() as usize;
                hits[k.min(n - 1)] += 1;
            }
            hits
        })
        .collect()
}

#[test]
fn within_stratum_offsets_are_uniform() {
    // Pearson chi-square on the position inside each stratum, 10 bins,
    // 9 degrees of freedom: 21.67 is the 1% critical value.
    let bounds = SampleBounds::default();
    let n = 2000;
    let pts = lhs_sample(n, &bounds, &mut ChaCha8Rng::seed_from_u64(3));
    for (d, (lo, hi)) in bounds.dims().into_iter().enumerate() {
        let mut bins = [0usize; 10];
        for p in &pts {
            let pos = (p[d] - lo) / (hi - lo) * n as f64;
            let frac = pos - pos.floor();
            bins[((frac * 10.0) as usize).min(9)] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 21.67, "dimension {d}: chi-square {chi2} over {bins:?}");
    }
}

#[test]
fn dimensions_are_paired_independently() {
    // Correlation between dimensions should be near zero; with
    // n = 2000 its standard error is about 0.022.
    let n = 2000;
    let pts = lhs_sample(n, &SampleBounds::default(), &mut ChaCha8Rng::seed_from_u64(5));
    let mean = |d: usize| pts.iter().map(|p| p[d]).sum::<f64>() / n as f64;
    let corr = |a: usize, b: usize| {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = pts.iter().map(|p| (p[a] - ma) * (p[b] - mb)).sum();
        let va: f64 = pts.iter().map(|p| (p[a] - ma).powi(2)).sum();
        let vb: f64 = pts.iter().map(|p| (p[b] - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        assert!(corr(a, b).abs() < 0.1, "dims {a},{b}: {}", corr(a, b));
    }
}

#[test]
fn dataset_round_trips_through_files() {
    let cfg = DatagenConfig { samples: 40, ..DatagenConfig::default() };
    let data = generate(&PlantParams::default(), &cfg).unwrap();
    assert_eq!(data.records.len(), 40);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    data.save(&path).unwrap();
    assert!(meta_path(&path).exists());
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.meta, data.meta);
    // Values are printed with round-trip precision.
    assert_eq!(back.records, data.records);
    assert_eq!(back.to_csv_string(), data.to_csv_string());
}

#[test]
fn generation_is_seed_deterministic() {
    let cfg = DatagenConfig { samples: 30, ..DatagenConfig::default() };
    let params = PlantParams::default();
    let a = generate(&params, &cfg).unwrap();
    let b = generate(&params, &cfg).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    let c = generate(&params, &DatagenConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(a.to_csv_string(), c.to_csv_string());
}

#[test]
fn each_record_depends_only_on_its_own_point() {
    // Records come from per-sample random streams, so a prefix of the
    // sample list gives a prefix of the dataset.
    let cfg = DatagenConfig { samples: 12, ..DatagenConfig::default() };
    let params = PlantParams::default();
    let pts = lhs_sample(12, &cfg.bounds, &mut ChaCha8Rng::seed_from_u64(9));
    let all = collect(&params, &pts, &cfg).unwrap();
    let head = collect(&params, &pts[..5], &cfg).unwrap();
    assert_eq!(&all.records[..5], &head.records[..]);
}

#[test]
fn records_respect_the_sampling_box() {
    let cfg = DatagenConfig { samples: 50, ..DatagenConfig::default() };
    let data = generate(&PlantParams::default(), &cfg).unwrap();
    assert!(data.records.iter().all(|r| cfg.bounds.contains(&r.u)));
    let (train, val) = datagen::split(&data.records, 0.1, 1);
    assert_eq!(train.len() + val.len(), 50);
    assert_eq!(val.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_stratum_is_hit_once(n in 1usize..300, seed in any::<u64>()) {
        let bounds = SampleBounds::default();
        let pts = lhs_sample(n, &bounds, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(pts.len(), n);
        for hits in strata_hit(&pts, &bounds) {
            prop_assert!(hits.iter().all(|&h| h == 1));
        }
    }
}
