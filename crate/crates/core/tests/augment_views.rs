//! Statistical behaviour of the view augmentation and of the generator it feeds.

use lassl::augment::{two_views, AugmentPolicy, ViewStream};
use lassl::eval::{probe_multiclass, ProbeConfig};
use lassl::synthdata::{generate, GeneratorConfig};

const DRAWS: usize = 10_000;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn jitter_uncorrelated_across_slots() {
    // On a zero input with unit scale and no mask, a view is its jitter noise.
    let policy = AugmentPolicy { jitter_sigma: 1.0, mask_fraction: 0.0, scale_low: 1.0, scale_high: 1.0, seed: 9 };
    let x = [0.0; 3];
    let noise = |stream, epoch, slot, view| {
        let mut out = [0.0; 3];
        policy.view_into(&x, stream, epoch, slot, view, &mut out);
        out[0]
    };
    let slots = 0..DRAWS as u64;
    let pairs: [(&str, Vec<f64>, Vec<f64>); 4] = [
        (
            "adjacent slots",
            slots.clone().map(|s| noise(ViewStream::Train, 1, s, 0)).collect(),
            slots.clone().map(|s| noise(ViewStream::Train, 1, s + 1, 0)).collect(),
        ),
        (
            "two views of one slot",
            slots.clone().map(|s| noise(ViewStream::Train, 1, s, 0)).collect(),
            slots.clone().map(|s| noise(ViewStream::Train, 1, s, 1)).collect(),
        ),
        (
            "consecutive epochs",
            slots.clone().map(|s| noise(ViewStream::Train, 1, s, 0)).collect(),
            slots.clone().map(|s| noise(ViewStream::Train, 2, s, 0)).collect(),
        ),
        (
            "sweep versus train",
            slots.clone().map(|s| noise(ViewStream::Sweep, 1, s, 0)).collect(),
            slots.clone().map(|s| noise(ViewStream::Train, 1, s, 0)).collect(),
        ),
    ];
    for (name, a, b) in &pairs {
        let r = pearson(a, b);
        assert!(r.abs() < 0.05, "{name}: correlation {r}");
    }
}

#[test]
fn views_are_deterministic() {
    let policy = AugmentPolicy { seed: 4, ..AugmentPolicy::default() };
    let x: Vec<f64> = (0..16).map(|i| i as f64 / 4.0).collect();
    assert_eq!(two_views(&x, &policy, 3, 7), two_views(&x, &policy, 3, 7));
    assert_ne!(two_views(&x, &policy, 3, 7), two_views(&x, &policy, 4, 7));
}

#[test]
fn default_views_are_similar_but_not_identical() {
    let data = generate(&GeneratorConfig { n: 2000, ..GeneratorConfig::default() }).unwrap();
    let policy = AugmentPolicy::default();
    let mean: f64 = (0..data.len())
        .map(|i| {
            let (a, b) = two_views(&data.features_f64(i), &policy, 1, i as u64);
            cosine(&a, &b)
        })
        .sum::<f64>()
        / data.len() as f64;
    println!("mean two-view cosine {mean:.4}");
    assert!((0.5..=0.95).contains(&mean), "mean cosine {mean}");
}

#[test]
fn confound_easier_than_target() {
    let config = GeneratorConfig { n: 3000, ..GeneratorConfig::default() };
    let classes = config.target.cardinality;
    for cfg in [config.clone(), config.balanced_split(3000, 1)] {
        let data = generate(&cfg).unwrap();
        let phi = data.feature_matrix();
        let probe = ProbeConfig { max_iter: 500, ..ProbeConfig::default() };
        let accuracy = |labels: &[usize]| {
            let p = probe_multiclass(&phi, labels, classes, &probe).unwrap();
            let pred = p.predict(&phi).unwrap();
            pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
        };
        let target = accuracy(&data.targets());
        let confound = accuracy(&data.confound_column(0).unwrap());
        println!("aligned ratio {}: confound {confound:.3}, target {target:.3}", cfg.confounds[0].aligned_ratio);
        assert!(confound > target);
    }
}
