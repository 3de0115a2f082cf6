use rrsitr::data::{inject_noise, SyntheticConfig};
use rrsitr::trainer::{encode_heads, initial_heads, read_heads, write_heads, WEIGHT_BINS};
use rrsitr::{ablate, train, Dataset, Error, Hyper, NoiseSpec, TrainOptions, Variant};

fn world(n: usize, rho: f64, seed: u64) -> (Dataset, Dataset) {
    let cfg = SyntheticConfig {
        n_pairs: n,
        dim: 16,
        seed,
        ..SyntheticConfig::default()
    };
    let (train, val, _) = cfg.generate_splits(100, 0).unwrap();
    (inject_noise(&train, &NoiseSpec { rho, seed }).unwrap(), val)
}

fn short(epochs: usize) -> Hyper {
    Hyper {
        epochs,
        batch_size: 50,
        warmup_steps: 4,
        ..Hyper::default()
    }
}

#[test]
fn zero_epochs_returns_initial_heads() {
    let (ds, val) = world(200, 0.2, 1);
    let (heads, log) = train(&ds, Some(&val), &short(0), &TrainOptions::default()).unwrap();
    assert_eq!(heads, initial_heads(16, 16, 0));
    assert!(log.records.is_empty());
    assert_eq!(log.best_epoch, 0);
}

#[test]
fn same_seed_gives_identical_runs() {
    let (ds, val) = world(200, 0.4, 2);
    let opts = TrainOptions {
        trace_epochs: vec![1, 3],
        ..TrainOptions::default()
    };
    let (h1, l1) = train(&ds, Some(&val), &short(3), &opts).unwrap();
    let (h2, l2) = train(&ds, Some(&val), &short(3), &opts).unwrap();
    assert_eq!(encode_heads(&h1), encode_heads(&h2));
    assert_eq!(l1, l2);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    l1.write_jsonl(&mut a).unwrap();
    l2.write_jsonl(&mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(l1.traces.keys().copied().collect::<Vec<_>>(), vec![1, 3]);

    let other = Hyper { seed: 9, ..short(3) };
    let (h3, _) = train(&ds, Some(&val), &other, &opts).unwrap();
    assert_ne!(h1, h3);
}

#[test]
fn one_record_per_epoch() {
    let (ds, _) = world(210, 0.2, 3);
    let (_, log) = train(&ds, None, &short(4), &TrainOptions::default()).unwrap();
    let epochs: Vec<usize> = log.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert_eq!(log.best_epoch, 4);
    for r in &log.records {
        // 210 pairs in batches of 50: four full batches and a tail of 10.
        assert_eq!(r.steps, 5);
        assert_eq!(r.clean + r.ambiguous + r.noisy, 210);
        assert_eq!(r.weight_histogram.iter().sum::<usize>(), 210);
        assert!(r.val_mr.is_none() && r.wall_clock_s.is_none());
    }
    assert_eq!(log.final_pairs.len(), 210);
}

#[test]
fn training_lowers_the_objective() {
    let cfg = SyntheticConfig {
        n_pairs: 1000,
        dim: 32,
        seed: 4,
        ..SyntheticConfig::default()
    };
    let ds = inject_noise(&cfg.generate().unwrap(), &NoiseSpec { rho: 0.4, seed: 4 }).unwrap();
    let hyper = Hyper {
        warmup_steps: 10,
        ..Hyper::default()
    };
    let (_, log) = train(&ds, None, &hyper, &TrainOptions::default()).unwrap();
    let first = log.records.first().unwrap().l_overall;
    let last = log.records.last().unwrap().l_overall;
    assert!(last < first, "L_overall went from {first} to {last}");
}

#[test]
fn no_spl_weights_every_pair_one() {
    let (ds, _) = world(150, 0.4, 5);
    let opts = TrainOptions {
        variant: Variant::NoSpl,
        trace_epochs: vec![1, 2, 3],
        ..TrainOptions::default()
    };
    let (_, log) = train(&ds, None, &short(3), &opts).unwrap();
    for r in &log.records {
        assert_eq!(r.mean_weight, 1.0);
        assert_eq!(r.weight_histogram[WEIGHT_BINS - 1], 150);
    }
    assert!(log.traces.values().flatten().all(|row| row.weight == 1.0));
}

#[test]
fn full_ablation_is_plain_training() {
    let (ds, val) = world(120, 0.2, 6);
    let a = ablate(&ds, Some(&val), &short(2), Variant::Full).unwrap();
    let b = train(&ds, Some(&val), &short(2), &TrainOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn noisy_validation_set_is_refused() {
    let (ds, _) = world(120, 0.2, 7);
    let err = train(&ds, Some(&ds), &short(1), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn checkpoint_round_trips_through_disk() {
    let (ds, _) = world(120, 0.2, 8);
    let (heads, _) = train(&ds, None, &short(1), &TrainOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heads.rrsp");
    write_heads(&path, &heads).unwrap();
    assert_eq!(read_heads(&path).unwrap(), heads);
}
