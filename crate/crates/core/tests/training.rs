use spoofdet::archive::xresnet_to_file;
use spoofdet::features::lfb;
use spoofdet::nnet::train::dev_eer;
use spoofdet::nnet::{train, Example, TrainConfig, XResNet, XResNetConfig};
use spoofdet::toy::{render, ToyKind};
use spoofdet::Error;

fn tiny() -> XResNetConfig {
    XResNetConfig {
        width_multiplier: 1.0 / 32.0,
        embedding_dim: 8,
        ..Default::default()
    }
}

fn examples(n: usize, seed: u64) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let kind = if i % 2 == 0 {
                ToyKind::Pristine { source: i % 5 }
            } else {
                ToyKind::Spoof { source: i % 5, generator: i % 3 }
            };
            let audio = render(kind, 1.0, seed + i as u64).unwrap();
            Example { features: lfb(&audio).unwrap(), label: (i % 2) as u8 }
        })
        .collect()
}

fn cfg(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        patience,
        batch_size: 4,
        crop_frames: 64,
        ..Default::default()
    }
}

#[test]
fn patience_zero_stops_at_first_stale_epoch() {
    let (tr, dev) = (examples(12, 0), examples(6, 500));
    let model = XResNet::build(&tiny(), 1).unwrap();
    let (best, log) = train(model, &tr, &dev, &cfg(8, 0), 2).unwrap();
    let stale = log.epochs.iter().position(|e| !e.improved);
    match stale {
        Some(i) => assert_eq!(i + 1, log.epochs.len(), "training continued after a stale epoch"),
        None => assert_eq!(log.epochs.len(), 8),
    }
    assert!(log.epochs[0].improved);
    let best_log = &log.epochs[log.best_epoch - 1];
    assert_eq!(best_log.dev_eer, log.best_eer);
    // the returned network is the checkpoint from the best epoch
    assert_eq!(dev_eer(&best, &dev, 64).unwrap(), log.best_eer);
}

#[test]
fn seeded_runs_are_identical() {
    let (tr, dev) = (examples(8, 10), examples(4, 600));
    let run = |seed| {
        let model = XResNet::build(&tiny(), 3).unwrap();
        let (m, log) = train(model, &tr, &dev, &cfg(2, 5), seed).unwrap();
        (xresnet_to_file(&m).encode(), log.to_string())
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_ne!(a.0, run(8).0);
    assert!(a.1.starts_with("# seed 7\n"));
}

#[test]
fn rejects_unusable_sets() {
    let tr = examples(4, 20);
    let one_class: Vec<Example> = examples(4, 30).into_iter().filter(|e| e.label == 0).collect();
    let model = XResNet::build(&tiny(), 0).unwrap();
    assert!(matches!(train(model.clone(), &tr, &one_class, &cfg(1, 1), 0), Err(Error::InsufficientData(_))));
    assert!(matches!(train(model.clone(), &[], &tr, &cfg(1, 1), 0), Err(Error::InsufficientData(_))));
    let mut bad = cfg(1, 1);
    bad.batch_size = 0;
    assert!(matches!(train(model, &tr, &tr, &bad, 0), Err(Error::InvalidConfig(_))));
}
