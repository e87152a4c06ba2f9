use fecnet::coding::standard_code;
use fecnet::config::{SweepConfig, TrainConfig};
use fecnet::nn::UNetConfig;
use fecnet::pipeline::{ber_sweep, Checkpoint, Decoder, Trainer};
use fecnet::{CheckpointError, Error};

fn small() -> TrainConfig {
    TrainConfig {
        block_length: 12,
        net: UNetConfig::new(1, 3),
        batch_size: 5,
        num_samples: 12,
        epochs: 2,
        seed: 21,
        ..TrainConfig::desk(standard_code(2).unwrap())
    }
}

fn trained_small() -> Checkpoint {
    let mut t = Trainer::new(&small()).unwrap();
    t.run(|_| {}).unwrap();
    t.checkpoint()
}

#[test]
fn loss_falls_on_a_short_toy_run() {
    let cfg = TrainConfig { num_samples: 2_000, epochs: 5, seed: 3, ..TrainConfig::desk(standard_code(2).unwrap()) };
    let mut t = Trainer::new(&cfg).unwrap();
    let logs = t.run(|_| {}).unwrap();
    assert_eq!(logs.len(), 5);
    let (first, last) = (logs[0].mean_loss, logs[4].mean_loss);
    assert!(last < first, "first epoch {first}, last epoch {last}");
}

#[test]
fn checkpoint_file_round_trips_byte_for_byte() {
    let ckpt = trained_small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    assert_eq!(back.model().unwrap().params().len(), ckpt.params.len());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = trained_small().to_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..2]), Err(Error::Checkpoint(CheckpointError::BadMagic))));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 9, expected: 1 }))
    ));

    for cut in [10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(CheckpointError::Truncated(_)))),
            "cut at {cut}"
        );
    }

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Checkpoint(CheckpointError::Malformed(_)))));
}

#[test]
fn header_side_must_match_config() {
    let bytes = trained_small().to_bytes();
    let needle = b"grid.side = 4";
    let at = bytes.windows(needle.len()).position(|w| w == needle).expect("side in header");
    let mut bad = bytes.clone();
    bad[at + "grid.side = ".len()] = b'8';
    let err = Checkpoint::from_bytes(&bad).unwrap_err();
    assert!(matches!(err, Error::GridMismatch(_)), "{err:?}");
}

#[test]
fn resume_at_every_step_matches_uninterrupted_run() {
    let reference = trained_small().to_bytes();
    let total = Trainer::new(&small()).unwrap().total_steps();
    for stop in 0..=total {
        let mut t = Trainer::new(&small()).unwrap();
        for _ in 0..stop {
            t.train_step().unwrap();
        }
        let ckpt = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap();
        let mut resumed = Trainer::resume(&ckpt).unwrap();
        resumed.run(|_| {}).unwrap();
        assert_eq!(resumed.checkpoint().to_bytes(), reference, "stopped after {stop} steps");
    }
}

#[test]
fn coding_gain_over_uncoded() {
    let code = standard_code(2).unwrap();
    let cfg = SweepConfig { snr_list_db: vec![1.0, 3.0, 5.0], min_bits: 50_000, min_errors: 0, max_bits: 50_000 };
    let vit = ber_sweep(Decoder::Viterbi, &code, 100, &cfg, 8).unwrap();
    let unc = ber_sweep(Decoder::Uncoded, &code, 100, &cfg, 8).unwrap();
    for w in vit.windows(2) {
        assert!(w[1].report.ber() < w[0].report.ber());
    }
    for (v, u) in vit.iter().zip(&unc) {
        assert!(v.report.ber() < u.report.ber(), "{} dB: viterbi {} uncoded {}", v.snr_db, v.report.ber(), u.report.ber());
    }
}
