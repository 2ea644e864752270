use asa_core::simulator::checkpoint::{self, CheckpointError};
use asa_core::{ExperimentConfig, Method, Simulator};

fn sim() -> Simulator {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
[fleet]
n_devices = 6
[clustering]
n_min = 1
recluster_every = 3
tau_max = inf
sigma2_max = inf
[data]
n_samples = 600
classes = 3
dim = 8
[model]
hidden = [[4], [8], [16]]
[training]
lr0 = 0.1
batch_size = 16
[simulation]
rounds = 10
dropout_p = 0.2
"#,
    )
    .unwrap();
    Simulator::new(&cfg, Method::Asa).unwrap()
}

#[test]
fn save_then_restore_is_identity() {
    let s = sim();
    let (state, _) = s.run_until(s.initial_state().unwrap(), 3, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    checkpoint::save(&path, &state, s.config_hash()).unwrap();
    assert_eq!(checkpoint::restore(&path, s.config_hash()).unwrap(), state);
    assert!(!path.with_extension("tmp").exists());
}

#[test]
fn corruption_and_mismatch_are_detected() {
    let s = sim();
    let state = s.initial_state().unwrap();
    let bytes = checkpoint::encode(&state, 7);

    for i in [24, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[i] ^= 0x40;
        assert!(
            matches!(checkpoint::decode(&bad, 7), Err(CheckpointError::Checksum)),
            "byte {i}"
        );
    }
    assert!(matches!(
        checkpoint::decode(&bytes, 8),
        Err(CheckpointError::ConfigMismatch { expected: 8, found: 7 })
    ));
    assert!(matches!(
        checkpoint::decode(b"nope", 7),
        Err(CheckpointError::BadMagic | CheckpointError::Malformed(_))
    ));
    assert!(checkpoint::decode(&bytes[..bytes.len() - 3], 7).is_err());
}

#[test]
fn interrupted_run_resumes_exactly() {
    let s = sim();
    let (full, full_logs) = s.run_until(s.initial_state().unwrap(), 10, |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r5.ckpt");
    let (_, first) = s
        .run_until(s.initial_state().unwrap(), 5, |st, _| {
            Ok(checkpoint::save(&path, st, s.config_hash())?)
        })
        .unwrap();
    let fresh = sim();
    let restored = checkpoint::restore(&path, fresh.config_hash()).unwrap();
    assert_eq!(restored.round, 5);
    let (end, rest) = fresh.run_until(restored, 10, |_, _| Ok(())).unwrap();
    assert_eq!(end, full);
    assert_eq!([first, rest].concat(), full_logs);
}
