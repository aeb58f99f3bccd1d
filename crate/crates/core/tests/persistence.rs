use std::fs;

use vssdet::io::{encode_volume, load_corpus, read_mask, read_volume, write_corpus, write_volume, CorpusManifest};
use vssdet::model::{read_checkpoint, write_checkpoint, ModelCheckpoint, ModelConfig, Network, PriorMode, TrainingFingerprint};
use vssdet::phantom::{generate_corpus, PhantomSpec};
use vssdet::volume::{Volume, VolumeKind, VolumeMeta};
use vssdet::Error;

fn small_spec() -> PhantomSpec {
    PhantomSpec {
        grid_dims: [32, 32, 32],
        n_lesions: 2,
        lesion_radius_range_vox: [1.0, 2.0],
        n_vessels: 1,
        ..PhantomSpec::default()
    }
}

#[test]
fn corpus_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let studies = generate_corpus(&small_spec(), 2).unwrap();
    let manifest = write_corpus(&studies, dir.path()).unwrap();
    let loaded = load_corpus(&manifest).unwrap();
    assert_eq!(loaded.len(), 2);
    for (a, b) in studies.iter().zip(&loaded) {
        assert_eq!(a.patient_id, b.patient_id);
        for (s, t) in a.timepoints.iter().zip(&b.timepoints) {
            assert_eq!(s.image, t.image);
            assert_eq!(s.reference_mask, t.reference_mask);
            assert_eq!(s.lesion_records, t.lesion_records);
        }
    }
}

#[test]
fn manifest_with_wrong_prior_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let studies = generate_corpus(&small_spec(), 1).unwrap();
    let path = write_corpus(&studies, dir.path()).unwrap();
    let mut m = CorpusManifest::read(&path).unwrap();
    m.patients[0].timepoints[0].has_prior = true;
    m.write(&path).unwrap();
    assert!(matches!(load_corpus(&path), Err(Error::Manifest(_))));
}

#[test]
fn vxg_errors_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::new([4, 4, 4], 1.0, vec![0.5; 64], VolumeMeta::new("p", 0, VolumeKind::Image)).unwrap();
    let bytes = encode_volume(&v).unwrap();

    let bad = dir.path().join("bad.vxg");
    fs::write(&bad, b"NOPE0000").unwrap();
    assert!(matches!(read_volume(&bad), Err(Error::BadMagic { .. })));

    let short = dir.path().join("short.vxg");
    fs::write(&short, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_volume(&short), Err(Error::Truncated { .. })));

    let good = dir.path().join("good.vxg");
    write_volume(&v, &good).unwrap();
    assert!(matches!(read_mask(&good), Err(Error::KindMismatch { .. })));
    assert_eq!(read_volume(&good).unwrap(), v);

    let missing = dir.path().join("missing.vxg");
    assert!(matches!(read_volume(&missing), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig {
        prior_mode: PriorMode::Path,
        ..ModelConfig::desk()
    };
    let net = Network::new(config).unwrap();
    let fp = TrainingFingerprint {
        loss: "jvss".into(),
        alpha: Some(0.995),
        epsilon: Some(1e-5),
        epochs: 3,
        seed: 9,
    };
    let ckpt = ModelCheckpoint::from_network(&net, fp);
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), ckpt);

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::Truncated { .. })));
    fs::write(&path, b"garbage!garbage!").unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::BadMagic { .. })));
}
