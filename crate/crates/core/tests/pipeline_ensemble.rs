use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vssdet::ensemble::{ensemble_union, Source, Tag};
use vssdet::metrics::lesion_match;
use vssdet::patching::{stitch_predictions, tile_origins, tile_volume, Cube, SegmentSpec};
use vssdet::phantom::{generate_corpus, PhantomSpec, TimepointSelection};
use vssdet::pipeline::{
    ensemble_corpus, evaluate_corpus, review_queue, EvalConfig, OraclePredictor, ZeroPredictor,
};
use vssdet::volume::{MaskVolume, Volume, VolumeKind, VolumeMeta};

fn corpus() -> Vec<vssdet::phantom::LongitudinalStudy> {
    generate_corpus(
        &PhantomSpec {
            seed: 3,
            ..PhantomSpec::default()
        },
        3,
    )
    .unwrap()
}

#[test]
fn oracle_and_zero_predictors_bound_the_metrics() {
    let studies = corpus();
    let config = EvalConfig::default();
    let oracle = evaluate_corpus(&OraclePredictor, &studies, &config).unwrap();
    assert_eq!(oracle.lesion.sensitivity, 1.0);
    assert_eq!(oracle.lesion.precision, 1.0);
    assert_eq!(oracle.lesion.fp, 0);
    assert_eq!(oracle.lesion.mdsc, Some(1.0));
    assert_eq!(oracle.subvolume.fp + oracle.subvolume.fn_, 0);

    let zero = evaluate_corpus(&ZeroPredictor, &studies, &config).unwrap();
    assert_eq!(zero.lesion.sensitivity, 0.0);
    assert_eq!(zero.lesion.fp, 0);
    assert_eq!(zero.lesion.mdsc, None);
    assert_eq!(zero.per_timepoint.len(), 6);
    assert_eq!(zero.per_patient.len(), 3);
}

#[test]
fn identical_members_give_no_candidates() {
    let studies = corpus();
    let sel = TimepointSelection::All;
    let out = ensemble_corpus(&OraclePredictor, &OraclePredictor, &studies, sel, 0.5).unwrap();
    let q = review_queue(&out, &studies, 0.5);
    assert_eq!(q.total_candidates, 0);
    assert!(q.total_confirmed > 0);

    let out = ensemble_corpus(&OraclePredictor, &ZeroPredictor, &studies, sel, 0.5).unwrap();
    let q = review_queue(&out, &studies, 0.5);
    assert_eq!(q.total_confirmed, 0);
    assert!(q.entries.iter().flat_map(|e| &e.candidates).all(|c| c.source == Source::Sens));
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> MaskVolume {
    let p = rng.gen_range(0.01..0.2);
    MaskVolume::from_fn([n, n, n], |_, _, _| rng.gen_bool(p))
}

proptest! {
    #[test]
    fn union_partitions_and_dominates(seed in any::<u64>(), n in 4usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, r) = (random_mask(&mut rng, n), random_mask(&mut rng, n), random_mask(&mut rng, n));
        let ann = ensemble_union(&a, &b).unwrap();
        prop_assert!(ann.validate(&a, &b).is_ok());
        prop_assert_eq!(ann.n_confirmed() + ann.n_candidate(), ann.components.len());
        let both = ann.tag_mask(Tag::Confirmed).union(&ann.tag_mask(Tag::Candidate)).unwrap();
        prop_assert_eq!(both.data(), ann.mask.data());
        let su = lesion_match(&ann.mask, &r).unwrap().tp_lesions.len();
        prop_assert!(su >= lesion_match(&a, &r).unwrap().tp_lesions.len());
        prop_assert!(su >= lesion_match(&b, &r).unwrap().tp_lesions.len());
        // Every confirmed component overlaps the specificity member.
        for c in ann.with_tag(Tag::Confirmed) {
            prop_assert!(c.voxels.iter().any(|&v| b.is_set(v)));
        }
    }

    #[test]
    fn tiles_stitch_back_to_the_volume(nx in 20usize..40, ny in 20usize..40, nz in 20usize..40) {
        let dims = [nx, ny, nz];
        let data: Vec<f32> = (0..nx * ny * nz).map(|i| (i % 97) as f32 / 97.0).collect();
        let v = Volume::new(dims, 1.0, data, VolumeMeta::anonymous(VolumeKind::Probability)).unwrap();
        let spec = SegmentSpec {
            main_size: 19,
            n_conv_layers: 5,
            infer_size: 29,
            lowres_factors: vec![3],
            tumor_fraction: 0.5,
        };
        let tiling = tile_volume(&v, None, &spec).unwrap();
        let o = tiling.output_size;
        // The centre crop of each input tile is exactly its output region.
        let outputs: Vec<Cube<f32>> = tiling
            .tiles
            .iter()
            .map(|t| t.main_patch.center_crop(o).unwrap())
            .collect();
        let back = stitch_predictions(&outputs, &tiling.placement, dims).unwrap();
        prop_assert_eq!(back.data(), v.data());
        for a in 0..3 {
            let origins = tile_origins(dims[a], o);
            prop_assert_eq!(*origins.last().unwrap() + o, dims[a]);
        }
    }
}
