use vssdet::phantom::{generate_corpus, generate_study, rasterize_sphere, rasterize_tube, PhantomSpec, RegistrationJitter};
use vssdet::volume::{n_voxels, MaskVolume};

fn brute_sphere_count(c: [f64; 3], r: f64, n: usize) -> usize {
    let mut k = 0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                k += (d2 <= r * r) as usize;
            }
        }
    }
    k
}

#[test]
fn sphere_counts_match_brute_force() {
    for (c, r) in [([8.0, 8.0, 8.0], 2.0), ([0.0, 0.0, 0.0], 1.0), ([3.5, 7.2, 9.9], 3.3)] {
        let m = rasterize_sphere(c, r, [16, 16, 16]).unwrap();
        assert_eq!(m.count(), brute_sphere_count(c, r, 16), "center {c:?} r {r}");
    }
    assert_eq!(rasterize_sphere([8.0, 8.0, 8.0], 2.0, [16; 3]).unwrap().count(), 33);
    assert_eq!(rasterize_sphere([0.0, 0.0, 0.0], 1.0, [16; 3]).unwrap().count(), 4);
}

#[test]
fn zero_length_tube_is_a_sphere() {
    let c = [6.0, 7.0, 8.0];
    let tube = rasterize_tube(&[c, c], 2.5, [16; 3]).unwrap();
    assert_eq!(tube, rasterize_sphere(c, 2.5, [16; 3]).unwrap());
    assert!(rasterize_tube(&[c], 2.5, [16; 3]).is_err());
}

fn clean_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        seed,
        noise_sigma: 0.0,
        bias_amplitude: 0.0,
        n_vessels: 6,
        ..PhantomSpec::default()
    }
}

#[test]
fn noise_free_threshold_recovers_lesions_and_vessels() {
    for seed in 0..6 {
        let spec = clean_spec(seed);
        let study = generate_study(&spec).unwrap();
        let mid = ((spec.background_intensity + spec.lesion_intensity) / 2.0) as f32;
        for (t, tp) in study.timepoints.iter().enumerate() {
            let objects = tp.reference_mask.union(&study.vessel_mask(t)).unwrap();
            let thresholded = MaskVolume::new(
                tp.image.dims(),
                tp.image.data().iter().map(|&v| (v >= mid) as u8).collect(),
                tp.image.meta.clone(),
            )
            .unwrap();
            assert_eq!(thresholded.data(), objects.data(), "seed {seed} t {t}");
        }
    }
}

#[test]
fn masks_hold_only_lesion_voxels_and_grow() {
    let spec = PhantomSpec {
        n_lesions: 3,
        growth_factor_range: [1.5, 1.5],
        n_timepoints: 3,
        ..clean_spec(4)
    };
    for study in generate_corpus(&spec, 4).unwrap() {
        let mut previous: Option<Vec<(usize, f64)>> = None;
        for (t, tp) in study.timepoints.iter().enumerate() {
            let vessels = study.vessel_mask(t);
            let mut covered = MaskVolume::zeros(tp.reference_mask.dims());
            for l in &tp.lesion_records {
                covered.union_in_place(&rasterize_sphere(l.center_vox, l.radius_vox, covered.dims()).unwrap()).unwrap();
            }
            assert_eq!(covered.data(), tp.reference_mask.data());
            for i in 0..n_voxels(covered.dims()) {
                assert!(!(tp.reference_mask.is_set(i) && vessels.is_set(i)));
            }
            let radii: Vec<(usize, f64)> = tp.lesion_records.iter().map(|l| (l.id, l.radius_vox)).collect();
            if let Some(prev) = &previous {
                for (id, r) in prev {
                    let now = radii.iter().find(|(j, _)| j == id).expect("lesions persist").1;
                    assert!(now > *r);
                }
            }
            previous = Some(radii);
        }
    }
}

#[test]
fn vessels_are_static_without_jitter() {
    let spec = PhantomSpec {
        registration_jitter: RegistrationJitter {
            max_translation_vox: 0.0,
            max_rotation_deg: 0.0,
        },
        ..clean_spec(7)
    };
    let study = generate_study(&spec).unwrap();
    assert_eq!(study.vessel_mask(0), study.vessel_mask(1));
}

#[test]
fn corpus_is_deterministic_and_seeds_differ() {
    let spec = PhantomSpec::default();
    let a = generate_corpus(&spec, 2).unwrap();
    let b = generate_corpus(&spec, 2).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (s, t) in x.timepoints.iter().zip(&y.timepoints) {
            assert_eq!(s.image, t.image);
            assert_eq!(s.reference_mask, t.reference_mask);
        }
    }
    assert_ne!(a[0].timepoints[0].image, a[1].timepoints[0].image);
}
