mod common;

use std::path::Path;

use common::{rng, spearman_untied, table_one_records};
use gliopath::dataio::synth::{manifest_path, render_slide, synth_corpus, CorpusSpec};
use gliopath::dataio::{
    decode_image, encode_png, extract_patches, load_manifest, slide_seed, tissue_mask, write_manifest, Codel, Grade,
    Idh, ImageRaster, PatchSet, Sex, SlideRecord, TissueMask, VAR_THRESH, WHITE_THRESH,
};
use gliopath::harness::{load_patch_sets, ExperimentConfig};
use gliopath::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn table_one_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    let records = table_one_records();
    write_manifest(&path, &records).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded.len(), 663);
    assert_eq!(loaded, records);
    let count = |f: &dyn Fn(&SlideRecord) -> bool| loaded.iter().filter(|r| f(r)).count();
    assert_eq!(count(&|r| r.idh == Some(Idh::Wildtype)), 333);
    assert_eq!(count(&|r| r.idh == Some(Idh::Mutant)), 330);
    assert_eq!(count(&|r| r.codel == Some(Codel::Codeleted)), 129);
    assert_eq!(count(&|r| r.codel == Some(Codel::NonCodeleted)), 201);
    assert_eq!(count(&|r| r.idh == Some(Idh::Wildtype) && r.grade == Grade::IV), 262);
}

#[test]
fn empty_manifest_and_taxonomy_error() {
    let dir = tempfile::tempdir().unwrap();
    let header = "slide_id,patient_id,image_path,idh,codel,grade,os_days,event,sex,age\n";
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, header).unwrap();
    assert!(load_manifest(&empty).unwrap().is_empty());

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        format!("{header}S1,P1,a.png,1,0,II,100,1,M,40\nS2,P2,b.png,0,1,III,200,0,F,50\n"),
    )
    .unwrap();
    match load_manifest(&bad) {
        Err(Error::Taxonomy { row }) => assert_eq!(row, 3),
        other => panic!("expected taxonomy error, got {other:?}"),
    }
}

fn record_strategy() -> impl Strategy<Value = SlideRecord> {
    (
        0u32..5000,
        prop::option::of(any::<bool>()),
        any::<bool>(),
        0usize..3,
        prop::option::of(0u32..100_000),
        prop::option::of(any::<bool>()),
        prop::option::of(any::<bool>()),
        prop::option::of(0u32..1000),
    )
        .prop_map(|(pid, idh, codel, g, os, event, male, age)| {
            let idh = idh.map(|m| if m { Idh::Mutant } else { Idh::Wildtype });
            let codel = (idh == Some(Idh::Mutant)).then_some(if codel { Codel::Codeleted } else { Codel::NonCodeleted });
            let os_days = os.map(|v| f64::from(v) / 10.0);
            SlideRecord {
                slide_id: String::new(),
                patient_id: format!("P{pid}"),
                image_path: format!("img/{pid}.png"),
                idh,
                codel,
                grade: [Grade::II, Grade::III, Grade::IV][g],
                os_days,
                event: event.map(u8::from).filter(|&e| e == 0 || os_days.is_some()),
                sex: male.map(|m| if m { Sex::M } else { Sex::F }),
                age_years: age.map(|a| f64::from(a) / 10.0),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn load_inverts_write(mut records in prop::collection::vec(record_strategy(), 0..40)) {
        for (i, r) in records.iter_mut().enumerate() {
            r.slide_id = format!("S-{i}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&path, &records).unwrap();
        prop_assert_eq!(load_manifest(&path).unwrap(), records);
    }

    #[test]
    fn raising_white_thresh_never_removes_tissue(seed in any::<u64>(), t in 0.05f64..0.95, dt in 0.0f64..0.5) {
        let mut r = rng(seed);
        let mut img = ImageRaster::filled(40, 32, [1.0; 3]);
        let base = r.random_range(0.3..1.0);
        for y in 0..32 {
            for x in 0..40 {
                let v = (base + r.random_range(-0.2..0.2f64)).clamp(0.0, 1.0);
                img.set(x, y, [v, v, v]);
            }
        }
        let lo = tissue_mask(&img, t, VAR_THRESH);
        let hi = tissue_mask(&img, (t + dt).min(0.999), VAR_THRESH);
        for y in 0..32 {
            for x in 0..40 {
                prop_assert!(!lo.get(x, y) || hi.get(x, y));
            }
        }
    }
}

#[test]
fn image_round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = render_slide(0.7, 96, 30.0, &mut rng(4));
    let path = dir.path().join("s.png");
    encode_png(&path, &img).unwrap();
    let back = decode_image(&path).unwrap();
    assert_eq!((back.width(), back.height()), (96, 96));
    let worst = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 255.0, "{worst}");
}

#[test]
fn white_and_dark_masks() {
    let white = ImageRaster::filled(32, 32, [1.0; 3]);
    assert!(tissue_mask(&white, WHITE_THRESH, VAR_THRESH).is_empty());
    let mut dark = ImageRaster::filled(32, 32, [0.0; 3]);
    let mut r = rng(2);
    for y in 0..32 {
        for x in 0..32 {
            let v = r.random_range(0.1..0.4);
            dark.set(x, y, [v, v * 0.8, v]);
        }
    }
    assert_eq!(tissue_mask(&dark, WHITE_THRESH, VAR_THRESH).count(), 32 * 32);
}

#[test]
fn disc_mask_matches_ground_truth() {
    let (img, disc) = render_slide(0.5, 512, 40.0, &mut rng(12));
    let mask = tissue_mask(&img, WHITE_THRESH, VAR_THRESH);
    let (mut hit, mut inside, mut leak, mut outside) = (0usize, 0usize, 0usize, 0usize);
    for y in 0..512 {
        for x in 0..512 {
            if disc.contains(x, y) {
                inside += 1;
                hit += usize::from(mask.get(x, y));
            } else {
                outside += 1;
                leak += usize::from(mask.get(x, y));
            }
        }
    }
    assert!(hit as f64 >= 0.95 * inside as f64, "{hit}/{inside}");
    assert!(leak as f64 <= 0.01 * outside as f64, "{leak}/{outside}");
}

fn slide_with_mask() -> (ImageRaster, TissueMask) {
    let (img, _) = render_slide(0.3, 160, 60.0, &mut rng(21));
    let mask = tissue_mask(&img, WHITE_THRESH, VAR_THRESH);
    (img, mask)
}

#[test]
fn patches_stay_inside_image_and_tissue() {
    let (img, mask) = slide_with_mask();
    let ps = extract_patches("S", &img, &mask, 100, 32, 5).unwrap();
    assert_eq!(ps.len(), 100);
    assert!(!ps.with_replacement);
    let mut distinct = ps.origins.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), 100);
    for (i, &(x, y)) in ps.origins.iter().enumerate() {
        let (x, y) = (x as usize, y as usize);
        assert!(x + 32 <= 160 && y + 32 <= 160);
        assert!(mask.get(x + 16, y + 16));
        // patch values are the image values at the origin
        assert_eq!(ps.patch(i)[0], img.get(0, x, y) as f32);
    }
    assert_eq!(extract_patches("S", &img, &mask, 100, 32, 5).unwrap(), ps);
    assert_ne!(extract_patches("S", &img, &mask, 100, 32, 6).unwrap().origins, ps.origins);
}

#[test]
fn single_valid_position_repeats() {
    let img = ImageRaster::filled(8, 8, [0.5; 3]);
    let mut m = vec![false; 64];
    m[4 * 8 + 4] = true;
    let mask = TissueMask::from_vec(8, 8, m);
    let ps = extract_patches("S", &img, &mask, 4, 8, 1).unwrap();
    assert!(ps.with_replacement);
    assert_eq!(ps.origins, vec![(0, 0); 4]);
    let empty = TissueMask::from_vec(8, 8, vec![false; 64]);
    match extract_patches("S-9", &img, &empty, 4, 8, 1) {
        Err(Error::NoTissue { slide_id }) => assert_eq!(slide_id, "S-9"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn patch_cache_is_lossless() {
    let (img, mask) = slide_with_mask();
    let ps = extract_patches("S", &img, &mask, 7, 16, slide_seed(3, "S")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pfps");
    ps.write_cache(&path).unwrap();
    assert_eq!(PatchSet::read_cache("S", &path).unwrap(), ps);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PFPS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert!(PatchSet::decode("S", &bytes[..bytes.len() - 1]).is_err());
}

fn small_corpus(dir: &Path, seed: u64, censor_prob: f64) -> Vec<gliopath::dataio::synth::SynthSlide> {
    let spec = CorpusSpec {
        slides_per_class: 30,
        image_size: 96,
        censor_prob,
        ..CorpusSpec::default()
    };
    synth_corpus(&spec, seed, dir).unwrap()
}

#[test]
fn corpus_is_balanced_and_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let slides = small_corpus(a.path(), 7, 0.2);
    small_corpus(b.path(), 7, 0.2);
    let records = load_manifest(&manifest_path(a.path())).unwrap();
    assert_eq!(records.len(), 60);
    assert_eq!(records.iter().filter(|r| r.idh == Some(Idh::Mutant)).count(), 30);
    for r in &records {
        let rel = Path::new(&r.image_path);
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
    }
    assert_eq!(
        std::fs::read(manifest_path(a.path())).unwrap(),
        std::fs::read(manifest_path(b.path())).unwrap()
    );
    let theta: Vec<f64> = slides.iter().map(|s| s.theta).collect();
    let os: Vec<f64> = slides.iter().map(|s| s.record.os_days.unwrap()).collect();
    assert!(spearman_untied(&theta, &os) <= -0.5);
}

#[test]
fn no_censoring_means_every_event_observed() {
    let dir = tempfile::tempdir().unwrap();
    let slides = small_corpus(dir.path(), 1, 0.0);
    assert!(slides.iter().all(|s| s.record.event == Some(1)));
}

#[test]
fn survival_law_gives_strong_negative_theta_correlation() {
    // 10,000 draws of the generator's own sampling law, censoring included
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        slides_per_class: 5000,
        image_size: 16,
        disc_radius: 0.3,
        ..CorpusSpec::default()
    };
    let slides = synth_corpus(&spec, 99, dir.path()).unwrap();
    assert_eq!(slides.len(), 10_000);
    let theta: Vec<f64> = slides.iter().map(|s| s.theta).collect();
    let os: Vec<f64> = slides.iter().map(|s| s.record.os_days.unwrap()).collect();
    let rho = spearman_untied(&theta, &os);
    assert!(rho <= -0.5, "{rho}");
}

#[test]
fn extraction_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), 3, 0.2);
    let records = load_manifest(&manifest_path(dir.path())).unwrap();
    let refs: Vec<&SlideRecord> = records.iter().take(12).collect();
    let mut cfg = ExperimentConfig {
        patches_per_slide: 20,
        patch_size: 32,
        workers: 1,
        ..ExperimentConfig::default()
    };
    let one = load_patch_sets(&refs, dir.path(), &cfg).unwrap();
    cfg.workers = 4;
    let four = load_patch_sets(&refs, dir.path(), &cfg).unwrap();
    assert_eq!(one, four);
    assert_eq!(one[3].slide_id, refs[3].slide_id);

    // a warm cache gives the same patches
    cfg.cache_dir = Some(dir.path().join("cache"));
    let cold = load_patch_sets(&refs, dir.path(), &cfg).unwrap();
    let warm = load_patch_sets(&refs, dir.path(), &cfg).unwrap();
    assert_eq!(cold, one);
    assert_eq!(warm, one);
}
