use gaborface::filter_selection::SelectionCriterion;
use gaborface::image::Image;
use gaborface::recognizer::{enroll, read_model, write_model, PipelineConfig, Sample, FORMAT_VERSION};
use gaborface::synth::subject_image;
use gaborface::{Error, Stage};

fn samples(subjects: u64, variants: std::ops::Range<u64>) -> Vec<Sample> {
    (0..subjects)
        .flat_map(|s| variants.clone().map(move |v| Sample::prenormalized(format!("s{s}"), subject_image(s, v, 128))))
        .collect()
}

fn config(k: usize) -> PipelineConfig {
    PipelineConfig {
        selection: SelectionCriterion::Count(k),
        ..PipelineConfig::default()
    }
}

fn rank1(model: &gaborface::recognizer::RecognizerModel, probes: &[Sample]) -> f64 {
    model.evaluate(probes).unwrap().rank1_rate
}

#[test]
fn two_by_two_gives_one_dimensional_templates() {
    let train = samples(2, 0..2);
    let model = enroll(&train, &config(25)).unwrap();
    assert_eq!(model.gallery.len(), 4);
    assert!(model.gallery.iter().all(|g| g.template.len() == 1));
    assert!(model.gallery.iter().all(|g| (g.template[0].abs() - 1.0).abs() < 1e-12));
    assert_eq!(model.n_filters(), 25);
}

#[test]
fn enrolled_image_identifies_itself_and_survives_gain() {
    let train = samples(4, 0..3);
    let model = enroll(&train, &config(25)).unwrap();
    for s in &train {
        let id = model.identify(s).unwrap();
        assert_eq!(id.label, s.label);
        assert!(id.distance < 1e-9, "{}", id.distance);
        assert_eq!(id.ranked.len(), train.len());
        let dimmer = Sample::prenormalized(s.label.clone(), Image::from_fn(128, 128, |x, y| 0.8 * s.image.get(x, y)));
        assert_eq!(model.identify(&dimmer).unwrap().label, s.label);
    }
    assert_eq!(rank1(&model, &train), 1.0);
}

#[test]
fn single_image_label_fails_at_subspace_stage() {
    let mut train = samples(2, 0..2);
    train.push(Sample::prenormalized("lonely", subject_image(9, 0, 128)));
    match enroll(&train, &config(25)) {
        Err(Error::Stage { stage: Stage::Subspace, source, .. }) => {
            assert!(matches!(*source, Error::TooFewSamples(_)))
        }
        other => panic!("expected subspace-stage error, got {other:?}"),
    }
    let one_label = samples(1, 0..3);
    assert!(matches!(enroll(&one_label, &config(25)), Err(Error::Stage { stage: Stage::Subspace, .. })));
}

#[test]
fn degenerate_and_empty_galleries() {
    let train = samples(2, 0..3);
    let mut model = enroll(&train, &config(10)).unwrap();
    model.retain_gallery(|l| l == "s0");
    let other = Sample::prenormalized("s1", subject_image(1, 7, 128));
    assert_eq!(model.identify(&other).unwrap().label, "s0");
    model.retain_gallery(|_| false);
    assert!(matches!(model.identify(&other).unwrap_err().root(), Error::EmptyGallery));
}

#[test]
fn unknown_subjects_and_failed_probes_score_zero() {
    let model = enroll(&samples(3, 0..3), &config(10)).unwrap();
    let strangers: Vec<Sample> = (10..13).map(|s| Sample::prenormalized(format!("x{s}"), subject_image(s, 0, 128))).collect();
    assert_eq!(rank1(&model, &strangers), 0.0);
    // a blank image needs detection and has no eyes: a miss, not an abort
    let blank = Sample::new("s0", Image::from_fn(128, 128, |_, _| 0.5));
    let report = model.evaluate(&[blank]).unwrap();
    assert_eq!((report.correct, report.total, report.failures.len()), (0, 1, 1));
}

#[test]
fn enrollment_is_deterministic_and_persists_bit_exactly() {
    let train = samples(5, 0..3);
    let a = enroll(&train, &config(25)).unwrap();
    let b = enroll(&train, &config(25)).unwrap();
    let mut bytes = Vec::new();
    write_model(&a, &mut bytes).unwrap();
    let c = read_model(&bytes).unwrap();
    let probes = samples(5, 3..7);
    assert_eq!(probes.len(), 20);
    for p in &probes {
        let ia = a.identify(p).unwrap();
        let ib = b.identify(p).unwrap();
        let ic = c.identify(p).unwrap();
        assert_eq!(ia.label, ib.label);
        assert_eq!(ia.distance.to_bits(), ib.distance.to_bits());
        assert_eq!(ia.label, ic.label);
        assert_eq!(ia.distance.to_bits(), ic.distance.to_bits());
        assert_eq!(ia.ranked, ic.ranked);
    }
    let mut again = Vec::new();
    write_model(&c, &mut again).unwrap();
    let first_diff = bytes.iter().zip(&again).position(|(x, y)| x != y);
    assert!(bytes.len() == again.len() && first_diff.is_none(), "re-serialization differs at byte {first_diff:?}");
}

#[test]
fn corrupted_and_future_models_are_rejected() {
    let model = enroll(&samples(2, 0..2), &config(5)).unwrap();
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    assert!(matches!(read_model(&corrupt), Err(Error::ChecksumMismatch { .. })));
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(read_model(&future), Err(Error::VersionMismatch(v)) if v == FORMAT_VERSION + 1));
    assert!(matches!(read_model(b"nope"), Err(Error::Serialization(_))));
}

#[test]
fn gallery_order_does_not_matter() {
    let train = samples(4, 0..3);
    let mut permuted = train.clone();
    permuted.reverse();
    permuted.swap(0, 5);
    let a = enroll(&train, &config(25)).unwrap();
    let b = enroll(&permuted, &config(25)).unwrap();
    for p in &samples(4, 3..6) {
        let (ia, ib) = (a.identify(p).unwrap(), b.identify(p).unwrap());
        assert_eq!(ia.label, ib.label);
        assert!((ia.distance - ib.distance).abs() < 1e-9, "{} vs {}", ia.distance, ib.distance);
    }
}

#[test]
fn compressed_bank_is_not_catastrophically_worse() {
    let train = samples(5, 0..3);
    let test = samples(5, 3..6);
    let full = rank1(&enroll(&train, &config(40)).unwrap(), &test);
    let small = rank1(&enroll(&train, &config(5)).unwrap(), &test);
    assert!(full >= small - 0.1, "k=40 {full} vs k=5 {small}");
}
