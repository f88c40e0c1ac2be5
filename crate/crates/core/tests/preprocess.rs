use gaborface::image::Image;
use gaborface::preprocess::{
    detect_eyes, ncc_match, normalize_geometry, rotate_image, rotate_point, synthetic_eye_template, template_size_for,
    EyePair, GeometryParams, Point,
};
use gaborface::synth::{noise_image, subject_image, synthetic_face};
use proptest::prelude::*;

fn face_160() -> (Image, Image) {
    let t = synthetic_eye_template(template_size_for(48.0));
    (synthetic_face(160, 160, (56, 70), (104, 70), &t), t)
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

#[test]
fn tilted_face_is_leveled() {
    let (face, t) = face_160();
    let center = Point::new(80.0, 80.0);
    let tilted = rotate_image(&face, 10f64.to_radians(), center);
    let eyes = detect_eyes(&tilted, &t, &t, 0.3).unwrap();
    let expected = rotate_point(Point::new(104.0, 70.0), 10f64.to_radians(), center);
    assert!(eyes.right.distance(&expected) < 1.5, "{eyes:?} vs {expected:?}");

    let out = normalize_geometry(&tilted, &eyes).unwrap();
    assert_eq!((out.width(), out.height()), (128, 128));
    let ed_out = 128.0 / 3.6;
    let t_out = synthetic_eye_template(template_size_for(ed_out));
    let again = detect_eyes(&out, &t_out, &t_out, 0.3).unwrap();
    assert!((again.left.y - again.right.y).abs() < 0.5, "{again:?}");
    let (cl, cr) = GeometryParams::for_eye_distance(eyes.distance()).canonical_eyes();
    assert!(again.left.distance(&cl) < 2.0 && again.right.distance(&cr) < 2.0, "{again:?}");
}

#[test]
fn normalization_is_idempotent_in_mean() {
    // eyes 36 px apart so the crop stays mostly inside the face oval
    let t = synthetic_eye_template(template_size_for(36.0));
    let face = synthetic_face(160, 160, (62, 66), (98, 66), &t);
    let eyes = detect_eyes(&face, &t, &t, 0.3).unwrap();
    let out1 = normalize_geometry(&face, &eyes).unwrap();
    let t_out = synthetic_eye_template(template_size_for(128.0 / 3.6));
    let eyes2 = detect_eyes(&out1, &t_out, &t_out, 0.3).unwrap();
    let out2 = normalize_geometry(&out1, &eyes2).unwrap();
    assert!((out1.mean() - out2.mean()).abs() < 0.02, "{} vs {}", out1.mean(), out2.mean());
}

fn smooth_scene() -> Image {
    // low-frequency content so that resampling error stays small
    let base = subject_image(3, 0, 48).resize_bilinear(192, 192);
    Image::from_fn(192, 192, |x, y| 0.5 * base.get(x, y) + 0.25 + 0.2 * ((x as f64) / 30.0).sin() * ((y as f64) / 40.0).cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rotation_equivariance(alpha in -0.35f64..0.35) {
        let img = smooth_scene();
        let (l, r) = (Point::new(76.0, 80.0), Point::new(116.0, 84.0));
        let base = normalize_geometry(&img, &EyePair::from_coords((l.x, l.y), (r.x, r.y)).unwrap()).unwrap();
        let c = Point::new(96.0, 96.0);
        let rimg = rotate_image(&img, alpha, c);
        let (rl, rr) = (rotate_point(l, alpha, c), rotate_point(r, alpha, c));
        let rot = normalize_geometry(&rimg, &EyePair::from_coords((rl.x, rl.y), (rr.x, rr.y)).unwrap()).unwrap();
        let d = mean_abs_diff(&base, &rot);
        prop_assert!(d < 0.03, "mean abs diff {}", d);
    }

    #[test]
    fn ncc_is_affine_invariant(seed in 0u64..1000, a in 0.05f64..0.9, b in 0.0f64..0.1) {
        let img = noise_image(24, 20, seed);
        let t = noise_image(5, 4, seed + 7);
        let scaled = Image::from_fn(24, 20, |x, y| a * img.get(x, y) + b);
        let m1 = ncc_match(&img, &t).unwrap();
        let m2 = ncc_match(&scaled, &t).unwrap();
        for (c1, c2) in m1.map.data.iter().zip(&m2.map.data) {
            prop_assert!((c1 - c2).abs() < 1e-6);
            prop_assert!(c1.abs() <= 1.0 + 1e-9);
        }
    }
}
