use isrf_core::grid::Vec3;
use isrf_wasm::Viewer;

fn sphere_pixel(v: &Viewer) -> [i32; 2] {
    let (u, w) = v.camera().project(&Vec3::new(-0.42, 0.05, 0.0)).expect("sphere is in view");
    [u as i32, w as i32]
}

#[test]
fn stroke_remove_and_undo() {
    let mut v = Viewer::new(20, 48).unwrap();
    let plain = v.frame().unwrap();
    assert_eq!(plain.len(), 48 * 48 * 4);
    assert!(plain.chunks_exact(4).any(|p| p[..3] != [255, 255, 255]));

    let [x, y] = sphere_pixel(&v);
    let selected = v.stroke(&[x - 1, y, x + 1, y], false).unwrap();
    assert!(selected > 0);
    let tinted = v.frame().unwrap();
    assert_ne!(tinted, plain);

    // the selection is gone from every view once removed
    v.set_removed(true);
    v.orbit(1.0, 0.2);
    let removed = v.frame().unwrap();
    v.set_removed(false);
    assert_ne!(removed, v.frame().unwrap());

    assert_eq!(v.undo().unwrap(), 0);
    assert!(v.undo().is_err());
    v.orbit(-1.0, -0.2);
    assert_eq!(v.frame().unwrap(), plain);
}

#[test]
fn malformed_strokes_are_rejected() {
    let mut v = Viewer::new(8, 16).unwrap();
    assert!(v.stroke(&[], false).is_err());
    assert!(v.stroke(&[1, 2, 3], false).is_err());
    assert_eq!(v.selected_voxels(), 0);
}

#[test]
fn pitch_is_clamped() {
    let mut v = Viewer::new(8, 16).unwrap();
    v.orbit(0.0, 10.0);
    assert!(v.camera().position().y < 3.2);
    v.frame().unwrap();
}
