mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use livesketch_core::geometry::{Plane2, Screen2};
use livesketch_core::sketch::shoelace;

use common::{random_convex_polygon, random_pose, triangulated_area};

#[test]
fn screen_plane_screen_round_trip_over_random_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let (cam, plane) = random_pose(&mut rng);
        let px = Screen2::new(
            rand::Rng::gen_range(&mut rng, 0.0..f64::from(cam.width)),
            rand::Rng::gen_range(&mut rng, 0.0..f64::from(cam.height)),
        );
        let Ok(hit) = cam.ray_cast_to_plane(&plane, px) else { continue };
        assert!(plane.signed_distance(&hit).abs() < 1e-9);
        let back = cam.project_to_screen(&hit).unwrap();
        worst = worst.max(back.distance(&px));
        checked += 1;
    }
    assert!(worst <= 1e-6, "worst round-trip error {worst} px");
}

#[test]
fn plane_screen_plane_round_trip_over_random_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let (cam, plane) = random_pose(&mut rng);
        let q = Plane2::new(rand::Rng::gen_range(&mut rng, -0.1..0.1), rand::Rng::gen_range(&mut rng, -0.1..0.1));
        let p = plane.world_of(q);
        let px = cam.project_to_screen(&p).unwrap();
        let back = cam.ray_cast_to_plane(&plane, px).unwrap();
        assert!((back - p).norm() < 1e-9, "{:?} vs {:?}", back, p);
    }
}

#[test]
fn shoelace_matches_triangulation_on_convex_polygons() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let poly = random_convex_polygon(&mut rng);
        let pts: Vec<Plane2> = poly.iter().map(|&(a, b)| Plane2::new(a, b)).collect();
        let got = shoelace(&pts);
        let want = triangulated_area(&poly);
        assert!(got > 0.0, "counter-clockwise input gives positive area");
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }
}

proptest! {
    #[test]
    fn shoelace_flips_sign_when_reversed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<Plane2> = random_convex_polygon(&mut rng).into_iter().map(|(a, b)| Plane2::new(a, b)).collect();
        let forward = shoelace(&pts);
        pts.reverse();
        prop_assert!((forward + shoelace(&pts)).abs() < 1e-12 * forward.abs().max(1.0));
    }

    #[test]
    fn shoelace_ignores_translation_and_rotation_of_start(seed in any::<u64>(), dx in -10.0..10.0f64, dy in -10.0..10.0f64, k in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Plane2> = random_convex_polygon(&mut rng).into_iter().map(|(a, b)| Plane2::new(a, b)).collect();
        let base = shoelace(&pts);
        let mut moved: Vec<Plane2> = pts.iter().map(|p| Plane2::new(p.a + dx, p.b + dy)).collect();
        let n = moved.len();
        moved.rotate_left(k % n);
        prop_assert!((shoelace(&moved) - base).abs() < 1e-9);
    }

    #[test]
    fn center_pixel_ray_is_the_optical_axis(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cam, _) = random_pose(&mut rng);
        let k = cam.intrinsics;
        let axis = cam.orientation * livesketch_core::geometry::World3::z();
        prop_assert!((cam.ray_direction(Screen2::new(k.cx, k.cy)) - axis).norm() < 1e-12);
    }
}
