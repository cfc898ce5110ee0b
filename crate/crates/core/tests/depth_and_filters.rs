use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use sldepth_core::denoise::{apply, FilterConfig};
use sldepth_core::depth_image::{
    backproject_pixel, depth_map_to_disparity_map, disparity_map_to_depth_map, project,
};
use sldepth_core::{CameraModel, DepthMap, Pose};

fn depth_map(w: usize, h: usize) -> impl Strategy<Value = DepthMap> {
    prop::collection::vec(prop::option::weighted(0.85, 400.0f64..4000.0), w * h).prop_map(
        move |v| {
            let mut m = DepthMap::new(w, h);
            for (i, z) in v.into_iter().enumerate() {
                m.set(i % w, i / w, z);
            }
            m
        },
    )
}

fn configs() -> impl Strategy<Value = FilterConfig> {
    prop_oneof![
        (0.5f64..3.0).prop_map(FilterConfig::gaussian),
        (0.5f64..3.0, 1.0f64..200.0).prop_map(|(s, d)| FilterConfig::bilateral(s, d)),
        (0.5f64..3.0, 1e-6f64..1e-4).prop_map(|(s, k)| FilterConfig::adaptive(s, k)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filtered_values_are_convex_combinations_of_the_window(map in depth_map(14, 11), cfg in configs()) {
        let out = apply(&map, &cfg).unwrap();
        let r = cfg.radius as i64;
        for y in 0..11 {
            for x in 0..14 {
                prop_assert_eq!(out.is_valid(x, y), map.is_valid(x, y));
                let Some(v) = out.get(x, y) else { continue };
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if (0..14).contains(&nx) && (0..11).contains(&ny) {
                            if let Some(z) = map.get(nx as usize, ny as usize) {
                                lo = lo.min(z);
                                hi = hi.max(z);
                            }
                        }
                    }
                }
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{} outside [{}, {}]", v, lo, hi);
            }
        }
    }

    #[test]
    fn constant_maps_are_fixed_points(z in 400.0f64..4000.0, cfg in configs()) {
        let map = DepthMap::from_values(9, 7, vec![z; 63]).unwrap();
        let out = apply(&map, &cfg).unwrap();
        for (_, _, v) in out.iter_valid() {
            prop_assert!((v - z).abs() <= 1e-9 * z);
        }
        prop_assert_eq!(out.valid_count(), 63);
    }

    #[test]
    fn depth_disparity_maps_round_trip(map in depth_map(8, 6)) {
        let cam = CameraModel::kinect(8, 6);
        let back = disparity_map_to_depth_map(&depth_map_to_disparity_map(&map, &cam), &cam);
        prop_assert_eq!(back.valid_mask(), map.valid_mask());
        for ((_, _, a), (_, _, b)) in back.iter_valid().zip(map.iter_valid()) {
            prop_assert!((a - b).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn backprojection_inverts_projection(
        x in 0.0f64..640.0, y in 0.0f64..480.0, z in 300.0f64..5000.0,
        angles in (-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5),
        t in (-500.0f64..500.0, -500.0f64..500.0, -500.0f64..500.0),
    ) {
        let cam = CameraModel::kinect(640, 480);
        let pose = Pose::new(
            *Rotation3::from_euler_angles(angles.0, angles.1, angles.2).matrix(),
            Vector3::new(t.0, t.1, t.2),
        ).unwrap();
        // A point at pixel (x, y) and depth z of the posed camera, in world coordinates.
        let world: Point3<f64> = pose.inverse().transform(&backproject_pixel(x, y, z, &cam));
        let p = project(&world, &pose, &cam).unwrap();
        prop_assert!((p.x - x).abs() < 1e-8 && (p.y - y).abs() < 1e-8);
        prop_assert!((p.depth - z).abs() < 1e-8 * z);
    }
}
