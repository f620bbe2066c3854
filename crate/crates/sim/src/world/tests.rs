use super::*;
use approx::assert_relative_eq;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn flat_along_x() -> Rotation3<f64> {
    // Long axis (local z) pointing along world +x, resting height 0.015.
    Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2)
}

fn make_world() -> World {
    World::new(&Blueprint::default_u_shape(), WorldConfig::default()).unwrap()
}

fn far_grippers() -> [GripperInput; 2] {
    [
        GripperInput {
            pose: RigidPose::from_translation(1.0, 1.0, 0.5),
            width: 0.08,
        },
        GripperInput {
            pose: RigidPose::from_translation(1.0, -1.0, 0.5),
            width: 0.08,
        },
    ]
}

fn inputs_with(grippers: [GripperInput; 2]) -> WorldInputs {
    WorldInputs {
        grippers,
        arm_links: [Vec::new(), Vec::new()],
    }
}

/// Standard scene: three blocks flat on the floor, far apart, grippers
/// away from everything.
fn reset_default(world: &mut World) {
    let poses = vec![
        RigidPose::new(Vector3::new(0.2, 0.15, 0.015), flat_along_x()),
        RigidPose::new(Vector3::new(0.2, -0.15, 0.015), flat_along_x()),
        RigidPose::new(Vector3::new(0.4, 0.0, 0.015), flat_along_x()),
    ];
    let g = far_grippers();
    world
        .reset(poses, [g[0].pose, g[1].pose], [0.08, 0.08])
        .unwrap();
}

#[test]
fn static_scene_is_bitwise_stable_with_support_contacts() {
    let mut world = make_world();
    reset_default(&mut world);
    let before = world.states.clone();
    let inputs = inputs_with(far_grippers());
    for _ in 0..10 {
        let records = world.step(&inputs, 0.01);
        let floor: Vec<_> = records
            .iter()
            .filter(|r| r.kind == ContactKind::BlockFloor)
            .collect();
        assert_eq!(floor.len(), 3);
        for r in floor {
            assert_eq!(r.force, world.cfg.support_force);
            assert_eq!(r.depth, 0.0);
        }
    }
    for (a, b) in world.states.iter().zip(before.iter()) {
        assert_eq!(a.position, b.position);
        assert_eq!(a.rotation, b.rotation);
    }
    assert!(world.connections.is_empty());
}

/// Inputs that keep both grippers exactly where the world last saw them.
fn current_inputs(world: &World) -> [GripperInput; 2] {
    [
        GripperInput {
            pose: world.grippers[0].pose,
            width: world.grippers[0].width,
        },
        GripperInput {
            pose: world.grippers[1].pose,
            width: world.grippers[1].width,
        },
    ]
}

fn grasp_block(world: &mut World, gripper: usize, block: usize) {
    // Tool at the block center, close across the grasp threshold. The
    // other gripper is left untouched.
    let mut grippers = current_inputs(world);
    grippers[gripper] = GripperInput {
        pose: RigidPose::new(world.states[block].position, RigidPose::identity().rotation),
        width: 0.08,
    };
    world.step(&inputs_with(grippers), 0.01);
    grippers[gripper].width = 0.02;
    world.step(&inputs_with(grippers), 0.01);
    assert_eq!(
        world.grippers[gripper].grasp.as_ref().map(|g| g.block),
        Some(block)
    );
}

#[test]
fn grasped_block_translates_with_gripper() {
    let mut world = make_world();
    reset_default(&mut world);
    grasp_block(&mut world, 0, 0);
    let before = world.states[0].position;
    let delta = Vector3::new(0.013, -0.021, 0.034);
    let mut grippers = far_grippers();
    grippers[0] = GripperInput {
        pose: RigidPose::new(before + delta, RigidPose::identity().rotation),
        width: 0.02,
    };
    world.step(&inputs_with(grippers), 0.01);
    assert_relative_eq!(world.states[0].position, before + delta, epsilon = 1e-12);
}

#[test]
fn closing_far_from_any_block_grasps_nothing() {
    let mut world = make_world();
    reset_default(&mut world);
    let mut grippers = far_grippers();
    grippers[0] = GripperInput {
        pose: RigidPose::from_translation(0.2, 0.15, 0.2),
        width: 0.08,
    };
    world.step(&inputs_with(grippers), 0.01);
    grippers[0].width = 0.02;
    world.step(&inputs_with(grippers), 0.01);
    assert!(world.grippers[0].grasp.is_none());
}

#[test]
fn release_drops_block_and_it_settles_back_to_floor() {
    let mut world = make_world();
    reset_default(&mut world);
    grasp_block(&mut world, 0, 0);
    // Lift 5 cm.
    let lifted = world.states[0].position + Vector3::new(0.0, 0.0, 0.05);
    let mut grippers = far_grippers();
    grippers[0] = GripperInput {
        pose: RigidPose::new(lifted, RigidPose::identity().rotation),
        width: 0.02,
    };
    world.step(&inputs_with(grippers), 0.01);
    assert!(world.blocks[0].min_corner_z(&world.states[0]) > 0.04);
    // Open to release.
    grippers[0].width = 0.08;
    world.step(&inputs_with(grippers), 0.01);
    assert!(world.grippers[0].grasp.is_none());
    // Settle for one simulated second.
    for _ in 0..100 {
        world.step(&inputs_with(grippers), 0.01);
        let min_z = world.blocks[0].min_corner_z(&world.states[0]);
        assert!(min_z >= -world.cfg.floor_tolerance - 1e-12);
    }
    let min_z = world.blocks[0].min_corner_z(&world.states[0]);
    assert!(min_z.abs() <= 1e-3, "block should be back on the floor, min_z={min_z}");
}

/// Scene with the two TypeA blocks axis-aligned along x so their
/// opposite-polarity ends face each other across `gap` meters.
fn reset_facing_ends(world: &mut World, gap: f64) {
    // Block 0 end_pos at +x end (normal +x), block 1 end_neg facing -x.
    let rot = flat_along_x();
    let x1 = 0.075 + gap + 0.075;
    let poses = vec![
        RigidPose::new(Vector3::new(0.0, 0.0, 0.015), rot),
        RigidPose::new(Vector3::new(x1, 0.0, 0.015), rot),
        RigidPose::new(Vector3::new(0.0, 0.5, 0.015), rot),
    ];
    let g = far_grippers();
    world
        .reset(poses, [g[0].pose, g[1].pose], [0.08, 0.08])
        .unwrap();
}

#[test]
fn opposite_poles_within_range_snap_flush() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.009);
    world.step(&inputs_with(far_grippers()), 0.01);
    assert_eq!(world.connections.len(), 1);
    let c = &world.connections[0];
    let pa = world.site_world_position(c.site_a);
    let pb = world.site_world_position(c.site_b);
    assert_relative_eq!((pa - pb).norm(), 0.0, epsilon = 1e-9);
    let na = world.site_world_normal(c.site_a);
    let nb = world.site_world_normal(c.site_b);
    assert_relative_eq!(na.dot(&nb), -1.0, epsilon = 1e-9);
}

#[test]
fn same_polarity_never_snaps_even_when_touching() {
    let mut world = make_world();
    // Block 1 flipped so its end_pos faces block 0's end_pos.
    let rot0 = flat_along_x();
    let rot1 = Rotation3::from_axis_angle(&Vector3::y_axis(), -std::f64::consts::FRAC_PI_2);
    let poses = vec![
        RigidPose::new(Vector3::new(0.0, 0.0, 0.015), rot0),
        RigidPose::new(Vector3::new(0.155, 0.0, 0.015), rot1),
        RigidPose::new(Vector3::new(0.0, 0.5, 0.015), rot0),
    ];
    let g = far_grippers();
    world
        .reset(poses, [g[0].pose, g[1].pose], [0.08, 0.08])
        .unwrap();
    for _ in 0..5 {
        world.step(&inputs_with(far_grippers()), 0.01);
    }
    assert!(world.connections.is_empty());
}

#[test]
fn out_of_range_poles_do_not_snap() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.015);
    for _ in 0..5 {
        world.step(&inputs_with(far_grippers()), 0.01);
    }
    assert!(world.connections.is_empty());
}

#[test]
fn misaligned_normals_do_not_snap() {
    let mut world = make_world();
    // Block 1 yawed 40 degrees: ends close but normals outside the
    // 30-degree snap cone.
    let rot0 = flat_along_x();
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), 40.0_f64.to_radians());
    let poses = vec![
        RigidPose::new(Vector3::new(0.0, 0.0, 0.015), rot0),
        RigidPose::new(Vector3::new(0.157, 0.0, 0.015), yaw * rot0),
        RigidPose::new(Vector3::new(0.0, 0.5, 0.015), rot0),
    ];
    let g = far_grippers();
    world
        .reset(poses, [g[0].pose, g[1].pose], [0.08, 0.08])
        .unwrap();
    // The yaw moves the site; recheck the true gap stays under range by
    // construction of x offset; what matters is that no snap happens.
    for _ in 0..5 {
        world.step(&inputs_with(far_grippers()), 0.01);
    }
    assert!(world.connections.is_empty());
}

#[test]
fn snap_is_idempotent_across_steps() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.009);
    world.step(&inputs_with(far_grippers()), 0.01);
    assert_eq!(world.connections.len(), 1);
    for _ in 0..20 {
        world.step(&inputs_with(far_grippers()), 0.01);
        assert_eq!(world.connections.len(), 1);
    }
}

#[test]
fn welded_pair_stays_rigid_under_anchor_motion() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.009);
    world.step(&inputs_with(far_grippers()), 0.01);
    assert_eq!(world.connections.len(), 1);
    grasp_block(&mut world, 0, 0);
    let rel0 = world.states[0].inverse().compose(&world.states[1]);
    let mut rng_angle = 0.0;
    for k in 0..40 {
        rng_angle += 0.05;
        let pos = world.states[0].position
            + Vector3::new(0.002 * (k as f64).sin(), 0.001, 0.002);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), rng_angle);
        let mut grippers = far_grippers();
        grippers[0] = GripperInput {
            pose: RigidPose::new(pos, rot),
            width: 0.02,
        };
        world.step(&inputs_with(grippers), 0.01);
        let rel = world.states[0].inverse().compose(&world.states[1]);
        assert_relative_eq!(rel.position, rel0.position, epsilon = 1e-9);
        assert_relative_eq!(
            rel.rotation.matrix(),
            rel0.rotation.matrix(),
            epsilon = 1e-9
        );
        // The weld transform stored at snap time still reproduces the
        // partner pose.
        let c = &world.connections[0];
        let predicted = world.states[c.site_a.block].compose(&c.weld);
        assert_relative_eq!(
            predicted.position,
            world.states[c.site_b.block].position,
            epsilon = 1e-9
        );
    }
}

#[test]
fn pulling_secondary_hand_breaks_the_connection() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.009);
    world.step(&inputs_with(far_grippers()), 0.01);
    assert_eq!(world.connections.len(), 1);
    grasp_block(&mut world, 0, 0);
    grasp_block(&mut world, 1, 1);
    let start = world.grippers[1].pose.position;
    let anchor_pose = world.grippers[0].pose;
    let mut broke_at = None;
    for k in 1..=25 {
        let offset = 0.002 * k as f64;
        let mut grippers = far_grippers();
        grippers[0] = GripperInput {
            pose: anchor_pose,
            width: 0.02,
        };
        grippers[1] = GripperInput {
            pose: RigidPose::new(start + Vector3::new(offset, 0.0, 0.0), RigidPose::identity().rotation),
            width: 0.02,
        };
        world.step(&inputs_with(grippers), 0.01);
        if world.connections.is_empty() {
            broke_at = Some(offset);
            break;
        }
    }
    let broke_at = broke_at.expect("pulling past the break force must sever the weld");
    // Break force 3.0 at pull stiffness 100 means roughly 0.03 m of
    // stretch.
    assert!(broke_at > 0.028 && broke_at < 0.036, "broke at {broke_at}");
}

#[test]
fn compressive_mismatch_does_not_break() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.009);
    world.step(&inputs_with(far_grippers()), 0.01);
    grasp_block(&mut world, 0, 0);
    grasp_block(&mut world, 1, 1);
    let start = world.grippers[1].pose.position;
    let anchor_pose = world.grippers[0].pose;
    for k in 1..=20 {
        let offset = -0.002 * k as f64;
        let mut grippers = far_grippers();
        grippers[0] = GripperInput {
            pose: anchor_pose,
            width: 0.02,
        };
        grippers[1] = GripperInput {
            pose: RigidPose::new(start + Vector3::new(offset, 0.0, 0.0), RigidPose::identity().rotation),
            width: 0.02,
        };
        world.step(&inputs_with(grippers), 0.01);
    }
    assert_eq!(world.connections.len(), 1);
}

#[test]
fn static_scene_breaks_nothing() {
    let mut world = make_world();
    reset_facing_ends(&mut world, 0.009);
    for _ in 0..50 {
        world.step(&inputs_with(far_grippers()), 0.01);
    }
    assert_eq!(world.connections.len(), 1);
}

#[test]
fn pressing_into_floor_scales_contact_force_with_depth() {
    let mut world = make_world();
    reset_default(&mut world);
    grasp_block(&mut world, 0, 0);
    let base = world.states[0].position;
    let mut force_at = |depth: f64| -> f64 {
        let mut grippers = far_grippers();
        grippers[0] = GripperInput {
            pose: RigidPose::new(
                base + Vector3::new(0.0, 0.0, -depth),
                RigidPose::identity().rotation,
            ),
            width: 0.02,
        };
        // Hold a few ticks so the approach-speed term dies out.
        let mut last = 0.0;
        for _ in 0..10 {
            let records = world.step(&inputs_with(grippers), 0.01);
            last = records
                .iter()
                .filter(|r| r.kind == ContactKind::BlockFloor && r.body_a == ContactBody::Block(0))
                .map(|r| r.force)
                .fold(0.0, f64::max);
        }
        last
    };
    let f1 = force_at(0.005);
    let f2 = force_at(0.010);
    let cfg = WorldConfig::default();
    assert_relative_eq!(f1, cfg.support_force + cfg.k_contact * 0.005, epsilon = 1e-9);
    assert_relative_eq!(f2, cfg.support_force + cfg.k_contact * 0.010, epsilon = 1e-9);
    assert!(f2 > f1);
}

#[test]
fn separated_blocks_produce_no_block_block_records() {
    let mut world = make_world();
    reset_default(&mut world);
    let records = world.step(&inputs_with(far_grippers()), 0.01);
    assert!(records.iter().all(|r| r.kind != ContactKind::BlockBlock));
}

#[test]
fn arm_capsules_report_floor_and_mutual_contact() {
    let mut world = make_world();
    reset_default(&mut world);
    let mut inputs = inputs_with(far_grippers());
    inputs.arm_links[0] = vec![Capsule {
        a: Vector3::new(0.1, 0.0, 0.01),
        b: Vector3::new(0.3, 0.0, 0.01),
        radius: 0.02,
    }];
    inputs.arm_links[1] = vec![Capsule {
        a: Vector3::new(0.2, -0.1, 0.03),
        b: Vector3::new(0.2, 0.1, 0.03),
        radius: 0.02,
    }];
    let records = world.step(&inputs, 0.01);
    assert!(records.iter().any(|r| r.kind == ContactKind::ArmFloor));
    // Closest approach between the two capsule axes is 0.02 < 0.04.
    assert!(records.iter().any(|r| r.kind == ContactKind::ArmArm));
}

#[test]
fn gripper_pressing_a_block_it_does_not_hold_registers_contact() {
    let mut world = make_world();
    reset_default(&mut world);
    let mut grippers = far_grippers();
    grippers[0] = GripperInput {
        pose: RigidPose::new(world.states[0].position + Vector3::new(0.0, 0.0, 0.016), RigidPose::identity().rotation),
        width: 0.08,
    };
    let records = world.step(&inputs_with(grippers), 0.01);
    assert!(records
        .iter()
        .any(|r| r.kind == ContactKind::GripperBlock && r.force > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Free blocks never end below the floor and always settle onto it.
    #[test]
    fn dropped_blocks_settle_without_penetration(
        h in 0.001f64..0.2,
        yaw in -3.1f64..3.1,
    ) {
        let mut world = make_world();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * flat_along_x();
        let poses = vec![
            RigidPose::new(Vector3::new(0.2, 0.15, 0.015 + h), rot),
            RigidPose::new(Vector3::new(0.2, -0.15, 0.015), flat_along_x()),
            RigidPose::new(Vector3::new(0.5, 0.0, 0.015), flat_along_x()),
        ];
        let g = far_grippers();
        world.reset(poses, [g[0].pose, g[1].pose], [0.08, 0.08]).unwrap();
        let inputs = inputs_with(far_grippers());
        for _ in 0..300 {
            world.step(&inputs, 0.01);
            let min_z = world.blocks[0].min_corner_z(&world.states[0]);
            prop_assert!(min_z >= -world.cfg.floor_tolerance - 1e-12);
        }
        let min_z = world.blocks[0].min_corner_z(&world.states[0]);
        prop_assert!(min_z.abs() < 1e-3);
    }

    /// After stepping, either a connection was made, or every
    /// opposite-polarity pair verifiably fails a snap condition.
    #[test]
    fn no_snap_implies_conditions_fail(
        gap in 0.001f64..0.05,
        yaw in -0.8f64..0.8,
    ) {
        let mut world = make_world();
        let rot0 = flat_along_x();
        let rot1 = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * flat_along_x();
        let x1 = 0.15 + gap;
        let poses = vec![
            RigidPose::new(Vector3::new(0.0, 0.0, 0.015), rot0),
            RigidPose::new(Vector3::new(x1, 0.0, 0.015), rot1),
            RigidPose::new(Vector3::new(0.0, 0.5, 0.015), rot0),
        ];
        let g = far_grippers();
        world.reset(poses, [g[0].pose, g[1].pose], [0.08, 0.08]).unwrap();
        world.step(&inputs_with(far_grippers()), 0.01);
        let cos_limit = -(30.0f64.to_radians().cos());
        if world.connections.is_empty() {
            for bi in 0..3 {
                for bj in (bi + 1)..3 {
                    for si in 0..2 {
                        for sj in 0..2 {
                            let ia = SiteId { block: bi, site: si };
                            let ib = SiteId { block: bj, site: sj };
                            if world.site(ia).polarity == world.site(ib).polarity {
                                continue;
                            }
                            let d = (world.site_world_position(ia) - world.site_world_position(ib)).norm();
                            let ndot = world.site_world_normal(ia).dot(&world.site_world_normal(ib));
                            prop_assert!(
                                d > world.cfg.snap_distance || ndot > cos_limit,
                                "pair {ia:?},{ib:?} met all snap conditions but did not snap"
                            );
                        }
                    }
                }
            }
        } else {
            for c in &world.connections {
                prop_assert!(world.site(c.site_a).polarity != world.site(c.site_b).polarity);
                let pa = world.site_world_position(c.site_a);
                let pb = world.site_world_position(c.site_b);
                prop_assert!((pa - pb).norm() < 1e-9);
            }
        }
    }
}
