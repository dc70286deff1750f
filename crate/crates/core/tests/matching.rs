use nalgebra::{Rotation3, Vector3};
use shapeharmony::*;

fn setup(mesh: &Mesh, k: usize) -> (EigenBasis, FeatureField) {
    let basis = compute_eigenbasis(&build_operators(mesh).unwrap(), k).unwrap();
    let f = standardize(&wks(&basis, 32).unwrap());
    (basis, f)
}

fn identity_rate(m: &PointMap) -> f64 {
    let idx = m.as_hard().unwrap();
    idx.iter().enumerate().filter(|(i, j)| i == *j).count() as f64 / idx.len() as f64
}

#[test]
fn self_matching_recovers_identity() {
    let mesh = shapes::blob(2).normalize().unwrap();
    let (b, f) = setup(&mesh, 30);
    for export in [MapExport::Spectral, MapExport::Features] {
        let cfg = MatchConfig {
            iters: 20,
            export,
            ..Default::default()
        };
        let r = optimize_features(&b, &b, (&f, &f), &cfg).unwrap();
        assert!(
            identity_rate(&r.maps.0) >= 0.99,
            "{export:?} {}",
            identity_rate(&r.maps.0)
        );
        assert!(
            identity_rate(&r.maps.1) >= 0.99,
            "{export:?} {}",
            identity_rate(&r.maps.1)
        );
    }
}

#[test]
fn best_iterate_bookkeeping() {
    let (a, b) = (shapes::blob(2), shapes::icosphere(2));
    let (ba, fa) = setup(&a, 20);
    let (bb, fb) = setup(&b, 20);
    let r = optimize_features(
        &ba,
        &bb,
        (&fa, &fb),
        &MatchConfig {
            iters: 15,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(r.trace.len(), 15);
    assert!(r.best_loss() <= r.trace[0]);
    assert_eq!(
        r.best_loss(),
        r.trace.iter().copied().fold(f64::INFINITY, f64::min)
    );
    let (xy, yx) = &r.maps;
    assert_eq!((xy.n_src(), xy.n_dst()), (a.n_vertices(), b.n_vertices()));
    assert_eq!((yx.n_src(), yx.n_dst()), (b.n_vertices(), a.n_vertices()));
}

#[test]
fn rigid_motion_leaves_hard_maps_unchanged() {
    let a = shapes::blob(2).normalize().unwrap();
    let b = shapes::bend(&shapes::blob(2), 0.0, 1.5, 0.6)
        .normalize()
        .unwrap();
    let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
    let moved = b
        .map_vertices(|p| r * p + Vector3::new(0.4, -2.0, 1.0))
        .normalize()
        .unwrap();
    let cfg = MatchConfig {
        iters: 10,
        ..Default::default()
    };
    let run = |y: &Mesh| {
        let (ba, fa) = setup(&a, 20);
        let (by, fy) = setup(y, 20);
        optimize_features(&ba, &by, (&fa, &fy), &cfg).unwrap().maps
    };
    assert_eq!(run(&b), run(&moved));
}
