use cddm_harness::phantom::{make_phantom, PhantomKind, PhantomSpec};

fn spec(kind: PhantomKind, seed: u64) -> PhantomSpec {
    PhantomSpec {
        kind,
        dims: [6, 24, 24],
        seed,
    }
}

#[test]
fn values_stay_in_unit_interval() {
    for kind in [PhantomKind::Shepp3d, PhantomKind::Blobs, PhantomKind::Shells] {
        for seed in 0..5 {
            let v = make_phantom(&spec(kind, seed));
            assert!(v.data().iter().all(|x| (0.0..=1.0).contains(x)), "{kind:?}");
            assert!(v.data().iter().any(|&x| x > 0.0), "{kind:?} is empty");
        }
    }
}

#[test]
fn same_seed_same_volume_and_seeds_differ() {
    for kind in [PhantomKind::Shepp3d, PhantomKind::Blobs, PhantomKind::Shells] {
        let a = make_phantom(&spec(kind, 9));
        assert_eq!(a.data(), make_phantom(&spec(kind, 9)).data());
        assert_ne!(a.data(), make_phantom(&spec(kind, 10)).data());
    }
}

#[test]
fn shepp_corners_are_background() {
    let v = make_phantom(&spec(PhantomKind::Shepp3d, 3));
    for z in 0..6 {
        assert_eq!(v.get(z, 0, 0), 0.0);
        assert_eq!(v.get(z, 23, 23), 0.0);
    }
}

#[test]
fn kind_names_round_trip() {
    for kind in [PhantomKind::Shepp3d, PhantomKind::Blobs, PhantomKind::Shells] {
        assert_eq!(kind.name().parse::<PhantomKind>().unwrap(), kind);
    }
    assert!("cube".parse::<PhantomKind>().is_err());
}
