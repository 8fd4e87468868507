mod common;

use std::sync::Arc;

use sketchforge::geometry::{box_mesh, merge_meshes};
use sketchforge::placement::PlacementTransform;
use sketchforge::RotationMatrix;
use sketchforge_cli::{ServiceError, Store};

fn transform(tx: f64) -> PlacementTransform {
    PlacementTransform {
        rotation: RotationMatrix::about_y(0.3),
        translation: [tx, 0.1 / 3.0, -1.0 / 7.0],
        scale: 0.7,
    }
}

#[test]
fn scenes_and_objects_reload_bit_exactly() {
    let (dir, store, id) = common::store_with_floor();
    let obj = box_mesh([0.1 / 3.0; 3], [0.2, 2.0 / 3.0, 0.3]);
    let oid = store.add_object(&id, &obj, transform(1.0 / 3.0), "chair").unwrap();
    let before = store.load_scene(&id).unwrap();
    drop(store);
    let reopened = Store::open(dir.path()).unwrap();
    let after = reopened.load_scene(&id).unwrap();
    assert_eq!(before, after);
    assert_eq!(after.mesh, common::floor());
    assert_eq!(after.objects[0].id, oid);
    assert_eq!(after.objects[0].mesh, obj);
    assert_eq!(after.objects[0].transform, transform(1.0 / 3.0));
    assert!(dir.path().join("scenes").join(&id).join("objects").join(format!("{oid}.obj")).is_file());
}

#[test]
fn ids_keep_counting_after_reopen() {
    let (dir, store, first) = common::store_with_floor();
    let o1 = store.add_object(&first, &common::floor(), PlacementTransform::default(), "x").unwrap();
    drop(store);
    let store = Store::open(dir.path()).unwrap();
    let second = store.create_scene(&common::floor()).unwrap();
    let o2 = store.add_object(&second, &common::floor(), PlacementTransform::default(), "x").unwrap();
    assert_ne!(first, second);
    assert_ne!(o1, o2);
}

#[test]
fn unknown_and_malformed_scene_ids() {
    let (_dir, store, _) = common::store_with_floor();
    for id in ["scene-9999", "../scenes", "", "a/b"] {
        assert!(matches!(store.load_scene(id), Err(ServiceError::UnknownScene(_))), "{id}");
        assert!(!store.contains(id));
    }
}

#[test]
fn invalid_transform_is_rejected_without_writing() {
    let (_dir, store, id) = common::store_with_floor();
    let bad = PlacementTransform {
        scale: 0.0,
        ..PlacementTransform::default()
    };
    assert!(store.add_object(&id, &common::floor(), bad, "x").is_err());
    assert!(store.objects(&id).unwrap().is_empty());
}

#[test]
fn concurrent_additions_all_land() {
    let (_dir, store, id) = common::store_with_floor();
    let store = Arc::new(store);
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let (store, id) = (store.clone(), id.clone());
            std::thread::spawn(move || {
                let m = box_mesh([i as f64; 3], [i as f64 + 0.5; 3]);
                store.add_object(&id, &m, PlacementTransform::default(), "t").unwrap()
            })
        })
        .collect();
    let mut ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
    let doc = store.load_scene(&id).unwrap();
    assert_eq!(doc.objects.len(), 8);
    let merged = doc.merged_mesh();
    let expected = doc.objects.iter().fold(common::floor(), |acc, o| merge_meshes(&acc, &o.mesh));
    assert_eq!(merged, expected);
}
