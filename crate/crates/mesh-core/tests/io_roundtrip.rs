//! Property tests: writing then parsing a mesh reproduces it bit for bit
//! in every supported format.

use mesh_core::io::{parse_mesh, write_mesh, MeshFormat};
use mesh_core::TriMesh;
use proptest::prelude::*;

fn arb_mesh() -> impl Strategy<Value = TriMesh> {
    // 4..40 vertices with finite, roundtrip-hostile coordinates (subnormals
    // excluded, but tiny and huge magnitudes included).
    let coord = prop_oneof![
        -1e12f64..1e12,
        -1.0f64..1.0,
        Just(0.0),
        Just(-0.0),
        Just(1e-300),
        Just(-3.5e4),
    ];
    (4usize..40).prop_flat_map(move |nv| {
        let verts = prop::collection::vec([coord.clone(), coord.clone(), coord.clone()], nv);
        let faces = prop::collection::vec([0..nv, 0..nv, 0..nv], 1..60);
        (verts, faces).prop_map(|(vertices, faces)| {
            let vertices = vertices.into_iter().map(|v| v).collect();
            let faces = faces.into_iter().map(|f| f).collect();
            TriMesh { vertices, faces, landmarks: Default::default() }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn roundtrip_obj(mesh in arb_mesh()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        write_mesh(&path, &mesh, MeshFormat::Obj).unwrap();
        let back = parse_mesh(&path).unwrap();
        prop_assert_eq!(&back.vertices, &mesh.vertices);
        prop_assert_eq!(&back.faces, &mesh.faces);
    }

    #[test]
    fn roundtrip_ply_ascii(mesh in arb_mesh()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        write_mesh(&path, &mesh, MeshFormat::PlyAscii).unwrap();
        let back = parse_mesh(&path).unwrap();
        prop_assert_eq!(&back.vertices, &mesh.vertices);
        prop_assert_eq!(&back.faces, &mesh.faces);
    }

    #[test]
    fn roundtrip_ply_binary(mesh in arb_mesh()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        write_mesh(&path, &mesh, MeshFormat::PlyBinary).unwrap();
        let back = parse_mesh(&path).unwrap();
        prop_assert_eq!(&back.vertices, &mesh.vertices);
        prop_assert_eq!(&back.faces, &mesh.faces);
    }
}
