#![cfg(feature = "onnx")]
//! Learned-operator adapter against tiny hand-built ONNX graphs.

use std::path::PathBuf;

use prost::Message;
use tract_onnx::pb;
use vesselfix::image::{BinaryMask, Coord, Dims};
use vesselfix::morphology::beta0;
use vesselfix::reconnect::{
    iterate, model_reconnector, IterateOptions, ReconnectError, Reconnector, TileOptions,
};

fn node(op: &str, inputs: &[&str], attribute: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec!["y".into()],
        op_type: op.into(),
        attribute,
        ..Default::default()
    }
}

fn graph(n: pb::NodeProto) -> Vec<u8> {
    // float tensors of unspecified shape
    let value = |name: &str| pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: 1,
                shape: None,
            })),
            ..Default::default()
        }),
        ..Default::default()
    };
    pb::ModelProto {
        ir_version: 7,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        graph: Some(pb::GraphProto {
            node: vec![n],
            name: "stub".into(),
            input: vec![value("x")],
            output: vec![value("y")],
            ..Default::default()
        }),
        ..Default::default()
    }
    .encode_to_vec()
}

/// Stub models: name and serialized bytes.
fn stubs() -> Vec<(&'static str, Vec<u8>)> {
    let axis = pb::AttributeProto {
        name: "axis".into(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: 1,
        ..Default::default()
    };
    vec![
        ("identity.onnx", graph(node("Identity", &["x"], vec![]))),
        // x - x: never predicts foreground
        ("zero.onnx", graph(node("Sub", &["x", "x"], vec![]))),
        // exp(x - x): predicts foreground everywhere
        ("ones.onnx", {
            let sub = pb::NodeProto {
                output: vec!["z".into()],
                ..node("Sub", &["x", "x"], vec![])
            };
            let mut bytes =
                pb::ModelProto::decode(&graph(node("Exp", &["z"], vec![]))[..]).unwrap();
            bytes.graph.as_mut().unwrap().node.insert(0, sub);
            bytes.encode_to_vec()
        }),
        // doubles the channel axis, breaking the same-shape contract
        (
            "concat.onnx",
            graph(node("Concat", &["x", "x"], vec![axis])),
        ),
    ]
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The checked-in models used by the CLI tests must match the builders.
/// Run with `VESSELFIX_BLESS=1` to rewrite them.
#[test]
fn fixtures_are_current() {
    for (name, bytes) in stubs() {
        let path = fixtures().join(name);
        if std::env::var_os("VESSELFIX_BLESS").is_some() {
            std::fs::write(&path, &bytes).unwrap();
        }
        assert_eq!(std::fs::read(&path).unwrap(), bytes, "{name} is stale");
    }
}

fn gap_mask() -> BinaryMask {
    BinaryMask::from_fn(Dims::d2(50, 20), |c| {
        (8..11).contains(&c.y()) && (c.x() < 20 || c.x() >= 26)
    })
}

fn small_tiles() -> TileOptions {
    TileOptions {
        patch: vec![16, 16],
        overlap: vec![4, 4],
        threshold: 0.5,
    }
}

#[test]
fn identity_model_is_the_identity_operator() {
    let op = model_reconnector(fixtures().join("identity.onnx"), small_tiles()).unwrap();
    let m = gap_mask();
    assert_eq!(op.apply(&m).unwrap(), m);
    let grid = op.predict(&m).unwrap();
    for i in 0..m.len() {
        assert_eq!(grid.get_index(i), f64::from(m.data()[i]));
    }
    let (out, trace) = iterate(&op, &m, IterateOptions::default()).unwrap();
    assert_eq!(out, m);
    assert_eq!(trace.iterations, 1);
}

#[test]
fn output_is_united_with_the_input() {
    let m = gap_mask();
    let zero = model_reconnector(fixtures().join("zero.onnx"), small_tiles()).unwrap();
    assert_eq!(zero.apply(&m).unwrap(), m);
    let ones = model_reconnector(fixtures().join("ones.onnx"), small_tiles()).unwrap();
    let out = ones.apply(&m).unwrap();
    assert_eq!(out, BinaryMask::ones(m.dims()));
    assert_eq!(beta0(&out), 1);
}

#[test]
fn masks_smaller_than_a_patch_are_padded() {
    let op =
        model_reconnector(fixtures().join("identity.onnx"), TileOptions::default_2d()).unwrap();
    let m = BinaryMask::from_coords(Dims::d2(7, 5), [Coord::d2(6, 4), Coord::d2(0, 0)]);
    assert_eq!(op.apply(&m).unwrap(), m);
}

#[test]
fn threshold_is_strict() {
    let tiles = TileOptions {
        threshold: 1.0,
        ..small_tiles()
    };
    let ones = model_reconnector(fixtures().join("ones.onnx"), tiles).unwrap();
    let m = gap_mask();
    assert_eq!(ones.apply(&m).unwrap(), m);
}

#[test]
fn three_d_tiling() {
    let op = model_reconnector(
        fixtures().join("identity.onnx"),
        TileOptions {
            patch: vec![8, 8, 8],
            overlap: vec![2, 2, 2],
            threshold: 0.5,
        },
    )
    .unwrap();
    let m = BinaryMask::from_fn(Dims::d3(13, 9, 17), |c| {
        (c.x() + 2 * c.y() + 3 * c.z()) % 5 == 0
    });
    assert_eq!(op.apply(&m).unwrap(), m);
    assert!(matches!(
        op.apply(&gap_mask()),
        Err(ReconnectError::InvalidArgument(_))
    ));
}

#[test]
fn shape_contract_is_checked_at_load() {
    match model_reconnector(fixtures().join("concat.onnx"), small_tiles()) {
        Err(ReconnectError::ShapeContractViolation { expected, got }) => {
            assert_eq!(expected, vec![1, 1, 16, 16]);
            assert_eq!(got, vec![1, 2, 16, 16]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn garbage_file_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.onnx");
    std::fs::write(&p, b"not a model").unwrap();
    assert!(matches!(
        model_reconnector(&p, small_tiles()),
        Err(ReconnectError::ModelLoad(_))
    ));
}
