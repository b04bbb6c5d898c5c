use tensynth_web::{apply_op_json, encode_spec_json, synthesize_json};

const SQUARE: &str = r#"{"inputs":[{"dtype":"int","shape":[3],"data":[1,2,3]}],
                         "output":{"dtype":"int","shape":[3],"data":[1,4,9]}}"#;

#[test]
fn synthesizes_square() {
    let out: serde_json::Value =
        serde_json::from_str(&synthesize_json(SQUARE, 10.0, 400).unwrap()).unwrap();
    assert_eq!(out["status"], "Found");
    assert_eq!(out["program"], "mul(in1, in1)");
    assert_eq!(out["cost"], 28);
}

#[test]
fn applies_ops_with_parameters() {
    let m = r#"[{"dtype":"int","shape":[2,3],"data":[1,2,3,4,5,6]}]"#;
    let t: serde_json::Value =
        serde_json::from_str(&apply_op_json("transpose", m, "0, 1").unwrap()).unwrap();
    assert_eq!(t["shape"], serde_json::json!([3, 2]));
    assert_eq!(t["data"], serde_json::json!([1, 4, 2, 5, 3, 6]));
    let v =
        r#"[{"dtype":"int","shape":[2],"data":[7,8]},{"dtype":"int","shape":[2],"data":[1,2]}]"#;
    let s: serde_json::Value =
        serde_json::from_str(&apply_op_json("stack", v, "1").unwrap()).unwrap();
    assert_eq!(s["data"], serde_json::json!([7, 1, 8, 2]));
}

#[test]
fn reports_bad_input() {
    assert!(apply_op_json("nope", "[]", "").is_err());
    assert!(apply_op_json("add", r#"[{"dtype":"int","shape":[],"data":[1]}]"#, "").is_err());
    assert!(synthesize_json("{}", 1.0, 400).is_err());
    assert!(synthesize_json(SQUARE, 0.0, 400).is_err());
}

#[test]
fn encodes_to_fixed_length() {
    let v: Vec<f64> = serde_json::from_str(&encode_spec_json(SQUARE).unwrap()).unwrap();
    assert_eq!(v.len(), 644);
    assert_eq!(&v[..3], &[0.01, 0.02, 0.03]);
}
