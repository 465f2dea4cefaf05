use nalgebra::DMatrix;
use nngp::Point;
use nngp_cli::io::{fmt_f64, parse_table, table_to_string, GeoTable};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        -10.0..10.0f64,
    ]
}

fn table() -> impl Strategy<Value = GeoTable> {
    (1usize..20, 0usize..4, any::<bool>()).prop_flat_map(|(n, p, with_y)| {
        (
            prop::collection::vec((finite(), finite()), n),
            prop::collection::vec(finite(), n),
            prop::collection::vec(finite(), n * p),
        )
            .prop_map(move |(pts, y, x)| GeoTable {
                points: pts.into_iter().map(|(a, b)| Point::new(a, b)).collect(),
                y: with_y.then_some(y),
                x: DMatrix::from_row_slice(n, p, &x),
                covariate_names: (1..=p).map(|k| format!("x{k}")).collect(),
            })
    })
}

proptest! {
    #[test]
    fn write_then_read_is_exact(t in table()) {
        let text = table_to_string(&t).unwrap();
        let back = parse_table(text.as_bytes(), "mem", false).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn formatting_keeps_every_bit(v in finite()) {
        let parsed: f64 = fmt_f64(v).parse().unwrap();
        prop_assert_eq!(parsed.to_bits(), v.to_bits());
    }
}

#[test]
fn header_must_start_with_coordinates() {
    let err = parse_table("a,b,y\n1,2,3\n".as_bytes(), "mem", true).unwrap_err();
    assert!(err.to_string().contains("line 1"));
    assert!(parse_table("sx,sy,x1\n1,2,3\n".as_bytes(), "mem", true).is_err());
    let t = parse_table("sx, sy, x1\n1, 2, 3\n".as_bytes(), "mem", false).unwrap();
    assert!(t.y.is_none());
    assert_eq!(t.x[(0, 0)], 3.0);
}

#[test]
fn missing_values_are_errors() {
    let err = parse_table("sx,sy,y\n1,2,3\n1,,3\n".as_bytes(), "mem", true).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert!(parse_table("sx,sy,y\n1,2,NaN\n".as_bytes(), "mem", true).is_err());
}
