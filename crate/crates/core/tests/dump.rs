use std::sync::Arc;

use flowlab::dump::{parse_field, read_field, write_field, write_field_to};
use flowlab::families::random_smooth_sym2;
use flowlab::{Grid, TensorField, Valence};
use proptest::prelude::*;

fn grid(dim: usize, res: usize) -> Arc<Grid> {
    Arc::new(Grid::new(dim, &vec![res; dim], &vec![2.0; dim]).unwrap())
}

#[test]
fn files_round_trip_exactly() {
    let f = random_smooth_sym2(&grid(2, 8), 3, 2).unwrap().with_time(0.0125);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    write_field(&f, &path).unwrap();
    let back = read_field(&path).unwrap();
    assert_eq!(back.data(), f.data());
    assert_eq!(back.time(), Some(0.0125));
    assert_eq!(back.valence(), Valence::SYM2);
}

#[test]
fn malformed_dumps_are_rejected() {
    let f = TensorField::zeros(&grid(2, 8), Valence::SCALAR);
    let mut buf = Vec::new();
    write_field_to(&f, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(parse_field(&text).is_ok());
    assert!(parse_field(&text.replacen("dim,2", "dims,2", 1)).is_err());
    let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    assert!(parse_field(&truncated).is_err());
    assert!(parse_field(&text.replace(",0.0000000000000000e0", ",1,2")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dumps_round_trip_bitwise(
        dim in 2usize..=3,
        res in 8usize..10,
        values in proptest::collection::vec(-1e6f64..1e6, 9 * 729),
        time in proptest::option::of(0.0f64..1.0),
    ) {
        let g = grid(dim, res);
        let mut f = TensorField::zeros(&g, Valence::SYM2);
        let n = f.data().len();
        f.data_mut().copy_from_slice(&values[..n]);
        if let Some(t) = time {
            f = f.with_time(t);
        }
        let mut buf = Vec::new();
        write_field_to(&f, &mut buf).unwrap();
        let back = parse_field(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.data(), f.data());
        prop_assert_eq!(back.time(), f.time());
        prop_assert_eq!(back.grid().resolution(), g.resolution());
    }
}
