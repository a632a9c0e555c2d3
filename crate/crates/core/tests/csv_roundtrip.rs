use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seclab_core::dataprep::csv::{read_csv, write_csv};
use seclab_core::dataprep::{Column, ColumnDef, ColumnType, Schema, Table};
use seclab_oracles::gen;

fn table_of(t: &seclab_oracles::prep::RowTable) -> Table {
    let schema = Schema::new(t.columns.iter().map(|(n, ty)| ColumnDef::new(n.clone(), *ty)).collect());
    Table::from_rows(schema, &t.rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn write_then_read_with_schema_is_identity(seed in any::<u64>()) {
        let t = table_of(&gen::random_table(&mut ChaCha8Rng::seed_from_u64(seed), 50, 6, "c"));
        let text = write_csv(&t);
        let back = read_csv(&text, Some(t.schema())).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn arbitrary_strings_survive(cells in prop::collection::vec(prop::option::of("[ -~\n\r\"\u{e9}]{0,12}"), 1..40)) {
        let schema = Schema::new(vec![ColumnDef::new("s", ColumnType::String), ColumnDef::new("f", ColumnType::Float64)]);
        let n = cells.len();
        let t = Table::new(schema.clone(), vec![
            Column::String(cells),
            Column::Float64((0..n).map(|i| Some(i as f64 / 7.0)).collect()),
        ]).unwrap();
        let back = read_csv(&write_csv(&t), Some(&schema)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn floats_round_trip_exactly(xs in prop::collection::vec(-1e300f64..1e300, 1..50)) {
        let schema = Schema::new(vec![ColumnDef::new("x", ColumnType::Float64)]);
        let t = Table::new(schema, vec![Column::Float64(xs.into_iter().map(Some).collect())]).unwrap();
        let back = read_csv(&write_csv(&t), None).unwrap();
        prop_assert_eq!(back, t);
    }
}
