use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seclab_core::dataprep::{
    run_pipeline, validate_pipeline, ColumnDef, Predicate, PrepPipeline, PrepStep, Schema, Table,
};
use seclab_core::ids::DatasetId;
use seclab_oracles::gen;
use seclab_oracles::prep::{self as oracle, RowTable};

fn to_table(t: &RowTable) -> Table {
    let schema = Schema::new(t.columns.iter().map(|(n, ty)| ColumnDef::new(n.clone(), *ty)).collect());
    Table::from_rows(schema, &t.rows).unwrap()
}

fn engine_inputs(tables: &HashMap<DatasetId, RowTable>) -> HashMap<DatasetId, Table> {
    tables.iter().map(|(id, t)| (*id, to_table(t))).collect()
}

fn schemas(tables: &HashMap<DatasetId, Table>) -> HashMap<DatasetId, Schema> {
    tables.iter().map(|(id, t)| (*id, t.schema().clone())).collect()
}

fn case(seed: u64, max_rows: usize) -> (HashMap<DatasetId, RowTable>, PrepPipeline) {
    gen::random_case(&mut ChaCha8Rng::seed_from_u64(seed), max_rows, 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// Columnar engine and row-wise interpreter produce identical tables.
    #[test]
    fn engine_matches_row_interpreter(seed in any::<u64>()) {
        let (tables, pipeline) = case(seed, 60);
        let expected = oracle::run(&tables, &pipeline).expect("generator emits oracle-valid pipelines");
        let inputs = engine_inputs(&tables);
        let got = run_pipeline(&inputs, &pipeline).map_err(|e| TestCaseError::fail(format!("{e} in {pipeline:?}")))?;
        prop_assert_eq!(RowTable::from_table(&got), expected, "pipeline {:?}", pipeline);
    }

    /// The statically computed schema is the schema of the produced table.
    #[test]
    fn static_schema_is_sound(seed in any::<u64>()) {
        let (tables, pipeline) = case(seed, 30);
        let inputs = engine_inputs(&tables);
        let declared = validate_pipeline(&schemas(&inputs), &pipeline).unwrap();
        let out = run_pipeline(&inputs, &pipeline).unwrap();
        prop_assert_eq!(&declared, out.schema());
    }

    /// Engine and interpreter reject the same steps.
    #[test]
    fn validation_agrees_on_arbitrary_steps(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tables, mut pipeline) = gen::random_case(&mut rng, 20, 2);
        // splice in a step generated against a different table, which is often invalid here
        let prefix = if rng.gen() { "c" } else { "x" };
        let stranger = gen::random_table(&mut rng, 5, 4, prefix);
        let pred = gen::random_predicate(&mut rng, &stranger, 2);
        pipeline.steps.push(PrepStep::FilterRows { predicate: pred });
        pipeline.steps.push(PrepStep::CreateColumn {
            name: "late".into(),
            expr: gen::random_expression(&mut rng, &stranger, 3),
        });
        let inputs = engine_inputs(&tables);
        let engine = validate_pipeline(&schemas(&inputs), &pipeline).map(|_| ()).map_err(|e| e.step);
        let reference = oracle::run(&tables, &pipeline).map(|_| ()).map_err(|e| e.0);
        prop_assert_eq!(engine, reference);
    }

    /// Filtering never adds rows and keeps the survivors in order.
    #[test]
    fn filter_is_an_order_preserving_subsequence(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gen::random_table(&mut rng, 80, 5, "c");
        let predicate: Predicate = gen::random_predicate(&mut rng, &t, 2);
        let id = DatasetId::from_bytes([1; 16]);
        let input = to_table(&t);
        let pipeline = PrepPipeline::new(vec![id], vec![PrepStep::FilterRows { predicate }]);
        let inputs = HashMap::from([(id, input.clone())]);
        prop_assume!(validate_pipeline(&schemas(&inputs), &pipeline).is_ok());
        let out = run_pipeline(&inputs, &pipeline).unwrap();
        prop_assert!(out.row_count() <= input.row_count());
        let all = input.rows();
        let mut cursor = 0;
        for row in out.rows() {
            let found = all[cursor..].iter().position(|r| *r == row);
            prop_assert!(found.is_some());
            cursor += found.unwrap() + 1;
        }
    }

    /// Running the same pipeline twice gives the same table.
    #[test]
    fn pipelines_are_deterministic(seed in any::<u64>()) {
        let (tables, pipeline) = case(seed, 40);
        let inputs = engine_inputs(&tables);
        let a = run_pipeline(&inputs, &pipeline).unwrap();
        let b = run_pipeline(&inputs, &pipeline).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn large_inputs_match() {
    for seed in 0..20 {
        let (tables, pipeline) = case(seed, 1000);
        let expected = oracle::run(&tables, &pipeline).unwrap();
        let got = run_pipeline(&engine_inputs(&tables), &pipeline).unwrap();
        assert_eq!(RowTable::from_table(&got), expected, "seed {seed}");
    }
}
