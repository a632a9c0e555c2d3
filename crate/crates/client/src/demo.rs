//! The bundled demo: a synthetic flight-delay table and a regression workflow over it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seclab_core::analytics::{AlgorithmSpec, ChartSpec, ChartType};
use seclab_core::api::WorkflowRequest;
use seclab_core::dataprep::csv::format_timestamp;
use seclab_core::dataprep::{CmpOp, Expression, FillStrategy, Predicate, PrepPipeline, PrepStep, TimePart, Value};
use seclab_core::ids::DatasetId;

pub const DEMO_ROWS: usize = 500;

/// 2024-03-01T00:00:00Z
const START_MS: i64 = 1_709_251_200_000;

/// Flights whose delay grows with taxi-out time, plus noise. About one delay in twenty is
/// missing. The same seed always yields the same text.
pub fn flights_csv(seed: u64, rows: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("flight_id,scheduled_dep,taxi_out_min,distance_km,delay_min\n");
    for i in 0..rows {
        let dep = START_MS + i as i64 * 17 * 60_000;
        let taxi: f64 = rng.gen_range(5.0..45.0);
        let distance: f64 = rng.gen_range(150.0..3200.0);
        let noise: f64 = (0..4).map(|_| rng.gen_range(-3.0..3.0)).sum();
        let delay = if rng.gen_bool(0.05) {
            String::new()
        } else {
            format!("{:.2}", -4.0 + 1.3 * taxi + 0.001 * distance + noise)
        };
        out.push_str(&format!(
            "{},{},{:.1},{:.0},{}\n",
            1000 + i,
            format_timestamp(dep),
            taxi,
            distance,
            delay
        ));
    }
    out
}

/// Fills missing delays with the mean, derives the departure hour, drops short hops and
/// regresses delay on taxi-out time, plotted as a scatter with the fitted line.
pub fn workflow(dataset_id: DatasetId) -> WorkflowRequest {
    let steps = vec![
        PrepStep::FillNull { column: "delay_min".into(), strategy: FillStrategy::Mean },
        PrepStep::CreateColumn {
            name: "dep_hour".into(),
            expr: Expression::Extract { part: TimePart::Hour, arg: Box::new(Expression::col("scheduled_dep")) },
        },
        PrepStep::FilterRows {
            predicate: Predicate::Compare {
                op: CmpOp::Ge,
                left: Expression::col("distance_km"),
                right: Expression::lit(Value::Float(200.0)),
            },
        },
    ];
    WorkflowRequest {
        name: "taxi-out vs delay".into(),
        inputs: vec![dataset_id],
        pipeline: PrepPipeline::new(vec![dataset_id], steps),
        algorithm: AlgorithmSpec::LinearRegression { target: "delay_min".into(), features: vec!["taxi_out_min".into()] },
        visualization: ChartSpec::new(ChartType::Scatter, "taxi_out_min", &["delay_min"]),
    }
}
